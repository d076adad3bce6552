//! End-to-end model: a small residual backbone, the channel shuffle module,
//! the FPN-style GlobalNet and the attention RefineNet.

mod loss;

pub use loss::{l2_loss, ohkm_loss, LossReport};

use crate::attention::{AttentionBottleneck, Variant};
use crate::csm::{ChannelShuffleModule, Pyramid};
use crate::error::{Error, Result};
use crate::layers::{reduce_1x1, Bottleneck, Conv, Head};
use crate::params::{Bound, Init, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

/// Output stride of every predicted heatmap relative to the input image.
pub const HEATMAP_STRIDE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Pyramid channel width D (the reduced Conv-2..5 width).
    pub base_channels: usize,
    /// Residual bottlenecks per backbone stage.
    pub blocks_per_stage: usize,
    pub num_keypoints: usize,
    /// Channel shuffle groups over the 4·D concatenated pyramid.
    pub groups: usize,
    pub use_csm: bool,
    /// 1×1 reducer from the 2·D enhanced pyramid back to D before the FPN.
    pub csm_reduce: bool,
    pub variant: Variant,
    /// Keypoints kept by hard keypoint mining in the RefineNet loss.
    pub ohkm_k: usize,
    pub input_h: usize,
    pub input_w: usize,
    /// Gaussian target width in heatmap cells.
    pub sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 16,
            blocks_per_stage: 1,
            num_keypoints: 17,
            groups: 4,
            use_csm: true,
            csm_reduce: true,
            variant: Variant::Scarb,
            ohkm_k: 8,
            input_h: 128,
            input_w: 96,
            sigma: 2.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::config("base_channels", "must be positive"));
        }
        if self.num_keypoints == 0 {
            return Err(Error::config("num_keypoints", "must be positive"));
        }
        if self.ohkm_k == 0 || self.ohkm_k > self.num_keypoints {
            return Err(Error::config(
                "ohkm_k",
                format!("must lie in 1..={}, got {}", self.num_keypoints, self.ohkm_k),
            ));
        }
        for (key, v) in [("input_h", self.input_h), ("input_w", self.input_w)] {
            if v == 0 || v % 32 != 0 {
                return Err(Error::config(key, format!("{v} is not a positive multiple of 32")));
            }
        }
        if self.input_h * 3 != self.input_w * 4 {
            return Err(Error::config(
                "input_w",
                format!("height:width must be 4:3, got {}x{}", self.input_h, self.input_w),
            ));
        }
        if self.groups == 0 || !(4 * self.base_channels).is_multiple_of(self.groups) {
            return Err(Error::config(
                "groups",
                format!("{} does not divide {} pyramid channels", self.groups, 4 * self.base_channels),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma", "must be positive"));
        }
        Ok(())
    }

    pub fn heatmap_h(&self) -> usize {
        self.input_h / HEATMAP_STRIDE
    }

    pub fn heatmap_w(&self) -> usize {
        self.input_w / HEATMAP_STRIDE
    }
}

/// Tiny residual backbone producing R-Conv-2..5 at strides 4..32 with
/// channels D, 2D, 4D, 8D.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub stem: [Conv; 2],
    pub downs: [Conv; 3],
    pub stages: [Vec<Bottleneck>; 4],
}

impl Backbone {
    fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Self {
        let d = cfg.base_channels;
        let stem = [
            Conv::new(store, init, "backbone.stem1", 3, d, 3, 2, 1),
            Conv::new(store, init, "backbone.stem2", d, d, 3, 2, 1),
        ];
        let downs = std::array::from_fn(|i| {
            let c_in = d << i;
            Conv::new(store, init, &format!("backbone.down{}", i + 3), c_in, 2 * c_in, 3, 2, 1)
        });
        let stages = std::array::from_fn(|i| {
            (0..cfg.blocks_per_stage)
                .map(|b| Bottleneck::new(store, init, &format!("backbone.stage{}.{b}", i + 2), d << i, d << i))
                .collect()
        });
        Backbone { stem, downs, stages }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, image: Var) -> Result<[Var; 4]> {
        let mut x = image;
        for c in &self.stem {
            x = c.forward(g, p, x)?;
            x = g.relu(x);
        }
        let mut levels = [x; 4];
        for i in 0..4 {
            if i > 0 {
                x = self.downs[i - 1].forward(g, p, x)?;
                x = g.relu(x);
            }
            for b in &self.stages[i] {
                x = b.forward(g, p, x)?;
            }
            levels[i] = x;
        }
        Ok(levels)
    }
}

/// FPN-style top-down pathway with one heatmap head per level.
#[derive(Clone, Debug)]
pub struct GlobalNet {
    pub laterals: Option<[Conv; 4]>,
    pub heads: [Head; 4],
}

/// GlobalNet outputs: per-level heatmaps at the common output resolution
/// and the merged top-down features (level 2 first).
#[derive(Clone, Copy, Debug)]
pub struct GlobalOutput {
    pub heatmaps: [Var; 4],
    pub features: [Var; 4],
}

impl GlobalNet {
    fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig, in_channels: usize) -> Self {
        let d = cfg.base_channels;
        let laterals = (in_channels != d)
            .then(|| std::array::from_fn(|i| reduce_1x1(store, init, &format!("global.lateral{}", i + 2), in_channels, d)));
        let heads = std::array::from_fn(|i| Head::new(store, init, &format!("global.head{}", i + 2), d, cfg.num_keypoints));
        GlobalNet { laterals, heads }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, pyr: &Pyramid) -> Result<GlobalOutput> {
        let mut lat = pyr.levels;
        if let Some(convs) = &self.laterals {
            for i in 0..4 {
                lat[i] = convs[i].forward(g, p, lat[i])?;
            }
        }
        let mut features = lat;
        for i in (0..3).rev() {
            let up = g.upsample_nearest(features[i + 1], 2)?;
            features[i] = g.add(lat[i], up)?;
        }
        let mut heatmaps = features;
        for i in 0..4 {
            let h = self.heads[i].forward(g, p, features[i])?;
            heatmaps[i] = if i == 0 { h } else { g.upsample_nearest(h, 1 << i)? };
        }
        Ok(GlobalOutput { heatmaps, features })
    }
}

/// Refinement stage: level ℓ passes through ℓ-2 attention bottlenecks, all
/// levels are upsampled to the level-2 grid and concatenated, and a final
/// bottleneck plus head emits the refined heatmaps.
#[derive(Clone, Debug)]
pub struct RefineNet {
    pub level_blocks: [Vec<AttentionBottleneck>; 4],
    pub fuse: AttentionBottleneck,
    pub head: Head,
}

impl RefineNet {
    fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Self {
        let d = cfg.base_channels;
        let level_blocks = std::array::from_fn(|i| {
            (0..i)
                .map(|b| AttentionBottleneck::new(store, init, &format!("refine.level{}.{b}", i + 2), d, d, cfg.variant))
                .collect()
        });
        let fuse = AttentionBottleneck::new(store, init, "refine.fuse", 4 * d, d, cfg.variant);
        let head = Head::new(store, init, "refine.head", d, cfg.num_keypoints);
        RefineNet {
            level_blocks,
            fuse,
            head,
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &AttentionBottleneck> {
        self.level_blocks.iter().flatten().chain(std::iter::once(&self.fuse))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, features: &[Var; 4]) -> Result<Var> {
        let mut aligned = *features;
        for i in 0..4 {
            let mut x = features[i];
            for b in &self.level_blocks[i] {
                x = b.forward(g, p, x)?;
            }
            aligned[i] = if i == 0 { x } else { g.upsample_nearest(x, 1 << i)? };
        }
        let cat = g.concat_channels(&aligned)?;
        let x = self.fuse.forward(g, p, cat)?;
        self.head.forward(g, p, x)
    }
}

/// Handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// R-Conv-2..5 backbone outputs.
    pub backbone: [Var; 4],
    /// Conv-2..5: backbone outputs reduced to D channels.
    pub pyramid: Pyramid,
    /// Pyramid entering the GlobalNet (CSM-enhanced and optionally reduced).
    pub enhanced: Pyramid,
    pub global: GlobalOutput,
    pub refined: Var,
}

/// The full pose network with its parameters' handles.
#[derive(Clone, Debug)]
pub struct PoseNet {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub reducers: [Conv; 4],
    pub csm: Option<ChannelShuffleModule>,
    pub csm_reducers: Option<[Conv; 4]>,
    pub global: GlobalNet,
    pub refine: RefineNet,
}

impl PoseNet {
    /// Builds the model and registers its parameters in a fresh store.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let d = cfg.base_channels;
        let backbone = Backbone::new(&mut store, &mut init, &cfg);
        let reducers = std::array::from_fn(|i| reduce_1x1(&mut store, &mut init, &format!("reduce{}", i + 2), d << i, d));
        let csm = if cfg.use_csm {
            Some(ChannelShuffleModule::new(&mut store, &mut init, "csm", d, cfg.groups)?)
        } else {
            None
        };
        let csm_reducers = (cfg.use_csm && cfg.csm_reduce)
            .then(|| std::array::from_fn(|i| reduce_1x1(&mut store, &mut init, &format!("csm.reduce{}", i + 2), 2 * d, d)));
        let global_in = if cfg.use_csm && !cfg.csm_reduce { 2 * d } else { d };
        let global = GlobalNet::new(&mut store, &mut init, &cfg, global_in);
        let refine = RefineNet::new(&mut store, &mut init, &cfg);
        Ok((
            PoseNet {
                cfg,
                backbone,
                reducers,
                csm,
                csm_reducers,
                global,
                refine,
            },
            store,
        ))
    }

    fn check_image(&self, g: &Graph, image: Var) -> Result<()> {
        let d = g.dims(image);
        if d.c != 3 {
            return Err(Error::shape(
                "pose_net",
                "channel",
                format!("image must have 3 channels, got {}", d),
            ));
        }
        if (d.h, d.w) != (self.cfg.input_h, self.cfg.input_w) {
            return Err(Error::shape(
                "pose_net",
                "spatial",
                format!(
                    "image is {}x{}, model expects {}x{}",
                    d.h, d.w, self.cfg.input_h, self.cfg.input_w
                ),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, image: Var) -> Result<Forward> {
        self.check_image(g, image)?;
        let backbone = self.backbone.forward(g, p, image)?;
        let mut conv = backbone;
        for i in 0..4 {
            conv[i] = self.reducers[i].forward(g, p, backbone[i])?;
        }
        let pyramid = Pyramid::new(conv);
        let enhanced = match &self.csm {
            Some(csm) => {
                let mut e = csm.forward(g, p, &pyramid)?;
                if let Some(red) = &self.csm_reducers {
                    for i in 0..4 {
                        e.levels[i] = red[i].forward(g, p, e.levels[i])?;
                    }
                }
                e
            }
            None => pyramid,
        };
        let global = self.global.forward(g, p, &enhanced)?;
        let refined = self.refine.forward(g, p, &global.features)?;
        Ok(Forward {
            backbone,
            pyramid,
            enhanced,
            global,
            refined,
        })
    }

    /// Forward pass plus GlobalNet L2 and RefineNet OHKM losses.
    /// `targets` is (n, K, h/4, w/4); `visible` flags each (sample, keypoint).
    pub fn forward_loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        image: Var,
        targets: &Tensor,
        visible: &[bool],
    ) -> Result<(Forward, Var, LossReport)> {
        let fwd = self.forward(g, p, image)?;
        let t = g.leaf(targets.clone());
        let mut global = [0.0; 4];
        let mut level_vars = [fwd.refined; 4];
        let mut invisible = 0;
        for i in 0..4 {
            let (l, inv) = l2_loss(g, fwd.global.heatmaps[i], t, visible)?;
            level_vars[i] = l;
            global[i] = g.value(l).data()[0];
            invisible = inv;
        }
        let (refine, _) = ohkm_loss(g, fwd.refined, t, visible, self.cfg.ohkm_k)?;
        let mut acc = level_vars[0];
        for v in &level_vars[1..] {
            acc = g.add(acc, *v)?;
        }
        let mean = g.scale(acc, 0.25);
        let total = g.add(mean, refine)?;
        let report = LossReport {
            global,
            refine: g.value(refine).data()[0],
            total: g.value(total).data()[0],
            invisible_samples: invisible,
        };
        Ok((fwd, total, report))
    }

    /// Refined heatmaps for a batch of images.
    pub fn predict(&self, store: &ParamStore, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.leaf(images.clone());
        let f = self.forward(&mut g, &p, x)?;
        Ok(g.value(f.refined).clone())
    }

    /// Initializes the CSM path so that it reproduces the plain pyramid:
    /// one shuffle group, identity fuse convolutions, and post-CSM reducers
    /// that select the original Conv-ℓ half of each enhanced level.
    pub fn set_baseline_csm(&mut self, store: &mut ParamStore) -> Result<()> {
        let d = self.cfg.base_channels;
        if let Some(csm) = &mut self.csm {
            csm.spec = crate::csm::ShuffleSpec::new(1, 4 * d)?;
            csm.set_identity_fuse(store);
        }
        if let Some(red) = &self.csm_reducers {
            for r in red {
                let w = store.get_mut(r.weight);
                w.data_mut().fill(0.0);
                for c in 0..d {
                    w.set(c, d + c, 0, 0, 1.0);
                }
                store.get_mut(r.bias).data_mut().fill(0.0);
            }
        }
        Ok(())
    }

    /// Zeroes every spatial and channel gate in the RefineNet.
    pub fn zero_attention(&self, store: &mut ParamStore) {
        for b in self.refine.blocks() {
            b.zero_attention(store);
        }
    }
}
