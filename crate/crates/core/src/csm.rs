//! Channel Shuffle Module: cross-level channel mixing over a 4-level pyramid.
//!
//! Levels 3..5 are upsampled to level-2 resolution, all four are
//! concatenated, the channel axis is shuffled, and the result is split back,
//! downsampled to each level's resolution, fused by a per-level 1×1 conv and
//! finally concatenated with the original level features.

use crate::error::{Error, Result};
use crate::layers::Conv;
use crate::params::{Bound, Init, ParamStore};
use crate::tensor::{Graph, Var};

/// Group layout for a channel shuffle over `channels` channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShuffleSpec {
    groups: usize,
    channels: usize,
}

impl ShuffleSpec {
    pub fn new(groups: usize, channels: usize) -> Result<Self> {
        if groups == 0 || channels == 0 {
            return Err(Error::config("groups", "groups and channels must be positive"));
        }
        if !channels.is_multiple_of(groups) {
            return Err(Error::config(
                "groups",
                format!("{groups} groups do not divide {channels} channels"),
            ));
        }
        Ok(ShuffleSpec { groups, channels })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Channels per group.
    pub fn group_size(&self) -> usize {
        self.channels / self.groups
    }

    /// The spec that undoes this one: (g, c) -> (c, g).
    pub fn transposed(&self) -> ShuffleSpec {
        ShuffleSpec {
            groups: self.group_size(),
            channels: self.channels,
        }
    }

    /// `perm[p]` is the source channel written to destination `p`.
    ///
    /// Reshaping the channel axis to (g, c), transposing to (c, g) and
    /// flattening sends source `i` to destination `(i mod c) * g + i / c`.
    pub fn permutation(&self) -> Vec<usize> {
        let (g, c) = (self.groups, self.group_size());
        let mut perm = vec![0; self.channels];
        for i in 0..self.channels {
            perm[(i % c) * g + i / c] = i;
        }
        perm
    }

    pub fn inverse_permutation(&self) -> Vec<usize> {
        invert(&self.permutation())
    }
}

pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (dst, &src) in perm.iter().enumerate() {
        inv[src] = dst;
    }
    inv
}

/// Permutes the channels of `x` by `spec`.
pub fn channel_shuffle(g: &mut Graph, x: Var, spec: &ShuffleSpec) -> Result<Var> {
    let c = g.dims(x).c;
    if c != spec.channels() {
        return Err(Error::shape(
            "channel_shuffle",
            "channel",
            format!("input has {} channels, spec expects {}", c, spec.channels()),
        ));
    }
    g.permute_channels(x, &spec.permutation())
}

/// Four pyramid levels, index 0 = level 2 (stride 4) through index 3 = level 5 (stride 32).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pyramid {
    pub levels: [Var; 4],
}

impl Pyramid {
    pub const FIRST_LEVEL: usize = 2;

    pub fn new(levels: [Var; 4]) -> Self {
        Pyramid { levels }
    }

    pub fn level(&self, level: usize) -> Var {
        self.levels[level - Self::FIRST_LEVEL]
    }

    /// Checks equal batch and channel extents and exact halving of the
    /// spatial extents level to level. Returns the shared channel count.
    pub fn validate(&self, g: &Graph) -> Result<usize> {
        let d0 = g.dims(self.levels[0]);
        for (i, v) in self.levels.iter().enumerate().skip(1) {
            let d = g.dims(*v);
            if d.n != d0.n {
                return Err(Error::shape(
                    "pyramid",
                    "batch",
                    format!("level {} has {} vs {}", i + 2, d, d0),
                ));
            }
            if d.c != d0.c {
                return Err(Error::shape(
                    "pyramid",
                    "channel",
                    format!("level {} has {} vs {}", i + 2, d, d0),
                ));
            }
            let f = 1 << i;
            if d.h * f != d0.h || d.w * f != d0.w {
                return Err(Error::shape(
                    "pyramid",
                    "spatial",
                    format!("level {} is {}x{}, expected {}/{f} x {}/{f}", i + 2, d.h, d.w, d0.h, d0.w),
                ));
            }
        }
        Ok(d0.c)
    }
}

/// Intermediate maps of one CSM pass, exposed for inspection.
#[derive(Clone, Copy, Debug)]
pub struct CsmTrace {
    /// Complementary features after split and downsampling (C-Conv-2..5).
    pub complementary: [Var; 4],
    /// Fused shuffled features (S-Conv-2..5).
    pub shuffled: [Var; 4],
    /// Output: concat(S-Conv, Conv) per level.
    pub enhanced: Pyramid,
}

#[derive(Clone, Debug)]
pub struct ChannelShuffleModule {
    pub spec: ShuffleSpec,
    pub channels: usize,
    pub fuse: [Conv; 4],
}

impl ChannelShuffleModule {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, channels: usize, groups: usize) -> Result<Self> {
        let spec = ShuffleSpec::new(groups, 4 * channels)?;
        let fuse = std::array::from_fn(|i| {
            Conv::same(
                store,
                init,
                &format!("{name}.fuse{}", i + Pyramid::FIRST_LEVEL),
                channels,
                channels,
                1,
            )
        });
        Ok(ChannelShuffleModule { spec, channels, fuse })
    }

    pub fn set_identity_fuse(&self, store: &mut ParamStore) {
        for c in &self.fuse {
            c.set_identity(store);
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, pyr: &Pyramid) -> Result<Pyramid> {
        Ok(self.trace(g, p, pyr)?.enhanced)
    }

    pub fn trace(&self, g: &mut Graph, p: &Bound, pyr: &Pyramid) -> Result<CsmTrace> {
        let d = pyr.validate(g)?;
        if d != self.channels {
            return Err(Error::shape(
                "csm_forward",
                "channel",
                format!("pyramid has {} channels, module expects {}", d, self.channels),
            ));
        }
        let mut aligned = [pyr.levels[0]; 4];
        for i in 1..4 {
            aligned[i] = g.upsample_nearest(pyr.levels[i], 1 << i)?;
        }
        let psi = g.concat_channels(&aligned)?;
        let shuffled = channel_shuffle(g, psi, &self.spec)?;
        let blocks = g.split_channels(shuffled, &[d; 4])?;
        let mut complementary = [blocks[0]; 4];
        let mut fused = [blocks[0]; 4];
        let mut enhanced = [blocks[0]; 4];
        for i in 0..4 {
            complementary[i] = if i == 0 {
                blocks[0]
            } else {
                g.downsample_avg(blocks[i], 1 << i)?
            };
            fused[i] = self.fuse[i].forward(g, p, complementary[i])?;
            enhanced[i] = g.concat_channels(&[fused[i], pyr.levels[i]])?;
        }
        Ok(CsmTrace {
            complementary,
            shuffled: fused,
            enhanced: Pyramid::new(enhanced),
        })
    }
}
