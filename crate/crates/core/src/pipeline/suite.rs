//! Finite-difference gradient suite over every differentiable operation,
//! from single primitives up to the full training loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionBottleneck, ChannelAttention, SpatialAttention, Variant};
use crate::codec::encode;
use crate::csm::{ChannelShuffleModule, Pyramid};
use crate::error::Result;
use crate::gradcheck::{check_all, check_module, weighted_sum, GradCheckConfig, SuiteReport};
use crate::layers::{Bottleneck, Conv, Head};
use crate::network::{ModelConfig, PoseNet};
use crate::params::{Init, ParamStore};
use crate::pipeline::data::make_dataset;
use crate::tensor::{Graph, Tensor, Var};

fn rand_t(dims: [usize; 4], seed: u64) -> Tensor {
    Tensor::uniform(dims, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn prim(
    suite: &mut SuiteReport,
    name: &str,
    inputs: &[Tensor],
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    cfg: &GradCheckConfig,
) -> Result<()> {
    let r = check_all(
        inputs,
        |g, v| {
            let y = f(g, v)?;
            weighted_sum(g, y, 7)
        },
        cfg,
    )?;
    suite.push(name, r);
    Ok(())
}

fn module(
    suite: &mut SuiteReport,
    name: &str,
    store: &ParamStore,
    inputs: &[Tensor],
    f: impl Fn(&mut Graph, &crate::params::Bound, &[Var]) -> Result<Var>,
    cfg: &GradCheckConfig,
) -> Result<()> {
    let r = check_module(
        store,
        inputs,
        |g, p, v| {
            let y = f(g, p, v)?;
            weighted_sum(g, y, 11)
        },
        cfg,
    )?;
    suite.push(name, r);
    Ok(())
}

/// Runs the suite. The full-model check uses `model` (with a two-image
/// batch of synthetic people) and samples a few coordinates per tensor;
/// everything else is checked exhaustively.
pub fn gradient_suite(model: &ModelConfig, seed: u64) -> Result<SuiteReport> {
    let full = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    let mut s = SuiteReport::default();
    prim(
        &mut s,
        "conv2d",
        &[rand_t([2, 3, 6, 5], 1), rand_t([4, 3, 3, 3], 2), rand_t([1, 4, 1, 1], 3)],
        |g, v| g.conv2d(v[0], v[1], v[2], 1, 1),
        &full,
    )?;
    prim(
        &mut s,
        "conv2d_strided",
        &[rand_t([1, 2, 7, 6], 4), rand_t([3, 2, 3, 3], 5), rand_t([1, 3, 1, 1], 6)],
        |g, v| g.conv2d(v[0], v[1], v[2], 2, 1),
        &full,
    )?;
    prim(
        &mut s,
        "fully_connected",
        &[rand_t([3, 5, 1, 1], 7), rand_t([4, 5, 1, 1], 8), rand_t([1, 4, 1, 1], 9)],
        |g, v| g.linear(v[0], v[1], v[2]),
        &full,
    )?;
    prim(&mut s, "relu", &[rand_t([2, 3, 4, 4], 10)], |g, v| Ok(g.relu(v[0])), &full)?;
    prim(
        &mut s,
        "sigmoid",
        &[rand_t([2, 3, 4, 4], 11).map(|v| 4.0 * v)],
        |g, v| Ok(g.sigmoid(v[0])),
        &full,
    )?;
    prim(
        &mut s,
        "global_avg_pool",
        &[rand_t([2, 3, 4, 5], 12)],
        |g, v| g.global_avg_pool(v[0]),
        &full,
    )?;
    prim(
        &mut s,
        "upsample_nearest",
        &[rand_t([1, 2, 3, 2], 13)],
        |g, v| g.upsample_nearest(v[0], 2),
        &full,
    )?;
    prim(
        &mut s,
        "downsample_avg",
        &[rand_t([1, 2, 8, 4], 14)],
        |g, v| g.downsample_avg(v[0], 4),
        &full,
    )?;
    prim(
        &mut s,
        "concat_split",
        &[rand_t([2, 2, 3, 3], 15), rand_t([2, 3, 3, 3], 16)],
        |g, v| {
            let c = g.concat_channels(&[v[0], v[1]])?;
            let parts = g.split_channels(c, &[1, 4])?;
            g.concat_channels(&[parts[1], parts[0]])
        },
        &full,
    )?;
    prim(
        &mut s,
        "keypoint_losses",
        &[rand_t([2, 5, 4, 4], 17), rand_t([2, 5, 4, 4], 18)],
        |g, v| {
            let mask: Vec<bool> = (0..10).map(|i| i % 3 != 0).collect();
            let mse = g.keypoint_mse(v[0], v[1])?;
            let l2 = g.topk_mean(mse, &mask, 5)?;
            let hard = g.topk_mean(mse, &mask, 2)?;
            g.add(l2, hard)
        },
        &full,
    )?;

    let mut init = Init::new(seed);
    let mut store = ParamStore::new();
    let sa = SpatialAttention::new(&mut store, &mut init, "spatial", 4);
    module(
        &mut s,
        "spatial_attention",
        &store,
        &[rand_t([2, 4, 3, 3], 20)],
        |g, p, v| sa.forward(g, p, v[0]),
        &full,
    )?;

    let mut store = ParamStore::new();
    let ca = ChannelAttention::new(&mut store, &mut init, "channel", 4);
    module(
        &mut s,
        "channel_attention",
        &store,
        &[rand_t([2, 4, 3, 3], 21)],
        |g, p, v| ca.forward(g, p, v[0]),
        &full,
    )?;

    let mut store = ParamStore::new();
    let bn = Bottleneck::new(&mut store, &mut init, "bottleneck", 4, 8);
    module(
        &mut s,
        "residual_bottleneck",
        &store,
        &[rand_t([1, 4, 4, 4], 22)],
        |g, p, v| bn.forward(g, p, v[0]),
        &full,
    )?;

    for variant in [Variant::Scarb, Variant::Csarb] {
        let mut store = ParamStore::new();
        let b = AttentionBottleneck::new(&mut store, &mut init, "block", 8, 8, variant);
        module(
            &mut s,
            &format!("{variant}_bottleneck"),
            &store,
            &[rand_t([1, 8, 4, 4], 23)],
            |g, p, v| b.forward(g, p, v[0]),
            &full,
        )?;
    }

    let mut store = ParamStore::new();
    let head = Head::new(&mut store, &mut init, "head", 4, 3);
    module(
        &mut s,
        "head",
        &store,
        &[rand_t([1, 4, 4, 3], 24)],
        |g, p, v| head.forward(g, p, v[0]),
        &full,
    )?;

    let mut store = ParamStore::new();
    let reduce = Conv::same(&mut store, &mut init, "reduce", 6, 4, 1);
    module(
        &mut s,
        "reduce_1x1",
        &store,
        &[rand_t([1, 6, 3, 3], 25)],
        |g, p, v| reduce.forward(g, p, v[0]),
        &full,
    )?;

    let mut store = ParamStore::new();
    let csm = ChannelShuffleModule::new(&mut store, &mut init, "csm", 2, 4)?;
    let pyramid: Vec<Tensor> = (0..4).map(|i| rand_t([1, 2, 8 >> i, 8 >> i], 30 + i as u64)).collect();
    module(
        &mut s,
        "csm",
        &store,
        &pyramid,
        |g, p, v| {
            let out = csm.forward(g, p, &Pyramid::new([v[0], v[1], v[2], v[3]]))?;
            let sums: Vec<Var> = out
                .levels
                .iter()
                .enumerate()
                .map(|(i, l)| weighted_sum(g, *l, 40 + i as u64))
                .collect::<Result<_>>()?;
            let a = g.add(sums[0], sums[1])?;
            let b = g.add(sums[2], sums[3])?;
            g.add(a, b)
        },
        &full,
    )?;

    let (net, store) = PoseNet::new(model.clone(), seed)?;
    let data = make_dataset(2, seed, model.input_h, model.input_w);
    let images = Tensor::stack(&data.iter().map(|d| d.image.clone()).collect::<Vec<_>>())?;
    let targets = Tensor::stack(
        &data
            .iter()
            .map(|d| encode(&d.keypoints, model.heatmap_h(), model.heatmap_w(), model.sigma).map(|e| e.heatmaps))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let visible: Vec<bool> = data.iter().flat_map(|d| d.visibility()).collect();
    let sampled = GradCheckConfig {
        coords_per_input: Some(2),
        seed,
        ..GradCheckConfig::default()
    };
    let r = check_module(
        &store,
        &[images],
        |g, p, v| Ok(net.forward_loss(g, p, v[0], &targets, &visible)?.1),
        &sampled,
    )?;
    s.push("forward_loss", r);
    Ok(s)
}
