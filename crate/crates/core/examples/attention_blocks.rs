//! Spatial and channel gates on a random feature map, and how far the two
//! gate orders (SCARB vs CSARB) drift apart.

use cspose::attention::{AttentionBottleneck, ChannelAttention, SpatialAttention, Variant};
use cspose::params::{Init, ParamStore};
use cspose::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn range(t: &Tensor) -> (f64, f64) {
    t.data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn main() -> cspose::Result<()> {
    let c = 8;
    let x = Tensor::uniform([1, c, 6, 6], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));

    let mut store = ParamStore::new();
    let mut init = Init::new(2);
    let spatial = SpatialAttention::new(&mut store, &mut init, "spatial", c);
    let channel = ChannelAttention::new(&mut store, &mut init, "channel", c);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let xv = g.leaf(x.clone());
    let beta = spatial.gate(&mut g, &p, xv)?;
    let alpha = channel.gate(&mut g, &p, xv)?;
    println!("beta  {} range {:.4?}", g.dims(beta), range(g.value(beta)));
    println!("alpha {} range {:.4?}", g.dims(alpha), range(g.value(alpha)));

    let run = |variant, zero: bool| -> cspose::Result<Tensor> {
        let mut store = ParamStore::new();
        let block = AttentionBottleneck::new(&mut store, &mut Init::new(3), "block", c, c, variant);
        if zero {
            block.zero_attention(&mut store);
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xv = g.leaf(x.clone());
        let y = block.forward(&mut g, &p, xv)?;
        Ok(g.value(y).clone())
    };
    for zero in [true, false] {
        let d = run(Variant::Scarb, zero)?.max_abs_diff(&run(Variant::Csarb, zero)?);
        println!(
            "{} gates: max |scarb - csarb| = {d:e}",
            if zero { "zeroed" } else { "random" }
        );
    }
    Ok(())
}
