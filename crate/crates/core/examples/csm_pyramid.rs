//! Runs the channel shuffle module on a four-level pyramid and prints the
//! shape of every intermediate map. With one group and identity fuse convs
//! the shuffled maps reproduce the inputs.

use cspose::csm::{ChannelShuffleModule, Pyramid};
use cspose::params::{Init, ParamStore};
use cspose::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cspose::Result<()> {
    let d = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for groups in [4, 1] {
        let mut store = ParamStore::new();
        let csm = ChannelShuffleModule::new(&mut store, &mut Init::new(5), "csm", d, groups)?;
        if groups == 1 {
            csm.set_identity_fuse(&mut store);
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let levels = std::array::from_fn(|i| g.leaf(Tensor::uniform([1, d, 32 >> i, 24 >> i], -1.0, 1.0, &mut rng)));
        let trace = csm.trace(&mut g, &p, &Pyramid::new(levels))?;
        println!("groups = {groups}");
        for i in 0..4 {
            let dev = g.value(trace.shuffled[i]).max_abs_diff(g.value(levels[i]));
            println!(
                "  level {}: input {}  complementary {}  enhanced {}  |S-Conv - Conv| = {dev:.3e}",
                i + 2,
                g.dims(levels[i]),
                g.dims(trace.complementary[i]),
                g.dims(trace.enhanced.levels[i]),
            );
        }
    }
    Ok(())
}
