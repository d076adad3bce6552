//! Channel shuffle on a labelled tensor: each channel is filled with its own
//! index, so the output shows where every source channel landed.
//!
//! cargo run --example shuffle_permutation -- [channels] [groups]

use cspose::csm::{channel_shuffle, ShuffleSpec};
use cspose::{Graph, Tensor};

fn main() -> cspose::Result<()> {
    let mut args = std::env::args().skip(1);
    let channels: usize = args.next().map_or(12, |s| s.parse().expect("channels"));
    let groups: usize = args.next().map_or(3, |s| s.parse().expect("groups"));

    let spec = ShuffleSpec::new(groups, channels)?;
    let labels: Vec<f64> = (0..channels).map(|c| c as f64).collect();
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec([1, channels, 1, 1], labels)?);
    let y = channel_shuffle(&mut g, x, &spec)?;

    println!("{channels} channels in {groups} groups of {}", spec.group_size());
    println!("output channel <- source channel");
    for (out, src) in g.value(y).data().iter().enumerate() {
        println!("{out:>4} <- {src}");
    }
    let back = channel_shuffle(&mut g, y, &spec.transposed())?;
    assert_eq!(g.value(back).data(), g.value(x).data());
    println!("shuffling with the transposed spec restores the input");
    Ok(())
}
