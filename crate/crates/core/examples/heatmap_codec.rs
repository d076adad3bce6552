//! Encodes a synthetic person into Gaussian heatmaps, perturbs them and
//! decodes keypoints with both second-peak rules.

use cspose::codec::{decode, encode, SecondPeak};
use cspose::pipeline::data::make_sample;
use cspose::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cspose::Result<()> {
    let sample = make_sample(7, 0, 128, 96);
    let enc = encode(&sample.keypoints, 32, 24, 2.0)?;
    let noise = Tensor::uniform(enc.heatmaps.dims(), 0.0, 0.05, &mut ChaCha8Rng::seed_from_u64(8));
    let mut noisy = enc.heatmaps.clone();
    for (v, n) in noisy.data_mut().iter_mut().zip(noise.data()) {
        *v += n;
    }

    let global = decode(&noisy, 0, SecondPeak::Global)?;
    let local = decode(&noisy, 0, SecondPeak::Neighborhood)?;
    println!("{:>3} {:>16} {:>18} {:>18}", "k", "truth (v)", "global", "neighborhood");
    for (i, k) in sample.keypoints.iter().enumerate() {
        println!(
            "{i:>3} ({:>5.1},{:>5.1}) v{} ({:>6.2},{:>6.2}) {:.2} ({:>6.2},{:>6.2}) {:.2}",
            k.x, k.y, k.v, global[i].x, global[i].y, global[i].score, local[i].x, local[i].y, local[i].score
        );
    }
    Ok(())
}
