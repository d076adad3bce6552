//! Writes a few synthetic people as PNGs plus annotations, then reads them
//! back.
//!
//! cargo run --example synthetic_data -- [out_dir] [count]

use std::path::PathBuf;

use cspose::pipeline::data::{load_dataset, make_dataset, save_dataset};

fn main() -> cspose::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic-people".into()));
    let n = args.next().map_or(8, |s| s.parse().expect("count"));

    let data = make_dataset(n, 1, 128, 96);
    save_dataset(&dir, &data)?;
    let back = load_dataset(&dir, 128, 96)?;
    for (a, b) in data.iter().zip(&back) {
        let visible = a.keypoints.iter().filter(|k| k.v == 2).count();
        let occluded = a.keypoints.iter().filter(|k| k.v == 1).count();
        println!(
            "sample {}: box {:.1?}, {visible} visible, {occluded} occluded, max pixel error after PNG {:.4}",
            a.id,
            a.bbox,
            a.image.max_abs_diff(&b.image)
        );
    }
    println!("wrote {} samples to {}", back.len(), dir.display());
    Ok(())
}
