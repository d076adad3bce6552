//! OKS between jittered and true poses, then AP/AR over the standard
//! threshold sweep as the jitter grows.

use cspose::eval::{average_precision, coco_thresholds, keypoint_box_area, Detection, GroundTruth, OksConstants};
use cspose::pipeline::data::make_dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cspose::Result<()> {
    let people = make_dataset(20, 9, 128, 96);
    let consts = OksConstants::coco();
    let gts: Vec<GroundTruth> = people
        .iter()
        .map(|s| GroundTruth {
            image_id: s.id,
            area: keypoint_box_area(&s.keypoints, 1.0).unwrap_or(1.0),
            keypoints: s.keypoints.clone(),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for jitter in [0.0, 1.0, 2.0, 4.0, 8.0] {
        let dets: Vec<Detection> = people
            .iter()
            .map(|s| Detection {
                image_id: s.id,
                score: rng.gen(),
                keypoints: s
                    .keypoints
                    .iter()
                    .map(|k| {
                        let mut k = *k;
                        k.x += rng.gen_range(-jitter..=jitter);
                        k.y += rng.gen_range(-jitter..=jitter);
                        k
                    })
                    .collect(),
            })
            .collect();
        let s = average_precision(&dets, &gts, &coco_thresholds(), &consts)?;
        println!("jitter {jitter:>4} px");
        print!("{s}");
    }
    Ok(())
}
