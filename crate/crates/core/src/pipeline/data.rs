//! Synthetic stick-figure people, the rotation/scale augmentation, and
//! on-disk datasets (PNG images plus a record file).

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::codec::Keypoint;
use crate::error::{Error, Result};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::records::{read_records, write_records, Record};
use crate::tensor::Tensor;

pub const NUM_JOINTS: usize = 17;

/// Record file inside a dataset directory.
pub const ANNOTATIONS: &str = "annotations.txt";

/// Limbs drawn between joints (COCO keypoint order).
pub const SKELETON: [(usize, usize); 18] = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (0, 5),
    (0, 6),
    (5, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
];

/// One annotated person image.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    /// (1, 3, h, w) with values in [0, 1].
    pub image: Tensor,
    pub keypoints: Vec<Keypoint>,
    /// `(x, y, w, h)`.
    pub bbox: [f64; 4],
}

impl Sample {
    pub fn visibility(&self) -> Vec<bool> {
        self.keypoints.iter().map(|k| k.labeled()).collect()
    }

    pub fn record(&self) -> Record {
        Record {
            image_id: self.id,
            bbox: self.bbox,
            score: 1.0,
            keypoints: self.keypoints.clone(),
        }
    }
}

/// Figure parameters. Angles are in radians; limb angles are measured from
/// straight down and are relative to the torso lean, the elbow and knee
/// angles relative to the upper limb.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseParams {
    /// Pelvis center in pixels.
    pub pelvis: (f64, f64),
    /// Lean of the torso from vertical (positive tilts the top to the right).
    pub lean: f64,
    pub torso: f64,
    pub shoulder_width: f64,
    pub hip_width: f64,
    pub neck: f64,
    pub head: f64,
    pub head_tilt: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shin: f64,
    /// `[left, right]` limb angles.
    pub shoulder: [f64; 2],
    pub elbow: [f64; 2],
    pub hip: [f64; 2],
    pub knee: [f64; 2],
}

fn add(p: (f64, f64), s: f64, d: (f64, f64)) -> (f64, f64) {
    (p.0 + s * d.0, p.1 + s * d.1)
}

/// Unit vector at angle `a` from straight down, turning toward +x.
fn down(a: f64) -> (f64, f64) {
    (a.sin(), a.cos())
}

impl PoseParams {
    pub fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let (h, w) = (h as f64, w as f64);
        let body = h * rng.gen_range(0.55..0.8);
        let t = body * 0.3;
        let side = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| [rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
        let mut shoulder = side(rng, 0.1, 1.8);
        shoulder[1] = -shoulder[1];
        let mut hip = side(rng, 0.0, 0.5);
        hip[1] = -hip[1];
        PoseParams {
            pelvis: (w * rng.gen_range(0.4..0.6), h * rng.gen_range(0.5..0.6)),
            lean: rng.gen_range(-0.25..0.25),
            torso: t,
            shoulder_width: t * rng.gen_range(0.6..0.9),
            hip_width: t * rng.gen_range(0.4..0.6),
            neck: t * rng.gen_range(0.25..0.35),
            head: t * rng.gen_range(0.2..0.3),
            head_tilt: rng.gen_range(-0.3..0.3),
            upper_arm: t * rng.gen_range(0.5..0.7),
            forearm: t * rng.gen_range(0.45..0.65),
            thigh: t * rng.gen_range(0.7..0.9),
            shin: t * rng.gen_range(0.65..0.85),
            shoulder,
            elbow: [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)],
            hip,
            knee: [rng.gen_range(-0.8..0.2), rng.gen_range(-0.2..0.8)],
        }
    }

    /// Joint positions in COCO order. The figure faces the viewer, so its
    /// left side appears on the right of the image.
    pub fn joints(&self) -> [(f64, f64); NUM_JOINTS] {
        let up = (self.lean.sin(), -self.lean.cos());
        let right = (self.lean.cos(), self.lean.sin());
        let neck = add(self.pelvis, self.torso, up);
        let mut j = [(0.0, 0.0); NUM_JOINTS];
        let head_up = ((self.lean + self.head_tilt).sin(), -(self.lean + self.head_tilt).cos());
        let head_right = ((self.lean + self.head_tilt).cos(), (self.lean + self.head_tilt).sin());
        let nose = add(neck, self.neck, head_up);
        j[0] = nose;
        for (s, (eye, ear)) in [(1.0, (1, 3)), (-1.0, (2, 4))] {
            j[eye] = add(add(nose, s * 0.35 * self.head, head_right), 0.35 * self.head, head_up);
            j[ear] = add(add(nose, s * 0.8 * self.head, head_right), 0.1 * self.head, head_up);
        }
        for (side, s) in [(0usize, 1.0), (1, -1.0)] {
            let shoulder = add(neck, s * 0.5 * self.shoulder_width, right);
            let hip = add(self.pelvis, s * 0.5 * self.hip_width, right);
            let a = self.lean + self.shoulder[side];
            let elbow = add(shoulder, self.upper_arm, down(a));
            let wrist = add(elbow, self.forearm, down(a + self.elbow[side]));
            let b = self.lean + self.hip[side];
            let knee = add(hip, self.thigh, down(b));
            let ankle = add(knee, self.shin, down(b + self.knee[side]));
            j[5 + side] = shoulder;
            j[7 + side] = elbow;
            j[9 + side] = wrist;
            j[11 + side] = hip;
            j[13 + side] = knee;
            j[15 + side] = ankle;
        }
        j
    }
}

fn limb_color(a: usize, b: usize) -> [f64; 3] {
    let side = |j: usize| {
        if j == 0 {
            0
        } else if j % 2 == 1 {
            1
        } else {
            2
        }
    };
    match (side(a), side(b)) {
        (1, 1) => [1.0, 0.35, 0.2],
        (2, 2) => [0.2, 1.0, 0.35],
        _ => [0.35, 0.45, 1.0],
    }
}

/// Distance from `p` to the segment `a`-`b`.
fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Blends an anti-aliased thick segment into `image` (pixel `(i, j)` sits
/// at coordinates `(j, i)`).
fn draw_segment(image: &mut Tensor, a: (f64, f64), b: (f64, f64), half_width: f64, color: [f64; 3]) {
    let d = image.dims();
    let reach = half_width + 1.0;
    let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
    let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + reach).ceil().max(-1.0) as isize).min(d.w as isize - 1);
    let y1 = ((a.1.max(b.1) + reach).ceil().max(-1.0) as isize).min(d.h as isize - 1);
    if x1 < 0 || y1 < 0 {
        return;
    }
    for i in y0..=y1 as usize {
        for j in x0..=x1 as usize {
            let alpha = (half_width + 0.5 - segment_distance((j as f64, i as f64), a, b)).clamp(0.0, 1.0);
            if alpha == 0.0 {
                continue;
            }
            for (c, col) in color.iter().enumerate() {
                let v = image.at(0, c, i, j);
                image.set(0, c, i, j, v * (1.0 - alpha) + col * alpha);
            }
        }
    }
}

fn inside(x: f64, y: f64, h: usize, w: usize) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64
}

/// Tight box around the labeled keypoints grown by 10% per side and clipped
/// to the image; the whole image when nothing is labeled.
pub fn person_box(kps: &[Keypoint], h: usize, w: usize) -> [f64; 4] {
    let pts: Vec<&Keypoint> = kps.iter().filter(|k| k.labeled()).collect();
    if pts.is_empty() {
        return [0.0, 0.0, (w - 1) as f64, (h - 1) as f64];
    }
    let x0 = pts.iter().map(|k| k.x).fold(f64::INFINITY, f64::min);
    let x1 = pts.iter().map(|k| k.x).fold(f64::NEG_INFINITY, f64::max);
    let y0 = pts.iter().map(|k| k.y).fold(f64::INFINITY, f64::min);
    let y1 = pts.iter().map(|k| k.y).fold(f64::NEG_INFINITY, f64::max);
    let (mx, my) = (0.1 * (x1 - x0), 0.1 * (y1 - y0));
    let bx0 = (x0 - mx).max(0.0);
    let by0 = (y0 - my).max(0.0);
    let bx1 = (x1 + mx).min((w - 1) as f64);
    let by1 = (y1 + my).min((h - 1) as f64);
    [bx0, by0, bx1 - bx0, by1 - by0]
}

/// Draws one figure from `params` over a noise background.
pub fn render(
    params: &PoseParams,
    occluded: &[bool; NUM_JOINTS],
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
) -> (Tensor, Vec<Keypoint>) {
    let mut image = Tensor::zeros([1, 3, h, w]);
    for v in image.data_mut() {
        *v = rng.gen_range(0.0..0.3);
    }
    let joints = params.joints();
    let width = (params.torso * 0.06).max(0.8);
    for &(a, b) in &SKELETON {
        draw_segment(&mut image, joints[a], joints[b], width, limb_color(a, b));
    }
    let keypoints: Vec<Keypoint> = joints
        .iter()
        .zip(occluded)
        .map(|(&(x, y), &occ)| {
            let v = if !inside(x, y, h, w) {
                0
            } else if occ {
                1
            } else {
                2
            };
            Keypoint::new(x, y, v)
        })
        .collect();
    for k in keypoints.iter().filter(|k| k.v == 2) {
        draw_segment(&mut image, (k.x, k.y), (k.x, k.y), width * 1.6, [1.0, 1.0, 1.0]);
    }
    (image, keypoints)
}

/// Sample `index` of the dataset generated from `seed`; every sample draws
/// from its own stream so samples do not depend on one another.
pub fn make_sample(seed: u64, index: u64, h: usize, w: usize) -> Sample {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let params = PoseParams::random(&mut rng, h, w);
    let occluded: [bool; NUM_JOINTS] = std::array::from_fn(|_| rng.gen_bool(0.1));
    let (image, keypoints) = render(&params, &occluded, &mut rng, h, w);
    let bbox = person_box(&keypoints, h, w);
    Sample {
        id: index,
        image,
        keypoints,
        bbox,
    }
}

pub fn make_dataset(n: usize, seed: u64, h: usize, w: usize) -> Vec<Sample> {
    (0..n as u64).map(|i| make_sample(seed, i, h, w)).collect()
}

/// Rotates by `theta_deg` and scales by `scale` about the box center.
/// Keypoints leaving the image become unlabeled.
pub fn warp(sample: &Sample, theta_deg: f64, scale: f64) -> Sample {
    if theta_deg == 0.0 && scale == 1.0 {
        return sample.clone();
    }
    let d = sample.image.dims();
    let [bx, by, bw, bh] = sample.bbox;
    let (cx, cy) = (bx + 0.5 * bw, by + 0.5 * bh);
    let th = theta_deg * PI / 180.0;
    let (s, c) = th.sin_cos();
    let fwd = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + scale * (c * dx - s * dy), cy + scale * (s * dx + c * dy))
    };
    let mut image = Tensor::zeros(d);
    for i in 0..d.h {
        for j in 0..d.w {
            let (dx, dy) = ((j as f64 - cx) / scale, (i as f64 - cy) / scale);
            let (sx, sy) = (cx + c * dx + s * dy, cy - s * dx + c * dy);
            if sx < 0.0 || sy < 0.0 || sx > (d.w - 1) as f64 || sy > (d.h - 1) as f64 {
                continue;
            }
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(d.w - 1), (y0 + 1).min(d.h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..d.c {
                let p = |y: usize, x: usize| sample.image.at(0, ch, y, x);
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                image.set(0, ch, i, j, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    let keypoints: Vec<Keypoint> = sample
        .keypoints
        .iter()
        .map(|k| {
            let (x, y) = fwd(k.x, k.y);
            let v = if inside(x, y, d.h, d.w) { k.v } else { 0 };
            Keypoint::new(x, y, v)
        })
        .collect();
    let corners = [(bx, by), (bx + bw, by), (bx, by + bh), (bx + bw, by + bh)].map(|(x, y)| fwd(x, y));
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| corners.iter().map(sel).fold(init, f);
    let x0 = fold(f64::min, f64::INFINITY, |p| p.0).max(0.0);
    let y0 = fold(f64::min, f64::INFINITY, |p| p.1).max(0.0);
    let x1 = fold(f64::max, f64::NEG_INFINITY, |p| p.0).min((d.w - 1) as f64);
    let y1 = fold(f64::max, f64::NEG_INFINITY, |p| p.1).min((d.h - 1) as f64);
    Sample {
        id: sample.id,
        image,
        keypoints,
        bbox: [x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0)],
    }
}

/// Random rotation in `±rotation_deg` and scale in `[scale_min, scale_max]`.
pub fn augment(sample: &Sample, rng: &mut ChaCha8Rng, cfg: &TrainConfig) -> Sample {
    let theta = if cfg.rotation_deg > 0.0 {
        rng.gen_range(-cfg.rotation_deg..=cfg.rotation_deg)
    } else {
        0.0
    };
    let scale = rng.gen_range(cfg.scale_min..=cfg.scale_max);
    warp(sample, theta, scale)
}

fn image_name(id: u64) -> String {
    format!("img_{id:06}.png")
}

/// Writes 8-bit PNG images and the annotation record file.
pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in samples {
        let d = s.image.dims();
        let mut buf = image::RgbImage::new(d.w as u32, d.h as u32);
        for (x, y, px) in buf.enumerate_pixels_mut() {
            let at = |c| (s.image.at(0, c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
            *px = image::Rgb([at(0), at(1), at(2)]);
        }
        let path = dir.join(image_name(s.id));
        buf.save(&path)
            .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))?;
    }
    let records: Vec<Record> = samples.iter().map(Sample::record).collect();
    write_records(&dir.join(ANNOTATIONS), &records)
}

/// Loads PNG image `id` from `dir` as a (1, 3, h, w) tensor in [0, 1].
pub fn load_image(dir: &Path, id: u64) -> Result<Tensor> {
    let path = dir.join(image_name(id));
    let img = image::open(&path)
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros([1, 3, h, w]);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            t.set(0, c, y as usize, x as usize, px.0[c] as f64 / 255.0);
        }
    }
    Ok(t)
}

/// Reads a dataset written by [`save_dataset`], checking image extents.
pub fn load_dataset(dir: &Path, h: usize, w: usize) -> Result<Vec<Sample>> {
    let records = read_records(&dir.join(ANNOTATIONS))?;
    records
        .into_iter()
        .map(|r| {
            let image = load_image(dir, r.image_id)?;
            let d = image.dims();
            if (d.h, d.w) != (h, w) {
                return Err(Error::Data(format!(
                    "image {} is {}x{}, expected {}x{}",
                    r.image_id, d.h, d.w, h, w
                )));
            }
            Ok(Sample {
                id: r.image_id,
                image,
                keypoints: r.keypoints,
                bbox: r.bbox,
            })
        })
        .collect()
}
