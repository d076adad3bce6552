//! Gaussian heatmap targets, quarter-offset decoding and flip-averaged
//! inference.

use crate::error::{Error, Result};
use crate::network::HEATMAP_STRIDE;
use crate::tensor::Tensor;

/// Left/right joint pairs of the 17-keypoint COCO layout.
pub const COCO_FLIP_PAIRS: [(usize, usize); 8] = [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16)];

/// A keypoint in input pixels. `v` follows the COCO convention:
/// 0 unlabeled, 1 labeled but occluded, 2 visible.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub v: u8,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, v: u8) -> Self {
        Keypoint { x, y, v }
    }

    /// Whether the keypoint takes part in losses and evaluation.
    pub fn labeled(&self) -> bool {
        self.v > 0
    }
}

#[derive(Clone, Debug)]
pub struct Encoded {
    /// (1, K, out_h, out_w) targets.
    pub heatmaps: Tensor,
    /// Labeled keypoints whose grid position had to be clamped into range.
    pub clamped: usize,
}

/// Renders one Gaussian per labeled keypoint, centered at the grid point
/// nearest to `(x, y) / 4` so the peak is exactly 1. Unlabeled keypoints
/// give an all-zero channel.
pub fn encode(kps: &[Keypoint], out_h: usize, out_w: usize, sigma: f64) -> Result<Encoded> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config("sigma", "must be positive"));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("encode", "spatial", "empty heatmap grid"));
    }
    let mut heatmaps = Tensor::zeros([1, kps.len(), out_h, out_w]);
    let mut clamped = 0;
    let denom = 2.0 * sigma * sigma;
    let stride = HEATMAP_STRIDE as f64;
    for (k, kp) in kps.iter().enumerate() {
        if !kp.labeled() {
            continue;
        }
        let gy = (kp.y / stride).round();
        let gx = (kp.x / stride).round();
        let cy = gy.clamp(0.0, (out_h - 1) as f64);
        let cx = gx.clamp(0.0, (out_w - 1) as f64);
        if cy != gy || cx != gx || !gy.is_finite() || !gx.is_finite() {
            clamped += 1;
        }
        let plane = heatmaps.plane_mut(0, k);
        for i in 0..out_h {
            let dy = i as f64 - cy;
            for j in 0..out_w {
                let dx = j as f64 - cx;
                plane[i * out_w + j] = (-(dy * dy + dx * dx) / denom).exp();
            }
        }
    }
    Ok(Encoded { heatmaps, clamped })
}

/// Where the second-highest response is searched for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SecondPeak {
    /// Anywhere in the channel except the argmax itself.
    #[default]
    Global,
    /// Among the 8 neighbors of the argmax.
    Neighborhood,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodedKeypoint {
    /// Input-pixel coordinates.
    pub x: f64,
    pub y: f64,
    /// Peak heatmap value.
    pub score: f64,
    /// Set when every value in the channel is equal.
    pub low_confidence: bool,
}

/// Lowest flat index among the maxima of `plane` restricted to `candidates`.
fn best(plane: &[f64], candidates: impl Iterator<Item = usize>) -> Option<usize> {
    let mut out: Option<usize> = None;
    for i in candidates {
        if out.is_none_or(|b| plane[i] > plane[b]) {
            out = Some(i);
        }
    }
    out
}

/// Decodes every channel of sample `n`: the argmax is moved a quarter grid
/// cell toward the second-highest response, then scaled to input pixels.
/// Ties resolve to the lowest flat index.
pub fn decode(hm: &Tensor, n: usize, mode: SecondPeak) -> Result<Vec<DecodedKeypoint>> {
    let d = hm.dims();
    if n >= d.n {
        return Err(Error::shape("decode", "batch", format!("sample {} of {}", n, d.n)));
    }
    if d.plane() == 0 {
        return Err(Error::shape("decode", "spatial", "empty heatmap"));
    }
    if !hm.is_finite() {
        return Err(Error::Numeric("non-finite heatmap passed to decode".into()));
    }
    let stride = HEATMAP_STRIDE as f64;
    let mut out = Vec::with_capacity(d.c);
    for c in 0..d.c {
        let plane = hm.plane(n, c);
        let p1 = best(plane, 0..plane.len()).expect("non-empty plane");
        let (r1, c1) = ((p1 / d.w) as f64, (p1 % d.w) as f64);
        let p2 = match mode {
            SecondPeak::Global => best(plane, (0..plane.len()).filter(|&i| i != p1)),
            SecondPeak::Neighborhood => {
                let (r, q) = ((p1 / d.w) as isize, (p1 % d.w) as isize);
                let neighbors = (-1..=1isize)
                    .flat_map(|dr| (-1..=1isize).map(move |dq| (r + dr, q + dq)))
                    .filter(|&(rr, qq)| (rr, qq) != (r, q) && rr >= 0 && qq >= 0)
                    .filter(|&(rr, qq)| (rr as usize) < d.h && (qq as usize) < d.w)
                    .map(|(rr, qq)| rr as usize * d.w + qq as usize);
                best(plane, neighbors)
            }
        };
        let (mut gx, mut gy) = (c1, r1);
        if let Some(p2) = p2 {
            let dx = (p2 % d.w) as f64 - c1;
            let dy = (p2 / d.w) as f64 - r1;
            let len = dx.hypot(dy);
            gx += 0.25 * dx / len;
            gy += 0.25 * dy / len;
        }
        let low_confidence = plane.iter().all(|v| *v == plane[0]);
        out.push(DecodedKeypoint {
            x: gx * stride,
            y: gy * stride,
            score: plane[p1],
            low_confidence,
        });
    }
    Ok(out)
}

/// Involutive channel map built from left/right pairs; unpaired channels map
/// to themselves.
pub fn flip_map(channels: usize, pairs: &[(usize, usize)]) -> Result<Vec<usize>> {
    let mut map: Vec<usize> = (0..channels).collect();
    let mut seen = vec![false; channels];
    for &(a, b) in pairs {
        if a >= channels || b >= channels {
            return Err(Error::config(
                "flip_pairs",
                format!("pair ({a}, {b}) outside {channels} keypoints"),
            ));
        }
        if a == b || seen[a] || seen[b] {
            return Err(Error::config("flip_pairs", format!("pair ({a}, {b}) breaks the involution")));
        }
        seen[a] = true;
        seen[b] = true;
        map[a] = b;
        map[b] = a;
    }
    Ok(map)
}

/// Averages `model(image)` with the un-mirrored, pair-swapped output on the
/// mirrored image.
pub fn flip_average<F>(model: F, image: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let direct = model(image)?;
    let mirrored = model(&image.flip_horizontal())?.flip_horizontal();
    if mirrored.dims() != direct.dims() {
        return Err(Error::shape(
            "flip_average",
            "spatial",
            format!("{} vs {}", direct.dims(), mirrored.dims()),
        ));
    }
    let d = direct.dims();
    let map = flip_map(d.c, pairs)?;
    let mut out = direct.clone();
    for n in 0..d.n {
        for c in 0..d.c {
            let src = mirrored.plane(n, map[c]);
            for (o, s) in out.plane_mut(n, c).iter_mut().zip(src) {
                *o = 0.5 * (*o + s);
            }
        }
    }
    Ok(out)
}
