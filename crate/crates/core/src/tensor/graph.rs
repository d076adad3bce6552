//! Taped reverse-mode differentiation over whole-tensor primitives.
//!
//! A [`Graph`] owns every value computed during one forward pass. Each
//! primitive appends a node holding its output and the handles of its
//! inputs; [`Graph::backward`] walks the tape in reverse and accumulates
//! adjoints into per-node gradient buffers.

use std::hash::Hasher;

use fnv::FnvHasher;

use super::kernels::{self, ConvGeometry};
use super::value::{Dims, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of an elementwise op is broadcast over the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    /// Identical extents.
    Full,
    /// (n, c, 1, 1): one value per channel.
    PerChannel,
    /// (n, 1, h, w): one value per spatial position.
    PerPosition,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    Upsample {
        x: Var,
        factor: usize,
    },
    Downsample {
        x: Var,
        factor: usize,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
        mode: Broadcast,
    },
    Mul {
        a: Var,
        b: Var,
        mode: Broadcast,
    },
    PermuteChannels {
        x: Var,
        perm: Vec<usize>,
    },
    Sum(Var),
    Scale {
        x: Var,
        factor: f64,
    },
    KeypointMse {
        pred: Var,
        target: Var,
    },
    SelectMean {
        v: Var,
        /// Derivative of the scalar output with respect to each input entry.
        weights: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode tape. Values live inside the graph; callers hold [`Var`]s.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    kinks: u64,
}

impl Default for Graph {
    fn default() -> Self {
        Graph {
            nodes: Vec::new(),
            kinks: FnvHasher::default().finish(),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn record_branch(&mut self, bytes: impl IntoIterator<Item = u8>) {
        let mut h = FnvHasher::with_key(self.kinks);
        for b in bytes {
            h.write_u8(b);
        }
        self.kinks = h.finish();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.clear_grad();
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> Dims {
        self.nodes[v.0].value.dims()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Hash of every data-dependent branch taken so far: ReLU sign patterns
    /// and loss selections. Two forward passes with equal signatures ran the
    /// same piecewise-smooth branch of the function.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xd = self.dims(x);
        let wd = self.dims(w);
        let bd = self.dims(b);
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride", "stride must be at least 1"));
        }
        if wd.c != xd.c {
            return Err(Error::shape(
                "conv2d",
                "channel",
                format!("input has {} channels, weight expects {}", xd.c, wd.c),
            ));
        }
        if bd.numel() != wd.n {
            return Err(Error::shape(
                "conv2d",
                "bias",
                format!("bias has {} entries for {} output channels", bd.numel(), wd.n),
            ));
        }
        if xd.h + 2 * pad < wd.h {
            return Err(Error::shape(
                "conv2d",
                "height",
                format!("kernel {} exceeds padded input {}", wd.h, xd.h + 2 * pad),
            ));
        }
        if xd.w + 2 * pad < wd.w {
            return Err(Error::shape(
                "conv2d",
                "width",
                format!("kernel {} exceeds padded input {}", wd.w, xd.w + 2 * pad),
            ));
        }
        let geom = ConvGeometry {
            input: xd,
            c_out: wd.n,
            kh: wd.h,
            kw: wd.w,
            stride,
            pad,
            oh: (xd.h + 2 * pad - wd.h) / stride + 1,
            ow: (xd.w + 2 * pad - wd.w) / stride + 1,
        };
        let out = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let value = Tensor::from_vec(geom.output(), out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }))
    }

    /// Affine map on (n, c_in, 1, 1) vectors with a (c_out, c_in, 1, 1) weight.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xd = self.dims(x);
        let wd = self.dims(w);
        if xd.h != 1 || xd.w != 1 {
            return Err(Error::shape(
                "linear",
                "spatial",
                format!("input {} is not a vector batch", xd),
            ));
        }
        if wd.h != 1 || wd.w != 1 || wd.c != xd.c {
            return Err(Error::shape(
                "linear",
                "channel",
                format!("input length {} vs weight {}", xd.c, wd),
            ));
        }
        if self.dims(b).numel() != wd.n {
            return Err(Error::shape(
                "linear",
                "bias",
                format!("bias {} for {} outputs", self.dims(b), wd.n),
            ));
        }
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(xd.n * wd.n);
        for n in 0..xd.n {
            let xr = &xv[n * xd.c..(n + 1) * xd.c];
            for o in 0..wd.n {
                let wr = &wv[o * wd.c..(o + 1) * wd.c];
                let dot: f64 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
                out.push(dot + bv[o]);
            }
        }
        let value = Tensor::from_vec([xd.n, wd.n, 1, 1], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let signs: Vec<u8> = self.value(x).data().iter().map(|v| (*v > 0.0) as u8).collect();
        self.record_branch(signs);
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let d = self.dims(x);
        if d.plane() == 0 {
            return Err(Error::shape(
                "global_avg_pool",
                "spatial",
                format!("empty spatial extent {}", d),
            ));
        }
        let t = self.value(x);
        let count = d.plane() as f64;
        let data = t.data().chunks(d.plane()).map(|p| p.iter().sum::<f64>() / count).collect();
        let value = Tensor::from_vec([d.n, d.c, 1, 1], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x)))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::shape("upsample_nearest", "factor", "factor must be at least 1"));
        }
        let d = self.dims(x);
        let od = Dims::new(d.n, d.c, d.h * factor, d.w * factor);
        let src = self.value(x);
        let mut out = Tensor::zeros(od);
        for nc in 0..d.n * d.c {
            let sp = &src.data()[nc * d.plane()..(nc + 1) * d.plane()];
            let dp = &mut out.data_mut()[nc * od.plane()..(nc + 1) * od.plane()];
            for i in 0..od.h {
                let row = &sp[(i / factor) * d.w..(i / factor + 1) * d.w];
                for (j, o) in dp[i * od.w..(i + 1) * od.w].iter_mut().enumerate() {
                    *o = row[j / factor];
                }
            }
        }
        Ok(self.push(out, Op::Upsample { x, factor }))
    }

    pub fn downsample_avg(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::shape("downsample_avg", "factor", "factor must be at least 1"));
        }
        let d = self.dims(x);
        if !d.h.is_multiple_of(factor) {
            return Err(Error::shape(
                "downsample_avg",
                "height",
                format!("{} not divisible by {}", d.h, factor),
            ));
        }
        if !d.w.is_multiple_of(factor) {
            return Err(Error::shape(
                "downsample_avg",
                "width",
                format!("{} not divisible by {}", d.w, factor),
            ));
        }
        let od = Dims::new(d.n, d.c, d.h / factor, d.w / factor);
        let count = (factor * factor) as f64;
        let src = self.value(x);
        let mut out = Tensor::zeros(od);
        for nc in 0..d.n * d.c {
            let sp = &src.data()[nc * d.plane()..(nc + 1) * d.plane()];
            let dp = &mut out.data_mut()[nc * od.plane()..(nc + 1) * od.plane()];
            for oi in 0..od.h {
                for oj in 0..od.w {
                    // Mean as an offset from the first window entry: a window of
                    // equal values averages to exactly that value.
                    let anchor = sp[oi * factor * d.w + oj * factor];
                    let mut acc = 0.0;
                    for i in oi * factor..(oi + 1) * factor {
                        for j in oj * factor..(oj + 1) * factor {
                            acc += sp[i * d.w + j] - anchor;
                        }
                    }
                    dp[oi * od.w + oj] = anchor + acc / count;
                }
            }
        }
        Ok(self.push(out, Op::Downsample { x, factor }))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::shape("concat_channels", "channel", "no inputs"))?;
        let d0 = self.dims(first);
        let mut c_total = 0;
        for &x in xs {
            let d = self.dims(x);
            if d.n != d0.n {
                return Err(Error::shape("concat_channels", "batch", format!("{} vs {}", d, d0)));
            }
            if (d.h, d.w) != (d0.h, d0.w) {
                return Err(Error::shape("concat_channels", "spatial", format!("{} vs {}", d, d0)));
            }
            c_total += d.c;
        }
        let od = Dims::new(d0.n, c_total, d0.h, d0.w);
        let mut data = Vec::with_capacity(od.numel());
        for n in 0..d0.n {
            for &x in xs {
                let t = self.value(x);
                let per = t.dims().c * d0.plane();
                data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
            }
        }
        let value = Tensor::from_vec(od, data)?;
        Ok(self.push(value, Op::Concat(xs.to_vec())))
    }

    /// Channels `start..start + len` of `x`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let d = self.dims(x);
        if start + len > d.c {
            return Err(Error::shape(
                "slice_channels",
                "channel",
                format!("range {}..{} exceeds {} channels", start, start + len, d.c),
            ));
        }
        let od = Dims::new(d.n, len, d.h, d.w);
        let t = self.value(x);
        let mut data = Vec::with_capacity(od.numel());
        for n in 0..d.n {
            let base = (n * d.c + start) * d.plane();
            data.extend_from_slice(&t.data()[base..base + len * d.plane()]);
        }
        let value = Tensor::from_vec(od, data)?;
        Ok(self.push(value, Op::Slice { x, start }))
    }

    pub fn split_channels(&mut self, x: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let d = self.dims(x);
        let total: usize = sizes.iter().sum();
        if total != d.c {
            return Err(Error::shape(
                "split_channels",
                "channel",
                format!("sizes sum to {} but input has {} channels", total, d.c),
            ));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.slice_channels(x, start, s)?);
            start += s;
        }
        Ok(out)
    }

    fn broadcast_mode(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (ad, bd) = (self.dims(a), self.dims(b));
        if ad == bd {
            Ok(Broadcast::Full)
        } else if bd == Dims::new(ad.n, ad.c, 1, 1) {
            Ok(Broadcast::PerChannel)
        } else if bd == Dims::new(ad.n, 1, ad.h, ad.w) {
            Ok(Broadcast::PerPosition)
        } else {
            let axis = if bd.n != ad.n {
                "batch"
            } else if bd.c != ad.c && bd.c != 1 {
                "channel"
            } else {
                "spatial"
            };
            Err(Error::shape(op, axis, format!("cannot broadcast {} over {}", bd, ad)))
        }
    }

    fn elementwise(&mut self, a: Var, b: Var, mode: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ad = self.dims(a);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let plane = ad.plane();
        let data = match mode {
            Broadcast::Full => av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect(),
            Broadcast::PerChannel => av.iter().enumerate().map(|(i, x)| f(*x, bv[i / plane])).collect(),
            Broadcast::PerPosition => av
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let n = i / (ad.c * plane);
                    f(*x, bv[n * plane + i % plane])
                })
                .collect(),
        };
        Tensor::from_vec(ad, data).expect("elementwise output has input extents")
    }

    /// `a + b`, with `b` either equal in shape, (n, c, 1, 1), or (n, 1, h, w).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.broadcast_mode("add", a, b)?;
        let value = self.elementwise(a, b, mode, |x, y| x + y);
        Ok(self.push(value, Op::Add { a, b, mode }))
    }

    /// `a * b` with the same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.broadcast_mode("mul", a, b)?;
        let value = self.elementwise(a, b, mode, |x, y| x * y);
        Ok(self.push(value, Op::Mul { a, b, mode }))
    }

    /// Output channel `p` takes input channel `perm[p]`.
    pub fn permute_channels(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let d = self.dims(x);
        if perm.len() != d.c {
            return Err(Error::shape(
                "permute_channels",
                "channel",
                format!("permutation of length {} for {} channels", perm.len(), d.c),
            ));
        }
        let mut seen = vec![false; d.c];
        for &p in perm {
            if p >= d.c || std::mem::replace(&mut seen[p], true) {
                return Err(Error::shape("permute_channels", "channel", "not a permutation"));
            }
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(d.numel());
        for n in 0..d.n {
            for &src in perm {
                data.extend_from_slice(t.plane(n, src));
            }
        }
        let value = Tensor::from_vec(d, data)?;
        Ok(self.push(value, Op::PermuteChannels { x, perm: perm.to_vec() }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale { x, factor })
    }

    /// Mean squared error per (sample, channel) plane: output (n, c, 1, 1).
    pub fn keypoint_mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pd, td) = (self.dims(pred), self.dims(target));
        if pd != td {
            let axis = if pd.c != td.c { "channel" } else { "spatial" };
            return Err(Error::shape("keypoint_mse", axis, format!("{} vs {}", pd, td)));
        }
        if pd.plane() == 0 {
            return Err(Error::shape("keypoint_mse", "spatial", "empty heatmap"));
        }
        let inv = 1.0 / pd.plane() as f64;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let data = p
            .chunks(pd.plane())
            .zip(t.chunks(pd.plane()))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * inv)
            .collect();
        let value = Tensor::from_vec([pd.n, pd.c, 1, 1], data)?;
        Ok(self.push(value, Op::KeypointMse { pred, target }))
    }

    /// Batch mean of per-sample top-k means over an (n, k_total, 1, 1)
    /// input. Only entries with `mask` set compete; a sample with fewer
    /// than `k` masked entries averages all of them, and a sample with none
    /// contributes zero. Per sample the selected values are summed in
    /// descending order, so `k >= k_total` reproduces the plain masked mean
    /// bit for bit.
    pub fn topk_mean(&mut self, v: Var, mask: &[bool], k: usize) -> Result<Var> {
        let d = self.dims(v);
        if d.h != 1 || d.w != 1 {
            return Err(Error::shape(
                "topk_mean",
                "spatial",
                format!("expected (n, k, 1, 1), got {}", d),
            ));
        }
        if mask.len() != d.numel() {
            return Err(Error::shape(
                "topk_mean",
                "length",
                format!("{} mask entries for {} values", mask.len(), d.numel()),
            ));
        }
        let vals = self.value(v).data();
        let mut weights = vec![0.0; d.numel()];
        let mut total = 0.0;
        for s in 0..d.n {
            let row = s * d.c..(s + 1) * d.c;
            let mut idx: Vec<usize> = row.filter(|&i| mask[i]).collect();
            idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
            idx.truncate(k);
            if idx.is_empty() {
                continue;
            }
            let mut acc = 0.0;
            for &i in &idx {
                acc += vals[i];
            }
            total += acc / idx.len() as f64;
            let w = 1.0 / (idx.len() * d.n) as f64;
            for &i in &idx {
                weights[i] = w;
            }
        }
        let value = total / d.n as f64;
        let bytes: Vec<u8> = weights.iter().map(|w| (*w != 0.0) as u8).collect();
        self.record_branch(bytes);
        Ok(self.push(Tensor::scalar(value), Op::SelectMean { v, weights }))
    }

    /// Populates gradients of `loss` with respect to every node on the tape.
    /// Leaves that do not influence the loss receive zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ld = self.dims(loss);
        if ld.numel() != 1 {
            return Err(Error::shape("backward", "length", format!("loss must be scalar, got {}", ld)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            match g {
                Some(g) => node.value.set_grad(g)?,
                None if matches!(node.op, Op::Leaf) => {
                    let n = node.value.numel();
                    node.value.set_grad(vec![0.0; n])?;
                }
                None => node.value.clear_grad(),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let cg = kernels::conv2d_backward(geom, self.value(*x).data(), self.value(*w).data(), g);
                accumulate(grads, *x, cg.input);
                accumulate(grads, *w, cg.weight);
                accumulate(grads, *b, cg.bias);
            }
            Op::Linear { x, w, b } => {
                let (xd, wd) = (self.dims(*x), self.dims(*w));
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = vec![0.0; xd.numel()];
                let mut dw = vec![0.0; wd.numel()];
                let mut db = vec![0.0; wd.n];
                for n in 0..xd.n {
                    for o in 0..wd.n {
                        let go = g[n * wd.n + o];
                        db[o] += go;
                        for c in 0..wd.c {
                            dw[o * wd.c + c] += go * xv[n * xd.c + c];
                            dx[n * xd.c + c] += go * wv[o * wd.c + c];
                        }
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                accumulate(grads, *b, db);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let dx = xv.iter().zip(g).map(|(v, g)| if *v > 0.0 { *g } else { 0.0 }).collect();
                accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = out.data().iter().zip(g).map(|(s, g)| g * s * (1.0 - s)).collect();
                accumulate(grads, *x, dx);
            }
            Op::GlobalAvgPool(x) => {
                let d = self.dims(*x);
                let count = d.plane() as f64;
                let mut dx = vec![0.0; d.numel()];
                for (plane, gv) in dx.chunks_mut(d.plane()).zip(g) {
                    plane.fill(gv / count);
                }
                accumulate(grads, *x, dx);
            }
            Op::Upsample { x, factor } => {
                let d = self.dims(*x);
                let od = out.dims();
                let mut dx = vec![0.0; d.numel()];
                for nc in 0..d.n * d.c {
                    let gp = &g[nc * od.plane()..(nc + 1) * od.plane()];
                    let dp = &mut dx[nc * d.plane()..(nc + 1) * d.plane()];
                    for i in 0..od.h {
                        for j in 0..od.w {
                            dp[(i / factor) * d.w + j / factor] += gp[i * od.w + j];
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Downsample { x, factor } => {
                let d = self.dims(*x);
                let od = out.dims();
                let count = (factor * factor) as f64;
                let mut dx = vec![0.0; d.numel()];
                for nc in 0..d.n * d.c {
                    let gp = &g[nc * od.plane()..(nc + 1) * od.plane()];
                    let dp = &mut dx[nc * d.plane()..(nc + 1) * d.plane()];
                    for i in 0..d.h {
                        for j in 0..d.w {
                            dp[i * d.w + j] = gp[(i / factor) * od.w + j / factor] / count;
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Concat(xs) => {
                let od = out.dims();
                let mut offset = 0;
                for x in xs {
                    let d = self.dims(*x);
                    let per = d.c * d.plane();
                    let mut dx = Vec::with_capacity(d.numel());
                    for n in 0..d.n {
                        let base = (n * od.c + offset) * od.plane();
                        dx.extend_from_slice(&g[base..base + per]);
                    }
                    accumulate(grads, *x, dx);
                    offset += d.c;
                }
            }
            Op::Slice { x, start } => {
                let d = self.dims(*x);
                let od = out.dims();
                let per = od.c * od.plane();
                let mut dx = vec![0.0; d.numel()];
                for n in 0..d.n {
                    let base = (n * d.c + start) * d.plane();
                    dx[base..base + per].copy_from_slice(&g[n * per..(n + 1) * per]);
                }
                accumulate(grads, *x, dx);
            }
            Op::Add { a, b, mode } => {
                accumulate(grads, *a, g.to_vec());
                let db = self.reduce_broadcast(*a, *b, *mode, g, |_| 1.0);
                accumulate(grads, *b, db);
            }
            Op::Mul { a, b, mode } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ad = self.dims(*a);
                let plane = ad.plane();
                let da = g
                    .iter()
                    .enumerate()
                    .map(|(i, g)| {
                        let bi = match mode {
                            Broadcast::Full => i,
                            Broadcast::PerChannel => i / plane,
                            Broadcast::PerPosition => (i / (ad.c * plane)) * plane + i % plane,
                        };
                        g * bv[bi]
                    })
                    .collect();
                accumulate(grads, *a, da);
                let db = self.reduce_broadcast(*a, *b, *mode, g, |i| av[i]);
                accumulate(grads, *b, db);
            }
            Op::PermuteChannels { x, perm } => {
                let d = self.dims(*x);
                let p = d.plane();
                let mut dx = vec![0.0; d.numel()];
                for n in 0..d.n {
                    for (dst, &src) in perm.iter().enumerate() {
                        let gi = (n * d.c + dst) * p;
                        let xi = (n * d.c + src) * p;
                        dx[xi..xi + p].copy_from_slice(&g[gi..gi + p]);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Scale { x, factor } => {
                accumulate(grads, *x, g.iter().map(|v| v * factor).collect());
            }
            Op::KeypointMse { pred, target } => {
                let d = self.dims(*pred);
                let scale = 2.0 / d.plane() as f64;
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let dp: Vec<f64> = p
                    .iter()
                    .zip(t)
                    .enumerate()
                    .map(|(i, (a, b))| g[i / d.plane()] * scale * (a - b))
                    .collect();
                let dt = dp.iter().map(|v| -v).collect();
                accumulate(grads, *pred, dp);
                accumulate(grads, *target, dt);
            }
            Op::SelectMean { v, weights } => {
                accumulate(grads, *v, weights.iter().map(|w| w * g[0]).collect());
            }
        }
    }

    /// Sums `g * f(i)` over the axes along which `b` was broadcast.
    fn reduce_broadcast(&self, a: Var, b: Var, mode: Broadcast, g: &[f64], f: impl Fn(usize) -> f64) -> Vec<f64> {
        let ad = self.dims(a);
        let plane = ad.plane();
        let mut db = vec![0.0; self.value(b).numel()];
        for (i, gv) in g.iter().enumerate() {
            let bi = match mode {
                Broadcast::Full => i,
                Broadcast::PerChannel => i / plane,
                Broadcast::PerPosition => (i / (ad.c * plane)) * plane + i % plane,
            };
            db[bi] += gv * f(i);
        }
        db
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

/// Logistic function clamped to the open interval (0, 1) so that saturated
/// inputs never produce an exact 0 or 1 gate.
pub fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}
