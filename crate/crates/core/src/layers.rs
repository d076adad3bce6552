//! Parameterized building blocks: convolutions, residual bottlenecks,
//! channel reducers and heatmap heads.

use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

/// A convolution with its own weight and bias parameters.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init.kaiming([c_out, c_in, kernel, kernel]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([1, c_out, 1, 1]));
        Conv {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        }
    }

    /// Same-size convolution (`pad = kernel / 2`, stride 1).
    pub fn same(store: &mut ParamStore, init: &mut Init, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Self {
        Self::new(store, init, name, c_in, c_out, kernel, 1, kernel / 2)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p[self.weight], p[self.bias], self.stride, self.pad)
    }

    /// Sets the weight to the identity map on the first `min(c_in, c_out)`
    /// channels (1×1 kernels only) and zeroes the bias.
    pub fn set_identity(&self, store: &mut ParamStore) {
        assert_eq!(self.kernel, 1, "identity init needs a 1x1 kernel");
        let w = store.get_mut(self.weight);
        w.data_mut().fill(0.0);
        for c in 0..self.c_in.min(self.c_out) {
            w.set(c, c, 0, 0, 1.0);
        }
        store.get_mut(self.bias).data_mut().fill(0.0);
    }

    pub fn set_zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).data_mut().fill(0.0);
        store.get_mut(self.bias).data_mut().fill(0.0);
    }
}

/// 1×1 convolution projecting `c_in` channels to `to_channels`.
pub fn reduce_1x1(store: &mut ParamStore, init: &mut Init, name: &str, c_in: usize, to_channels: usize) -> Conv {
    Conv::same(store, init, name, c_in, to_channels, 1)
}

/// ResNet bottleneck: 1×1 reduce to `out/4`, 3×3, 1×1 expand to `out`,
/// with a 1×1 projection on the identity path when channel counts differ.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub reduce: Conv,
    pub mid: Conv,
    pub expand: Conv,
    pub proj: Option<Conv>,
}

impl Bottleneck {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c_in: usize, c_out: usize) -> Self {
        let inner = (c_out / 4).max(1);
        let reduce = Conv::same(store, init, &format!("{name}.reduce"), c_in, inner, 1);
        let mid = Conv::same(store, init, &format!("{name}.mid"), inner, inner, 3);
        let expand = Conv::same(store, init, &format!("{name}.expand"), inner, c_out, 1);
        let proj = (c_in != c_out).then(|| Conv::same(store, init, &format!("{name}.proj"), c_in, c_out, 1));
        Bottleneck {
            reduce,
            mid,
            expand,
            proj,
        }
    }

    pub fn c_in(&self) -> usize {
        self.reduce.c_in
    }

    pub fn c_out(&self) -> usize {
        self.expand.c_out
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let c = g.dims(x).c;
        if c != self.c_in() {
            return Err(Error::shape(
                "residual_bottleneck",
                "channel",
                format!("input has {} channels, block expects {}", c, self.c_in()),
            ));
        }
        Ok(())
    }

    /// The residual mapping F(x) (no activation after the expand conv).
    pub fn residual(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        let h = self.reduce.forward(g, p, x)?;
        let h = g.relu(h);
        let h = self.mid.forward(g, p, h)?;
        let h = g.relu(h);
        self.expand.forward(g, p, h)
    }

    pub fn identity(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        match &self.proj {
            Some(proj) => proj.forward(g, p, x),
            None => Ok(x),
        }
    }

    /// `relu(identity(x) + F(x))`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let branch = self.residual(g, p, x)?;
        self.combine(g, p, x, branch)
    }

    /// `relu(identity(x) + branch)`.
    pub fn combine(&self, g: &mut Graph, p: &Bound, x: Var, branch: Var) -> Result<Var> {
        let id = self.identity(g, p, x)?;
        let sum = g.add(id, branch)?;
        Ok(g.relu(sum))
    }

    pub fn set_zero(&self, store: &mut ParamStore) {
        for c in [&self.reduce, &self.mid, &self.expand] {
            c.set_zero(store);
        }
        if let Some(pr) = &self.proj {
            pr.set_zero(store);
        }
    }
}

/// Heatmap prediction head: 3×3 conv, ReLU, 1×1 conv to `K` channels. The
/// output is a raw regression with no terminal activation; the final conv
/// starts from a small normal (std [`Head::PREDICT_STD`]).
#[derive(Clone, Debug)]
pub struct Head {
    pub conv: Conv,
    pub predict: Conv,
}

impl Head {
    pub const PREDICT_STD: f64 = 1e-3;

    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c_in: usize, num_keypoints: usize) -> Self {
        let conv = Conv::same(store, init, &format!("{name}.conv"), c_in, c_in, 3);
        let predict = Conv::same(store, init, &format!("{name}.predict"), c_in, num_keypoints, 1);
        *store.get_mut(predict.weight) = init.normal([num_keypoints, c_in, 1, 1], Self::PREDICT_STD);
        Head { conv, predict }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.conv.forward(g, p, x)?;
        let h = g.relu(h);
        self.predict.forward(g, p, h)
    }

    pub fn set_zero(&self, store: &mut ParamStore) {
        self.conv.set_zero(store);
        self.predict.set_zero(store);
    }
}
