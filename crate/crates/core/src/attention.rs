//! Spatial and channel-wise attention gates and the two attention residual
//! bottlenecks built from them.
//!
//! Both bottlenecks gate the residual branch `F(x)` before it is added to the
//! identity path. Each gate computes its weights from the map it receives,
//! so the spatial-then-channel ordering (SCARB) and the channel-then-spatial
//! ordering (CSARB) are different functions.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::Bottleneck;
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

/// Per-position gate `beta = sigmoid(W v + b)` from a single-output 1×1 conv.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
}

impl SpatialAttention {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, channels: usize) -> Self {
        SpatialAttention {
            weight: store.add(format!("{name}.weight"), init.kaiming([1, channels, 1, 1])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([1, 1, 1, 1])),
            channels,
        }
    }

    fn check(&self, g: &Graph, v: Var) -> Result<()> {
        let c = g.dims(v).c;
        if c != self.channels {
            return Err(Error::shape(
                "spatial_attention",
                "channel",
                format!("input has {} channels, gate expects {}", c, self.channels),
            ));
        }
        Ok(())
    }

    /// The (n, 1, h, w) gate.
    pub fn gate(&self, g: &mut Graph, p: &Bound, v: Var) -> Result<Var> {
        self.check(g, v)?;
        let logits = g.conv2d(v, p[self.weight], p[self.bias], 1, 0)?;
        Ok(g.sigmoid(logits))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, v: Var) -> Result<Var> {
        let beta = self.gate(g, p, v)?;
        g.mul(v, beta)
    }

    pub fn set_zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).data_mut().fill(0.0);
        store.get_mut(self.bias).data_mut().fill(0.0);
    }
}

/// Per-channel gate `alpha = sigmoid(W2 relu(W1 z + b1) + b2)` where `z` is
/// the spatial mean of each channel. Both matrices are square `C×C`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub channels: usize,
}

impl ChannelAttention {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, channels: usize) -> Self {
        let c = channels;
        ChannelAttention {
            w1: store.add(format!("{name}.fc1.weight"), init.kaiming([c, c, 1, 1])),
            b1: store.add(format!("{name}.fc1.bias"), Tensor::zeros([1, c, 1, 1])),
            w2: store.add(format!("{name}.fc2.weight"), init.kaiming([c, c, 1, 1])),
            b2: store.add(format!("{name}.fc2.bias"), Tensor::zeros([1, c, 1, 1])),
            channels,
        }
    }

    fn check(&self, g: &Graph, u: Var) -> Result<()> {
        let c = g.dims(u).c;
        if c != self.channels {
            return Err(Error::shape(
                "channel_attention",
                "channel",
                format!("input has {} channels, gate expects {}", c, self.channels),
            ));
        }
        Ok(())
    }

    /// The (n, c, 1, 1) gate.
    pub fn gate(&self, g: &mut Graph, p: &Bound, u: Var) -> Result<Var> {
        self.check(g, u)?;
        let z = g.global_avg_pool(u)?;
        let h = g.linear(z, p[self.w1], p[self.b1])?;
        let h = g.relu(h);
        let h = g.linear(h, p[self.w2], p[self.b2])?;
        Ok(g.sigmoid(h))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, u: Var) -> Result<Var> {
        let alpha = self.gate(g, p, u)?;
        g.mul(u, alpha)
    }

    pub fn set_zero(&self, store: &mut ParamStore) {
        for id in [self.w1, self.b1, self.w2, self.b2] {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
}

/// Which residual bottleneck the refinement stage uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Plain residual bottleneck, no attention.
    Plain,
    /// Spatial attention, then channel-wise attention.
    Scarb,
    /// Channel-wise attention, then spatial attention.
    Csarb,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Plain => "plain",
            Variant::Scarb => "scarb",
            Variant::Csarb => "csarb",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plain" => Ok(Variant::Plain),
            "scarb" => Ok(Variant::Scarb),
            "csarb" => Ok(Variant::Csarb),
            other => Err(Error::config(
                "variant",
                format!("expected plain, scarb or csarb, got `{other}`"),
            )),
        }
    }
}

/// Residual bottleneck whose branch is optionally gated by attention.
#[derive(Clone, Debug)]
pub struct AttentionBottleneck {
    pub core: Bottleneck,
    pub variant: Variant,
    pub spatial: Option<SpatialAttention>,
    pub channel: Option<ChannelAttention>,
}

impl AttentionBottleneck {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c_in: usize, c_out: usize, variant: Variant) -> Self {
        let core = Bottleneck::new(store, init, name, c_in, c_out);
        let (spatial, channel) = match variant {
            Variant::Plain => (None, None),
            Variant::Scarb | Variant::Csarb => (
                Some(SpatialAttention::new(store, init, &format!("{name}.spatial"), c_out)),
                Some(ChannelAttention::new(store, init, &format!("{name}.channel"), c_out)),
            ),
        };
        AttentionBottleneck {
            core,
            variant,
            spatial,
            channel,
        }
    }

    /// Gated residual branch `Y`.
    pub fn branch(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let xp = self.core.residual(g, p, x)?;
        match (self.variant, &self.spatial, &self.channel) {
            (Variant::Plain, _, _) => Ok(xp),
            (Variant::Scarb, Some(s), Some(c)) => {
                let v = s.forward(g, p, xp)?;
                c.forward(g, p, v)
            }
            (Variant::Csarb, Some(s), Some(c)) => {
                let u = c.forward(g, p, xp)?;
                s.forward(g, p, u)
            }
            _ => unreachable!("attention variants carry both gates"),
        }
    }

    /// `relu(identity(x) + Y)`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = self.branch(g, p, x)?;
        self.core.combine(g, p, x, y)
    }

    pub fn zero_attention(&self, store: &mut ParamStore) {
        if let Some(s) = &self.spatial {
            s.set_zero(store);
        }
        if let Some(c) = &self.channel {
            c.set_zero(store);
        }
    }

    pub fn set_zero(&self, store: &mut ParamStore) {
        self.core.set_zero(store);
        self.zero_attention(store);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_module, weighted_sum, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_input(dims: [usize; 4], seed: u64) -> Tensor {
        Tensor::uniform(dims, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn run<F: Fn(&mut Graph, &Bound, Var) -> Result<Var>>(store: &ParamStore, x: &Tensor, f: F) -> Tensor {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let xv = g.leaf(x.clone());
        let y = f(&mut g, &p, xv).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn zero_spatial_gate_halves() {
        let mut store = ParamStore::new();
        let s = SpatialAttention::new(&mut store, &mut Init::new(0), "s", 3);
        s.set_zero(&mut store);
        let x = rand_input([2, 3, 4, 5], 1);
        assert_eq!(run(&store, &x, |g, p, v| s.forward(g, p, v)), x.map(|v| v / 2.0));
        let zero = Tensor::zeros([1, 3, 2, 2]);
        let mut store2 = ParamStore::new();
        let s2 = SpatialAttention::new(&mut store2, &mut Init::new(5), "s", 3);
        assert_eq!(run(&store2, &zero, |g, p, v| s2.forward(g, p, v)), zero);
    }

    #[test]
    fn spatial_gate_hand_example() {
        // v = [1, -1] on a 1x1 grid, W = [1, 1], bias 0: beta = sigmoid(0)
        let mut store = ParamStore::new();
        let s = SpatialAttention::new(&mut store, &mut Init::new(0), "s", 2);
        store.get_mut(s.weight).data_mut().copy_from_slice(&[1.0, 1.0]);
        store.get_mut(s.bias).data_mut()[0] = 0.0;
        let x = Tensor::from_vec([1, 2, 1, 1], vec![1.0, -1.0]).unwrap();
        let y = run(&store, &x, |g, p, v| s.forward(g, p, v));
        assert_eq!(y.data(), &[0.5, -0.5]);
    }

    #[test]
    fn zero_channel_gate_halves() {
        let mut store = ParamStore::new();
        let c = ChannelAttention::new(&mut store, &mut Init::new(0), "c", 4);
        c.set_zero(&mut store);
        let x = rand_input([1, 4, 3, 3], 2);
        assert_eq!(run(&store, &x, |g, p, v| c.forward(g, p, v)), x.map(|v| v / 2.0));
    }

    #[test]
    fn channel_gate_hand_example() {
        // constant channels (3, 5), identity W1 and W2, zero biases
        let mut store = ParamStore::new();
        let c = ChannelAttention::new(&mut store, &mut Init::new(0), "c", 2);
        c.set_zero(&mut store);
        for w in [c.w1, c.w2] {
            store.get_mut(w).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        }
        let mut data = vec![3.0; 4];
        data.extend([5.0; 4]);
        let x = Tensor::from_vec([1, 2, 2, 2], data).unwrap();
        let alpha = run(&store, &x, |g, p, v| c.gate(g, p, v));
        let expect = [1.0 / (1.0 + (-3.0f64).exp()), 1.0 / (1.0 + (-5.0f64).exp())];
        assert!((alpha.data()[0] - expect[0]).abs() < 1e-15);
        assert!((alpha.data()[1] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn gates_reject_channel_mismatch() {
        let mut store = ParamStore::new();
        let mut init = Init::new(0);
        let s = SpatialAttention::new(&mut store, &mut init, "s", 3);
        let c = ChannelAttention::new(&mut store, &mut init, "c", 3);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.leaf(Tensor::zeros([1, 4, 2, 2]));
        assert!(matches!(s.forward(&mut g, &p, x), Err(Error::Shape { axis: "channel", .. })));
        assert!(matches!(c.forward(&mut g, &p, x), Err(Error::Shape { axis: "channel", .. })));
    }

    fn block(variant: Variant, seed: u64) -> (ParamStore, AttentionBottleneck) {
        let mut store = ParamStore::new();
        let b = AttentionBottleneck::new(&mut store, &mut Init::new(seed), "blk", 8, 8, variant);
        (store, b)
    }

    #[test]
    fn zero_attention_quarters_the_branch() {
        let (mut store, sc) = block(Variant::Scarb, 3);
        sc.zero_attention(&mut store);
        let x = rand_input([2, 8, 4, 4], 7);
        let y = run(&store, &x, |g, p, v| sc.forward(g, p, v));
        let expect = run(&store, &x, |g, p, v| {
            let f = sc.core.residual(g, p, v)?;
            let q = g.scale(f, 0.25);
            let s = g.add(v, q)?;
            Ok(g.relu(s))
        });
        assert_eq!(y, expect);
    }

    #[test]
    fn zero_residual_gives_relu_of_input() {
        for variant in [Variant::Scarb, Variant::Csarb] {
            let (mut store, b) = block(variant, 4);
            b.core.set_zero(&mut store);
            let x = rand_input([1, 8, 3, 3], 8);
            assert_eq!(run(&store, &x, |g, p, v| b.forward(g, p, v)), x.map(|v| v.max(0.0)));
        }
    }

    #[test]
    fn plain_variant_is_the_residual_bottleneck() {
        let (store, b) = block(Variant::Plain, 5);
        let x = rand_input([1, 8, 4, 3], 1);
        assert_eq!(
            run(&store, &x, |g, p, v| b.forward(g, p, v)),
            run(&store, &x, |g, p, v| b.core.forward(g, p, v))
        );
    }

    #[test]
    fn orderings_coincide_with_constant_gates_and_differ_otherwise() {
        let (mut store, sc) = block(Variant::Scarb, 6);
        let cs = AttentionBottleneck {
            variant: Variant::Csarb,
            ..sc.clone()
        };
        let x = rand_input([1, 8, 5, 5], 2);
        let a = run(&store, &x, |g, p, v| sc.forward(g, p, v));
        let b = run(&store, &x, |g, p, v| cs.forward(g, p, v));
        assert!(a.max_abs_diff(&b) > 1e-6);
        sc.zero_attention(&mut store);
        let a = run(&store, &x, |g, p, v| sc.forward(g, p, v));
        let b = run(&store, &x, |g, p, v| cs.forward(g, p, v));
        assert_eq!(a, b);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("SCARB".parse::<Variant>().unwrap(), Variant::Scarb);
        assert_eq!(Variant::Csarb.to_string(), "csarb");
        assert!(matches!("foo".parse::<Variant>(), Err(Error::Config { .. })));
    }

    #[test]
    fn channel_attention_gradients() {
        let mut store = ParamStore::new();
        let _c = ChannelAttention::new(&mut store, &mut Init::new(9), "c", 5);
        let c = _c.clone();
        let cfg = GradCheckConfig::default();
        let r = check_module(
            &store,
            &[rand_input([2, 5, 3, 4], 3)],
            |g, p, v| {
                let y = c.forward(g, p, v[0])?;
                weighted_sum(g, y, 1)
            },
            &cfg,
        )
        .unwrap();
        assert!(r.passed(), "{:?}", r);
    }

    #[test]
    fn attention_bottleneck_gradients() {
        for variant in [Variant::Scarb, Variant::Csarb] {
            let (store, b) = block(variant, 10);
            let cfg = GradCheckConfig {
                coords_per_input: Some(10),
                ..Default::default()
            };
            let r = check_module(
                &store,
                &[rand_input([2, 8, 4, 4], 5)],
                |g, p, v| {
                    let y = b.forward(g, p, v[0])?;
                    weighted_sum(g, y, 2)
                },
                &cfg,
            )
            .unwrap();
            assert!(r.passed(), "{variant}: {:?}", r);
        }
    }
}
