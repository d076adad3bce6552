//! Central finite-difference verification of the analytic gradients.
//!
//! A checked function maps a list of leaf tensors to a scalar through a
//! [`Graph`]. Each sampled coordinate is perturbed by `±step`; coordinates
//! whose perturbation flips a ReLU sign or a loss selection (visible as a
//! change of [`Graph::kink_signature`]) sit on a non-differentiable seam and
//! are resampled rather than compared.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    /// Coordinates sampled per input tensor; `None` checks every coordinate.
    pub coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            rel_tol: 1e-5,
            abs_floor: 1e-8,
            coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    /// Largest `|a - n| / max(|a|, |n|)` among coordinates above the floor.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.checked > 0
    }

    fn merge(&mut self, other: GradCheckReport, input_offset: usize) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.mismatches.extend(other.mismatches.into_iter().map(|mut m| {
            m.input += input_offset;
            m
        }));
    }
}

/// Whether an analytic/numeric pair agrees at the configured tolerance.
pub fn agrees(analytic: f64, numeric: f64, rel_tol: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel_tol * analytic.abs().max(numeric.abs())
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok((g.value(out).data()[0], g.kink_signature()))
}

/// Compares analytic gradients of `f` with respect to the inputs listed in
/// `check` against central differences.
pub fn check_gradients<F>(inputs: &[Tensor], check: &[usize], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let base_sig = g.kink_signature();
    g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for &which in check {
        let analytic = g.grad(vars[which]).expect("leaf grads populated").to_vec();
        let n = analytic.len();
        let order: Vec<usize> = match cfg.coords_per_input {
            Some(k) if k < n => {
                // Oversample so kink skips can be replaced.
                sample(&mut rng, n, n.min(4 * k)).into_vec()
            }
            _ => (0..n).collect(),
        };
        let want = cfg.coords_per_input.unwrap_or(n).min(n);
        let mut done = 0;
        for coord in order {
            if done == want {
                break;
            }
            let orig = probe[which].data()[coord];
            probe[which].data_mut()[coord] = orig + cfg.step;
            let (plus, sig_plus) = evaluate(&f, &probe)?;
            probe[which].data_mut()[coord] = orig - cfg.step;
            let (minus, sig_minus) = evaluate(&f, &probe)?;
            probe[which].data_mut()[coord] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            done += 1;
            report.checked += 1;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[coord];
            let diff = (a - numeric).abs();
            report.max_abs_err = report.max_abs_err.max(diff);
            if diff > cfg.abs_floor {
                report.max_rel_err = report.max_rel_err.max(diff / a.abs().max(numeric.abs()));
            }
            if !agrees(a, numeric, cfg.rel_tol, cfg.abs_floor) {
                report.mismatches.push(Mismatch {
                    input: which,
                    coord,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

/// Checks every input of `f`.
pub fn check_all<F>(inputs: &[Tensor], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let all: Vec<usize> = (0..inputs.len()).collect();
    check_gradients(inputs, &all, f, cfg)
}

/// Reduces a tensor-valued output to a scalar with fixed random weights so
/// that every output coordinate contributes a distinct adjoint.
pub fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let weights = Tensor::uniform(g.dims(out), -1.0, 1.0, &mut rng);
    let wv = g.leaf(weights);
    let prod = g.mul(out, wv)?;
    Ok(g.sum(prod))
}

/// Checks a parameterized module: the free inputs come first, followed by
/// every tensor of `store` bound in order. `f` returns the scalar to check.
pub fn check_module<F>(store: &ParamStore, inputs: &[Tensor], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound, &[Var]) -> Result<Var>,
{
    let n_in = inputs.len();
    let mut all = inputs.to_vec();
    all.extend(store.tensors().iter().cloned());
    let which: Vec<usize> = (0..all.len()).collect();
    check_gradients(
        &all,
        &which,
        |g, vars| {
            let p = Bound::from_vars(vars[n_in..].to_vec());
            f(g, &p, &vars[..n_in])
        },
        cfg,
    )
}

/// Combined report over several named checks, for the command-line suite.
#[derive(Debug, Default)]
pub struct SuiteReport {
    pub entries: Vec<(String, GradCheckReport)>,
}

impl SuiteReport {
    pub fn push(&mut self, name: impl Into<String>, r: GradCheckReport) {
        self.entries.push((name.into(), r));
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|(_, r)| r.passed())
    }

    pub fn total(&self) -> GradCheckReport {
        let mut t = GradCheckReport::default();
        for (_, r) in &self.entries {
            t.merge(r.clone(), 0);
        }
        t
    }
}
