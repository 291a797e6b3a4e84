//! Central-difference gradient verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely, to within
/// `1e-5 * REL_FLOOR`. Cancellation noise in the difference quotient is
/// about `1e-11 * |f|` at [`FD_STEP`], so smaller gradients carry no
/// resolvable relative error.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradReport {
    pub blocks: Vec<BlockReport>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Which elements of each input get perturbed.
#[derive(Debug, Clone, Copy)]
pub enum Coverage {
    All,
    /// `count` elements in total, spread over the inputs by a seeded draw.
    Sample {
        count: usize,
        seed: u64,
    },
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences of step [`FD_STEP`]. `f` must rebuild its graph from the
/// given leaves on every call.
pub fn grad_check<F>(f: F, inputs: &[(&str, Tensor)], coverage: Coverage) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = values.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|(_, t)| g.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, (_, t))| g.grad(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut picks: Vec<Vec<usize>> = vec![Vec::new(); inputs.len()];
    match coverage {
        Coverage::All => {
            for (p, (_, t)) in picks.iter_mut().zip(inputs) {
                *p = (0..t.len()).collect();
            }
        }
        Coverage::Sample { count, seed } => {
            let offsets: Vec<usize> = inputs
                .iter()
                .scan(0, |acc, (_, t)| {
                    let o = *acc;
                    *acc += t.len();
                    Some(o)
                })
                .collect();
            let total: usize = inputs.iter().map(|(_, t)| t.len()).sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut flat = sample(&mut rng, total, count.min(total)).into_vec();
            flat.sort_unstable();
            for i in flat {
                let block = offsets.partition_point(|&o| o <= i) - 1;
                picks[block].push(i - offsets[block]);
            }
        }
    }

    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut report = GradReport::default();
    for (b, (name, _)) in inputs.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for &i in &picks[b] {
            let orig = values[b].data()[i];
            values[b].data_mut()[i] = orig + FD_STEP;
            let up = eval(&values)?;
            values[b].data_mut()[i] = orig - FD_STEP;
            let down = eval(&values)?;
            values[b].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_error(analytic[b].data()[i], numeric));
        }
        report.blocks.push(BlockReport {
            name: name.to_string(),
            checked: picks[b].len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}
