//! Central-difference check of analytic gradients on random parameter probes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;
use crate::error::{invalid, Result};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradProbe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<GradProbe>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares `analytic[i]` with `(loss(w + h e_i) - loss(w - h e_i)) / 2h` on
/// `probe_count` distinct random indices.
pub fn grad_check<F>(
    params: &ParamSet,
    analytic: &[f64],
    mut loss: F,
    probe_count: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if probe_count < 1 {
        return invalid("probe_count must be at least 1");
    }
    if analytic.len() != params.len() {
        return invalid("gradient length differs from parameter count");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = probe_count.min(params.len());
    let indices = rand::seq::index::sample(&mut rng, params.len(), count).into_vec();
    let mut work = params.clone();
    let mut probes = Vec::with_capacity(count);
    for index in indices {
        let w = params.values()[index];
        work.values_mut()[index] = w + FD_STEP;
        let up = loss(&work)?;
        work.values_mut()[index] = w - FD_STEP;
        let down = loss(&work)?;
        work.values_mut()[index] = w;
        if !up.is_finite() || !down.is_finite() {
            return invalid(format!("non-finite loss while probing parameter {index}"));
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[index];
        probes.push(GradProbe { index, analytic: a, numeric, rel_error: relative_error(a, numeric) });
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { probes, max_rel_error })
}
