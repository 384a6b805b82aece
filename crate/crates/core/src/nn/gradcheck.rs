//! Central finite-difference validation of analytic gradients.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub probe_count: usize,
    pub epsilon: f32,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            probe_count: 16,
            epsilon: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<Probe>,
    /// Coordinates rejected because the two evaluations fell on different
    /// branches of a piecewise objective.
    pub skipped: usize,
}

/// Objective value plus an identifier of the smooth piece it was evaluated
/// on (for example a hash of ReLU sign patterns). Smooth objectives use 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub branch: u64,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` against `(f(theta + eps e_i) - f(theta - eps e_i)) / 2 eps`
/// on `probe_count` coordinates drawn without replacement. `theta` is
/// restored before returning.
pub fn grad_check<F>(
    theta: &mut [f32],
    analytic: &[f32],
    mut f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f32]) -> Result<f64>,
{
    grad_check_piecewise(
        theta,
        analytic,
        |t| f(t).map(|value| Evaluation { value, branch: 0 }),
        opts,
    )
}

/// [`grad_check`] for piecewise-smooth objectives: a coordinate whose two
/// evaluations report different branches straddles a kink, has no
/// derivative along that segment, and is replaced by the next coordinate.
pub fn grad_check_piecewise<F>(
    theta: &mut [f32],
    analytic: &[f32],
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f32]) -> Result<Evaluation>,
{
    if theta.is_empty() {
        return Err(Error::InvalidArgument("grad_check on empty parameter set".into()));
    }
    let all: Vec<usize> = (0..theta.len()).collect();
    grad_check_subset(theta, analytic, &all, f, opts)
}

/// [`grad_check_piecewise`] restricted to the coordinates in `candidates`.
pub fn grad_check_subset<F>(
    theta: &mut [f32],
    analytic: &[f32],
    candidates: &[usize],
    mut f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f32]) -> Result<Evaluation>,
{
    if theta.len() != analytic.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "grad_check: {} parameters but {} analytic entries",
            theta.len(),
            analytic.len()
        )));
    }
    if candidates.is_empty() || candidates.iter().any(|&i| i >= theta.len()) {
        return Err(Error::InvalidArgument("grad_check: bad candidate set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let order: Vec<usize> = sample(&mut rng, candidates.len(), candidates.len())
        .into_iter()
        .map(|i| candidates[i])
        .collect();

    let eps = opts.epsilon;
    let mut probes = Vec::with_capacity(opts.probe_count);
    let mut skipped = 0;
    let mut max_rel = 0.0f64;
    for index in order {
        if probes.len() == opts.probe_count {
            break;
        }
        let orig = theta[index];
        theta[index] = orig + eps;
        let plus = f(theta);
        theta[index] = orig - eps;
        let minus = f(theta);
        theta[index] = orig;
        let (plus, minus) = (plus?, minus?);
        if !plus.value.is_finite() || !minus.value.is_finite() {
            return Err(Error::NonFinite(alloc::format!("grad_check objective at probe {index}")));
        }
        if plus.branch != minus.branch {
            skipped += 1;
            continue;
        }
        // The realized step differs from 2*eps by f32 rounding of orig +/- eps.
        let h = (orig + eps) as f64 - (orig - eps) as f64;
        let numeric = (plus.value - minus.value) / h;
        let a = analytic[index] as f64;
        if !a.is_finite() {
            return Err(Error::NonFinite(alloc::format!("analytic gradient at probe {index}")));
        }
        let rel_error = relative_error(a, numeric);
        max_rel = max_rel.max(rel_error);
        probes.push(Probe {
            index,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    probes.sort_by_key(|p| p.index);
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        probes,
        skipped,
    })
}
