//! Finite-difference gradient oracle.
//!
//! Central differences in `f64` provide the independent reference that the
//! analytic backward pass is audited against, both for single tensors and for
//! whole parameter stores. This module is test support: production code never
//! calls it, but it lives in the library so downstream crates can reuse the
//! oracle in their own test suites.

use rand::Rng;

use crate::array::Array;
use crate::error::Result;
use crate::param::ParamStore;

/// Outcome of one finite-difference audit.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error seen across all checked coordinates.
    pub max_rel_err: f64,
    /// Coordinates checked in total.
    pub checked: usize,
    /// `(label, flat index, analytic, finite difference)` of the worst case.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_err: 0.0,
            checked: 0,
            worst: None,
        }
    }

    fn record(&mut self, label: &str, idx: usize, analytic: f64, fd: f64) {
        let rel = rel_err(analytic, fd);
        self.checked += 1;
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = Some((label.to_string(), idx, analytic, fd));
        }
    }
}

/// Relative error with a floor that keeps near-zero gradients comparable:
/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Audit `analytic` against central differences of `f` at `coords` randomly
/// chosen coordinates of `x` (all coordinates if `coords >= x.len()`).
pub fn check_input_gradient<F>(
    x: &Array<f64>,
    analytic: &Array<f64>,
    coords: usize,
    h: f64,
    rng: &mut impl Rng,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&Array<f64>) -> Result<f64>,
{
    assert_eq!(x.shape(), analytic.shape(), "analytic gradient shape mismatch");
    let mut report = GradCheckReport::new();
    let picks = pick_coords(x.len(), coords, rng);
    let mut xp = x.clone();
    for idx in picks {
        let orig = xp.data()[idx];
        xp.data_mut()[idx] = orig + h;
        let up = f(&xp)?;
        xp.data_mut()[idx] = orig - h;
        let down = f(&xp)?;
        xp.data_mut()[idx] = orig;
        let fd = (up - down) / (2.0 * h);
        report.record("input", idx, analytic.data()[idx], fd);
    }
    Ok(report)
}

/// Audit analytic parameter gradients against central differences of a loss
/// evaluated on perturbed copies of the store.
///
/// `analytic` pairs parameter names with gradient arrays (as produced by
/// `Graph::param_grads`); every listed parameter gets `coords_per_param`
/// random coordinates checked.
pub fn check_param_gradients<F>(
    store: &ParamStore<f64>,
    analytic: &[(String, Array<f64>)],
    coords_per_param: usize,
    h: f64,
    rng: &mut impl Rng,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    let mut report = GradCheckReport::new();
    let mut probe = store.clone();
    for (name, grad) in analytic {
        let n = grad.len();
        let picks = pick_coords(n, coords_per_param, rng);
        for idx in picks {
            let orig = probe.value(name)?.data()[idx];
            probe.entry_mut(name)?.value.data_mut()[idx] = orig + h;
            let up = loss(&probe)?;
            probe.entry_mut(name)?.value.data_mut()[idx] = orig - h;
            let down = loss(&probe)?;
            probe.entry_mut(name)?.value.data_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            report.record(name, idx, grad.data()[idx], fd);
        }
    }
    Ok(report)
}

fn pick_coords(n: usize, want: usize, rng: &mut impl Rng) -> Vec<usize> {
    if want >= n {
        return (0..n).collect();
    }
    // Sample without replacement; n is small in every audit we run.
    let mut all: Vec<usize> = (0..n).collect();
    for i in 0..want {
        let j = rng.gen_range(i..n);
        all.swap(i, j);
    }
    all.truncate(want);
    all
}
