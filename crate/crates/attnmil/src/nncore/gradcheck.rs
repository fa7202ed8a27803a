//! Central finite-difference verification of analytic gradients.

/// Outcome of a gradient check over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub n_checked: usize,
}

/// Compares analytic gradients against central differences
/// `(L(p+h) - L(p-h)) / 2h` at every parameter. The relative error is
/// `|a - n| / max(|a|, |n|, 1e-12)`. Loss evaluation must be
/// deterministic (dropout off or masks frozen).
pub fn grad_check<F>(loss: &F, params: &[f64], analytic: &[f64], h: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let mut perturbed = params.to_vec();
    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    for i in 0..params.len() {
        perturbed[i] = params[i] + h;
        let plus = loss(&perturbed);
        perturbed[i] = params[i] - h;
        let minus = loss(&perturbed);
        perturbed[i] = params[i];
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_index = i;
        }
    }
    GradCheckReport {
        max_rel_err,
        worst_index,
        n_checked: params.len(),
    }
}
