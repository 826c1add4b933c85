use super::Parameters;

/// A scalar loss of a parameter vector with an analytic gradient.
pub trait Objective {
    fn loss(&self, params: &Parameters) -> f64;
    fn loss_and_grad(&self, params: &Parameters) -> (f64, Parameters);
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat parameter index with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Denominator floor of the relative error. Gradients smaller than this are
/// compared in absolute terms, where central differences are dominated by
/// rounding of the loss.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

/// Compares every analytic partial derivative against a central difference
/// with step `step`; relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(objective: &impl Objective, params: &Parameters, step: f64) -> GradCheckReport {
    let (_, grads) = objective.loss_and_grad(params);
    let analytic: Vec<f64> = grads.values().collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: analytic.len(),
    };
    for (i, &a) in analytic.iter().enumerate() {
        let slot = probe.get_mut(i).expect("gradient and parameters align");
        let orig = *slot;
        *slot = orig + step;
        let up = objective.loss(&probe);
        *probe.get_mut(i).unwrap() = orig - step;
        let down = objective.loss(&probe);
        *probe.get_mut(i).unwrap() = orig;
        let n = (up - down) / (2.0 * step);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR);
        if rel > report.max_rel_error || !rel.is_finite() {
            report.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
            report.worst_index = i;
            report.analytic = a;
            report.numeric = n;
        }
    }
    report
}
