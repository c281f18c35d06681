use super::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compare analytic gradients with central differences over every parameter.
///
/// `loss_fn` evaluates the loss and accumulates gradients into the store. The
/// error per entry is `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<S, F>(ps: &mut ParamStore<S>, mut loss_fn: F, eps: f64) -> GradCheckReport
where
    S: Scalar,
    F: FnMut(&mut ParamStore<S>) -> S,
{
    ps.zero_grad();
    loss_fn(ps);
    let analytic: Vec<Vec<S>> = ps.params().iter().map(|p| p.grad.clone()).collect();
    let h = S::lit(eps);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for pi in 0..analytic.len() {
        for i in 0..analytic[pi].len() {
            let orig = ps.params()[pi].value[i];
            ps.params_mut()[pi].value[i] = orig + h;
            let up = loss_fn(ps);
            ps.params_mut()[pi].value[i] = orig - h;
            let down = loss_fn(ps);
            ps.params_mut()[pi].value[i] = orig;
            let numeric = ((up - down) / (h + h)).as_f64();
            let a = analytic[pi][i].as_f64();
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some((ps.params()[pi].name.clone(), i));
            }
        }
    }
    ps.zero_grad();
    for (p, g) in ps.params_mut().iter_mut().zip(analytic) {
        p.grad = g;
    }
    report
}
