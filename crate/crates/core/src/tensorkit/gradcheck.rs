/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

const REL_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Maximum relative error between the analytic gradient returned by `f` at
/// `params` and a central finite-difference estimate of every coordinate.
///
/// `f` returns `(loss, gradient)`.
pub fn grad_check<F>(params: &[f64], f: F) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let (lp, _) = f(&p);
        p[i] = orig - FD_STEP;
        let (lm, _) = f(&p);
        p[i] = orig;
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let good = |p: &[f64]| (p[0] * p[0] + 3.0 * p[1], vec![2.0 * p[0], 3.0]);
        assert!(grad_check(&[0.7, -1.2], good) < 1e-8);
        let bad = |p: &[f64]| (p[0] * p[0], vec![p[0]]);
        assert!(grad_check(&[0.7], bad) > 0.4);
    }

    #[test]
    fn relative_error_is_symmetric_and_floored() {
        assert_eq!(relative_error(1.0, 2.0), relative_error(2.0, 1.0));
        assert_eq!(relative_error(0.0, 1e-9), 1e-9 / 1e-6);
    }
}
