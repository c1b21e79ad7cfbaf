//! Central-difference gradient checking.

/// Compare an analytic gradient against central finite differences of `f`
/// at `x`. Returns the maximum relative error over coordinates, where the
/// per-coordinate error is |g_a − g_n| / max(1, |g_a|, |g_n|).
///
/// Returns `f64::INFINITY` if `f` produces non-finite values near `x`.
pub fn grad_check<F>(f: &F, analytic: &[f64], x: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(analytic.len(), x.len(), "gradient/point length mismatch");
    assert!((1e-7..=1e-3).contains(&h), "step size h out of range");
    let mut xp = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let x0 = xp[i];
        xp[i] = x0 + h;
        let fp = f(&xp);
        xp[i] = x0 - h;
        let fm = f(&xp);
        xp[i] = x0;
        if !fp.is_finite() || !fm.is_finite() {
            return f64::INFINITY;
        }
        let num = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - num).abs() / analytic[i].abs().max(num.abs()).max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Like [`grad_check`] but only over the coordinate subset `idx`; used when
/// the parameter vector is large and a spot check suffices.
pub fn grad_check_at<F>(f: &F, analytic: &[f64], x: &[f64], h: f64, idx: &[usize]) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(analytic.len(), x.len());
    let mut xp = x.to_vec();
    let mut worst = 0.0f64;
    for &i in idx {
        let x0 = xp[i];
        xp[i] = x0 + h;
        let fp = f(&xp);
        xp[i] = x0 - h;
        let fm = f(&xp);
        xp[i] = x0;
        if !fp.is_finite() || !fm.is_finite() {
            return f64::INFINITY;
        }
        let num = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - num).abs() / analytic[i].abs().max(num.abs()).max(1.0);
        worst = worst.max(err);
    }
    worst
}
