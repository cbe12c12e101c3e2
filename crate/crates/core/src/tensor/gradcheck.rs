use serde::{Deserialize, Serialize};

use super::{Result, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Largest `|g_ad - g_fd| / max(|g_ad| + |g_fd|, floor)` over checked
    /// coordinates; `floor` sits well above finite-difference rounding noise.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the function has a kink there.
    pub kinks: usize,
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences, one input coordinate at a time.
///
/// A coordinate counts as a kink when the gap between the forward and
/// backward one-sided slopes does not shrink linearly with the step (it
/// halves for a smooth function when the step halves). Central differences
/// are meaningless there, so the coordinate is excluded and counted.
pub fn gradient_check(f: impl Fn(&[Tensor]) -> Result<Tensor>, inputs: &[Tensor], epsilon: f64) -> Result<GradCheckReport> {
    for t in inputs {
        t.zero_grad();
    }
    let loss = f(inputs)?;
    loss.backward()?;
    let f0 = loss.item();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, kinks: 0 };
    for t in inputs {
        let analytic = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
        let base = t.to_vec();
        let mut probe = base.clone();
        for i in 0..base.len() {
            let mut eval = |x: f64| -> Result<f64> {
                probe[i] = x;
                t.set_data(&probe)?;
                let v = f(inputs)?.item();
                probe[i] = base[i];
                t.set_data(&base)?;
                Ok(v)
            };
            let fp = eval(base[i] + epsilon)?;
            let fm = eval(base[i] - epsilon)?;
            let fph = eval(base[i] + 0.5 * epsilon)?;
            let fmh = eval(base[i] - 0.5 * epsilon)?;

            let gap = (fp - 2.0 * f0 + fm) / epsilon;
            let gap_half = (fph - 2.0 * f0 + fmh) / (0.5 * epsilon);
            if (gap - 2.0 * gap_half).abs() > 0.1 * gap.abs() + 1e-6 {
                report.kinks += 1;
                continue;
            }
            let fd = (fp - fm) / (2.0 * epsilon);
            let a = analytic[i];
            // Rounding in `fp - fm` limits fd to about eps*|f|/epsilon; below
            // that scale differences are noise, so the denominator never drops
            // under 1e4 times that noise (nor under 1e-8).
            let noise = f64::EPSILON * fp.abs().max(fm.abs()) / epsilon;
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e4 * noise).max(1e-8);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
