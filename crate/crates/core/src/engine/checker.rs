//! Central finite-difference gradient verification.

/// Step size for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate and its two gradient values.
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub points: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.points += other.points;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst_coord = other.worst_coord;
            self.worst_analytic = other.worst_analytic;
            self.worst_numeric = other.worst_numeric;
        }
    }
}

/// Compare `analytic` against central finite differences of `f` at `x0`,
/// coordinate by coordinate. The relative error uses a small absolute floor
/// in the denominator so coordinates where both gradients vanish do not
/// amplify finite-difference noise.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(
    name: &str,
    mut f: F,
    x0: &[f64],
    analytic: &[f64],
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(x0.len(), analytic.len(), "gradient length mismatch");
    let mut x = x0.to_vec();
    let mut report = GradCheckReport {
        name: name.to_string(),
        max_rel_err: 0.0,
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        points: 1,
        tolerance,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let fp = f(&x);
        x[i] = orig - FD_STEP;
        let fm = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-4);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_coord = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report
}
