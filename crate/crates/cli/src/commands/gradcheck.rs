use crate::{usage, CliError, CliResult, GradcheckArgs};
use taeclsa_core::gradcheck::run_suite;

pub fn run(args: GradcheckArgs) -> CliResult {
    if args.points == 0 {
        return Err(usage("--points must be at least 1"));
    }
    let reports = run_suite(args.seed, args.tol, args.points);
    let mut offenders = Vec::new();
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<20} max_rel_err {:.3e} (worst coord {}: analytic {:.6e} vs numeric {:.6e}, {} points)",
            r.name, r.max_rel_err, r.worst_coord, r.worst_analytic, r.worst_numeric, r.points
        );
        if !r.passed() {
            offenders.push(format!("{} ({:.3e})", r.name, r.max_rel_err));
        }
    }
    if offenders.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed at tolerance {}: {}",
            args.tol,
            offenders.join(", ")
        )))
    }
}
