//! Runs the finite-difference suite and prints one line per check.

use std::time::Instant;

use secaps::gradcheck::run_suite;

fn main() -> secaps::Result<()> {
    let started = Instant::now();
    let outcomes = run_suite(100, 4)?;
    for o in &outcomes {
        println!(
            "{:<26} cases={:<4} max_rel_err={:.3e} tol={:.0e} {}",
            o.name,
            o.cases,
            o.max_rel_error,
            o.tolerance,
            if o.passed { "ok" } else { "FAIL" }
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} checks, {failed} failed, {:.1?}", outcomes.len(), started.elapsed());
    Ok(())
}
