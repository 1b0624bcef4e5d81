//! Finite-difference checks of every differentiable op and the composed
//! network in f64.

use tcvsr::checks::{run_case, CASES, GRAD_TOL};

fn main() -> tcvsr::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut worst = 0.0f64;
    for name in CASES {
        let r = run_case(name, seed)?;
        worst = worst.max(r.report.max_rel_error);
        println!(
            "{:<16} {:>5} entries  max rel err {:.2e}  ({} retried)  {:.2}s",
            r.name, r.report.entries, r.report.max_rel_error, r.report.retried, r.seconds
        );
    }
    println!("worst {worst:.2e}, tolerance {GRAD_TOL:e}");
    Ok(())
}
