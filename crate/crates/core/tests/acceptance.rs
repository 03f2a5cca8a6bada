//! Acceptance suite: the full verification battery on (m, n, s) = (2, 1, 1)
//! and (1, 1, 1), tail depth 8, N = 256, M = 64, 20 seeded points per check.
//!
//! Prints one PASS/FAIL line per criterion followed by the individual checks.
//! Run with `cargo test --test acceptance -- --nocapture` to see the table.

use frobkit_core::checks::{by_suite, Battery, Suite};

const TITLES: [&str; 10] = [
    "flat pairing table",
    "flat coordinates as level-0 densities",
    "density recursion through the connection",
    "Euler scaling of the densities",
    "Levi-Civita connection",
    "Frobenius product",
    "Whitham identification",
    "bihamiltonian recursion",
    "dynamics",
    "series infrastructure",
];

#[test]
fn acceptance() {
    let start = std::time::Instant::now();
    let records = Battery::default().run(&Suite::ALL);
    let mut failed = Vec::new();
    for (suite, recs) in by_suite(&records) {
        let ok = recs.iter().all(|r| r.pass);
        let k = suite.criterion();
        println!("{} criterion {k:>2} ({suite}): {}", if ok { "PASS" } else { "FAIL" }, TITLES[k - 1]);
        for r in recs {
            let err = r.error.as_deref().map(|e| format!("  error: {e}")).unwrap_or_default();
            println!(
                "       {:<4} {:<44} {:>10.3e} <= {:<8.1e} [{:.2}s]  {}{err}",
                if r.pass { "ok" } else { "FAIL" },
                r.id,
                r.measured,
                r.tolerance,
                r.wall_time,
                r.anchor
            );
        }
        if !ok {
            failed.push(k);
        }
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    assert_eq!(by_suite(&records).len(), 10, "every criterion produced records");
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
