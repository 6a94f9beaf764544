//! The eleven acceptance criteria, run in sequence so that runtimes are
//! measured without contention. One PASS/FAIL line is printed per criterion.

use l2flow::verify::run_criterion;

#[test]
fn acceptance() {
    let results: Vec<_> = (1..=11).map(run_criterion).collect();
    for r in &results {
        println!("{}", r.line());
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| (r.id, r.name)).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
