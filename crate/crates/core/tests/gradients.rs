mod common;

use common::gradcases::all_cases;

#[test]
fn every_op_matches_finite_differences() {
    let mut failures = Vec::new();
    for c in all_cases() {
        println!("{:<34} max rel error {:.3e} (tol {:.0e})", c.name, c.error, c.tolerance);
        if !c.passed() {
            failures.push(c.name);
        }
    }
    assert!(failures.is_empty(), "gradient mismatch in {failures:?}");
}
