use vigc::gradcheck::{run_suite, standard_seeds, standard_suite, TOLERANCE};

#[test]
fn every_op_matches_central_differences() {
    let reports = run_suite(&standard_suite(), &standard_seeds()).unwrap();
    let mut failed = Vec::new();
    for r in &reports {
        println!("{:<45} max rel err {:.2e} over {} entries", r.name, r.max_rel_error, r.checked_entries);
        if !r.passed() {
            failed.push(r.name);
        }
    }
    assert!(failed.is_empty(), "above {TOLERANCE}: {failed:?}");
}
