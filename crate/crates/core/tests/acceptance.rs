//! One line per acceptance criterion. Set `ISAC_ACCEPT_SUITE` to `fast` or
//! `learning` to run a subset; the default runs everything.

use std::io::Write;

use isac_core::acceptance::{run_suite, AcceptOptions, Suite};

#[test]
fn acceptance() {
    let suite: Suite = std::env::var("ISAC_ACCEPT_SUITE")
        .ok()
        .map(|s| s.parse().expect("suite is fast, learning or all"))
        .unwrap_or(Suite::All);
    let results = run_suite(suite, &AcceptOptions::default());
    // Written to the raw handle so the lines survive output capture.
    let mut err = std::io::stderr().lock();
    for r in &results {
        writeln!(err, "{r}").unwrap();
    }
    let failed: Vec<u8> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    writeln!(
        err,
        "{} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    )
    .unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
