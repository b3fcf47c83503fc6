use std::fs;

use gtx::report::{ablation_text, emit_report};
use gtx::CliError;
use gtx_core::train::format_pct;

#[test]
fn ablation_table_layout_from_fixture_values() {
    let pct = format_pct(49.70, 31.33);
    assert_eq!(pct, "+58.63%");
    let rows = vec![("GT".to_string(), 31.33, "--".to_string()), ("GT + Mask + RPEARL".to_string(), 49.70, pct)];
    assert_eq!(
        ablation_text(&rows),
        "| Model              | Accuracy | % vs. GT |\n\
         |--------------------|----------|----------|\n\
         | GT                 |    31.33 |       -- |\n\
         | GT + Mask + RPEARL |    49.70 |  +58.63% |\n"
    );
}

#[test]
fn report_needs_a_manifest() {
    let d = tempfile::tempdir().unwrap();
    let e = emit_report(d.path()).unwrap_err();
    assert!(e.to_string().contains("MANIFEST"), "{e}");
}

#[test]
fn corrupt_table_is_named() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("MANIFEST"), "").unwrap();
    fs::write(d.path().join("grid.csv"), "model,alpha_train,alpha_test,seed,metric,wallclock_s\nsparse_gt,1,1,0,oops,0\n").unwrap();
    let e = emit_report(d.path()).unwrap_err();
    assert!(matches!(e, CliError::Artifact { .. }));
    assert!(e.to_string().contains("grid.csv") && e.to_string().contains("metric"), "{e}");
}

#[test]
fn missing_column_is_named() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("MANIFEST"), "").unwrap();
    fs::write(d.path().join("ablation.csv"), "variant,metric\nno_pe,50\n").unwrap();
    let e = emit_report(d.path()).unwrap_err();
    assert!(e.to_string().contains("ablation.csv") && e.to_string().contains("pct_vs_baseline"), "{e}");
}
