use std::fs;

use gtx::artifacts::line_diff;
use gtx::io::{checkpoint_bytes, load_pairs, parse_checkpoint, read_jsonl, save_pairs, write_jsonl};
use gtx::manifest::{manifest_text, verify_manifest, write_manifest};
use gtx_core::model::{Mode, Model, ModelConfig};
use gtx_core::train::Pair;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn pairs_round_trip_bit_for_bit(raw in prop::collection::vec((0usize..5000, 0usize..5000, 0.0f64..1e6), 0..40)) {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("pairs.csv");
        let pairs: Vec<Pair> = raw.iter().map(|&(src, dst, spd)| Pair { src, dst, spd }).collect();
        save_pairs(&p, &pairs).unwrap();
        prop_assert_eq!(load_pairs(&p).unwrap(), pairs);
    }

    #[test]
    fn jsonl_floats_round_trip(xs in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..30)) {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.jsonl");
        write_jsonl(&p, &xs).unwrap();
        let back: Vec<f64> = read_jsonl(&p).unwrap();
        prop_assert_eq!(back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn checkpoints_round_trip(seed in 0u64..1000, in_dim in 1usize..6, sparse in any::<bool>()) {
        let cfg = ModelConfig { mode: if sparse { Mode::SparseGt } else { Mode::DenseGt }, d_model: 8, d_ffn: 8, ..ModelConfig::default() };
        let m = Model::new(&cfg, in_dim, seed).unwrap();
        let bytes = checkpoint_bytes(&m, serde_json::json!({ "seed": seed }));
        let (back, h) = parse_checkpoint(&bytes, "ckpt".as_ref()).unwrap();
        prop_assert_eq!(h.in_dim, in_dim);
        prop_assert_eq!(checkpoint_bytes(&back, h.extra), bytes);
    }

    #[test]
    fn truncated_checkpoints_are_rejected(cut in 1usize..200) {
        let m = Model::new(&ModelConfig { d_model: 8, d_ffn: 8, ..ModelConfig::default() }, 2, 0).unwrap();
        let bytes = checkpoint_bytes(&m, serde_json::Value::Null);
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(parse_checkpoint(&bytes[..bytes.len() - cut], "ckpt".as_ref()).is_err());
    }

    #[test]
    fn diff_counts_lines_outside_the_common_part(a in prop::collection::vec("[abc]", 0..12), b in prop::collection::vec("[abc]", 0..12)) {
        let (ta, tb) = (a.join("\n"), b.join("\n"));
        let d = line_diff(&ta, &tb);
        let minus = d.lines().filter(|l| l.starts_with("- ")).count();
        let plus = d.lines().filter(|l| l.starts_with("+ ")).count();
        prop_assert_eq!(a.len() - minus, b.len() - plus);
        prop_assert_eq!(line_diff(&ta, &ta), "");
    }
}

#[test]
fn manifest_ignores_wallclock_but_catches_edits() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("t.csv"), "a,wallclock_s,b\n1,0.5,2\n").unwrap();
    fs::write(d.path().join("r.jsonl"), "{\"x\":1,\"wallclock_s\":3.0}\n").unwrap();
    let before = manifest_text(d.path()).unwrap();
    fs::write(d.path().join("t.csv"), "a,wallclock_s,b\n1,9.25,2\n").unwrap();
    fs::write(d.path().join("r.jsonl"), "{\"x\":1,\"wallclock_s\":7.5}\n").unwrap();
    assert_eq!(manifest_text(d.path()).unwrap(), before);
    write_manifest(d.path()).unwrap();
    assert!(verify_manifest(d.path()).unwrap().is_empty());
    fs::write(d.path().join("t.csv"), "a,wallclock_s,b\n1,9.25,3\n").unwrap();
    assert_eq!(verify_manifest(d.path()).unwrap(), vec!["t.csv".to_string()]);
}
