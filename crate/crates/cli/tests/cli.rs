mod common;

use std::fs;

use common::*;
use matrixinfo_cli::io::EmbeddingFile;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn write_csv(dir: &std::path::Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn analyze_identity_has_full_rank() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_csv(dir.path(), "i2.csv", "2,2\n1,0\n0,1\n");
    let out = run(&["analyze", &p]);
    assert_eq!(code(&out), 0);
    let v = report(&out);
    assert_eq!(v["command"], "analyze");
    assert!((f(&v["results"]["global_erank"]) - 2.0).abs() < 1e-12);
    assert!(v["results"]["inter_class_erank"].is_null());
}

#[test]
fn analyze_labelled_etf() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("etf.mxe");
    let out = run(&["etf", "--K", "3", "--d", "3", "--out", p.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!((f(&report(&out)["results"]["erank"]) - 2.0).abs() < 1e-8);
    let v = report(&run(&["analyze", p.to_str().unwrap()]));
    assert!((f(&v["results"]["inter_class_erank"]) - 2.0).abs() < 1e-8);
}

#[test]
fn sidecar_labels_must_match_batch() {
    let dir = tempfile::tempdir().unwrap();
    let z = write_csv(dir.path(), "z.csv", "2,3\n1,0\n0,1\n-1,0\n");
    let good = write_csv(dir.path(), "good.csv", "0,1,1\n");
    let short = write_csv(dir.path(), "short.csv", "0\n1\n");
    let bad = write_csv(dir.path(), "bad.csv", "0,x,1\n");
    assert_eq!(code(&run(&["analyze", &z, "--labels", &good])), 0);
    assert_eq!(code(&run(&["analyze", &z, "--labels", &short])), 3);
    assert_eq!(code(&run(&["analyze", &z, "--labels", &bad])), 2);
}

#[test]
fn malformed_inputs_exit_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let f = EmbeddingFile::new(DMatrix::identity(3, 3));
    let bytes = f.to_bytes().unwrap();
    let p = dir.path().join("trunc.mxe");
    fs::write(&p, &bytes[..30]).unwrap();
    let out = run(&["analyze", p.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte offset"));
    assert!(out.stdout.is_empty());

    let c = write_csv(dir.path(), "bad.csv", "2,2\n1,0\n0,oops\n");
    let out = run(&["analyze", &c]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    assert_eq!(code(&run(&["analyze", "/nonexistent/file.mxe"])), 2);
}

#[test]
fn tcr_on_identity() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_csv(dir.path(), "i2.csv", "2,2\n1,0\n0,1\n");
    let v = report(&run(&["loss", &p, "--loss", "tcr", "--eps-sq", "1.0"]));
    assert!((f(&v["results"]["value"]) + 2f64.ln()).abs() < 1e-12);
    assert_eq!(f(&v["config"]["eps_sq"]), 1.0);
}

#[test]
fn matrix_ssl_gamma_difference_is_alignment_term() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_csv(dir.path(), "z.csv", "2,3\n0.6,0.8\n1,0\n0,-1\n");
    let value = |g: &str| {
        let v = report(&run(&["loss", &p, &p, "--loss", "matrix-ssl", "--gamma", g]));
        (f(&v["results"]["value"]), f(&v["results"]["matrix_alignment"]))
    };
    let (v0, a0) = value("0");
    let (v1, a1) = value("1");
    assert_eq!(a0, 0.0);
    assert!((v1 - v0 - a1).abs() < 1e-12);
}

#[test]
fn loss_errors() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_csv(dir.path(), "a.csv", "2,2\n1,0\n0,1\n");
    let b = write_csv(dir.path(), "b.csv", "2,3\n1,0\n0,1\n1,0\n");
    assert_eq!(code(&run(&["loss", &a, &b, "--loss", "matrix-ssl"])), 3);
    assert_eq!(code(&run(&["loss", &a, &a, "--loss", "infonce"])), 4);
    assert_eq!(code(&run(&["loss", &a, &a, "--log", "cubic"])), 4);
    assert_eq!(code(&run(&["loss", &a, "--loss", "mec"])), 4);
}

#[test]
fn verify_failure_still_reports() {
    // The order-40 Taylor comparison does not meet 1e-6 near the edge of
    // the convergence disc, so the taylor battery exits 1 with a report.
    let out = run(&["verify", "taylor", "--trials", "50", "--seed", "0"]);
    assert_eq!(code(&out), 1);
    let v = report(&out);
    assert_eq!(v["results"]["all_pass"], false);
    assert!(checks(&v).iter().any(|c| c["pass"] == true));
}

#[test]
fn optimize_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let out = run(&[
        "optimize",
        "--d",
        "2",
        "--B",
        "4",
        "--seed",
        "1",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let v = report(&out);
    assert!(f(&v["results"]["final_dist_to_uniform"]) <= 1e-3);
    let rows = trajectory(&fs::read_to_string(&csv).unwrap());
    assert_eq!(rows.len() as u64, v["results"]["records"].as_u64().unwrap());
    assert_eq!(rows[0][0], 0.0);
}

#[test]
fn optimize_zero_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let out = run(&["optimize", "--iters", "0", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(trajectory(&fs::read_to_string(&csv).unwrap()).len(), 1);
}

#[test]
fn divergence_exits_five_with_partial_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let out = run(&["optimize", "--step", "1e308", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 5);
    assert_eq!(report(&out)["results"]["stop"], "diverged");
    assert!(!trajectory(&fs::read_to_string(&csv).unwrap()).is_empty());
}

#[test]
fn etf_precondition() {
    assert_eq!(code(&run(&["etf", "--K", "5", "--d", "3"])), 3);
    let v = report(&run(&["etf", "--K", "2", "--d", "2"]));
    assert!((f(&v["results"]["gram_offdiag_min"]) + 1.0).abs() < 1e-12);
}

#[test]
fn thread_count_does_not_change_output() {
    let one = std::process::Command::new(BIN)
        .env("MATRIXINFO_THREADS", "1")
        .args(["verify", "thm41", "--trials", "40", "--seed", "5"])
        .output()
        .unwrap();
    let four = std::process::Command::new(BIN)
        .env("MATRIXINFO_THREADS", "4")
        .args(["verify", "thm41", "--trials", "40", "--seed", "5"])
        .output()
        .unwrap();
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, four.stdout);
    let bad = std::process::Command::new(BIN)
        .env("MATRIXINFO_THREADS", "zero")
        .args(["verify", "etf"])
        .output()
        .unwrap();
    assert_eq!(code(&bad), 4);
}

#[test]
fn csv_and_binary_reports_agree() {
    let dir = tempfile::tempdir().unwrap();
    let m = DMatrix::from_fn(3, 7, |i, j| ((i * 7 + j) as f64 * 0.37).sin());
    let file = EmbeddingFile::new(m);
    let bin = dir.path().join("z.mxe");
    let csv = dir.path().join("z.csv");
    file.write(&bin).unwrap();
    file.write(&csv).unwrap();
    let a = report(&run(&["analyze", bin.to_str().unwrap()]));
    let b = report(&run(&["analyze", csv.to_str().unwrap()]));
    for key in ["global_erank", "vne", "mkl_to_uniform"] {
        assert!((f(&a["results"][key]) - f(&b["results"][key])).abs() <= 1e-12, "{key}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn file_round_trip_is_bit_exact(
        d in 1usize..6,
        b in 1usize..6,
        bits in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 36),
        csv in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_fn(d, b, |i, j| bits[i * 6 + j]);
        let labels = (!csv).then(|| (0..b as u32).rev().collect());
        let file = EmbeddingFile { columns: m, labels };
        let path = dir.path().join(if csv { "z.csv" } else { "z.mxe" });
        file.write(&path).unwrap();
        let back = EmbeddingFile::read(&path).unwrap();
        prop_assert_eq!(&back.labels, &file.labels);
        for (x, y) in back.columns.iter().zip(file.columns.iter()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
