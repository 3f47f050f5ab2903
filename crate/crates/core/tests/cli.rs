use std::path::{Path, PathBuf};

use cuntzlab::cli::{run, Outcome, EXIT_INPUT, EXIT_OK, EXIT_REFUTED};
use cuntzlab::linalg;
use cuntzlab::matfield::MatrixField;
use cuntzlab::simplicial::{Complex, Mesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn cli(args: &[&str]) -> (Outcome, Value) {
    let out = run(std::iter::once("cuntzlab").chain(args.iter().copied()));
    let v = serde_json::from_str(&out.stdout).unwrap_or(Value::Null);
    (out, v)
}

fn save(dir: &Path, name: &str, f: &MatrixField) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, f.to_json_value().to_string()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `a` of rank <= 2, `b` of rank >= 11 at every vertex of a circle.
fn gap_pair(seed: u64) -> (MatrixField, MatrixField) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mesh = Mesh::new(Complex::circle(4));
    let nv = mesh.top().num_vertices();
    let a = (0..nv).map(|_| linalg::random_psd(12, r.gen_range(0..=2), 0.5, 2.0, &mut r)).collect();
    let b = (0..nv).map(|_| linalg::random_psd(12, r.gen_range(11..=12), 0.5, 2.0, &mut r)).collect();
    (MatrixField::new(mesh.clone(), a).unwrap(), MatrixField::new(mesh, b).unwrap())
}

fn diag_x_1() -> MatrixField {
    MatrixField::from_coords(Mesh::new(Complex::interval(1)), |x| linalg::diag(&[x[0], 1.0]))
}

#[test]
fn compare_gap_pair_is_witnessed() {
    let dir = TempDir::new().unwrap();
    let (a, b) = gap_pair(1);
    let (pa, pb) = (save(dir.path(), "a.json", &a), save(dir.path(), "b.json", &b));
    let (out, v) = cli(&["compare", s(&pa), s(&pb)]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stdout);
    assert_eq!(v["result"]["verdict"], "witnessed");
    assert!(v["result"]["residual"].as_f64().unwrap() < 1e-3);
    assert_eq!(v["command"], "compare");
    assert_eq!(v["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(v["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn compare_rank_violation_is_refuted() {
    let dir = TempDir::new().unwrap();
    let (a, b) = gap_pair(2);
    let mut sb = b.samples().to_vec();
    let mut sa = a.samples().to_vec();
    sa[2] = linalg::diag(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    sb[2] = linalg::diag(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let a = MatrixField::new(a.mesh().clone(), sa).unwrap();
    let b = MatrixField::new(b.mesh().clone(), sb).unwrap();
    let (pa, pb) = (save(dir.path(), "a.json", &a), save(dir.path(), "b.json", &b));
    for mode in ["strict", "oracle"] {
        let (out, v) = cli(&["compare", s(&pa), s(&pb), "--mode", mode]);
        assert_eq!(out.code, EXIT_REFUTED);
        let r = &v["result"];
        assert_eq!(r["verdict"], "refuted");
        assert_eq!((r["rank_a"].as_u64(), r["rank_b"].as_u64()), (Some(3), Some(2)));
        assert_eq!(r["point"]["vertices"], serde_json::json!([2]));
    }
}

#[test]
fn input_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.json");
    let (out, _) = cli(&["compare", s(&missing), s(&missing)]);
    assert_eq!(out.code, EXIT_INPUT);
    assert!(out.stderr.contains("nope.json"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"complex\": [1,\n}").unwrap();
    let (out, _) = cli(&["ldf", s(&bad)]);
    assert_eq!(out.code, EXIT_INPUT);
    assert!(out.stderr.contains("line 3"), "{}", out.stderr);

    let (out, _) = cli(&["frobnicate"]);
    assert_eq!(out.code, EXIT_INPUT);
}

#[test]
fn ldf_of_identity_is_one() {
    let dir = TempDir::new().unwrap();
    let id = MatrixField::constant(Mesh::new(Complex::circle(3)), linalg::identity(3));
    let p = save(dir.path(), "id.json", &id);
    let (out, v) = cli(&["ldf", s(&p)]);
    assert_eq!(out.code, EXIT_OK);
    assert_eq!(v["result"]["value"].as_f64(), Some(1.0));
}

#[test]
fn ldf_with_trace_file() {
    let dir = TempDir::new().unwrap();
    let a = MatrixField::new(
        Mesh::new(Complex::interval(2)),
        vec![linalg::diag(&[1.0, 0.0]), linalg::diag(&[1.0, 0.0]), linalg::diag(&[1.0, 1.0])],
    )
    .unwrap();
    let p = save(dir.path(), "a.json", &a);
    let k = a.mesh().root.clone();
    let first = k.simplex_index(&[0, 1]).unwrap();
    let t = dir.path().join("t.json");
    std::fs::write(&t, format!("{{\"weights\": {{\"{first}\": 0.25}}}}")).unwrap();
    let (out, v) = cli(&["ldf", s(&p), "--trace", s(&t)]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    // rank 1 with mass 1/4, rank 2 with mass 3/4
    assert!((v["result"]["value"].as_f64().unwrap() - 0.875).abs() < 1e-12);
}

#[test]
fn plot_diag_x_one() {
    let dir = TempDir::new().unwrap();
    let p = save(dir.path(), "d.json", &diag_x_1());
    let out_dir = dir.path().join("plots");
    let (out, _) = cli(&["plot", s(&p), "--out-dir", s(&out_dir), "--max-subdivisions", "2"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let csv = std::fs::read_to_string(out_dir.join("rank.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[0], ["0", "0", "1"]);
    assert!(rows[1..].iter().all(|r| r[2] == "2"));
    assert!(std::fs::read_to_string(out_dir.join("rank.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn plot_rejects_two_complexes() {
    let dir = TempDir::new().unwrap();
    let f = MatrixField::constant(Mesh::new(Complex::octahedron()), linalg::identity(2));
    let p = save(dir.path(), "s.json", &f);
    let (out, _) = cli(&["plot", s(&p), "--out-dir", s(dir.path())]);
    assert_eq!(out.code, EXIT_INPUT);
    assert!(out.stderr.contains("dimension"));
}

#[test]
fn rc_of_matrix_algebra() {
    let dir = TempDir::new().unwrap();
    let stage = dir.path().join("stage.json");
    std::fs::write(&stage, r#"{"blocks": [{"complex": {"vertices": [[0.0], [1.0]], "simplices": [[0], [1]]}, "n": 4, "rank": 4}]}"#).unwrap();
    let (out, v) = cli(&["rc", s(&stage)]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    assert_eq!(v["result"]["rc_estimate"].as_f64(), Some(0.0));
    assert_eq!(v["result"]["drr"].as_f64(), Some(0.0));
}

#[test]
fn approx_majorant_minorant_reports() {
    let dir = TempDir::new().unwrap();
    let (a, b) = gap_pair(3);
    let (pa, pb) = (save(dir.path(), "a.json", &a), save(dir.path(), "b.json", &b));
    let (out, v) = cli(&["approx", s(&pa), "--eps", "0.05"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    assert!(v["result"]["distance"].as_f64().unwrap() < 0.05);
    let (out, v) = cli(&["majorant", s(&pa), "--eps", "0.05"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    assert!(v["result"]["max_rank_excess"].as_i64().unwrap() <= 7);
    let (out, v) = cli(&["minorant", s(&pb), "--target", s(&pa)]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stdout);
    assert_eq!(v["result"]["verdict"], "witnessed");
}

#[test]
fn reports_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b) = gap_pair(4);
    let (pa, pb) = (save(dir.path(), "a.json", &a), save(dir.path(), "b.json", &b));
    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("wall_time_s");
        v
    };
    let args = ["compare", s(&pa), s(&pb), "--seed", "5"];
    let (o1, v1) = cli(&args);
    let (o2, v2) = cli(&args);
    assert_eq!(o1.code, o2.code);
    assert_eq!(v1["seed"].as_u64(), Some(5));
    assert_eq!(strip(v1), strip(v2));
}
