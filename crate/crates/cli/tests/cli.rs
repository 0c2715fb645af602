use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mpfem");

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const FP64: &str = r#"{"schema_version":1,"form":"poisson","mode":"bilinear","cell":"hex","p":2,
 "precisions":{"u_p":"fp64","u_g":"fp64","u_q":"fp64","u_s":"fp64"},
 "mesh":{"kind":"structured","n":[2,1,1],"jitter":0.1},"seed":3}"#;

#[test]
fn fp64_kernel_is_within_ten_units() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ref.json"), FP64).unwrap();
    let o = run(&["kernel", "--config", "ref.json", "--max-err", "10"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("param,config,form,mode,p,n_q,kappa2J"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[1], "fp64");
    let err: f64 = row[8].parse().unwrap();
    assert!(err <= 10.0);
}

#[test]
fn kernel_limit_violation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = FP64.replace(r#""u_q":"fp64","u_s":"fp64""#, r#""u_q":"fp32","u_s":"bf16""#);
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    let o = run(&["kernel", "--config", "c.json", "--max-err", "0"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = FP64.replace(r#""seed":3"#, r#""seed":3,"extra":true"#);
    std::fs::write(dir.path().join("bad.json"), bad).unwrap();
    assert_eq!(run(&["kernel", "--config", "bad.json"], dir.path()).status.code(), Some(2));
    let v2 = FP64.replace(r#""schema_version":1"#, r#""schema_version":2"#);
    std::fs::write(dir.path().join("v2.json"), v2).unwrap();
    assert_eq!(run(&["kernel", "--config", "v2.json"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["sweep-geometry", "--fmt", "fp8"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["sweep-nq", "--p", "5:2"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"], dir.path()).status.code(), Some(2));
}

#[test]
fn geometry_sweep_has_slope_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep-geometry", "--fmt", "fp32", "--eps-decades", "1e-1:1e-7"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 13 + 1);
    let slope: Vec<&str> = lines.last().unwrap().split(',').collect();
    assert_eq!(slope[0], "slope");
    let s: f64 = slope[8].parse().unwrap();
    assert!((0.7..1.3).contains(&s), "{s}");
    assert!(slope[10].contains(':'));
}

#[test]
fn degree_sweep_writes_four_files_and_report_renders() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["sweep-degree", "--forms", "mass,poisson", "--modes", "bilinear,action", "--n", "1,1,1", "--p", "1:3", "--out-dir", "out"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for stem in ["mass-bilinear", "mass-action", "poisson-bilinear", "poisson-action"] {
        let csv = std::fs::read_to_string(dir.path().join("out").join(format!("{stem}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
        assert!(csv.contains(",mixed,") && csv.contains(",fp16,"));
    }
    let o = run(&["report", "out/mass-action.csv", "out/poisson-action.csv", "--out", "r.svg"], dir.path());
    assert!(o.status.success());
    let svg = std::fs::read_to_string(dir.path().join("r.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["sweep-nq", "--n", "1,1,1", "--p", "1:4", "--jitter", "0.1", "--seed", "9"];
    let a = run(&args, dir.path());
    let b = run(&args, dir.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).lines().last().unwrap().starts_with("slope,fp16q,mass,action"));
}

#[test]
fn check_bounds_passes_on_fp64() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["check-bounds", "--cells", "4", "--n", "1,1,1", "--configs", "fp64,fp32", "--out", "rows.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 of 32 checks failed"));
    let rows = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 33);
}

#[test]
fn check_bounds_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["check-bounds", "--cells", "2", "--n", "1,1,1", "--configs", "bf16", "--slack", "0"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn basis_and_assemble_emit_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["basis", "--cell", "hex", "--p", "2", "--samples", "20"], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["n_phi"], 27);
    assert!(v["conditioning"]["kappa_v"].as_f64().unwrap() >= 1.0);

    std::fs::write(dir.path().join("ref.json"), FP64).unwrap();
    let o = run(&["assemble", "--config", "ref.json", "--dump", "a.coo"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["n_global"], 5 * 3 * 3);
    assert!(v["global_rel_err"].as_f64().unwrap() < 1e-13);
    assert!(std::fs::read_to_string(dir.path().join("a.coo")).unwrap().lines().count() > 0);
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["sweep-nq", "--n", "2,1,1", "--p", "1:4"];
    let one = Command::new(BIN).args(args).env("MPFEM_THREADS", "1").output().unwrap();
    let auto = Command::new(BIN).args(args).env("MPFEM_THREADS", "0").current_dir(dir.path()).output().unwrap();
    assert!(one.status.success() && auto.status.success());
    assert_eq!(one.stdout, auto.stdout);
    let bad = Command::new(BIN).args(args).env("MPFEM_THREADS", "many").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
