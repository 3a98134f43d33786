use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hybrid-oc"));
    c.env_remove("HYBRID_OC_THREADS");
    c
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(scenario: &Path, out: &Path) -> Output {
    bin().arg("run").arg(scenario).arg("--out").arg(out).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let i = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn damped_ball_reports_zeno() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&scenario("damped_ball.json"), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let events = fs::read_to_string(tmp.path().join("events.csv")).unwrap();
    assert_eq!(events.lines().next().unwrap(), "k,t_k,x_pre,y_pre,x_post,y_post,guard_id,beat_count");
    // impacts at 1, 1.8, 2.44, ... for c² = 0.8
    let t = column(&tmp.path().join("events.csv"), "t_k");
    assert!((t[0] - 1.0).abs() < 1e-9 && (t[1] - 1.8).abs() < 1e-9);
    let meta = fs::read_to_string(tmp.path().join("run.json")).unwrap();
    assert!(meta.contains("\"status\": \"zeno_detected\""), "{meta}");
    // both one-sided states of every impact are in the trajectory
    let ts = column(&tmp.path().join("trajectory.csv"), "t");
    for e in &t {
        assert_eq!(ts.iter().filter(|s| *s == e).count(), 2);
    }
}

#[test]
fn caustic_has_points_near_two_and_a_half() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&scenario("ball_caustic.json"), tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let t = column(&tmp.path().join("caustic.csv"), "t_star");
    assert!(t.iter().any(|t| (2.45..=2.55).contains(t)));
}

#[test]
fn shooting_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&scenario("neuron_shoot.json"), &a).status.success());
    let o = bin().args(["run", "--threads", "3"]).arg(scenario("neuron_shoot.json")).arg("--out").arg(&b).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["candidates.csv", "best_trajectory.csv", "events.csv", "run.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let accepted = column(&a.join("candidates.csv"), "accepted");
    assert!(accepted.iter().any(|v| *v == 1.0));
}

#[test]
fn compare_against_itself_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    assert!(run(&scenario("neuron_shoot.json"), &a).status.success());
    for metric in ["sup", "l2"] {
        let o = bin().args(["compare", "--metric", metric, "--threshold", "0"]).arg(&a).arg(&a).output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        let report = fs::read_to_string(a.join(format!("compare_{metric}.csv"))).unwrap();
        assert!(report.contains("\ndistance,0.0000000000000000e0\n"), "{report}");
        assert!(report.contains("\npass,1\n"));
    }
}

#[test]
fn compare_flags_a_threshold_breach() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let s1 =
        write(tmp.path(), "s1.json", r#"{"model":{"kind":"ball"},"task":{"kind":"simulate","x0":[1.0,0.0],"t_span":[0.0,2.0]}}"#);
    let s2 =
        write(tmp.path(), "s2.json", r#"{"model":{"kind":"ball"},"task":{"kind":"simulate","x0":[1.1,0.0],"t_span":[0.0,2.0]}}"#);
    assert!(run(&s1, &a).status.success());
    assert!(run(&s2, &b).status.success());
    let o = bin().args(["compare", "--metric", "sup", "--threshold", "1e-3"]).arg(&a).arg(&b).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin().args(["compare", "--metric", "sup", "--threshold", "10"]).arg(&a).arg(&b).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn mismatched_models_are_incompatible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&scenario("neuron_shoot.json"), &a).status.success());
    assert!(run(&scenario("mirror_shoot.json"), &b).status.success());
    let o = bin().args(["compare", "--metric", "l2"]).arg(&a).arg(&b).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("IncompatibleRuns"));
}

#[test]
fn unknown_fields_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(
        tmp.path(),
        "s.json",
        r#"{"model":{"kind":"ball","mass":1.0},"task":{"kind":"simulate","x0":[1.0,0.0],"t_span":[0.0,1.0]}}"#,
    );
    let o = run(&s, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mass"), "{}", stderr(&o));
    let s = write(tmp.path(), "t.json", r#"{"model":{"kind":"ball"},"task":{"kind":"dp"}}"#);
    assert_eq!(run(&s, &tmp.path().join("out")).status.code(), Some(2));
    let s = write(
        tmp.path(),
        "u.json",
        r#"{"model":{"kind":"ball","c":1.5},"task":{"kind":"simulate","x0":[1.0,0.0],"t_span":[0.0,1.0]}}"#,
    );
    assert_eq!(run(&s, &tmp.path().join("out")).status.code(), Some(2));
}

#[test]
fn solver_failures_exit_three_with_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    // with c² = 0.5 the impact speed drops below the transversality floor
    // before the Zeno window fills
    let s = write(
        tmp.path(),
        "s.json",
        r#"{"model":{"kind":"ball","c":0.7071067811865476},"task":{"kind":"simulate","x0":[0.0,1.0],"t_span":[0.0,3.0]}}"#,
    );
    let out = tmp.path().join("out");
    let o = run(&s, &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("TangentialCrossing"), "{}", stderr(&o));
    let meta = fs::read_to_string(out.join("run.json")).unwrap();
    assert!(meta.contains("failed: TangentialCrossing"));
    assert!(column(&out.join("events.csv"), "k").len() > 20);
}

#[test]
fn thread_variable_is_checked() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .env("HYBRID_OC_THREADS", "zero")
        .arg("run")
        .arg(scenario("ball_zeno.json"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sample_scenarios_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut names: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert!(names.len() >= 8);
    for p in names {
        let o = run(&p, &tmp.path().join(p.file_stem().unwrap()));
        assert!(o.status.success(), "{}: {}", p.display(), stderr(&o));
    }
}
