use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qopt"))
        .args(args)
        .env("QOPT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(qopt(&["run"]).status.code(), Some(2));
    assert_eq!(qopt(&["run", "--config", "/nonexistent/x.json"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad.json", r#"{"problem":"case1","algorithm":"spqo","phi":1.5,"eval_budget":100}"#);
    let o = qopt(&["run", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("phi"));
}

#[test]
fn list_problems_prints_every_scenario() {
    let o = qopt(&["list-problems"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 26);
    assert!(text.contains("case1 d=2 box=[-2,2] q*(normal,0.6)=10.00"), "{text}");
    assert!(text.contains("mm1 d=4 box=[1,20] cost*(0.95)=2.66"));
}

#[test]
fn run_table_and_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("results");
    for (name, alg) in [("a.json", "spqo"), ("b.json", "qg")] {
        let cfg = write_config(
            tmp.path(),
            name,
            &format!(r#"{{"problem":"case1","algorithm":"{alg}","phi":0.6,"eval_budget":6000,"runs":10,"trace_stride":10}}"#),
        );
        let dir = out.join(alg);
        let o = qopt(&["run", "--config", &cfg, "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("runs=10"));
        assert!(dir.join("summary.json").exists());
        assert!(!dir.join("INCOMPLETE").exists());
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 11);
    }

    let o = qopt(&["table", "--dir", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("### noise=normal, phi=0.6"), "{text}");
    assert!(text.contains("| problem | optimum | spqo | qg |"), "{text}");
    let row = text.lines().find(|l| l.starts_with("| case1 |")).unwrap();
    assert_eq!(row.matches('|').count(), 5);

    let o = qopt(&["table", "--dir", out.to_str().unwrap(), "--format", "csv"]);
    let csv = stdout(&o);
    assert_eq!(csv.lines().next().unwrap(), "noise,phi,problem,optimum,spqo_mean,spqo_stderr,qg_mean,qg_stderr");
    assert_eq!(csv.lines().count(), 2);

    let spqo = out.join("spqo");
    let o = qopt(&["rate", "--dir", spqo.to_str().unwrap(), "--k-lo", "10", "--k-hi", "2000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let slope: f64 = stdout(&o)
        .split_whitespace()
        .find_map(|w| w.strip_prefix("slope="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(slope.is_finite() && slope < 0.0, "slope {slope}");

    let o = qopt(&["rate", "--dir", spqo.to_str().unwrap(), "--theta-star", "1,2,3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"problem":"case2","noise":"cauchy","algorithm":"spqo-crn","phi":0.95,"eval_budget":20000,"runs":3,"base_seed":9}"#,
    );
    let dirs: Vec<_> = ["x", "y"].iter().map(|d| tmp.path().join(d)).collect();
    for d in &dirs {
        assert!(qopt(&["run", "--config", &cfg, "--out", d.to_str().unwrap()]).status.success());
    }
    let strip = |text: String| -> String {
        text.lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 4);
    for name in names {
        let a = fs::read_to_string(dirs[0].join(&name)).unwrap();
        let b = fs::read_to_string(dirs[1].join(&name)).unwrap();
        if name == "summary.json" {
            assert_eq!(a, b);
        } else {
            assert_eq!(strip(a), strip(b), "{name:?}");
        }
    }
}
