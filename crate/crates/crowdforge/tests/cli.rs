use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn cmd(cwd: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_crowdforge"));
    for (k, _) in std::env::vars() {
        if k.starts_with("CROWDFORGE_") {
            c.env_remove(k);
        }
    }
    c.current_dir(cwd).env("RUST_LOG", "warn");
    c
}

fn run(cwd: &Path, args: &[&str]) -> Output {
    cmd(cwd).args(args).output().expect("spawn crowdforge")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_accepts_a_good_task_set() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["validate", fixture("covid_taskset.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("0 errors"), "{}", stdout(&o));
}

#[test]
fn validate_reports_inverted_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["validate", fixture("bad_bounds.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    let out = stdout(&o);
    assert!(out.contains("error[bounds-inverted]"), "{out}");
    assert!(out.contains("/tasks/0/annotation_groups/0"), "{out}");

    let o = run(dir.path(), &["--format", "json", "validate", fixture("bad_bounds.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["errors"], 1);
    assert_eq!(v["files"][0]["diagnostics"][0]["code"], "bounds-inverted");
}

#[test]
fn validate_checks_every_fixture() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["covid_pipeline", "covid_taskset", "drop", "matres", "torque", "vqa_e", "acceptability", "adversarial_conditions", "adversarial_unicode"] {
        let o = run(dir.path(), &["validate", fixture(&format!("{name}.json")).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stdout(&o));
    }
}

#[test]
fn unreadable_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["validate", "missing.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_config_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("crowdforge.toml"), "api_url = \"http://x\"\nbogus = 1\n").unwrap();
    let o = run(dir.path(), &["status"]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
}

struct Server {
    child: Child,
    url: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(cwd: &Path, data: &Path) -> Server {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = cmd(cwd)
        .args(["serve", "--addr", &addr, "--tokens", "t0k", "--data-dir", data.to_str().unwrap(), "--seed", "3"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let url = format!("http://{addr}");
    let deadline = Instant::now() + Duration::from_secs(20);
    while Instant::now() < deadline {
        if reqwest::blocking::get(format!("{url}/healthz")).is_ok_and(|r| r.status().is_success()) {
            return Server { child, url };
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    let _ = child.kill();
    let _ = child.wait();
    panic!("server did not come up on {addr}");
}

#[test]
fn push_launch_simulate_report_against_a_server() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let srv = serve(dir.path(), &data);
    let base = ["--api-url", srv.url.as_str(), "--token", "t0k", "-p", "covid"];
    let with = |extra: &[&str]| {
        let mut a: Vec<&str> = base.to_vec();
        a.extend_from_slice(extra);
        run(dir.path(), &a)
    };

    let o = with(&["push", fixture("covid_pipeline.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let o = with(&["launch", "exam", "--reward", "0.1", "--count", "50"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let o = with(&["launch", "taskset", "--reward", "0.2", "--count", "30", "--gate", "covid"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");

    let o = with(&["--format", "json", "simulate", "--exam", "covid", "--task", "covid", "--workers", "12", "--threads", "3"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let sim: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(sim["workers"], 12);
    assert_eq!(sim["errors"], serde_json::json!({}), "{sim}");

    let o = with(&["--format", "json", "status"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let status: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(status["task_set"]["submissions"], sim["tasks_submitted"]);

    let o = with(&["report"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(!stdout(&o).is_empty());

    let export = dir.path().join("out.jsonl");
    let o = with(&["export", "--out", export.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let lines = std::fs::read_to_string(&export).unwrap().lines().count() as u64;
    assert_eq!(Some(lines), sim["tasks_submitted"].as_u64());

    let zip = dir.path().join("b.zip");
    assert_eq!(with(&["bundle", "--out", zip.to_str().unwrap()]).status.code(), Some(0));
    let o = run(dir.path(), &["--api-url", &srv.url, "--token", "t0k", "-p", "copy", "import", zip.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");

    let o = run(dir.path(), &["--api-url", &srv.url, "--token", "wrong", "-p", "covid", "status"]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");

    let bad = run(dir.path(), &["--api-url", &srv.url, "--token", "t0k", "-p", "bad", "push", fixture("bad_bounds.json").to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1), "{bad:?}");

    // The journal survives a restart.
    drop(srv);
    let srv = serve(dir.path(), &data);
    let o = run(dir.path(), &["--api-url", &srv.url, "--token", "t0k", "-p", "covid", "--format", "json", "status"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let again: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(again["task_set"]["submissions"], status["task_set"]["submissions"]);
    assert_eq!(again["exam"], status["exam"]);
}
