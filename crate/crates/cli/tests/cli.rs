use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use holoproxy_core::protocol::{decode, MessagePayload};

const VALID_CSV: &str = "location,year,value\nA,2001,1\nA,2002,5\nB,2001,3\nB,2002,2\nC,2001,4\nC,2002,0\n";

fn holoproxy() -> Command {
    Command::new(env!("CARGO_BIN_EXE_holoproxy"))
}

fn run(args: &[&str]) -> Output {
    holoproxy().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_exit_codes() {
    for name in ["range_basic", "order_basic", "compare_basic"] {
        let o = run(&["run", name]);
        assert_eq!(code(&o), 0, "{name}: {}{}", stdout(&o), stderr(&o));
    }
    assert_eq!(code(&run(&["run", "/no/such/scenario.scn"])), 2);
    assert_eq!(code(&run(&["run"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let base = "holoproxy-scenario 1\nname w\ncube synthetic countries=3 years=3\nclient phone proxy\nclient hmd renderer\n\
                task compare by=phone cells=0:0,1:1,2:2\n";
    let right = {
        let p = dir.path().join("probe.scn");
        std::fs::write(&p, base).unwrap();
        let o = run(&["run", "--format", "json", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        v["tasks"][0]["expected"][0].as_str().unwrap().to_string()
    };
    let wrong = ["0:0", "1:1", "2:2"].into_iter().find(|c| *c != right).unwrap();
    let p = dir.path().join("wrong.scn");
    std::fs::write(&p, format!("{base}expect answer 1 {wrong}\n")).unwrap();
    let out = dir.path().join("report.txt");
    let o = run(&["run", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(std::fs::read_to_string(&out).unwrap().contains("FAIL task 1 answer"));

    let p = dir.path().join("oob.scn");
    std::fs::write(&p, format!("{base}at 5 phone tap-cell 9:9\n")).unwrap();
    assert_eq!(code(&run(&["run", p.to_str().unwrap()])), 2);
}

#[test]
fn run_seed_changes_the_instance_and_writes_a_replayable_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.log");
    let a = run(&["run", "order_basic", "--seed", "99", "--format", "json", "--log", log.to_str().unwrap()]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = run(&["run", "order_basic", "--seed", "99", "--format", "json"]);
    let strip = |o: &Output| {
        let mut v: serde_json::Value = serde_json::from_str(&stdout(o)).unwrap();
        v.as_object_mut().unwrap().remove("wall_ms");
        v
    };
    assert_eq!(strip(&a), strip(&b));
    let o = run(&["replay", log.to_str().unwrap(), "--format", "json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["digest"], strip(&a)["server_digest"]);
    assert_eq!(v["verified"], true);
}

#[test]
fn ingest_reports_shape_or_missing_cell() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.csv");
    std::fs::write(&good, VALID_CSV).unwrap();
    let o = run(&["ingest", good.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("3 locations x 2 years"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "location,year,value\nA,2001,1\nA,2002,5\nB,2001,3\n").unwrap();
    let o = run(&["ingest", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing cell (B, 2002)"), "{}", stderr(&o));
    let o = run(&["serve", "--dataset", bad.to_str().unwrap(), "--port", "0"]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("missing cell"), "{}", stderr(&o));
}

struct Server {
    child: Child,
    lines: std::io::Lines<BufReader<std::process::ChildStdout>>,
    session: String,
    port: u16,
}

impl Server {
    fn start(args: &[&str], env_port: Option<u16>) -> Server {
        let mut cmd = holoproxy();
        cmd.arg("serve").args(args).stdout(Stdio::piped()).stderr(Stdio::null());
        match env_port {
            Some(p) => cmd.env("HOLOPROXY_PORT", p.to_string()),
            None => cmd.env_remove("HOLOPROXY_PORT").args(["--port", "0"]),
        };
        let mut child = cmd.spawn().unwrap();
        let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
        let session = lines.next().unwrap().unwrap().strip_prefix("session ").unwrap().to_string();
        let listening = lines.next().unwrap().unwrap();
        let port = listening.rsplit(':').next().unwrap().parse().unwrap();
        Server { child, lines, session, port }
    }

    fn client(&self, extra: &[&str]) -> Output {
        let port = self.port.to_string();
        let mut args = vec!["client", "--port", &port, "--session", &self.session];
        args.extend_from_slice(extra);
        run(&args)
    }

    /// Interrupts the server and returns what it printed on the way out.
    fn stop(mut self) -> Vec<String> {
        let pid = self.child.id().to_string();
        assert!(Command::new("kill").args(["-INT", &pid]).status().unwrap().success());
        assert!(self.child.wait().unwrap().success());
        self.lines.map(Result::unwrap).collect()
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn serve_client_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, VALID_CSV).unwrap();
    let logs = dir.path().join("logs");
    let port = free_port();
    let server = Server::start(
        &["--dataset", csv.to_str().unwrap(), "--log-dir", logs.to_str().unwrap()],
        Some(port),
    );
    assert_eq!(server.port, port);

    let o = server.client(&["--dataset", csv.to_str().unwrap(), "--do", "tap-cell 1:0", "--do", "project year 1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("haptic amplitude 0.640"), "{text}");
    assert!(text.contains("ack 2") && text.contains("ack 3"), "{text}");
    let digest = text.lines().last().unwrap().strip_prefix("digest ").unwrap().to_string();

    // a renderer joining later sees the same state
    let o = server.client(&["--id", "hmd", "--role", "renderer"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().last().unwrap(), format!("digest {digest}"));
    // tap-cell without the dataset is a usage error
    assert_eq!(code(&server.client(&["--id", "x", "--do", "tap-cell 0:0"])), 2);
    // refused request: project out of range
    assert_eq!(code(&server.client(&["--id", "y", "--do", "project year 7"])), 1);

    let session = server.session.clone();
    let closing = server.stop();
    assert!(closing.iter().any(|l| l.contains(&digest)), "{closing:?}");
    let log = logs.join(format!("{session}.log"));
    let o = run(&["replay", log.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains(&format!("digest {digest}")));
    assert!(stdout(&o).contains("matches the recorded digest"));

    // one flipped byte inside a frame
    let mut bytes = std::fs::read(&log).unwrap();
    let at = bytes.windows(4).position(|w| w == b"year").unwrap();
    bytes[at..at + 4].copy_from_slice(b"yeaX");
    std::fs::write(&log, &bytes).unwrap();
    assert_eq!(code(&run(&["replay", log.to_str().unwrap()])), 1);

    let text = String::from_utf8(std::fs::read(logs.join(format!("{session}.log"))).unwrap()).unwrap();
    let first = text.lines().next().unwrap().to_string();
    std::fs::write(&log, format!("{first}\n{}", &first[..first.len() / 2])).unwrap();
    let o = run(&["replay", log.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("corrupt log at line 2"), "{}", stderr(&o));

    std::fs::write(&log, "").unwrap();
    let o = run(&["replay", log.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "an emptied log no longer matches its closed digest");
    assert_eq!(code(&run(&["replay", dir.path().join("missing.log").to_str().unwrap()])), 2);
}

#[test]
fn empty_session_log_replays_to_the_initial_digest() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, VALID_CSV).unwrap();
    let logs = dir.path().join("logs");
    let server = Server::start(&["--dataset", csv.to_str().unwrap(), "--log-dir", logs.to_str().unwrap()], None);
    let o = server.client(&["--id", "idle", "--role", "observer"]);
    let joined_digest = stdout(&o).lines().last().unwrap().to_string();
    let session = server.session.clone();
    server.stop();
    let log = logs.join(format!("{session}.log"));
    // the observer's Hello is the only applied message; drop it to get an empty log
    std::fs::write(&log, "").unwrap();
    let mut meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(holoproxy_server::meta_path(&log)).unwrap()).unwrap();
    meta["closed"] = serde_json::Value::Null;
    std::fs::write(holoproxy_server::meta_path(&log), meta.to_string()).unwrap();
    let o = run(&["replay", log.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("applied 0"));
    // Hello changes no replicated state, so the initial digest is what the observer saw
    assert!(stdout(&o).contains(joined_digest.trim_start_matches("digest ")));
}

#[test]
fn seed_noise_shows_up_in_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, VALID_CSV).unwrap();
    let logs = dir.path().join("logs");
    let server = Server::start(
        &["--dataset", csv.to_str().unwrap(), "--log-dir", logs.to_str().unwrap(), "--seed-noise", "0.01", "--seed", "5"],
        None,
    );
    let mut args = vec![];
    for _ in 0..200 {
        args.extend(["--do", "pose 0 0 0.5"]);
    }
    assert_eq!(code(&server.client(&args)), 0);
    let session = server.session.clone();
    server.stop();

    let log = logs.join(format!("{session}.log"));
    let xs: Vec<f64> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .filter_map(|l| match decode(format!("{}\n", l.split_once(' ').unwrap().1).as_bytes()).unwrap().payload {
            MessagePayload::PoseUpdate { pose } => Some(pose.position.z - 0.5),
            _ => None,
        })
        .collect();
    assert_eq!(xs.len(), 200);
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
    assert!((0.008..0.012).contains(&sd), "sd {sd}");
    assert_eq!(code(&run(&["replay", log.to_str().unwrap()])), 0);
}

#[test]
fn resume_continues_a_log() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, VALID_CSV).unwrap();
    let logs = dir.path().join("logs");
    let server = Server::start(&["--dataset", csv.to_str().unwrap(), "--log-dir", logs.to_str().unwrap()], None);
    assert_eq!(code(&server.client(&["--dataset", csv.to_str().unwrap(), "--do", "tap-cell 0:0"])), 0);
    let session = server.session.clone();
    // SIGKILL: no close record
    let mut child = server.child;
    child.kill().unwrap();
    child.wait().unwrap();
    let log = logs.join(format!("{session}.log"));
    assert!(stdout(&run(&["replay", log.to_str().unwrap()])).contains("not closed"));

    let mut cmd = holoproxy();
    cmd.args(["serve", "--port", "0", "--resume", log.to_str().unwrap()]).stdout(Stdio::piped()).stderr(Stdio::null());
    let mut child = cmd.spawn().unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    assert_eq!(lines.next().unwrap().unwrap(), format!("session {session} resumed after 2 messages"));
    let port: u16 = lines.next().unwrap().unwrap().rsplit(':').next().unwrap().parse().unwrap();
    let server = Server { child, lines, session, port };
    let o = server.client(&["--id", "phone-2", "--dataset", csv.to_str().unwrap(), "--do", "tap-cell 2:1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    server.stop();
    let o = run(&["replay", log.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("applied 4"), "{}", stdout(&o));
    assert!(Path::new(&log).exists());
}
