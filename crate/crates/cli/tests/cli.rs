use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use groundtrack::mock::{ChatRule, MockFixtures};
use groundtrack::synthetic::{CorpusOptions, Sequence, generate_corpus};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_groundtrack"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

/// Synthetic corpus written under `dir/c`.
fn corpus(dir: &Path, images: usize, confusion: f64, miss: f64) -> std::path::PathBuf {
    let c = generate_corpus(&CorpusOptions {
        images,
        confusion_rate: confusion,
        validator_miss_rate: miss,
        ..Default::default()
    });
    let root = dir.join("c");
    c.write(&root).unwrap();
    root
}

fn with_chat_rule(fixtures: &Path, out: &Path, response: &str) {
    let mut f = MockFixtures::load_dir(fixtures).unwrap();
    f.chat.rules.push(ChatRule {
        images: Some(1),
        response: Some(response.into()),
        ..Default::default()
    });
    f.save_dir(out).unwrap();
}

#[test]
fn describe_golden_and_repaired() {
    let dir = tempfile::tempdir().unwrap();
    let root = corpus(dir.path(), 1, 0.0, 0.0);
    let fx = root.join("fixtures");
    let img = root.join("img_0000.png");
    let out = run(&["--mocks", s(&fx), "--output-dir", s(&dir.path().join("o1")), "describe", s(&img)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let golden: Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = golden["instances"].as_array().unwrap().iter().map(|i| i["object_name"].as_str().unwrap()).collect();
    assert!(!names.is_empty());

    // The same list wrapped in prose and a fence parses to the same instances.
    let wrapped = format!(
        "Sure! Here is the list:\n```json\n{}\n```\nLet me know if you need more.",
        serde_json::to_string(&golden["instances"]).unwrap()
    );
    let fx2 = dir.path().join("fx2");
    with_chat_rule(&fx, &fx2, &wrapped);
    let out = run(&["--mocks", s(&fx2), "--output-dir", s(&dir.path().join("o2")), "describe", s(&img)]);
    assert!(out.status.success());
    let repaired: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(repaired["instances"], golden["instances"]);
    assert!(dir.path().join("o2/description.json").exists());
}

#[test]
fn describe_failures_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = corpus(dir.path(), 1, 0.0, 0.0);
    let img = root.join("img_0000.png");
    let garbage = dir.path().join("g");
    with_chat_rule(&root.join("fixtures"), &garbage, "I cannot see anything useful here.");
    let out = run(&["--mocks", s(&garbage), "--output-dir", s(dir.path()), "describe", s(&img)]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "no_valid_json");

    let empty = dir.path().join("e");
    with_chat_rule(&root.join("fixtures"), &empty, "[{\"colour\": \"red\"}, 42]");
    let out = run(&["--mocks", s(&empty), "--output-dir", s(dir.path()), "describe", s(&img)]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(stderr_json(&out)["error"], "empty_description");

    let out = run(&["describe", s(&img)]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["--mocks", s(&root.join("fixtures")), "describe", "/no/such.png"]);
    assert_eq!(out.status.code(), Some(2));
}

fn budget_oracle(odf: f64, n: usize) -> usize {
    // Integer form of max(n, floor(odf * n)) for odf given in hundredths.
    let hundredths = (odf * 100.0).round() as usize;
    (hundredths * n / 100).max(n)
}

#[test]
fn ground_counts_follow_budget() {
    let dir = tempfile::tempdir().unwrap();
    // Every class confused: each prompt yields two candidates.
    let root = corpus(dir.path(), 1, 1.0, 0.0);
    let fx = root.join("fixtures");
    let img = root.join("img_0000.png");
    let desc_dir = dir.path().join("d");
    assert!(run(&["--mocks", s(&fx), "--output-dir", s(&desc_dir), "describe", s(&img)]).status.success());
    let desc = desc_dir.join("description.json");
    let n = serde_json::from_slice::<Value>(&std::fs::read(&desc).unwrap()).unwrap()["instances"]
        .as_array()
        .unwrap()
        .len();
    // Candidates: each instance's own box plus its confusion partner's box
    // when the partner is in the image.
    let palette: Value = serde_json::from_slice(&std::fs::read(fx.join("palette.json")).unwrap()).unwrap();
    let names: Vec<String> = serde_json::from_slice::<Value>(&std::fs::read(&desc).unwrap()).unwrap()["instances"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["object_name"].as_str().unwrap().to_string())
        .collect();
    let partner = |name: &str| -> Option<String> {
        let e = palette.as_array()?.iter().find(|e| e["object_name"] == name)?;
        Some(e["confusions"][0]["with"].as_str()?.to_string())
    };
    let candidates = n + names.iter().filter(|nm| partner(nm).is_some_and(|p| names.contains(&p))).count();
    assert!(candidates > n);
    for odf in [1.0, 1.5] {
        let o = dir.path().join(format!("g{odf}"));
        let out = run(&[
            "--mocks", s(&fx), "--odf", &odf.to_string(), "--output-dir", s(&o), "ground", s(&img), "--description",
            s(&desc), "--overlay",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let g: Value = serde_json::from_slice(&out.stdout).unwrap();
        let got = g["assignments"].as_array().unwrap().len();
        let b = budget_oracle(odf, n);
        assert_eq!(g["budget"].as_u64().unwrap() as usize, b);
        assert_eq!(got, b.min(candidates));
        assert!(o.join("grounding.png").exists());
    }
    let out = run(&["--mocks", s(&fx), "ground", s(&img), "--description", s(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

fn snapshots(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn track_keeps_ids_and_admits_entrant() {
    let dir = tempfile::tempdir().unwrap();
    let seq = Sequence::lanes(4, 2, &[0, 6], 12, 320, 240);
    let frames = dir.path().join("frames");
    seq.write(&frames).unwrap();
    let o = dir.path().join("o");
    let out = run(&[
        "--mocks", s(&frames.join("fixtures")), "--output-dir", s(&o), "--stable-output", "track", s(&frames),
        "--update-interval", "5", "--overlay",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let snaps = snapshots(&o.join("snapshots.jsonl"));
    assert_eq!(snaps.len(), 12);
    let mut ids = std::collections::BTreeSet::new();
    for (f, snap) in snaps.iter().enumerate() {
        let tracks = snap["tracks"].as_array().unwrap();
        assert_eq!(tracks.len(), if f >= 10 { 2 } else { 1 }, "frame {f}");
        ids.extend(tracks.iter().map(|t| t["id"].as_u64().unwrap()));
    }
    assert_eq!(ids.len(), 2);
    let updates = snapshots(&o.join("updates.jsonl"));
    let admitted: usize = updates.iter().skip(1).map(|u| u["admitted"].as_array().unwrap().len()).sum();
    assert_eq!(admitted, 1);
    assert!(updates.iter().all(|u| u.get("elapsed_ms").is_none()));
    assert!(o.join("overlays/frame_0011.png").exists());
}

#[test]
fn track_trigger_file_forces_one_update() {
    let dir = tempfile::tempdir().unwrap();
    let seq = Sequence::lanes(9, 2, &[], 4, 200, 120);
    let frames = dir.path().join("frames");
    seq.write(&frames).unwrap();
    let trigger = dir.path().join("update.now");
    std::fs::write(&trigger, "").unwrap();
    let o = dir.path().join("o");
    let out = run(&[
        "--mocks", s(&frames.join("fixtures")), "--output-dir", s(&o), "track", s(&frames), "--trigger", s(&trigger),
    ]);
    assert!(out.status.success());
    assert!(!trigger.exists());
    // Frame 0 initializes and consumes the trigger, so only one update runs.
    let updates = snapshots(&o.join("updates.jsonl"));
    assert_eq!(updates.len(), 1);
    let out = run(&["--mocks", s(&frames.join("fixtures")), "track", s(&frames.join("frame_0000.png"))]);
    assert_eq!(out.status.code(), Some(2));
}

fn eval(dir: &Path, root: &Path, extra: &[&str]) -> (Output, Value) {
    let fx = root.join("fixtures");
    let ann = root.join("annotations.json");
    let mut args = vec!["--mocks", s(&fx), "--output-dir", s(dir), "--stable-output"];
    args.extend_from_slice(extra);
    args.extend(["eval", s(&ann), "--no-augmented", "--no-sweep"]);
    let out = run(&args);
    let report = std::fs::read(dir.join("report.json")).map(|b| serde_json::from_slice(&b).unwrap()).unwrap_or(Value::Null);
    (out, report)
}

#[test]
fn eval_closed_loop_and_validation_direction() {
    let dir = tempfile::tempdir().unwrap();
    let root = corpus(dir.path(), 3, 0.0, 0.0);
    let (out, report) = eval(&dir.path().join("a"), &root, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    let row = table.lines().find(|l| l.starts_with("run")).unwrap();
    let cols: Vec<&str> = row.split('|').map(str::trim).collect();
    assert_eq!(cols[3], "1.00");
    assert_eq!(report["metrics"]["map"], 1.0);
    for f in ["metrics.txt", "timing.csv"] {
        assert!(dir.path().join("a").join(f).exists());
    }
    let (_, again) = eval(&dir.path().join("b"), &root, &[]);
    assert_eq!(
        std::fs::read(dir.path().join("a/report.json")).unwrap(),
        std::fs::read(dir.path().join("b/report.json")).unwrap()
    );
    assert_eq!(again, report);

    let noisy = tempfile::tempdir().unwrap();
    let root = corpus(noisy.path(), 12, 0.3, 0.1);
    let (_, off) = eval(&noisy.path().join("off"), &root, &[]);
    let (_, on) = eval(&noisy.path().join("on"), &root, &["--validate"]);
    let p = |r: &Value| r["metrics"]["precision"].as_f64().unwrap();
    let r = |r: &Value| r["metrics"]["recall"].as_f64().unwrap();
    assert!(p(&on) > p(&off));
    assert!(r(&on) < r(&off));
}

#[test]
fn eval_flags_unannotated_image_and_fails_only_on_total_failure() {
    let dir = tempfile::tempdir().unwrap();
    let root = corpus(dir.path(), 3, 0.0, 0.0);
    // Add a background-only image without annotations.
    let blank = image::RgbImage::from_pixel(64, 64, image::Rgb(groundtrack::synthetic::BACKGROUND));
    blank.save(root.join("blank.png")).unwrap();
    let ann = root.join("annotations.json");
    let mut coco: Value = serde_json::from_slice(&std::fs::read(&ann).unwrap()).unwrap();
    coco["images"].as_array_mut().unwrap().push(serde_json::json!({"id": 99, "file_name": "blank.png", "width": 64, "height": 64}));
    std::fs::write(&ann, serde_json::to_vec(&coco).unwrap()).unwrap();
    let (out, report) = eval(&dir.path().join("o"), &root, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report["metrics"]["map"], 1.0);
    let blank = report["images"].as_array().unwrap().iter().find(|i| i["image"] == 99).unwrap();
    assert!(blank["flags"].as_array().unwrap().iter().any(|f| f.as_str().unwrap().contains("no annotations")));

    // Every image missing on disk: total failure.
    for e in std::fs::read_dir(&root).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "png") {
            std::fs::remove_file(p).unwrap();
        }
    }
    let (out, _) = eval(&dir.path().join("x"), &root, &[]);
    assert_eq!(out.status.code(), Some(9));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut body = String::new();
    s.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_mocks_reports_ready() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let mut child = bin()
        .args(["serve-mocks", s(dir.path()), "--port", &port.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    let mut body = None;
    while start.elapsed() < Duration::from_secs(10) {
        if let Some(b) = http_get(port, "/health") {
            body = Some(b);
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    child.kill().ok();
    child.wait().ok();
    assert!(body.expect("server answered").contains("\"ready\""));

    let bad = dir.path().join("bad");
    std::fs::create_dir(&bad).unwrap();
    std::fs::write(bad.join("palette.json"), "{not json").unwrap();
    let out = run(&["serve-mocks", s(&bad), "--port", &free_port().to_string()]);
    assert_eq!(out.status.code(), Some(3));
}
