mod common;

use std::io::{BufRead, BufReader, Read};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use base64::Engine;
use common::{corpus_workspace, first_person};
use serde_json::{json, Value};

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(ws: &std::path::Path) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_focus"))
            .env("FOCUS_WORKSPACE", ws)
            .args(["serve", "--port", "0", "--grace", "5"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_string();
        Server { child, base }
    }

    fn call(&self, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
        let req = ureq::request(method, &format!("{}{}", self.base, path));
        let resp = match body {
            Some(b) => req.send_json(b),
            None => req.call(),
        };
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => panic!("{e}"),
        };
        let status = resp.status();
        let text = resp.into_string().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    fn wait_done(&self, run_id: &str) -> Value {
        let start = Instant::now();
        loop {
            let (status, doc) = self.call("GET", &format!("/api/runs/{run_id}"), None);
            assert_eq!(status, 200);
            match doc["status"].as_str().unwrap() {
                "Done" | "Failed" => return doc,
                _ if start.elapsed() > Duration::from_secs(20) => {
                    panic!("run {run_id} never finished")
                }
                _ => std::thread::sleep(Duration::from_millis(20)),
            }
        }
    }

    fn interrupt(mut self) -> i32 {
        let pid = self.child.id().to_string();
        Command::new("kill").args(["-INT", &pid]).status().unwrap();
        let start = Instant::now();
        loop {
            if let Some(status) = self.child.try_wait().unwrap() {
                return status.code().unwrap_or(-1);
            }
            assert!(
                start.elapsed() < Duration::from_secs(15),
                "server ignored SIGINT"
            );
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
    }
}

fn labels(v: &Value) -> Vec<String> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_str().unwrap().to_string())
        .collect()
}

fn parse_box(s: &str) -> Vec<i64> {
    s.split(',').map(|x| x.parse().unwrap()).collect()
}

#[test]
fn run_lifecycle() {
    let ws = corpus_workspace(42);
    let inst = first_person(ws.path());
    let image_id = inst
        .image
        .file_stem()
        .unwrap()
        .to_str()
        .unwrap()
        .to_string();
    let server = Server::start(ws.path());

    let (status, catalog) = server.call("GET", "/api/images", None);
    assert_eq!(status, 200);
    assert!(catalog["images"]
        .as_array()
        .unwrap()
        .iter()
        .any(|i| i["image_id"] == image_id.as_str()));

    let body = json!({
        "image_id": image_id,
        "case_id": inst.case_id,
        "box": parse_box(&inst.bbox),
        "mode": "segment_mask",
        "variant": "focus",
    });
    let (status, created) = server.call("POST", "/api/runs", Some(body.clone()));
    assert_eq!(status, 202, "{created}");
    let run_id = created["run_id"].as_str().unwrap().to_string();
    let doc = server.wait_done(&run_id);
    assert_eq!(doc["status"], "Done", "{doc}");
    let result = &doc["result"];
    let proposal = labels(&result["proposal"]);
    let detected: Vec<String> = result["detections"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["label"].as_str().unwrap().to_string())
        .collect();
    assert!(detected.iter().all(|l| proposal.contains(l)));
    assert!(ws
        .path()
        .join(doc["result_path"].as_str().unwrap())
        .is_file());
    assert!(ws
        .path()
        .join("runs")
        .join(format!("{run_id}.json"))
        .is_file());

    // repeated reads do not change anything
    assert_eq!(
        server.call("GET", &format!("/api/runs/{run_id}"), None),
        (200, doc.clone())
    );

    let png = ureq::get(&format!("{}/api/runs/{run_id}/attended.png", server.base))
        .call()
        .unwrap();
    assert_eq!(png.content_type(), "image/png");
    let mut bytes = Vec::new();
    png.into_reader().read_to_end(&mut bytes).unwrap();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");

    // rerun without one detected label
    assert!(!detected.is_empty(), "fixture run should detect something");
    let removed = detected[0].clone();
    let edited: Vec<&String> = proposal.iter().filter(|l| **l != removed).collect();
    let (status, rerun) = server.call(
        "POST",
        &format!("/api/runs/{run_id}/rerun"),
        Some(json!({ "proposal_override": edited })),
    );
    assert_eq!(status, 202, "{rerun}");
    let child = server.wait_done(rerun["run_id"].as_str().unwrap());
    assert_eq!(child["status"], "Done");
    assert_eq!(child["parent_run_id"], run_id.as_str());
    assert!(child["result"]["detections"]
        .as_array()
        .unwrap()
        .iter()
        .all(|d| d["label"] != removed.as_str()));

    // unchanged list reproduces the detections exactly
    let (_, same) = server.call(
        "POST",
        &format!("/api/runs/{run_id}/rerun"),
        Some(json!({ "proposal_override": proposal })),
    );
    let same = server.wait_done(same["run_id"].as_str().unwrap());
    assert_eq!(same["result"]["detections"], result["detections"]);

    let (status, _) = server.call(
        "POST",
        &format!("/api/runs/{run_id}/rerun"),
        Some(json!({ "proposal_override": [] })),
    );
    assert_eq!(status, 422);

    let (status, _) = server.call("DELETE", &format!("/api/runs/{run_id}"), None);
    assert_eq!(status, 204);
    assert_eq!(
        server.call("GET", &format!("/api/runs/{run_id}"), None).0,
        404
    );
    assert_eq!(
        server
            .call("DELETE", &format!("/api/runs/{run_id}"), None)
            .0,
        404
    );
    assert!(!ws
        .path()
        .join("runs")
        .join(format!("{run_id}.json"))
        .exists());

    assert_eq!(server.interrupt(), 0);
}

#[test]
fn validation_and_unknown_runs() {
    let ws = corpus_workspace(42);
    let inst = first_person(ws.path());
    let image_id = inst
        .image
        .file_stem()
        .unwrap()
        .to_str()
        .unwrap()
        .to_string();
    let server = Server::start(ws.path());

    assert_eq!(server.call("GET", "/api/runs/unknown", None).0, 404);
    assert_eq!(
        server.call("GET", "/api/runs/unknown/attended.png", None).0,
        404
    );
    assert_eq!(
        server
            .call(
                "POST",
                "/api/runs/unknown/rerun",
                Some(json!({"proposal_override": ["a"]}))
            )
            .0,
        404
    );

    for (bad_box, field) in [
        (json!([5, 5, 2, 2]), "box"),
        (json!("1,2,3,4"), "box"),
        (json!([0, 0, 1]), "box"),
        (json!([0, 0, 100000, 5]), "box"),
    ] {
        let (status, doc) = server.call(
            "POST",
            "/api/runs",
            Some(json!({"image_id": image_id, "box": bad_box})),
        );
        assert_eq!(status, 422, "{bad_box}");
        assert_eq!(doc["errors"][0]["field"], field, "{doc}");
    }
    let (status, doc) = server.call(
        "POST",
        "/api/runs",
        Some(json!({"image_id": "nope", "box": [0, 0, 2, 2], "mode": "blur", "prompt": {"task": "  "}})),
    );
    assert_eq!(status, 422);
    let fields: Vec<&str> = doc["errors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["field"].as_str().unwrap())
        .collect();
    for f in ["mode", "prompt.task", "image_id"] {
        assert!(fields.contains(&f), "{doc}");
    }
    let (status, _) = server.call("POST", "/api/runs", Some(json!([1, 2])));
    assert_eq!(status, 422);
}

#[test]
fn uploads_and_inline_images() {
    let ws = corpus_workspace(42);
    let inst = first_person(ws.path());
    let png = std::fs::read(&inst.image).unwrap();
    let server = Server::start(ws.path());

    let resp = ureq::post(&format!("{}/api/images", server.base))
        .set("Content-Type", "image/png")
        .send_bytes(&png)
        .unwrap();
    assert_eq!(resp.status(), 201);
    let uploaded: Value = resp.into_json().unwrap();
    let id = uploaded["image_id"].as_str().unwrap();
    let (_, catalog) = server.call("GET", "/api/images", None);
    assert!(catalog["images"]
        .as_array()
        .unwrap()
        .iter()
        .any(|i| i["image_id"] == id));

    match ureq::post(&format!("{}/api/images", server.base)).send_bytes(b"not an image") {
        Err(ureq::Error::Status(422, _)) => {}
        other => panic!("{other:?}"),
    }

    let b64 = base64::engine::general_purpose::STANDARD.encode(&png);
    let (status, created) = server.call(
        "POST",
        "/api/runs",
        Some(json!({
            "image_png_b64": b64,
            "case_id": inst.case_id,
            "box": parse_box(&inst.bbox),
            "variant": "baseline",
            "labels": ["belt", "watch"],
        })),
    );
    assert_eq!(status, 202, "{created}");
    let doc = server.wait_done(created["run_id"].as_str().unwrap());
    assert_eq!(doc["status"], "Done", "{doc}");
    assert_eq!(doc["result"]["variant"], "baseline");

    // a run whose fixtures are missing fails with its stage recorded
    let (_, created) = server.call(
        "POST",
        "/api/runs",
        Some(
            json!({"image_id": id, "case_id": "no-such-case", "box": [0, 0, 4, 4], "mode": "crop"}),
        ),
    );
    let doc = server.wait_done(created["run_id"].as_str().unwrap());
    assert_eq!(doc["status"], "Failed");
    assert_eq!(doc["error"]["stage"], "propose");
    assert_eq!(server.interrupt(), 0);
}

#[test]
fn bind_failure_exits_7() {
    let ws = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = common::focus(ws.path(), &["serve", "--port", &port]);
    assert_eq!(common::code(&out), 7, "{}", common::stderr(&out));
}
