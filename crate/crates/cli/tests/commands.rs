mod common;

use std::fs;
use std::path::Path;

use common::{code, corpus_workspace, first_person, focus, focus_in, stderr};

fn run_args<'a>(inst: &'a common::Instance, image: &'a str) -> Vec<&'a str> {
    vec![
        "run",
        "--image",
        image,
        "--box",
        &inst.bbox,
        "--case-id",
        &inst.case_id,
        "--id",
        "r1",
    ]
}

#[test]
fn run_writes_result_and_attended_image() {
    let ws = corpus_workspace(42);
    let inst = first_person(ws.path());
    let image = inst.image.to_string_lossy().into_owned();
    let out = focus(ws.path(), &run_args(&inst, &image));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path().join("results/r1.json")).unwrap())
            .unwrap();
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["case_id"], inst.case_id.as_str());
    assert_eq!(doc["attended"]["png"], "attended/r1.png");
    assert!(ws.path().join("attended/r1.png").is_file());
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed, doc);
    let proposal: Vec<&str> = doc["proposal"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for d in doc["detections"].as_array().unwrap() {
        assert!(proposal.contains(&d["label"].as_str().unwrap()));
    }
}

#[test]
fn exit_codes_follow_the_failing_stage() {
    let ws = corpus_workspace(42);
    let inst = first_person(ws.path());
    let image = inst.image.to_string_lossy().into_owned();

    let bad_box = focus(
        ws.path(),
        &[
            "run",
            "--image",
            &image,
            "--box",
            "5,5,2,2",
            "--case-id",
            &inst.case_id,
        ],
    );
    assert_eq!(code(&bad_box), 2, "{}", stderr(&bad_box));
    let outside = focus(
        ws.path(),
        &[
            "run",
            "--image",
            &image,
            "--box",
            "0,0,5000,10",
            "--case-id",
            &inst.case_id,
        ],
    );
    assert_eq!(code(&outside), 2);
    let missing_image = focus(
        ws.path(),
        &["run", "--image", "nope.png", "--box", "0,0,2,2"],
    );
    assert_eq!(code(&missing_image), 2);

    let fixtures = ws.path().join("fixtures");
    let mask = fixtures.join("masks").join(format!("{}.png", inst.case_id));
    let proposal = fixtures
        .join("proposals")
        .join(format!("{}.json", inst.case_id));
    let detections = fixtures
        .join("detections")
        .join(format!("{}.json", inst.case_id));

    fs::remove_file(&detections).unwrap();
    assert_eq!(code(&focus(ws.path(), &run_args(&inst, &image))), 5);

    fs::remove_file(&proposal).unwrap();
    assert_eq!(code(&focus(ws.path(), &run_args(&inst, &image))), 4);

    fs::remove_file(&mask).unwrap();
    fs::write(
        fixtures.join("segmenter.json"),
        "{\"fallback\": \"miss\"}\n",
    )
    .unwrap();
    assert_eq!(code(&focus(ws.path(), &run_args(&inst, &image))), 3);
}

#[test]
fn empty_proposal_exits_with_the_proposer_code() {
    let ws = corpus_workspace(1);
    let inst = first_person(ws.path());
    let image = inst.image.to_string_lossy().into_owned();
    let path = ws
        .path()
        .join("fixtures/proposals")
        .join(format!("{}.json", inst.case_id));
    let doc: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let emptied: serde_json::Map<_, _> = doc.keys().map(|k| (k.clone(), "".into())).collect();
    fs::write(&path, serde_json::to_string(&emptied).unwrap()).unwrap();
    let out = focus(ws.path(), &run_args(&inst, &image));
    assert_eq!(code(&out), 4);
    assert!(
        stderr(&out).contains("no usable labels"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn flags_override_config_file() {
    let ws = corpus_workspace(42);
    let inst = first_person(ws.path());
    let image = inst.image.to_string_lossy().into_owned();
    let mut args = run_args(&inst, &image);
    args.extend(["--mode", "crop", "--tau", "0.5"]);
    let out = focus(ws.path(), &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["attended"]["mode"], "crop");
    assert!(doc["detections"]
        .as_array()
        .unwrap()
        .iter()
        .all(|d| d["score"].as_f64().unwrap() >= 0.5));

    let bad = focus(
        ws.path(),
        &[
            "run", "--image", &image, "--box", &inst.bbox, "--mode", "blur",
        ],
    );
    assert_eq!(code(&bad), 2);
}

#[test]
fn baseline_run_with_labels() {
    let ws = corpus_workspace(42);
    let inst = first_person(ws.path());
    let image = inst.image.to_string_lossy().into_owned();
    let mut args = run_args(&inst, &image);
    args.extend(["--variant", "baseline", "--labels", "belt,watch,hat"]);
    let out = focus(ws.path(), &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["variant"], "baseline");
    assert_eq!(doc["attended"]["mode"], "full");
    assert_eq!(doc["proposal"], serde_json::json!(["belt", "watch", "hat"]));
}

#[test]
fn eval_rejects_corrupt_annotations_without_reports() {
    let ws = corpus_workspace(42);
    let bad = ws.path().join("bad.json");
    fs::write(&bad, "{\"images\": [").unwrap();
    let out = focus(
        ws.path(),
        &[
            "eval",
            "--dataset",
            "coco",
            "--annotations",
            bad.to_str().unwrap(),
            "--name",
            "bad",
        ],
    );
    assert_eq!(code(&out), 6, "{}", stderr(&out));
    assert!(!ws.path().join("reports/bad").exists());
    assert!(!ws.path().join("results/bad").exists());

    let out = focus(
        ws.path(),
        &[
            "eval",
            "--dataset",
            "voc",
            "--annotations",
            "voc",
            "--targets",
            "zeppelin",
        ],
    );
    assert_eq!(code(&out), 6);
}

#[test]
fn voc_car_eval_has_only_vehicle_rows() {
    let ws = corpus_workspace(42);
    let out = focus(
        ws.path(),
        &[
            "eval",
            "--dataset",
            "voc",
            "--annotations",
            "voc",
            "--targets",
            "car",
            "--name",
            "cars",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(ws.path().join("reports/cars/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert!(
        rows.iter().all(|r| r.split(',').nth(1) == Some("vehicles")),
        "{csv}"
    );
}

#[test]
fn eval_writes_every_report() {
    let ws = corpus_workspace(7);
    let out = focus(
        ws.path(),
        &[
            "eval",
            "--dataset",
            "coco",
            "--annotations",
            "annotations.json",
            "--min-count",
            "3",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dir = ws.path().join("reports/coco");
    for f in [
        "sweep.csv",
        "sweep.json",
        "matches.jsonl",
        "difficulty.csv",
        "discrepancy.csv",
        "cases.jsonl",
        "failures.jsonl",
    ] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let disc = fs::read_to_string(dir.join("discrepancy.csv")).unwrap();
    assert!(disc.lines().count() > 1, "{disc}");
    let n_cases = fs::read_to_string(dir.join("cases.jsonl"))
        .unwrap()
        .lines()
        .count();
    let n_matches = fs::read_to_string(dir.join("matches.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(n_matches, n_cases * 2 * 4);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(summary["excluded_cases"], 0);
    assert!(summary["discrepancy"]["definition"].is_string());
    assert!(ws.path().join("results/coco/focus").is_dir());
}

#[test]
fn eval_excludes_failed_cases_from_every_method() {
    let ws = corpus_workspace(42);
    let inst = first_person(ws.path());
    fs::remove_file(
        ws.path()
            .join("fixtures/proposals")
            .join(format!("{}.json", inst.case_id)),
    )
    .unwrap();
    let out = focus(
        ws.path(),
        &[
            "eval",
            "--dataset",
            "coco",
            "--annotations",
            "annotations.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dir = ws.path().join("reports/coco");
    let failures = fs::read_to_string(dir.join("failures.jsonl")).unwrap();
    assert_eq!(failures.lines().count(), 2);
    assert!(failures.contains(&inst.case_id));
    let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let ns: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert!(ns.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn eval_where_every_case_fails_reports_the_stage() {
    let ws = corpus_workspace(42);
    fs::remove_dir_all(ws.path().join("fixtures/detections")).unwrap();
    let out = focus(
        ws.path(),
        &[
            "eval",
            "--dataset",
            "coco",
            "--annotations",
            "annotations.json",
        ],
    );
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn mock_fixtures_is_deterministic_and_confined() {
    let a = corpus_workspace(42);
    let b = corpus_workspace(42);
    for sub in [
        "annotations.json",
        "config.json",
        "fixtures/proposals/1-a1.json",
        "images/scene_00.png",
    ] {
        assert_eq!(
            fs::read(a.path().join(sub)).unwrap(),
            fs::read(b.path().join(sub)).unwrap(),
            "{sub}"
        );
    }
    let out = focus(a.path(), &["mock-fixtures", "--out", "../elsewhere"]);
    assert_eq!(code(&out), 2);
    fs::write(a.path().join("blocker"), "file").unwrap();
    let out = focus(a.path(), &["mock-fixtures", "--out", "blocker/sub"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

fn files_under(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p.clone());
            }
            out.push(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
        }
    }
    out.sort();
    out
}

#[test]
fn writes_stay_inside_the_workspace() {
    let outer = tempfile::tempdir().unwrap();
    let canary = outer.path().join("canary");
    let ws = outer.path().join("ws");
    fs::create_dir_all(&canary).unwrap();
    fs::write(canary.join("sentinel"), "untouched").unwrap();

    let run = |args: &[&str]| focus_in(&canary, &ws, args);
    assert_eq!(code(&run(&["mock-fixtures", "--seed", "3"])), 0);
    let inst = first_person(&ws);
    let image = inst.image.to_string_lossy().into_owned();
    assert_eq!(code(&run(&run_args(&inst, &image))), 0);
    let ann = ws.join("annotations.json").to_string_lossy().into_owned();
    assert_eq!(
        code(&run(&["eval", "--dataset", "coco", "--annotations", &ann])),
        0
    );
    assert_ne!(
        code(&run(&[
            "eval",
            "--dataset",
            "coco",
            "--annotations",
            &ann,
            "--name",
            "../x"
        ])),
        0
    );

    assert_eq!(files_under(&canary), ["sentinel"]);
    assert_eq!(
        fs::read_to_string(canary.join("sentinel")).unwrap(),
        "untouched"
    );
    let mut top: Vec<String> = fs::read_dir(outer.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    top.sort();
    assert_eq!(top, ["canary", "ws"]);
}
