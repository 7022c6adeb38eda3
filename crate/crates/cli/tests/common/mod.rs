#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn focus(workspace: &Path, args: &[&str]) -> Output {
    focus_in(workspace, workspace, args)
}

/// Runs the binary with `cwd` as working directory.
pub fn focus_in(cwd: &Path, workspace: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_focus"))
        .current_dir(cwd)
        .env("FOCUS_WORKSPACE", workspace)
        .env_remove("FOCUS_LOG")
        .args(args)
        .output()
        .expect("focus binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Workspace holding the synthetic corpus for `seed`.
pub fn corpus_workspace(seed: u64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = focus(dir.path(), &["mock-fixtures", "--seed", &seed.to_string()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir
}

pub struct Instance {
    pub case_id: String,
    pub image: PathBuf,
    pub bbox: String,
}

/// The first person annotation of the corpus in `ws`.
pub fn first_person(ws: &Path) -> Instance {
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.join("annotations.json")).unwrap())
            .unwrap();
    let ann = doc["annotations"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["category_id"] == 1)
        .unwrap();
    let image_id = ann["image_id"].as_u64().unwrap();
    let image = doc["images"]
        .as_array()
        .unwrap()
        .iter()
        .find(|i| i["id"] == image_id)
        .unwrap();
    let b: Vec<u64> = ann["bbox"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    Instance {
        case_id: format!("{}-a{}", image_id, ann["id"]),
        image: ws.join("images").join(image["file_name"].as_str().unwrap()),
        bbox: format!("{},{},{},{}", b[0], b[1], b[0] + b[2], b[1] + b[3]),
    }
}
