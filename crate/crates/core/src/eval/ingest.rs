//! Evaluation cases from COCO instance JSON and Pascal VOC XML annotations.
//!
//! Every annotated instance of a target category becomes one case whose
//! input box is the instance box. Anything that cannot be read faithfully is
//! an error; nothing is skipped silently.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use super::case::{EvalCase, TaskTag};
use crate::geometry::BBox;

pub const PERSON_CATEGORY: &str = "person";

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        detail: String,
    },
    #[error("{path}: {detail}")]
    Schema { path: PathBuf, detail: String },
}

impl AnnotationError {
    fn schema(path: &Path, detail: impl Into<String>) -> Self {
        AnnotationError::Schema {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    pub fn is_parse(&self) -> bool {
        matches!(self, AnnotationError::Parse { .. })
    }

    pub fn is_schema(&self) -> bool {
        matches!(self, AnnotationError::Schema { .. })
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Directory image file names are relative to.
    pub images_dir: PathBuf,
    pub task: TaskTag,
}

fn read(path: &Path) -> Result<String, AnnotationError> {
    std::fs::read_to_string(path).map_err(|source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn checked_box(
    path: &Path,
    what: &str,
    corners: [f64; 4],
    width: u32,
    height: u32,
) -> Result<BBox, AnnotationError> {
    let bbox = BBox::from_f64(corners)
        .map_err(|e| AnnotationError::schema(path, format!("{what}: {e}")))?;
    bbox.check_fits(width, height)
        .map_err(|e| AnnotationError::schema(path, format!("{what}: {e}")))?;
    Ok(bbox)
}

#[derive(Deserialize)]
struct CocoDoc {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

/// One case per annotation whose category name is in `targets`, in file
/// order. Case ids are `<image id>-a<annotation id>`.
pub fn ingest_coco(
    annotation_file: &Path,
    targets: &BTreeSet<String>,
    opts: &IngestOptions,
) -> Result<Vec<EvalCase>, AnnotationError> {
    let path = annotation_file;
    let text = read(path)?;
    let doc: CocoDoc = serde_json::from_str(&text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => AnnotationError::schema(path, e.to_string()),
            _ => AnnotationError::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                column: e.column(),
                detail: e.to_string(),
            },
        }
    })?;

    let mut categories = BTreeMap::new();
    for c in &doc.categories {
        if categories.insert(c.id, c.name.as_str()).is_some() {
            return Err(AnnotationError::schema(
                path,
                format!("duplicate category id {}", c.id),
            ));
        }
    }
    let known: BTreeSet<&str> = categories.values().copied().collect();
    if let Some(missing) = targets.iter().find(|t| !known.contains(t.as_str())) {
        return Err(AnnotationError::schema(
            path,
            format!("target category `{missing}` is not defined"),
        ));
    }
    let mut images = BTreeMap::new();
    for img in &doc.images {
        if images.insert(img.id, img).is_some() {
            return Err(AnnotationError::schema(
                path,
                format!("duplicate image id {}", img.id),
            ));
        }
    }

    let mut people: BTreeMap<u64, u32> = BTreeMap::new();
    for a in &doc.annotations {
        let name = categories.get(&a.category_id).ok_or_else(|| {
            AnnotationError::schema(
                path,
                format!("annotation {} has unknown category {}", a.id, a.category_id),
            )
        })?;
        if !images.contains_key(&a.image_id) {
            return Err(AnnotationError::schema(
                path,
                format!("annotation {} refers to unknown image {}", a.id, a.image_id),
            ));
        }
        if *name == PERSON_CATEGORY {
            *people.entry(a.image_id).or_default() += 1;
        }
    }

    let mut cases = Vec::new();
    for a in &doc.annotations {
        if !targets.contains(categories[&a.category_id]) {
            continue;
        }
        let img = images[&a.image_id];
        let [x, y, w, h] = a.bbox;
        let what = format!("annotation {}", a.id);
        let input_box = checked_box(path, &what, [x, y, x + w, y + h], img.width, img.height)?;
        cases.push(EvalCase {
            case_id: format!("{}-a{}", img.id, a.id),
            image_id: img.id.to_string(),
            image_path: opts.images_dir.join(&img.file_name),
            input_box,
            person_count: people.get(&img.id).copied().unwrap_or(0),
            task: opts.task.clone(),
        });
    }
    Ok(cases)
}

fn position(doc: &roxmltree::Document<'_>, node: roxmltree::Node<'_, '_>) -> String {
    let pos = doc.text_pos_at(node.range().start);
    format!("line {}, column {}", pos.row, pos.col)
}

fn child<'a, 'input>(
    node: roxmltree::Node<'a, 'input>,
    name: &str,
) -> Option<roxmltree::Node<'a, 'input>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn child_text<'a>(
    path: &Path,
    doc: &roxmltree::Document<'a>,
    node: roxmltree::Node<'a, 'a>,
    name: &str,
) -> Result<&'a str, AnnotationError> {
    child(node, name)
        .and_then(|c| c.text())
        .map(str::trim)
        .ok_or_else(|| {
            AnnotationError::schema(
                path,
                format!(
                    "<{}> at {} has no <{name}>",
                    node.tag_name().name(),
                    position(doc, node)
                ),
            )
        })
}

fn child_number<T: std::str::FromStr>(
    path: &Path,
    doc: &roxmltree::Document<'_>,
    node: roxmltree::Node<'_, '_>,
    name: &str,
) -> Result<T, AnnotationError> {
    let text = child_text(path, doc, node, name)?;
    text.parse().map_err(|_| {
        AnnotationError::schema(
            path,
            format!(
                "<{name}> `{text}` at {} is not a number",
                position(doc, node)
            ),
        )
    })
}

/// Cases from one VOC annotation document. Case ids are `<stem>-o<index>`
/// where the index counts all objects in the document.
pub fn ingest_voc_file(
    path: &Path,
    targets: &BTreeSet<String>,
    opts: &IngestOptions,
) -> Result<Vec<EvalCase>, AnnotationError> {
    let text = read(path)?;
    let doc = roxmltree::Document::parse(&text).map_err(|e| {
        let pos = e.pos();
        AnnotationError::Parse {
            path: path.to_path_buf(),
            line: pos.row as usize,
            column: pos.col as usize,
            detail: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(AnnotationError::schema(
            path,
            format!(
                "root element is <{}>, expected <annotation>",
                root.tag_name().name()
            ),
        ));
    }
    let filename = child_text(path, &doc, root, "filename")?;
    let size = child(root, "size")
        .ok_or_else(|| AnnotationError::schema(path, "<annotation> has no <size>"))?;
    let width: u32 = child_number(path, &doc, size, "width")?;
    let height: u32 = child_number(path, &doc, size, "height")?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| AnnotationError::schema(path, "file name is not valid UTF-8"))?;

    let objects: Vec<_> = root
        .children()
        .filter(|c| c.has_tag_name("object"))
        .collect();
    let mut names = Vec::with_capacity(objects.len());
    for obj in &objects {
        names.push(child_text(path, &doc, *obj, "name")?);
    }
    let people = names.iter().filter(|n| **n == PERSON_CATEGORY).count() as u32;

    let mut cases = Vec::new();
    for (idx, (obj, name)) in objects.iter().zip(&names).enumerate() {
        if !targets.contains(*name) {
            continue;
        }
        let bndbox = child(*obj, "bndbox").ok_or_else(|| {
            AnnotationError::schema(
                path,
                format!("<object> at {} has no <bndbox>", position(&doc, *obj)),
            )
        })?;
        let mut corners = [0.0; 4];
        for (slot, tag) in corners.iter_mut().zip(["xmin", "ymin", "xmax", "ymax"]) {
            *slot = child_number(path, &doc, bndbox, tag)?;
        }
        let what = format!("<object> at {}", position(&doc, *obj));
        let input_box = checked_box(path, &what, corners, width, height)?;
        cases.push(EvalCase {
            case_id: format!("{stem}-o{idx}"),
            image_id: stem.to_string(),
            image_path: opts.images_dir.join(filename),
            input_box,
            person_count: people,
            task: opts.task.clone(),
        });
    }
    Ok(cases)
}

/// Reads every `*.xml` file in `annotation_dir`, in file-name order.
pub fn ingest_voc(
    annotation_dir: &Path,
    targets: &BTreeSet<String>,
    opts: &IngestOptions,
) -> Result<Vec<EvalCase>, AnnotationError> {
    let io = |source| AnnotationError::Io {
        path: annotation_dir.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(annotation_dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    files.retain(|p| p.extension().is_some_and(|e| e == "xml"));
    files.sort();
    let mut cases = Vec::new();
    for f in files {
        cases.extend(ingest_voc_file(&f, targets, opts)?);
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn targets(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn opts(task: TaskTag) -> IngestOptions {
        IngestOptions {
            images_dir: PathBuf::from("imgs"),
            task,
        }
    }

    const COCO: &str = r#"{
      "info": {"description": "hand built"},
      "images": [
        {"id": 1, "file_name": "a.jpg", "width": 100, "height": 80},
        {"id": 2, "file_name": "b.jpg", "width": 50, "height": 50}
      ],
      "annotations": [
        {"id": 10, "image_id": 1, "category_id": 1, "bbox": [10, 5, 20, 30], "iscrowd": 0},
        {"id": 11, "image_id": 1, "category_id": 1, "bbox": [40.4, 10.5, 10, 10.2]},
        {"id": 12, "image_id": 1, "category_id": 1, "bbox": [0, 0, 100, 80]},
        {"id": 13, "image_id": 2, "category_id": 3, "bbox": [1, 1, 5, 5]}
      ],
      "categories": [{"id": 1, "name": "person"}, {"id": 3, "name": "car"}]
    }"#;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn coco_person_cases() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "ann.json", COCO);
        let cases = ingest_coco(&f, &targets(&["person"]), &opts(TaskTag::Granular)).unwrap();
        assert_eq!(cases.len(), 3);
        assert!(cases
            .iter()
            .all(|c| c.image_id == "1" && c.person_count == 3));
        assert_eq!(cases[0].case_id, "1-a10");
        assert_eq!(cases[0].input_box, BBox::new(10, 5, 30, 35).unwrap());
        // 40.4 -> 40, 50.4 -> 50, 10.5 -> 11, 20.7 -> 21
        assert_eq!(cases[1].input_box, BBox::new(40, 11, 50, 21).unwrap());
        assert_eq!(cases[2].input_box, BBox::new(0, 0, 100, 80).unwrap());
        assert_eq!(cases[0].image_path, Path::new("imgs/a.jpg"));

        let cars = ingest_coco(&f, &targets(&["car"]), &opts(TaskTag::Vehicles)).unwrap();
        assert_eq!(cars.len(), 1);
        assert_eq!(cars[0].person_count, 0);
        assert_eq!(cars[0].task, TaskTag::Vehicles);
    }

    #[test]
    fn coco_errors() {
        let dir = tempfile::tempdir().unwrap();
        let t = targets(&["person"]);
        let o = opts(TaskTag::Granular);

        let f = write(dir.path(), "trunc.json", &COCO[..200]);
        let e = ingest_coco(&f, &t, &o).unwrap_err();
        assert!(e.is_parse(), "{e}");

        let f = write(dir.path(), "garbage.json", "{\"images\": [}\n");
        match ingest_coco(&f, &t, &o).unwrap_err() {
            AnnotationError::Parse { line, column, .. } => assert_eq!((line, column), (1, 13)),
            other => panic!("{other}"),
        }

        let f = write(
            dir.path(),
            "nofield.json",
            r#"{"images": [], "annotations": []}"#,
        );
        assert!(ingest_coco(&f, &t, &o).unwrap_err().is_schema());

        let bad_cat = COCO.replace("\"category_id\": 3", "\"category_id\": 99");
        let f = write(dir.path(), "cat.json", &bad_cat);
        assert!(ingest_coco(&f, &t, &o).unwrap_err().is_schema());

        let bad_img = COCO.replace("\"image_id\": 2", "\"image_id\": 7");
        let f = write(dir.path(), "img.json", &bad_img);
        assert!(ingest_coco(&f, &t, &o).unwrap_err().is_schema());

        let outside = COCO.replace("[0, 0, 100, 80]", "[0, 0, 101, 80]");
        let f = write(dir.path(), "outside.json", &outside);
        assert!(ingest_coco(&f, &t, &o).unwrap_err().is_schema());

        let degenerate = COCO.replace("[0, 0, 100, 80]", "[3, 3, 0, 4]");
        let f = write(dir.path(), "degenerate.json", &degenerate);
        assert!(ingest_coco(&f, &t, &o).unwrap_err().is_schema());

        let f = write(dir.path(), "ok.json", COCO);
        assert!(ingest_coco(&f, &targets(&["bicycle"]), &o)
            .unwrap_err()
            .is_schema());

        assert!(matches!(
            ingest_coco(&dir.path().join("none.json"), &t, &o),
            Err(AnnotationError::Io { .. })
        ));
    }

    fn voc(objects: &[(&str, [i32; 4])]) -> String {
        let mut s = String::from(
            "<annotation>\n  <folder>VOC2012</folder>\n  <filename>2008_000001.jpg</filename>\n  <size><width>200</width><height>150</height><depth>3</depth></size>\n",
        );
        for (name, b) in objects {
            s.push_str(&format!(
                "  <object><name>{name}</name><difficult>0</difficult><bndbox><xmin>{}</xmin><ymin>{}</ymin><xmax>{}</xmax><ymax>{}</ymax></bndbox></object>\n",
                b[0], b[1], b[2], b[3]
            ));
        }
        s.push_str("</annotation>\n");
        s
    }

    #[test]
    fn voc_car_cases() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "2008_000001.xml",
            &voc(&[
                ("car", [10, 20, 60, 70]),
                ("car", [100, 10, 200, 150]),
                ("person", [1, 1, 5, 9]),
            ]),
        );
        write(dir.path(), "notes.txt", "ignored");
        let cases = ingest_voc(dir.path(), &targets(&["car"]), &opts(TaskTag::Vehicles)).unwrap();
        assert_eq!(cases.len(), 2);
        assert!(cases.iter().all(|c| c.person_count == 1));
        assert_eq!(cases[0].case_id, "2008_000001-o0");
        assert_eq!(cases[1].case_id, "2008_000001-o1");
        assert_eq!(cases[0].input_box, BBox::new(10, 20, 60, 70).unwrap());
        assert_eq!(cases[1].image_path, Path::new("imgs/2008_000001.jpg"));
    }

    #[test]
    fn voc_errors() {
        let dir = tempfile::tempdir().unwrap();
        let t = targets(&["car"]);
        let o = opts(TaskTag::Vehicles);

        let f = write(
            dir.path(),
            "broken.xml",
            "<annotation><object></annotation>",
        );
        assert!(ingest_voc_file(&f, &t, &o).unwrap_err().is_parse());

        let no_box = voc(&[("car", [1, 1, 2, 2])]).replace(
            "<bndbox><xmin>1</xmin><ymin>1</ymin><xmax>2</xmax><ymax>2</ymax></bndbox>",
            "",
        );
        let f = write(dir.path(), "nobox.xml", &no_box);
        let e = ingest_voc_file(&f, &t, &o).unwrap_err();
        assert!(e.is_schema());
        assert!(e.to_string().contains("line 5"), "{e}");

        let f = write(dir.path(), "flipped.xml", &voc(&[("car", [50, 1, 40, 9])]));
        assert!(ingest_voc_file(&f, &t, &o).unwrap_err().is_schema());

        let f = write(
            dir.path(),
            "nan.xml",
            &voc(&[("car", [1, 1, 2, 2])]).replace("<xmax>2", "<xmax>two"),
        );
        assert!(ingest_voc_file(&f, &t, &o).unwrap_err().is_schema());

        let f = write(dir.path(), "root.xml", "<doc/>");
        assert!(ingest_voc_file(&f, &t, &o).unwrap_err().is_schema());

        // a malformed file anywhere in the directory fails the whole ingest
        assert!(ingest_voc(dir.path(), &t, &o).is_err());
    }

    #[test]
    fn cases_round_trip_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "ann.json", COCO);
        let cases = ingest_coco(
            &f,
            &targets(&["person", "car"]),
            &opts(TaskTag::Custom("mixed".into())),
        )
        .unwrap();
        let text: String = cases
            .iter()
            .map(|c| serde_json::to_string(c).unwrap() + "\n")
            .collect();
        let back: Vec<EvalCase> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(back, cases);
    }
}
