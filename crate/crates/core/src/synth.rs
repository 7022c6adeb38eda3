//! Seeded synthetic corpus for exercising the whole pipeline offline.
//!
//! The generator draws a handful of small scenes with people and cars, writes
//! COCO and VOC annotations for them, and fills a mock fixture directory so
//! that every annotated instance can be run in every isolation mode and as a
//! baseline. Baseline fixtures see each object with at most the confidence
//! the isolated view has, plus distractors centred outside the region.
//!
//! ```text
//! <out>/images/scene_NN.png
//! <out>/annotations.json      COCO instances, person and car categories
//! <out>/voc/scene_NN.xml      the same scenes as VOC documents
//! <out>/prompts/parts.txt     a second prompt asking for body parts
//! <out>/fixtures/             mock backend fixtures
//! <out>/config.json           pipeline config pointing at the fixtures
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::backend::{FixtureError, FixtureSet, RawDetection};
use crate::geometry::{contains, BBox, BinaryMask, ContainmentPolicy, RasterImage, Rgb};
use crate::proposal::{build_prompt, TaskPrompt};

pub const DEFAULT_SCENES: usize = 12;

const ACCESSORIES: &[&str] = &[
    "belt", "watch", "hat", "scarf", "glasses", "backpack", "handbag", "shoe", "jacket",
    "necklace", "bracelet", "tie", "glove", "umbrella", "earring", "boot", "cap", "phone",
];
const BODY_PARTS: &[&str] = &[
    "hand", "arm", "head", "face", "ear", "eye", "nose", "mouth", "hair", "leg", "foot", "knee",
    "shoulder", "neck",
];
const CAR_PARTS: &[&str] = &[
    "wheel",
    "headlight",
    "windshield",
    "license plate",
    "side mirror",
    "door handle",
    "bumper",
    "grille",
    "tail light",
    "antenna",
];

const PARTS_PROMPT: &str = "Name the body parts of the person that are visible in this image.\n---\nAnswer with the names only, in lowercase, separated by commas.\n";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Fixture(#[from] FixtureError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSummary {
    pub scenes: usize,
    pub people: usize,
    pub cars: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Person,
    Car,
}

struct Object {
    kind: Kind,
    bbox: BBox,
    color: Rgb,
}

struct Scene {
    name: String,
    image: RasterImage,
    objects: Vec<Object>,
}

fn place(rng: &mut ChaCha8Rng, w: u32, h: u32, min: u32, max: u32) -> BBox {
    let bw = rng.gen_range(min..=max.min(w - 1));
    let bh = rng.gen_range(min..=max.min(h - 1));
    let x = rng.gen_range(0..=w - bw);
    let y = rng.gen_range(0..=h - bh);
    BBox::new(x as i64, y as i64, (x + bw) as i64, (y + bh) as i64).expect("placed box is valid")
}

fn scene(rng: &mut ChaCha8Rng, index: usize) -> Scene {
    let w = rng.gen_range(64..=112u32);
    let h = rng.gen_range(56..=96u32);
    // spread person counts so every difficulty group is populated
    let people = match index % 3 {
        0 => rng.gen_range(1..=2),
        1 => rng.gen_range(3..=7),
        _ => rng.gen_range(8..=10),
    };
    let cars = rng.gen_range(0..=2);
    let mut objects = Vec::new();
    for _ in 0..people {
        objects.push(Object {
            kind: Kind::Person,
            bbox: place(rng, w, h, 10, 28),
            color: Rgb([
                rng.gen_range(120..=255),
                rng.gen_range(40..=160),
                rng.gen_range(40..=160),
            ]),
        });
    }
    for _ in 0..cars {
        objects.push(Object {
            kind: Kind::Car,
            bbox: place(rng, w, h, 14, 32),
            color: Rgb([
                rng.gen_range(20..=90),
                rng.gen_range(20..=90),
                rng.gen_range(150..=255),
            ]),
        });
    }
    let base = [
        rng.gen_range(0..=60u8),
        rng.gen_range(60..=120u8),
        rng.gen_range(0..=60u8),
    ];
    let noise: Vec<u8> = (0..w * h).map(|_| rng.gen_range(0..16)).collect();
    let image = RasterImage::from_fn(w, h, |x, y| {
        let n = noise[(y * w + x) as usize];
        let mut c = Rgb([base[0] + n, base[1] + n, base[2] + n]);
        for o in &objects {
            if o.bbox.covers(x, y) {
                c = o.color;
            }
        }
        c
    })
    .expect("scene dimensions are valid");
    Scene {
        name: format!("scene_{index:02}"),
        image,
        objects,
    }
}

/// Ellipse inscribed in `bbox`, always containing the centre pixel.
fn ellipse_mask(w: u32, h: u32, bbox: &BBox) -> BinaryMask {
    let cx = (bbox.x_min() + bbox.x_max()) as f64 / 2.0;
    let cy = (bbox.y_min() + bbox.y_max()) as f64 / 2.0;
    let rx = bbox.width() as f64 / 2.0;
    let ry = bbox.height() as f64 / 2.0;
    BinaryMask::from_fn(w, h, |x, y| {
        if !bbox.covers(x, y) {
            return false;
        }
        let dx = (x as f64 + 0.5 - cx) / rx;
        let dy = (y as f64 + 0.5 - cy) / ry;
        dx * dx + dy * dy <= 1.0 || (x == cx as u32 && y == cy as u32)
    })
    .expect("mask dimensions match the scene")
}

/// Renders labels the way a chatty proposer might.
fn render_proposal(rng: &mut ChaCha8Rng, labels: &[&str]) -> String {
    let mut out = String::new();
    match rng.gen_range(0..4) {
        0 => out = labels.join(", "),
        1 => {
            for (i, l) in labels.iter().enumerate() {
                let mut cs = l.chars();
                let cap: String = cs
                    .next()
                    .map(|c| c.to_ascii_uppercase())
                    .into_iter()
                    .chain(cs)
                    .collect();
                writeln!(out, "{}. {cap}", i + 1).unwrap();
            }
        }
        2 => {
            for l in labels {
                writeln!(out, "- {l}").unwrap();
            }
        }
        _ => {
            out = labels.join("; ");
            out.push('.');
        }
    }
    out
}

fn pick<'a>(rng: &mut ChaCha8Rng, vocab: &[&'a str], lo: usize, hi: usize) -> Vec<&'a str> {
    let n = rng.gen_range(lo..=hi);
    vocab.choose_multiple(rng, n).copied().collect()
}

fn score(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> f64 {
    rng.gen_range(lo..=hi) as f64 / 100.0
}

fn det(label: &str, score: f64, b: &BBox) -> RawDetection {
    RawDetection {
        label: label.to_string(),
        score,
        bbox: [b.x_min(), b.y_min(), b.x_max(), b.y_max()].map(f64::from),
    }
}

/// A box of at most `max` pixels per side whose centre is inside `region`.
fn box_in(rng: &mut ChaCha8Rng, region: &BBox, max: u32) -> BBox {
    let bw = rng.gen_range(1..=region.width().min(max));
    let bh = rng.gen_range(1..=region.height().min(max));
    let x = rng.gen_range(region.x_min()..=region.x_max() - bw);
    let y = rng.gen_range(region.y_min()..=region.y_max() - bh);
    BBox::new(x as i64, y as i64, (x + bw) as i64, (y + bh) as i64).expect("box inside region")
}

/// A small box in the frame whose centre lies outside `region`, if any fits.
fn box_outside(rng: &mut ChaCha8Rng, frame: &BBox, region: &BBox) -> Option<BBox> {
    for _ in 0..32 {
        let b = box_in(rng, frame, 8);
        if !contains(region, &b, ContainmentPolicy::CenterIn) {
            return Some(b);
        }
    }
    None
}

/// Fixtures for one annotated instance, keyed by `key`.
fn instance_fixtures(
    rng: &mut ChaCha8Rng,
    set: &mut FixtureSet,
    prompts: &[(&str, &[&str])],
    key: &str,
    scene: &Scene,
    object: &Object,
) {
    let (w, h) = (scene.image.width(), scene.image.height());
    let frame = scene.image.frame();
    let region = object.bbox;
    set.masks
        .insert(key.to_string(), ellipse_mask(w, h, &region));

    let mut labels: Vec<&str> = Vec::new();
    for (rendered, vocab) in prompts {
        let chosen = pick(rng, vocab, 2, 6);
        let text = render_proposal(rng, &chosen);
        set.add_proposal(key, rendered, &text);
        for l in chosen {
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
    }

    let crop_frame = BBox::full(region.width(), region.height()).expect("region is non-empty");
    let mut segment = Vec::new();
    let mut cropped = Vec::new();
    let mut rect = Vec::new();
    let mut full = Vec::new();
    for label in &labels {
        if !rng.gen_bool(0.85) {
            continue;
        }
        let focus_score = score(rng, 25, 95);
        let local = box_in(rng, &crop_frame, 12);
        segment.push(det(label, focus_score, &local));
        let original = local
            .translate(region.x_min() as i64, region.y_min() as i64)
            .expect("translated box stays in frame");
        let crop_score = (focus_score - score(rng, 0, 10)).max(0.1);
        cropped.push(det(label, crop_score, &local));
        rect.push(det(
            label,
            (crop_score - score(rng, 0, 10)).max(0.1),
            &original,
        ));
        if rng.gen_bool(0.6) {
            let base_score = (focus_score - score(rng, 5, 40)).max(0.1);
            full.push(det(label, base_score, &original));
        }
    }
    // full-image distractors: proposed labels found on other objects
    for label in &labels {
        if rng.gen_bool(0.5) {
            if let Some(b) = box_outside(rng, &frame, &region) {
                full.push(det(label, score(rng, 40, 99), &b));
            }
        }
    }
    // a label nobody asked for, which the adapter must drop
    if rng.gen_bool(0.3) {
        segment.push(det("person", score(rng, 50, 99), &crop_frame));
    }
    set.add_detections(key, "segment_mask", segment);
    set.add_detections(key, "crop", cropped);
    set.add_detections(key, "rect_mask", rect);
    set.add_detections(key, "full", full);
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    let io = |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

fn voc_document(scene: &Scene) -> String {
    let mut s = String::new();
    writeln!(s, "<annotation>").unwrap();
    writeln!(s, "  <folder>synthetic</folder>").unwrap();
    writeln!(s, "  <filename>{}.png</filename>", scene.name).unwrap();
    writeln!(
        s,
        "  <size><width>{}</width><height>{}</height><depth>3</depth></size>",
        scene.image.width(),
        scene.image.height()
    )
    .unwrap();
    for o in &scene.objects {
        let name = match o.kind {
            Kind::Person => "person",
            Kind::Car => "car",
        };
        let b = o.bbox;
        writeln!(
            s,
            "  <object><name>{name}</name><difficult>0</difficult><bndbox><xmin>{}</xmin><ymin>{}</ymin><xmax>{}</xmax><ymax>{}</ymax></bndbox></object>",
            b.x_min(), b.y_min(), b.x_max(), b.y_max()
        )
        .unwrap();
    }
    writeln!(s, "</annotation>").unwrap();
    s
}

/// Writes a corpus of `scenes` scenes under `out`. The same seed and scene
/// count always produce byte-identical files.
pub fn generate(seed: u64, scenes: usize, out: &Path) -> Result<CorpusSummary, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let default_prompt = build_prompt(&TaskPrompt::default()).expect("shipped prompt is valid");
    let parts_prompt = build_prompt(&TaskPrompt::parse_file(PARTS_PROMPT).expect("valid prompt"))
        .expect("valid prompt");
    let person_prompts: [(&str, &[&str]); 2] =
        [(&default_prompt, ACCESSORIES), (&parts_prompt, BODY_PARTS)];
    let car_prompts: [(&str, &[&str]); 1] = [(&default_prompt, CAR_PARTS)];

    let mut fixtures = FixtureSet::default();
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut summary = CorpusSummary {
        scenes,
        people: 0,
        cars: 0,
    };
    let mut ann_id = 1u64;
    for index in 0..scenes {
        let scene = scene(&mut rng, index);
        let image_id = index as u64 + 1;
        write_file(
            &out.join("images").join(format!("{}.png", scene.name)),
            &scene.image.to_png(),
        )?;
        images.push(json!({
            "id": image_id,
            "file_name": format!("{}.png", scene.name),
            "width": scene.image.width(),
            "height": scene.image.height(),
        }));
        for (obj_idx, object) in scene.objects.iter().enumerate() {
            let (category, prompts): (u64, &[(&str, &[&str])]) = match object.kind {
                Kind::Person => {
                    summary.people += 1;
                    (1, &person_prompts)
                }
                Kind::Car => {
                    summary.cars += 1;
                    (3, &car_prompts)
                }
            };
            let b = object.bbox;
            annotations.push(json!({
                "id": ann_id,
                "image_id": image_id,
                "category_id": category,
                "bbox": [b.x_min(), b.y_min(), b.width(), b.height()],
                "area": b.area(),
                "iscrowd": 0,
            }));
            let coco_key = format!("{image_id}-a{ann_id}");
            let voc_key = format!("{}-o{obj_idx}", scene.name);
            instance_fixtures(&mut rng, &mut fixtures, prompts, &coco_key, &scene, object);
            // VOC cases of the same instance see the same fixtures
            let m = fixtures.masks[&coco_key].clone();
            fixtures.masks.insert(voc_key.clone(), m);
            let p = fixtures.proposals[&coco_key].clone();
            fixtures.proposals.insert(voc_key.clone(), p);
            let d = fixtures.detections[&coco_key].clone();
            fixtures.detections.insert(voc_key, d);
            ann_id += 1;
        }
        write_file(
            &out.join("voc").join(format!("{}.xml", scene.name)),
            voc_document(&scene).as_bytes(),
        )?;
    }

    let coco = json!({
        "info": {"description": "synthetic scenes", "seed": seed},
        "images": images,
        "annotations": annotations,
        "categories": [
            {"id": 1, "name": "person", "supercategory": "person"},
            {"id": 3, "name": "car", "supercategory": "vehicle"},
        ],
    });
    let mut text = serde_json::to_string_pretty(&coco).expect("json value serializes");
    text.push('\n');
    write_file(&out.join("annotations.json"), text.as_bytes())?;
    write_file(
        &out.join("prompts").join("parts.txt"),
        PARTS_PROMPT.as_bytes(),
    )?;

    let config = json!({
        "mode": "segment_mask",
        "base_tau": 0.1,
        "containment": "center_in",
        "backends": {
            "segmenter": {"kind": "mock", "fixtures": "fixtures"},
            "proposer": {"kind": "mock", "fixtures": "fixtures"},
            "detector": {"kind": "mock", "fixtures": "fixtures"},
        },
    });
    let mut text = serde_json::to_string_pretty(&config).expect("json value serializes");
    text.push('\n');
    write_file(&out.join("config.json"), text.as_bytes())?;

    fixtures.write(&out.join("fixtures"))?;
    Ok(summary)
}
