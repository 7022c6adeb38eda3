use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use clap::{Args, ValueEnum};
use focus_core::eval::{
    difficulty_csv, discrepancy_csv, discrepancy_report, ingest_coco, ingest_voc, sweep,
    Aggregation, EvalCase, IngestOptions, MethodResults, TaskTag, DEFAULT_MIN_COUNT, DEFAULT_TOP_K,
};
use focus_core::geometry::IsolationMode;
use focus_core::pipeline::{CaseRecord, Pipeline, PipelineResult, Variant};
use serde_json::json;

use crate::exit::{Failure, Outcome, WithCode, ANNOTATION, INPUT};
use crate::run_cmd::{apply_overrides, parse_mode, valid_id};
use crate::workspace::Workspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dataset {
    Coco,
    Voc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variants {
    Focus,
    Baseline,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Macro,
    Micro,
}

const VEHICLES: &[&str] = &[
    "car",
    "bus",
    "truck",
    "motorbike",
    "motorcycle",
    "bicycle",
    "train",
    "boat",
    "aeroplane",
    "airplane",
];

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub dataset: Dataset,
    /// COCO instances JSON file, or a directory of VOC XML files.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Category names that become cases. Defaults to person for COCO and car for VOC.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    /// Image directory; defaults to `images` next to the annotations.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// granular, vehicles or custom:<tag>; inferred from the targets when omitted.
    #[arg(long)]
    pub task: Option<TaskTag>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<IsolationMode>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum, default_value_t = Variants::Both)]
    pub variant: Variants,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = focus_core::eval::DEFAULT_CUTOFFS)]
    pub cutoffs: Vec<f64>,
    #[arg(long, value_enum, default_value_t = AggregationArg::Macro)]
    pub aggregation: AggregationArg,
    /// Labels must appear in at least this many proposals to be ranked.
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    pub min_count: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Report name; reports go to <workspace>/reports/<name>/.
    #[arg(long)]
    pub name: Option<String>,
}

fn ingest(args: &EvalArgs) -> Result<Vec<EvalCase>, Failure> {
    let targets: BTreeSet<String> = if args.targets.is_empty() {
        BTreeSet::from([match args.dataset {
            Dataset::Coco => "person".to_string(),
            Dataset::Voc => "car".to_string(),
        }])
    } else {
        args.targets.iter().map(|t| t.trim().to_string()).collect()
    };
    let task = args.task.clone().unwrap_or_else(|| {
        if targets.iter().all(|t| VEHICLES.contains(&t.as_str())) {
            TaskTag::Vehicles
        } else {
            TaskTag::Granular
        }
    });
    let parent = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_default();
    let images_dir = args.images.clone().unwrap_or_else(|| {
        let anchor = match args.dataset {
            Dataset::Coco => parent(&args.annotations),
            Dataset::Voc => parent(
                &args
                    .annotations
                    .canonicalize()
                    .unwrap_or(args.annotations.clone()),
            ),
        };
        anchor.join("images")
    });
    let opts = IngestOptions { images_dir, task };
    let cases = match args.dataset {
        Dataset::Coco => ingest_coco(&args.annotations, &targets, &opts),
        Dataset::Voc => ingest_voc(&args.annotations, &targets, &opts),
    }
    .code(ANNOTATION)?;
    if cases.is_empty() {
        return Err(anyhow!("no annotations match the targets {targets:?}")).code(ANNOTATION);
    }
    Ok(cases)
}

fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> anyhow::Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    Ok(out)
}

fn pretty<T: serde::Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn run(ws: &Workspace, args: EvalArgs) -> Outcome {
    let name = args.name.clone().unwrap_or_else(|| match args.dataset {
        Dataset::Coco => "coco".into(),
        Dataset::Voc => "voc".into(),
    });
    if !valid_id(&name) {
        return Err(anyhow!("invalid report name `{name}`")).code(INPUT);
    }
    if args.cutoffs.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(anyhow!("cutoffs must lie in [0, 1]")).code(INPUT);
    }
    let cases = ingest(&args)?;

    let mut config = ws.load_config(args.config.as_deref()).code(INPUT)?;
    if let Some(p) = args.parallelism {
        config.parallelism = p;
    }
    let config =
        apply_overrides(config, args.prompt_file.as_deref(), args.mode, args.tau).code(INPUT)?;
    let level = config.normalization;
    let pipeline = Pipeline::new(config.clone()).code(INPUT)?;

    let mut runs: Vec<(Variant, Vec<CaseRecord>)> = Vec::new();
    match args.variant {
        Variants::Focus => runs.push((Variant::Focus, pipeline.batch_run(&cases, Variant::Focus))),
        Variants::Baseline => runs.push((
            Variant::Baseline,
            pipeline.batch_run(&cases, Variant::Baseline),
        )),
        Variants::Both => {
            let focus = pipeline.batch_run(&cases, Variant::Focus);
            let baseline = pipeline.batch_baseline(&cases, &focus);
            runs.push((Variant::Baseline, baseline));
            runs.push((Variant::Focus, focus));
        }
    }

    // score only cases every variant completed, so methods share a case set
    let scored: Vec<bool> = (0..cases.len())
        .map(|i| runs.iter().all(|(_, recs)| recs[i].result().is_some()))
        .collect();
    let failures: Vec<CaseRecord> = runs
        .iter()
        .flat_map(|(_, recs)| recs.iter())
        .filter(|r| r.result().is_none())
        .cloned()
        .collect();
    if !scored.iter().any(|&s| s) {
        let first = failures.first().and_then(|r| match r {
            CaseRecord::Error(f) => Some(f),
            CaseRecord::Ok { .. } => None,
        });
        let code = first.map_or(INPUT, |f| f.exit_code as u8);
        let msg = first.map_or_else(String::new, |f| format!("{}: {}", f.case_id, f.message));
        return Err(anyhow!("every case failed; first failure {msg}")).code(code);
    }

    let per_method: Vec<(Variant, Vec<PipelineResult>)> = runs
        .iter()
        .map(|(v, recs)| {
            let ok = recs
                .iter()
                .zip(&scored)
                .filter(|(_, &s)| s)
                .filter_map(|(r, _)| r.result().cloned())
                .collect();
            (*v, ok)
        })
        .collect();
    let methods: Vec<MethodResults<'_>> = per_method
        .iter()
        .map(|(v, rs)| MethodResults {
            method: v.as_str(),
            results: rs,
        })
        .collect();
    let aggregation = match args.aggregation {
        AggregationArg::Macro => Aggregation::Macro,
        AggregationArg::Micro => Aggregation::Micro,
    };
    let out = sweep(&cases, &methods, &args.cutoffs, aggregation, level).code(INPUT)?;
    let discrepancy = match (&per_method[..], args.variant) {
        ([(_, base), (_, focus)], Variants::Both) => {
            Some(discrepancy_report(base, focus, args.min_count, args.top_k).code(INPUT)?)
        }
        _ => None,
    };

    // per-case records, with timings, outside the deterministic report tree
    for (variant, recs) in &mut runs {
        for rec in recs.iter_mut() {
            let stem = format!("{}/{}/{}", name, variant, rec.case_id());
            if let CaseRecord::Ok { result } = rec {
                if *variant == Variant::Focus {
                    if let Some(img) = &result.attended_image {
                        let png = ws.attended().join(format!("{stem}.png"));
                        ws.write(&png, &img.to_png()).code(INPUT)?;
                        result.attended.png = Some(ws.relative(&png));
                    }
                }
            }
            let path = ws.results().join(format!("{stem}.json"));
            ws.write(&path, pretty(rec).code(INPUT)?.as_bytes())
                .code(INPUT)?;
        }
    }

    let dir = ws.reports().join(&name);
    let n_failed = scored.iter().filter(|s| !**s).count();
    let summary = json!({
        "dataset": match args.dataset { Dataset::Coco => "coco", Dataset::Voc => "voc" },
        "cases": cases.len(),
        "scored_cases": cases.len() - n_failed,
        "excluded_cases": n_failed,
        "mode": config.mode,
        "base_tau": config.base_tau,
        "containment": config.containment,
        "table": out.table,
        "difficulty": out.difficulty,
        "discrepancy": discrepancy.as_ref().map(|d| json!({
            "definition": "mean over images proposing the label of its best detection score (0 when undetected), focus minus baseline",
            "min_count": args.min_count,
            "top_k": args.top_k,
            "entries": d,
        })),
    });
    let mut files: Vec<(&str, String)> = vec![
        ("sweep.csv", out.table.to_csv()),
        ("sweep.json", pretty(&summary).code(INPUT)?),
        ("matches.jsonl", jsonl(&out.matches).code(INPUT)?),
        ("difficulty.csv", difficulty_csv(&out.difficulty)),
        ("cases.jsonl", jsonl(&cases).code(INPUT)?),
        ("failures.jsonl", jsonl(&failures).code(INPUT)?),
    ];
    if let Some(d) = &discrepancy {
        files.push(("discrepancy.csv", discrepancy_csv(d)));
    }
    for (file, text) in &files {
        ws.write(&dir.join(file), text.as_bytes()).code(INPUT)?;
    }

    crate::exit::emit(&out.table.render())?;
    if n_failed > 0 {
        eprintln!(
            "{n_failed} of {} cases excluded after failures; see failures.jsonl",
            cases.len()
        );
    }
    eprintln!("reports in {}", ws.relative(&dir));
    Ok(())
}
