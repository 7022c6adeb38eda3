use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use focus_core::geometry::{BBox, IsolationMode, RasterImage};
use focus_core::pipeline::{load_prompt_file, Pipeline, PipelineConfig, PipelineResult, RunInput};
use focus_core::proposal::ProposalList;

use crate::exit::{Outcome, WithCode, INPUT};
use crate::workspace::Workspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Focus,
    Baseline,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// PNG or JPEG image.
    #[arg(long)]
    pub image: PathBuf,
    /// Region of interest as x_min,y_min,x_max,y_max (half-open pixels).
    #[arg(long = "box", value_name = "X0,Y0,X1,Y1", allow_hyphen_values = true)]
    pub bbox: String,
    /// Task prompt file: task text, a line of three dashes, then the addendum.
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    /// Config document; defaults to <workspace>/config.json when present.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<IsolationMode>,
    #[arg(long, value_enum, default_value_t = VariantArg::Focus)]
    pub variant: VariantArg,
    /// Comma-separated labels. Required for baseline runs unless the proposer
    /// should supply them; for focus runs they replace the proposer.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Key backends see for this run; defaults to the image file stem.
    #[arg(long)]
    pub case_id: Option<String>,
    /// Detector base threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Run identifier used for output file names; random when omitted.
    #[arg(long)]
    pub id: Option<String>,
}

pub fn parse_mode(s: &str) -> Result<IsolationMode, String> {
    s.parse()
}

/// Flags over file values over defaults.
pub fn apply_overrides(
    mut config: PipelineConfig,
    prompt_file: Option<&std::path::Path>,
    mode: Option<IsolationMode>,
    tau: Option<f64>,
) -> anyhow::Result<PipelineConfig> {
    if let Some(p) = prompt_file {
        config.prompt = load_prompt_file(p)?;
    }
    if let Some(m) = mode {
        config.mode = m;
    }
    if let Some(t) = tau {
        config.base_tau = t;
    }
    config.validate()?;
    Ok(config)
}

pub fn parse_box(s: &str) -> anyhow::Result<BBox> {
    s.parse::<BBox>()
        .map_err(|e| anyhow!("invalid --box `{s}`: {e}"))
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.')
}

/// Writes `<results>/<id>.json` and `<attended>/<id>.png`, recording the PNG
/// path in the result.
pub fn persist(ws: &Workspace, id: &str, result: &mut PipelineResult) -> anyhow::Result<PathBuf> {
    if let Some(img) = &result.attended_image {
        let png = ws.attended().join(format!("{id}.png"));
        ws.write(&png, &img.to_png())?;
        result.attended.png = Some(ws.relative(&png));
    }
    let path = ws.results().join(format!("{id}.json"));
    let mut text = serde_json::to_string_pretty(result)?;
    text.push('\n');
    ws.write(&path, text.as_bytes())?;
    Ok(path)
}

pub fn run(ws: &Workspace, args: RunArgs) -> Outcome {
    let bbox = parse_box(&args.bbox).code(INPUT)?;
    let id = args
        .id
        .clone()
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    if !valid_id(&id) {
        return Err(anyhow!("invalid run id `{id}`")).code(INPUT);
    }
    let image = RasterImage::open(&args.image)
        .with_context(|| format!("loading {}", args.image.display()))
        .code(INPUT)?;
    let config = ws.load_config(args.config.as_deref()).code(INPUT)?;
    let config =
        apply_overrides(config, args.prompt_file.as_deref(), args.mode, args.tau).code(INPUT)?;
    let level = config.normalization;
    let pipeline = Pipeline::new(config).code(INPUT)?;

    let case_id = args.case_id.clone().unwrap_or_else(|| {
        args.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into())
    });
    let input = RunInput {
        case_id: &case_id,
        image_id: &case_id,
        image: &image,
        bbox,
    };
    let labels = if args.labels.is_empty() {
        None
    } else {
        Some(ProposalList::from_labels(&args.labels, level).code(INPUT)?)
    };
    let mut result = match (args.variant, labels) {
        (VariantArg::Focus, None) => pipeline.run(&input)?,
        (VariantArg::Focus, Some(l)) => pipeline.run_with_proposal(&input, &l)?,
        (VariantArg::Baseline, Some(l)) => pipeline.run_baseline(&input, &l)?,
        (VariantArg::Baseline, None) => {
            let l = pipeline.propose_only(&input)?;
            pipeline.run_baseline(&input, &l)?
        }
    };
    let path = persist(ws, &id, &mut result).code(INPUT)?;
    let mut text = serde_json::to_string_pretty(&result).code(INPUT)?;
    text.push('\n');
    crate::exit::emit(&text)?;
    eprintln!("wrote {}", ws.relative(&path));
    Ok(())
}
