//! Batch command-line driver: scene synthesis, flow estimation, evaluation
//! and gradient verification. Every command is deterministic given its flags
//! and seed.
//!
//! Exit codes: 0 success, 1 validation error (including a failing gradient
//! check), 2 I/O error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::{FlowError, Result};
use crate::gma::{CombineMode, GmaConfig, GmaVariant};
use crate::gradcheck::{check_gma, DEFAULT_STEP, DEFAULT_THRESHOLD};
use crate::io::{
    load_pipeline_weights, read_flo_file, read_image_file, read_pgm_file, write_flo_file,
    write_image_file, write_pgm_file, RawImage,
};
use crate::metrics::{partition_occlusion, EvalReport};
use crate::refinement::{run_pipeline, GmaSetting, PipelineConfig, PipelineWeights};
use crate::synth::{render_pair, SceneSpec};
use crate::viz::{attention_heatmap, flow_to_color};

#[derive(Parser)]
#[command(
    name = "gmaflow",
    version,
    about = "Optical flow with global motion aggregation: synthesis, estimation, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene into a frame pair with exact ground truth
    Synth {
        /// Scene description (TOML)
        spec: PathBuf,
        /// Output directory for img1.ppm, img2.ppm, gt.flo, occ.pgm,
        /// partition.pgm
        out_dir: PathBuf,
    },
    /// Estimate flow between two frames and write a .flo file
    Run(RunArgs),
    /// Evaluate a flow file against ground truth, or compare two reports
    Eval(EvalArgs),
    /// Verify analytic aggregation gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum GmaFlag {
    /// Content-only attention
    Content,
    /// Content plus relative position
    #[value(name = "content+pos")]
    ContentPos,
    /// Position-only attention
    Pos,
    /// No aggregation
    Off,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum CombineFlag {
    /// GRU sees [motion | aggregated | context]
    Concatenate,
    /// GRU sees [aggregated | context]
    Replace,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum VariantFlag {
    Content,
    #[value(name = "content+pos")]
    ContentPos,
    Pos,
}

#[derive(Args)]
struct RunArgs {
    /// First frame (PPM or PGM)
    img1: PathBuf,
    /// Second frame (PPM or PGM)
    img2: PathBuf,
    /// Output flow file (.flo)
    out_flow: PathBuf,
    /// Directory with saved weights; fresh seeded weights when omitted
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Refinement iterations [default: 12]
    #[arg(long)]
    iters: Option<usize>,
    /// Aggregation variant [default: content]
    #[arg(long, value_enum)]
    gma: Option<GmaFlag>,
    /// How aggregated features feed the update step [default: concatenate]
    #[arg(long, value_enum)]
    combine: Option<CombineFlag>,
    /// Weight-initialization seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Query pixel "row,col" on the 1/8-resolution grid; repeatable, writes
    /// attn_{row}_{col}.pgm beside the flow file
    #[arg(long = "dump-attention", value_name = "ROW,COL", action = ArgAction::Append, value_delimiter = ';')]
    dump_attention: Vec<String>,
    /// Also write a colorized flow image here (PPM)
    #[arg(long)]
    viz: Option<PathBuf>,
    /// TOML file supplying defaults for these flags (flags win)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted flow (.flo)
    #[arg(required_unless_present = "compare")]
    pred: Option<PathBuf>,
    /// Ground-truth flow (.flo)
    #[arg(required_unless_present = "compare")]
    gt: Option<PathBuf>,
    /// Occlusion mask (PGM, nonzero = occluded); enables region rows
    occ: Option<PathBuf>,
    /// Write the structured report here (JSON)
    #[arg(long)]
    report: Option<PathBuf>,
    /// Compare two saved reports: baseline first, then ours
    #[arg(long, num_args = 2, value_names = ["BASELINE", "OURS"],
          conflicts_with_all = ["pred", "gt", "occ", "report"])]
    compare: Option<Vec<PathBuf>>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Attention variant to check [default: content]
    #[arg(long, value_enum)]
    variant: Option<VariantFlag>,
    /// Instance seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Pass threshold on max relative error [default: 1e-4]
    #[arg(long)]
    threshold: Option<f64>,
    /// Central-difference step [default: 1e-5]
    #[arg(long)]
    step: Option<f64>,
    /// Instance height [default: 3]
    #[arg(long)]
    height: Option<usize>,
    /// Instance width [default: 3]
    #[arg(long)]
    width: Option<usize>,
    /// Channel count [default: 4]
    #[arg(long)]
    channels: Option<usize>,
    /// Write the structured report here (JSON)
    #[arg(long)]
    report: Option<PathBuf>,
    /// TOML file supplying defaults for these flags (flags win)
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Optional config file: same keys as the flags, flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    iters: Option<usize>,
    gma: Option<String>,
    combine: Option<String>,
    seed: Option<u64>,
    variant: Option<String>,
    threshold: Option<f64>,
    step: Option<f64>,
    height: Option<usize>,
    width: Option<usize>,
    channels: Option<usize>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str(&text)
                .map_err(|e| FlowError::Parse(format!("config {}: {e}", p.display())))
        }
    }
}

fn enum_from_config<T: ValueEnum>(value: Option<&str>, key: &str) -> Result<Option<T>> {
    value
        .map(|s| {
            T::from_str(s, true)
                .map_err(|e| FlowError::invalid(format!("config key {key} = {s:?}: {e}")))
        })
        .transpose()
}

/// Entry point: parses arguments from the environment and returns the exit
/// code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                FlowError::Io(_) | FlowError::Format(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Synth { spec, out_dir } => cmd_synth(&spec, &out_dir).map(|()| 0),
        Command::Run(args) => cmd_run(args).map(|()| 0),
        Command::Eval(args) => cmd_eval(args).map(|()| 0),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn cmd_synth(spec_path: &Path, out_dir: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path)?;
    let spec = SceneSpec::from_toml_str(&text)?;
    let scene = render_pair(&spec)?;
    fs::create_dir_all(out_dir)?;

    write_image_file(&scene.img1, &out_dir.join("img1.ppm"))?;
    write_image_file(&scene.img2, &out_dir.join("img2.ppm"))?;
    write_flo_file(&scene.gt, &out_dir.join("gt.flo"))?;
    let occ = RawImage {
        width: spec.width,
        height: spec.height,
        channels: 1,
        data: scene.occ.iter().map(|&o| if o { 255 } else { 0 }).collect(),
    };
    write_pgm_file(&occ, &out_dir.join("occ.pgm"))?;
    let partition = RawImage {
        width: spec.width,
        height: spec.height,
        channels: 1,
        data: scene.partition.to_codes(),
    };
    write_pgm_file(&partition, &out_dir.join("partition.pgm"))?;

    let occluded = scene.occ.iter().filter(|&&o| o).count();
    println!(
        "wrote {}x{} scene to {} ({} of {} pixels occluded)",
        spec.height,
        spec.width,
        out_dir.display(),
        occluded,
        spec.height * spec.width
    );
    Ok(())
}

/// Largest level count (at most `wanted`) whose coarsest grid still has
/// integral extents.
fn fit_corr_levels(wanted: usize, h8: usize, w8: usize) -> usize {
    let mut levels = wanted.max(1);
    while levels > 1 && (h8 % (1 << (levels - 1)) != 0 || w8 % (1 << (levels - 1)) != 0) {
        levels -= 1;
    }
    levels
}

fn parse_pixel(text: &str, h8: usize, w8: usize) -> Result<(usize, usize)> {
    let (r, c) = text
        .split_once(',')
        .ok_or_else(|| FlowError::Parse(format!("pixel {text:?} is not \"row,col\"")))?;
    let row: usize = r
        .trim()
        .parse()
        .map_err(|_| FlowError::Parse(format!("pixel row {r:?} is not a number")))?;
    let col: usize = c
        .trim()
        .parse()
        .map_err(|_| FlowError::Parse(format!("pixel col {c:?} is not a number")))?;
    if row >= h8 || col >= w8 {
        return Err(FlowError::invalid(format!(
            "query pixel ({row}, {col}) outside the {h8}x{w8} attention grid"
        )));
    }
    Ok((row, col))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let file = load_file_config(args.config.as_deref())?;
    let iters = args.iters.or(file.iters).unwrap_or(12);
    let gma_flag = match args.gma {
        Some(f) => f,
        None => enum_from_config::<GmaFlag>(file.gma.as_deref(), "gma")?.unwrap_or(GmaFlag::Content),
    };
    let combine_flag = match args.combine {
        Some(f) => f,
        None => enum_from_config::<CombineFlag>(file.combine.as_deref(), "combine")?
            .unwrap_or(CombineFlag::Concatenate),
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);

    let img1 = read_image_file(&args.img1)?;
    let img2 = read_image_file(&args.img2)?;

    let stride = crate::encoder::ENCODER_STRIDE;
    if img1.height() % stride != 0 || img1.width() % stride != 0 {
        return Err(FlowError::invalid(format!(
            "frame {}x{} not divisible by the encoder stride {stride}",
            img1.height(),
            img1.width()
        )));
    }
    let (h8, w8) = (img1.height() / stride, img1.width() / stride);

    let mut config = PipelineConfig::standard();
    config.iterations = iters;
    config.corr_levels = fit_corr_levels(config.corr_levels, h8, w8);
    config.gma = match gma_flag {
        GmaFlag::Off => GmaSetting::Off,
        variant => {
            let mut g = GmaConfig::standard(32, config.d_c, config.d_m);
            g.variant = match variant {
                GmaFlag::Content => GmaVariant::ContentOnly,
                GmaFlag::ContentPos => GmaVariant::ContentPlusPosition,
                GmaFlag::Pos => GmaVariant::PositionOnly,
                GmaFlag::Off => unreachable!(),
            };
            g.combine_mode = match combine_flag {
                CombineFlag::Concatenate => CombineMode::Concatenate,
                CombineFlag::Replace => CombineMode::Replace,
            };
            GmaSetting::On(g)
        }
    };
    config.keep_attention = !args.dump_attention.is_empty();
    if config.keep_attention && matches!(config.gma, GmaSetting::Off) {
        return Err(FlowError::invalid("--dump-attention requires aggregation (not --gma off)"));
    }

    let weights = match &args.weights {
        Some(dir) => load_pipeline_weights(dir, !matches!(config.gma, GmaSetting::Off))?,
        None => PipelineWeights::seeded(&config, h8, w8, seed)?,
    };

    let (flow, trace) = run_pipeline(&img1, &img2, &weights, &config)?;
    write_flo_file(&flow, &args.out_flow)?;
    println!(
        "wrote {} ({}x{}, {} iterations)",
        args.out_flow.display(),
        flow.height(),
        flow.width(),
        iters
    );

    if let Some(viz_path) = &args.viz {
        write_image_file(&flow_to_color(&flow, None)?, viz_path)?;
        println!("wrote {}", viz_path.display());
    }

    if !args.dump_attention.is_empty() {
        let attention = trace
            .steps
            .last()
            .and_then(|s| s.attention.as_ref())
            .ok_or_else(|| FlowError::invalid("no attention recorded in the trace"))?;
        let dir = args.out_flow.parent().unwrap_or(Path::new("."));
        for text in &args.dump_attention {
            let (row, col) = parse_pixel(text, h8, w8)?;
            let map = attention_heatmap(attention, row * w8 + col, h8, w8)?;
            let path = dir.join(format!("attn_{row}_{col}.pgm"));
            write_image_file(&map, &path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    if let Some(reports) = &args.compare {
        let baseline = EvalReport::from_json(&fs::read_to_string(&reports[0])?)?;
        let ours = EvalReport::from_json(&fs::read_to_string(&reports[1])?)?;
        let rows = baseline.improvement_table(&ours);
        if rows.is_empty() {
            return Err(FlowError::EmptyRegion("no region present in both reports".into()));
        }
        println!("{:<8} {:>12}", "region", "improvement");
        for (name, pct) in rows {
            println!("{name:<8} {pct:>11.1}%");
        }
        return Ok(());
    }

    let pred = read_flo_file(args.pred.as_deref().expect("clap enforces pred"))?;
    let gt = read_flo_file(args.gt.as_deref().expect("clap enforces gt"))?;
    let partition = match &args.occ {
        None => None,
        Some(path) => {
            let raw = read_pgm_file(path)?;
            if raw.height != gt.height() || raw.width != gt.width() {
                return Err(FlowError::shape(format!(
                    "occlusion mask {}x{} vs flow {}x{}",
                    raw.height,
                    raw.width,
                    gt.height(),
                    gt.width()
                )));
            }
            let occ: Vec<bool> = raw.data.iter().map(|&b| b != 0).collect();
            Some(partition_occlusion(&occ, &gt)?)
        }
    };
    let report = EvalReport::compute(&pred, &gt, partition.as_ref())?;
    print!("{}", report.text_table());
    if let Some(path) = &args.report {
        fs::write(path, report.to_json())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let file = load_file_config(args.config.as_deref())?;
    let variant_flag = match args.variant {
        Some(v) => v,
        None => enum_from_config::<VariantFlag>(file.variant.as_deref(), "variant")?
            .unwrap_or(VariantFlag::Content),
    };
    let variant = match variant_flag {
        VariantFlag::Content => GmaVariant::ContentOnly,
        VariantFlag::ContentPos => GmaVariant::ContentPlusPosition,
        VariantFlag::Pos => GmaVariant::PositionOnly,
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let threshold = args.threshold.or(file.threshold).unwrap_or(DEFAULT_THRESHOLD);
    let step = args.step.or(file.step).unwrap_or(DEFAULT_STEP);
    let height = args.height.or(file.height).unwrap_or(3);
    let width = args.width.or(file.width).unwrap_or(3);
    let channels = args.channels.or(file.channels).unwrap_or(4);

    let report = check_gma(height, width, channels, variant, seed, step, threshold)?;
    print!("{}", report.text_table());
    if let Some(path) = &args.report {
        fs::write(path, report.to_json())?;
        println!("wrote {}", path.display());
    }
    Ok(if report.passed { 0 } else { 1 })
}
