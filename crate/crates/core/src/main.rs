use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use byteorder::{ByteOrder, LittleEndian};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cardioseg::cohort::{
    cmd_correlate, cmd_dose, cmd_evaluate, cmd_infer, cmd_report, cmd_stats_grouped, cmd_stats_paired, kfold,
    load_manifest, stratified_split, CohortManifest, CommandOutput, Contrast, Grouping, InferOptions, PredictorSource,
    DEFAULT_FAMILY_SIZE,
};
use cardioseg::inference::{Fusion, DEFAULT_OVERLAP};
use cardioseg::phantom::{cohort_records, generate_cohort};
use cardioseg::stats::Covariate;

#[derive(Parser)]
#[command(
    name = "cardioseg",
    version,
    about = "Cardiac substructure segmentation evaluation toolkit"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Cohort manifest CSV.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every random choice (splits, folds, phantoms).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Weighting of overlapping inference windows.
    #[arg(long, global = true, value_enum, default_value_t = FusionArg::Uniform)]
    fusion: FusionArg,
    /// Number of tests per structure for Bonferroni correction.
    #[arg(long, global = true, default_value_t = DEFAULT_FAMILY_SIZE)]
    family_size: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Uniform,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    Contrast,
    Position,
    Sex,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovariateArg {
    Age,
    Bmi,
}

#[derive(Clone, Copy, ValueEnum)]
enum ToyMode {
    Uniform,
    Background,
    WrongSize,
    Sum1005,
    Nan,
    Fail,
}

#[derive(Subcommand)]
enum Command {
    /// Score predicted masks against manual masks (DSC, HD95).
    Evaluate,
    /// Wilcoxon tests on scores: paired between two models or grouped by a patient attribute.
    Stats {
        /// Scores CSV for grouped mode.
        #[arg(long, conflicts_with = "paired")]
        scores: Option<PathBuf>,
        /// Patient attribute defining the two groups.
        #[arg(long, value_enum, requires = "scores")]
        by: Option<GroupArg>,
        /// Two scores CSVs to compare case by case.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        paired: Option<Vec<PathBuf>>,
    },
    /// Spearman correlation of DSC with age or BMI.
    Correlate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum)]
        covariate: CovariateArg,
    },
    /// Dose metrics for manual vs predicted masks.
    Dose {
        /// V_x thresholds in Gy for the per-case metrics file.
        #[arg(long, value_delimiter = ',', default_value = "40")]
        thresholds: Vec<f64>,
    },
    /// Sliding-window inference for every case in the manifest.
    Infer {
        /// Predictor command template ({input}, {sidecar}, {output}, {classes}).
        #[arg(long, required_unless_present = "oracle")]
        predictor_command: Option<String>,
        /// Serve each case's manual labels instead of running a model.
        #[arg(long, conflicts_with = "predictor_command")]
        oracle: bool,
        /// Patch edge length in voxels (one value or three).
        #[arg(long, value_delimiter = ',', default_value = "128")]
        patch: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_OVERLAP)]
        overlap: f64,
    },
    /// Contrast-stratified train/holdout split, optionally with k folds over train.
    Split {
        #[arg(long)]
        cect: usize,
        #[arg(long)]
        ncct: usize,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Partition all manifest cases into k folds.
    Kfold {
        #[arg(long, short)]
        k: usize,
    },
    /// Generate a synthetic phantom cohort.
    Phantom {
        #[arg(long)]
        cect: usize,
        #[arg(long)]
        ncct: usize,
        #[arg(long, default_value_t = 0)]
        prone: usize,
        /// Only write the manifest, no volumes.
        #[arg(long)]
        records_only: bool,
    },
    /// Evaluation, grouped tests, correlations and dose comparison in one go.
    Report,
    #[command(hide = true)]
    ToyPredictor {
        #[arg(long, value_enum)]
        mode: ToyMode,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        classes: usize,
    },
}

fn need<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref()
        .with_context(|| format!("--{flag} is required for this command"))
}

fn manifest(global: &Global) -> Result<CohortManifest> {
    let path = need(&global.manifest, "manifest")?;
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn finish(out: CommandOutput) -> Result<()> {
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    if out.succeeded() {
        return Ok(());
    }
    for f in &out.failures {
        eprintln!("{}: {}", f.case_id, f.message);
    }
    bail!("{} case(s) failed", out.failures.len())
}

fn write_json(path: PathBuf, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let fusion = match g.fusion {
        FusionArg::Uniform => Fusion::Uniform,
        FusionArg::Gaussian => Fusion::Gaussian,
    };
    match &cli.command {
        Command::Evaluate => finish(cmd_evaluate(&manifest(g)?, need(&g.out, "out")?)?),
        Command::Stats { scores, by, paired } => {
            let out = need(&g.out, "out")?;
            if let Some(p) = paired {
                return finish(cmd_stats_paired(&p[0], &p[1], g.family_size, out)?);
            }
            let (Some(scores), Some(by)) = (scores, by) else {
                bail!("stats needs either --paired A B or --scores with --by");
            };
            let grouping = match by {
                GroupArg::Contrast => Grouping::Contrast,
                GroupArg::Position => Grouping::Position,
                GroupArg::Sex => Grouping::Sex,
            };
            finish(cmd_stats_grouped(scores, &manifest(g)?, grouping, g.family_size, out)?)
        }
        Command::Correlate { scores, covariate } => {
            let c = match covariate {
                CovariateArg::Age => Covariate::Age,
                CovariateArg::Bmi => Covariate::Bmi,
            };
            finish(cmd_correlate(scores, &manifest(g)?, c, need(&g.out, "out")?)?)
        }
        Command::Dose { thresholds } => finish(cmd_dose(&manifest(g)?, thresholds, need(&g.out, "out")?)?),
        Command::Infer {
            predictor_command,
            oracle,
            patch,
            overlap,
        } => {
            let source = match (predictor_command, oracle) {
                (_, true) => PredictorSource::Oracle,
                (Some(cmd), false) => PredictorSource::Command(cmd.clone()),
                (None, false) => bail!("--predictor-command or --oracle is required"),
            };
            let patch = match patch.as_slice() {
                [p] => [*p; 3],
                [x, y, z] => [*x, *y, *z],
                _ => bail!("--patch takes one or three values"),
            };
            let mut opts = InferOptions::new(source);
            opts.fusion = fusion;
            opts.patch = patch;
            opts.overlap = *overlap;
            let (_, out) = cmd_infer(&manifest(g)?, &opts, need(&g.out, "out")?)?;
            finish(out)
        }
        Command::Split { cect, ncct, folds } => {
            let m = manifest(g)?;
            let request = BTreeMap::from([(Contrast::Cect, *cect), (Contrast::Ncct, *ncct)]);
            let mut split = stratified_split(&m, &request, g.seed)?;
            if let Some(k) = folds {
                split.folds = Some(kfold(&split.train, *k, g.seed)?);
            }
            let out = need(&g.out, "out")?;
            std::fs::create_dir_all(out)?;
            write_json(out.join("split.json"), &split)
        }
        Command::Kfold { k } => {
            let m = manifest(g)?;
            let ids: Vec<String> = m.records.iter().map(|r| r.case_id.clone()).collect();
            let folds = kfold(&ids, *k, g.seed)?;
            let out = need(&g.out, "out")?;
            std::fs::create_dir_all(out)?;
            write_json(out.join("folds.json"), &folds)
        }
        Command::Phantom {
            cect,
            ncct,
            prone,
            records_only,
        } => {
            let out = need(&g.out, "out")?;
            let path = out.join("manifest.csv");
            if *records_only {
                std::fs::create_dir_all(out)?;
                let m = cohort_records(*cect, *ncct, *prone, g.seed)?;
                cardioseg::cohort::write_manifest(&m, &path)?;
            } else {
                generate_cohort(*cect, *ncct, *prone, g.seed, out)?;
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Report => finish(cmd_report(&manifest(g)?, g.family_size, need(&g.out, "out")?)?),
        Command::ToyPredictor {
            mode,
            input,
            sidecar,
            output,
            classes,
        } => toy_predictor(*mode, input, sidecar, output, *classes),
    }
}

/// Minimal predictor used to exercise the subprocess protocol.
fn toy_predictor(mode: ToyMode, input: &Path, sidecar: &Path, output: &Path, classes: usize) -> Result<()> {
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(sidecar)?)?;
    let n: usize = meta["dims"]
        .as_array()
        .context("sidecar lacks dims")?
        .iter()
        .map(|d| d.as_u64().unwrap_or(0) as usize)
        .product();
    let bytes = std::fs::read(input)?;
    if bytes.len() != n * 4 {
        bail!("input has {} bytes, expected {}", bytes.len(), n * 4);
    }
    let per_class = 1.0 / classes as f32;
    let mut scores = match mode {
        ToyMode::Fail => bail!("toy predictor asked to fail"),
        ToyMode::Uniform | ToyMode::WrongSize => vec![per_class; classes * n],
        ToyMode::Sum1005 => vec![1.005 / classes as f32; classes * n],
        ToyMode::Nan => vec![f32::NAN; classes * n],
        ToyMode::Background => {
            let mut v = vec![0.0; classes * n];
            v[..n].fill(1.0);
            v
        }
    };
    if matches!(mode, ToyMode::WrongSize) {
        scores.pop();
    }
    let mut out = vec![0u8; scores.len() * 4];
    LittleEndian::write_f32_into(&scores, &mut out);
    std::fs::write(output, out)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
