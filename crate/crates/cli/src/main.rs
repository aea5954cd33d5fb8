use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use ssrp_core::experiment::{
    emit_accuracy_curves, extract_features, fit_fold_pca, load_manifest, make_folds, report_comparison, run_pipeline,
    sweep, synthesize_dataset, write_sweep_csv, FeatureConfig, FeatureDataset, PipelineSpec, RunConfig, RunResult,
    SweepGrid, SyntheticSpec,
};
use ssrp_core::pca::emit_variance_curve;
use ssrp_core::Error;

/// Exit codes.
const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "ssrp", version, about = "Sparse salient region pooling experiments on log-mel spectrograms")]
struct Cli {
    /// Print the effective run configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Feature extraction.
    Features {
        #[command(subcommand)]
        action: FeaturesAction,
    },
    /// PCA fitting and variance curves.
    Pca {
        #[command(subcommand)]
        action: PcaAction,
    },
    /// Cross-validated training run of one pipeline.
    Run(RunArgs),
    /// Runs every pipeline of a grid file and writes a results table.
    Sweep(SweepArgs),
    /// Comparison table from saved run results.
    Report(ReportArgs),
    /// Writes a synthetic dataset (WAV files plus meta.csv).
    Synth(SynthArgs),
}

#[derive(Subcommand, Debug)]
enum FeaturesAction {
    /// Extracts log-mel spectrograms for every manifest entry into a cache.
    Extract {
        audio_dir: PathBuf,
        manifest: PathBuf,
        cache_dir: PathBuf,
        /// Run config whose `features` table sets the extraction.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum PcaAction {
    /// Fits standardizer and projection on the training split of a fold.
    Fit(PcaArgs),
    /// Writes the cumulative explained-variance curve of a training split.
    Curve(PcaArgs),
}

#[derive(Args, Debug)]
struct PcaArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Held-out fold; the fit uses the other four.
    #[arg(long, default_value_t = 1)]
    fold: u8,
    #[arg(long, default_value_t = 0.95)]
    variance: f64,
    /// Fit on every clip, held-out fold included.
    #[arg(long)]
    all_data: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model stem (`.pcam` + `.json`) for `fit`, CSV path for `curve`.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    #[arg(long, requires = "manifest")]
    audio_dir: Option<PathBuf>,
    #[arg(long, requires = "audio_dir")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Use the synthetic dataset instead of audio files.
    #[arg(long, conflicts_with_all = ["audio_dir", "manifest"])]
    synthetic: bool,
    /// Synthetic dataset spec (TOML); implies `--synthetic`.
    #[arg(long, conflicts_with_all = ["audio_dir", "manifest"])]
    synth_spec: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PipelineKind {
    Baseline,
    SsrpB,
    SsrpT,
    Pca,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, value_enum)]
    pipeline: Option<PipelineKind>,
    /// SSRP-B window.
    #[arg(long = "W", value_name = "N")]
    window: Option<usize>,
    /// SSRP-T top-K.
    #[arg(long = "K", value_name = "N")]
    top_k: Option<usize>,
    /// PCA variance threshold.
    #[arg(long)]
    variance: Option<f64>,
    /// Held-out folds, e.g. `1..5`, `2`, or `1,3`.
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    parallel: bool,
    #[command(flatten)]
    data: DataArgs,
    /// Result JSON.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Per-epoch validation accuracy CSV (an SVG chart is written next to it).
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    grid: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Results table CSV.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Directory for one result JSON per successful run.
    #[arg(long)]
    results_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(required = true)]
    results: Vec<PathBuf>,
    /// Output stem: writes `<stem>.txt` and `<stem>.csv`.
    #[arg(long, short, default_value = "comparison")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

/// Bad command-line values detected after parsing.
#[derive(Debug)]
struct Usage(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| anyhow::Error::new(Error::Io { path: path.to_path_buf(), source: e }))
}

fn parse_folds(text: &str) -> anyhow::Result<Vec<u8>> {
    let parse = |s: &str| s.trim().parse::<u8>().map_err(|_| usage(format!("bad fold `{s}`")));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (parse(a)?, parse(b.trim_start_matches('='))?);
        if a > b {
            return Err(usage(format!("empty fold range `{text}`")));
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(parse).collect()
}

fn pipeline_from_args(args: &RunArgs, current: &PipelineSpec) -> anyhow::Result<PipelineSpec> {
    let kind = match args.pipeline {
        Some(k) => k,
        None => {
            if args.window.is_some() || args.top_k.is_some() || args.variance.is_some() {
                return Err(usage("--W, --K and --variance need --pipeline"));
            }
            return Ok(current.clone());
        }
    };
    let stray = |flag: &str, set: bool| if set { Err(usage(format!("{flag} does not apply to this pipeline"))) } else { Ok(()) };
    Ok(match kind {
        PipelineKind::Baseline => {
            stray("--W", args.window.is_some())?;
            stray("--K", args.top_k.is_some())?;
            stray("--variance", args.variance.is_some())?;
            PipelineSpec::BaselineGap
        }
        PipelineKind::SsrpB => {
            stray("--K", args.top_k.is_some())?;
            stray("--variance", args.variance.is_some())?;
            PipelineSpec::SsrpB { window: args.window.ok_or_else(|| usage("ssrp-b needs --W"))? }
        }
        PipelineKind::SsrpT => {
            stray("--W", args.window.is_some())?;
            stray("--variance", args.variance.is_some())?;
            PipelineSpec::SsrpT { top_k: args.top_k.ok_or_else(|| usage("ssrp-t needs --K"))? }
        }
        PipelineKind::Pca => {
            stray("--W", args.window.is_some())?;
            stray("--K", args.top_k.is_some())?;
            PipelineSpec::PcaCnn { variance: args.variance.unwrap_or(0.95) }
        }
    })
}

fn synthetic_spec(data: &DataArgs) -> anyhow::Result<Option<SyntheticSpec>> {
    match &data.synth_spec {
        Some(p) => Ok(Some(toml::from_str(&read_text(p)?).map_err(|e| Error::Schema(format!("synthetic spec: {e}")))?)),
        None if data.synthetic => Ok(Some(SyntheticSpec::default())),
        None => Ok(None),
    }
}

/// Config file if given; otherwise desk settings matched to synthetic clips,
/// or full-scale defaults for real audio.
fn base_config(config: Option<&Path>, data: &DataArgs) -> anyhow::Result<RunConfig> {
    if let Some(p) = config {
        return Ok(RunConfig::from_toml(&read_text(p)?)?);
    }
    Ok(match synthetic_spec(data)? {
        Some(spec) => RunConfig {
            features: FeatureConfig::for_duration(spec.duration_secs),
            ..RunConfig::desk(PipelineSpec::BaselineGap)
        },
        None => RunConfig::default(),
    })
}

fn load_data(data: &DataArgs, features: &FeatureConfig) -> anyhow::Result<FeatureDataset> {
    if let Some(spec) = synthetic_spec(data)? {
        let synth = synthesize_dataset(&spec)?;
        return Ok(FeatureDataset::from_synthetic(&synth, features)?);
    }
    let (Some(audio), Some(manifest)) = (&data.audio_dir, &data.manifest) else {
        return Err(usage("give --audio-dir and --manifest, or --synthetic"));
    };
    let manifest = load_manifest(manifest)?;
    let (ds, stats) = extract_features(audio, &manifest, features, data.cache_dir.as_deref())?;
    log::info!("{} clips: {} extracted, {} cached", ds.len(), stats.extracted, stats.cache_hits);
    Ok(ds)
}

fn print_config(cfg: &RunConfig) -> anyhow::Result<()> {
    print!("{}", cfg.to_toml()?);
    Ok(())
}

fn cmd_run(args: RunArgs, print_only: bool) -> anyhow::Result<()> {
    let mut cfg = base_config(args.config.as_deref(), &args.data)?;
    cfg.pipeline = pipeline_from_args(&args, &cfg.pipeline)?;
    if let Some(f) = &args.folds {
        cfg.folds = parse_folds(f)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.training.epochs = e;
    }
    cfg.parallel_folds |= args.parallel;
    if print_only {
        return print_config(&cfg);
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let data = load_data(&args.data, &cfg.features)?;
    let result = run_pipeline(&cfg, &data)?;
    for f in &result.folds {
        println!("fold {}: accuracy {:.4}", f.fold, f.accuracy);
    }
    println!(
        "{} {}: mean accuracy {:.4} over {} fold(s), {} parameters, {:.1} s",
        result.model,
        result.hyper,
        result.mean_accuracy,
        result.folds.len(),
        result.param_count,
        result.wall_clock_secs
    );
    if let Some(out) = &args.out {
        result.save(out)?;
    }
    if let Some(curves) = &args.curves {
        if result.folds.iter().all(|f| f.trajectory.is_empty()) {
            log::warn!("no epochs ran; accuracy curves are empty");
        }
        emit_accuracy_curves(&result, curves)?;
        let svg = curves.with_extension("svg");
        std::fs::write(&svg, ssrp_core::experiment::accuracy_curves_svg(&result))
            .map_err(|e| Error::Io { path: svg.clone(), source: e })?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs, print_only: bool) -> anyhow::Result<()> {
    let grid = match &args.grid {
        Some(p) => SweepGrid::from_toml(&read_text(p)?)?,
        None => SweepGrid {
            base: base_config(None, &args.data)?,
            ..SweepGrid::default()
        },
    };
    let cfgs = grid.configs();
    if print_only {
        return print_config(&grid.base);
    }
    if cfgs.is_empty() {
        return Err(usage("grid has no pipelines"));
    }
    let data = load_data(&args.data, &grid.base.features)?;
    let (rows, results) = sweep(&cfgs, &data)?;
    match &args.out {
        Some(p) => {
            let file = std::fs::File::create(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            write_sweep_csv(&rows, file)?;
        }
        None => write_sweep_csv(&rows, std::io::stdout())?,
    }
    if let Some(dir) = &args.results_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        for r in &results {
            let name = format!("{}_{}.json", r.pipeline.pooling_label(), r.hyper).replace(['=', ' '], "_");
            r.save(dir.join(name.to_lowercase()))?;
        }
    }
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed", rows.len());
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let results = args
        .results
        .iter()
        .map(|p| RunResult::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    print!("{}", report_comparison(&results, &args.out)?);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let spec: SyntheticSpec = match &args.spec {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| Error::Schema(format!("synthetic spec: {e}")))?,
        None => SyntheticSpec::default(),
    };
    let data = synthesize_dataset(&spec)?;
    data.write_to(&args.out)?;
    println!("wrote {} clips and meta.csv to {}", data.clips.len(), args.out.display());
    Ok(())
}

fn cmd_features(action: FeaturesAction) -> anyhow::Result<()> {
    let FeaturesAction::Extract { audio_dir, manifest, cache_dir, config } = action;
    let features = match config {
        Some(p) => RunConfig::from_toml(&read_text(&p)?)?.features,
        None => FeatureConfig::default(),
    };
    let manifest = load_manifest(&manifest)?;
    let (_, stats) = extract_features(&audio_dir, &manifest, &features, Some(&cache_dir))?;
    println!(
        "{} clips: {} extracted, {} already cached in {}",
        manifest.len(),
        stats.extracted,
        stats.cache_hits,
        cache_dir.display()
    );
    Ok(())
}

fn cmd_pca(action: PcaAction) -> anyhow::Result<()> {
    let (args, fit) = match action {
        PcaAction::Fit(a) => (a, true),
        PcaAction::Curve(a) => (a, false),
    };
    let mut cfg = base_config(args.config.as_deref(), &args.data)?;
    cfg.pca_fit_all_data = args.all_data;
    let data = load_data(&args.data, &cfg.features)?;
    let split = make_folds(&data.manifest, args.fold).map_err(|e| usage(e.to_string()))?;
    let model = fit_fold_pca(&cfg, &data, &split, args.variance)?;
    if fit {
        model.save(&args.out)?;
        let s = model.summary();
        println!(
            "kept {} of {} components ({:.4} of the variance, {:.2}% dimensionality reduction)",
            s.k,
            s.d,
            s.cumulative_explained_variance,
            100.0 * s.dimensionality_reduction
        );
    } else {
        emit_variance_curve(&model.spectrum, &args.out)?;
        println!("wrote {} points to {}", model.spectrum.len(), args.out.display());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidParameter(_) | Error::WindowTooLarge { .. } | Error::TopKTooLarge { .. }) => EXIT_USAGE,
        Some(e) if e.is_data_error() => EXIT_DATA,
        Some(Error::Io { .. }) => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let print_only = cli.print_config;
    let outcome = match cli.command {
        None if print_only => print_config(&RunConfig::default()),
        None => Err(usage("no command given; see --help")),
        Some(Command::Run(a)) => cmd_run(a, print_only),
        Some(Command::Sweep(a)) => cmd_sweep(a, print_only),
        Some(_) if print_only => print_config(&RunConfig::default()),
        Some(Command::Report(a)) => cmd_report(a),
        Some(Command::Synth(a)) => cmd_synth(a),
        Some(Command::Features { action }) => cmd_features(action),
        Some(Command::Pca { action }) => cmd_pca(action),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Some errors already embed their source in their own message.
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg.push_str(if msg.is_empty() { "" } else { ": " });
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_ranges() {
        assert_eq!(parse_folds("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_folds("1..=3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_folds("2").unwrap(), vec![2]);
        assert_eq!(parse_folds("1,3").unwrap(), vec![1, 3]);
        assert!(parse_folds("4..2").is_err());
        assert!(parse_folds("x").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
