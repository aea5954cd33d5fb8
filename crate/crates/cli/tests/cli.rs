use std::path::Path;
use std::process::{Command, Output};

fn ssrp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssrp")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn print_config_emits_parseable_defaults() {
    let o = ssrp(&["--print-config"]);
    assert_eq!(code(&o), 0);
    let cfg = ssrp_core::RunConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg, ssrp_core::RunConfig::default());
    assert_eq!(cfg.training.epochs, 700);
}

#[test]
fn print_config_reflects_run_flags() {
    let o = ssrp(&["run", "--pipeline", "ssrp-b", "--W", "4", "--seed", "7", "--folds", "2..3", "--print-config"]);
    assert_eq!(code(&o), 0);
    let cfg = ssrp_core::RunConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg.pipeline, ssrp_core::PipelineSpec::SsrpB { window: 4 });
    assert_eq!((cfg.seed, cfg.folds), (7, vec![2, 3]));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&ssrp(&["frobnicate"])), 1);
    assert_eq!(code(&ssrp(&["run", "--pipeline", "ssrp-b", "--K", "3", "--synthetic"])), 1);
    assert_eq!(code(&ssrp(&["run", "--pipeline", "ssrp-t", "--synthetic"])), 1);
    assert_eq!(code(&ssrp(&["run", "--pipeline", "baseline", "--folds", "7", "--synthetic"])), 1);
    assert_eq!(code(&ssrp(&["run", "--pipeline", "baseline"])), 1);
    assert_eq!(code(&ssrp(&["--help"])), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("meta.csv");
    std::fs::write(&manifest, "name,fold\nx.wav,1\n").unwrap();
    let cache = dir.path().join("cache");
    assert_eq!(code(&ssrp(&["features", "extract", p(dir.path()), p(&manifest), p(&cache)])), 2);
    assert_eq!(code(&ssrp(&["report", p(&dir.path().join("absent.json"))])), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{").unwrap();
    assert_eq!(code(&ssrp(&["report", p(&bad)])), 2);
}

#[test]
fn synth_extract_run_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let audio = dir.path().join("audio");
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "n_classes = 2\nclips_per_class = 5\nduration_secs = 0.5\n").unwrap();
    assert_eq!(code(&ssrp(&["synth", "--spec", p(&spec), "-o", p(&audio)])), 0);
    assert!(audio.join("meta.csv").is_file());

    // A config matched to 0.5 s clips with a small network and two epochs.
    let mut cfg = ssrp_core::RunConfig::desk(ssrp_core::PipelineSpec::BaselineGap);
    cfg.features = ssrp_core::FeatureConfig::for_duration(0.5);
    cfg.training.epochs = 2;
    cfg.folds = vec![1, 2];
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();

    let cache = dir.path().join("cache");
    let manifest = audio.join("meta.csv");
    let o = ssrp(&["features", "extract", p(&audio), p(&manifest), p(&cache), "--config", p(&cfg_path)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("10 extracted"));

    let result = dir.path().join("r.json");
    let curves = dir.path().join("curves.csv");
    let o = ssrp(&[
        "run", "--pipeline", "ssrp-t", "--K", "2", "--config", p(&cfg_path), "--audio-dir", p(&audio),
        "--manifest", p(&manifest), "--cache-dir", p(&cache), "-o", p(&result), "--curves", p(&curves),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = ssrp_core::RunResult::load(&result).unwrap();
    assert_eq!(r.folds.len(), 2);
    assert_eq!(std::fs::read_to_string(&curves).unwrap().lines().count(), 1 + 2 * 2);
    assert!(curves.with_extension("svg").is_file());

    let stem = dir.path().join("cmp");
    let o = ssrp(&["report", p(&result), "-o", p(&stem)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("SSRP-T"));
    assert!(stem.with_extension("csv").is_file());
}

#[test]
fn sweep_and_pca_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = ssrp_core::RunConfig::desk(ssrp_core::PipelineSpec::BaselineGap);
    base.training.epochs = 1;
    base.folds = vec![1];
    let grid = ssrp_core::SweepGrid {
        base,
        standard_grid: false,
        pipelines: vec![
            ssrp_core::PipelineSpec::SsrpB { window: 2 },
            ssrp_core::PipelineSpec::SsrpT { top_k: 999 },
        ],
    };
    let grid_path = dir.path().join("grid.toml");
    std::fs::write(&grid_path, toml::to_string(&grid).unwrap()).unwrap();
    let table = dir.path().join("table.csv");
    let results = dir.path().join("results");
    let o = ssrp(&["sweep", "--grid", p(&grid_path), "--synthetic", "-o", p(&table), "--results-dir", p(&results)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model,hyper,mean_accuracy,params,status");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].contains("error"));
    assert_eq!(std::fs::read_dir(&results).unwrap().count(), 1);

    let stem = dir.path().join("pca");
    let o = ssrp(&["pca", "fit", "--synthetic", "--variance", "0.9", "-o", p(&stem)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stem.with_extension("pcam").is_file());
    let curve = dir.path().join("curve.csv");
    assert_eq!(code(&ssrp(&["pca", "curve", "--synthetic", "-o", p(&curve)])), 0);
    let last = std::fs::read_to_string(&curve).unwrap().lines().last().unwrap().to_string();
    assert!(last.ends_with(",1"), "{last}");
}
