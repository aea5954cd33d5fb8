use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{PipelineSpec, RunConfig};
use super::dataset::FeatureDataset;
use super::manifest::{make_folds, FoldSplit};
use crate::error::{Error, Result};
use crate::network::{accuracy, count_params, init_params, train, LabelledSet, TrainState};
use crate::pca::{reshape_for_cnn, EigenRoute, PcaModel};
use crate::tensor::{FeatureMap, Tensor4};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: u8,
    /// Validation accuracy after the last epoch (of the untrained model when no epochs ran).
    pub accuracy: f64,
    /// Validation accuracy after every epoch.
    pub trajectory: Vec<f64>,
    pub losses: Vec<f64>,
    pub final_train_accuracy: Option<f64>,
    pub param_count: usize,
    /// Components kept by the PCA pipeline.
    pub pca_components: Option<usize>,
    pub train_size: usize,
    pub validation_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: String,
    pub hyper: String,
    pub pipeline: PipelineSpec,
    /// In the order requested by the config.
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Trainable parameters of the first fold's network.
    pub param_count: usize,
    pub conv_layers: usize,
    pub n_classes: usize,
    /// `(time, freq)` of the network input of the first fold.
    pub input_shape: (usize, usize),
    pub wall_clock_secs: f64,
    pub config: RunConfig,
}

impl RunResult {
    /// Equality on everything except wall-clock time.
    pub fn same_outcome(&self, other: &RunResult) -> bool {
        let mut a = self.clone();
        a.wall_clock_secs = other.wall_clock_secs;
        &a == other
    }

    pub fn fold(&self, id: u8) -> Option<&FoldResult> {
        self.folds.iter().find(|f| f.fold == id)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        serde_json::from_reader(r).map_err(|e| Error::Schema(format!("run result: {e}")))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_json(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_json(std::io::BufReader::new(file))
    }
}

/// Standardizer + PCA fitted on the training split, or on every clip when
/// `cfg.pca_fit_all_data` is set.
pub fn fit_fold_pca(cfg: &RunConfig, data: &FeatureDataset, split: &FoldSplit, variance: f64) -> Result<PcaModel> {
    let rows = if cfg.pca_fit_all_data {
        (0..data.len()).collect()
    } else {
        split.train.clone()
    };
    PcaModel::fit(&data.pca_matrix(&rows)?, variance, EigenRoute::Auto)
}

fn pca_inputs(model: &PcaModel, data: &FeatureDataset, indices: &[usize]) -> Result<Tensor4> {
    let z = model.transform(&data.pca_matrix(indices)?)?;
    let maps = (0..z.rows()).map(|i| reshape_for_cnn(z.row(i))).collect::<Result<Vec<FeatureMap>>>()?;
    Tensor4::from_maps(&maps)
}

fn run_fold(cfg: &RunConfig, data: &FeatureDataset, fold: u8) -> Result<FoldResult> {
    let split = make_folds(&data.manifest, fold)?;
    let n_classes = data.manifest.n_classes();
    let (train_x, val_x, pca_components) = match cfg.pipeline {
        PipelineSpec::PcaCnn { variance } => {
            let model = fit_fold_pca(cfg, data, &split, variance)?;
            let k = model.k();
            (pca_inputs(&model, data, &split.train)?, pca_inputs(&model, data, &split.validation)?, Some(k))
        }
        _ => (data.cnn_inputs(&split.train)?, data.cnn_inputs(&split.validation)?, None),
    };
    let net = cfg.network_for(train_x.t, train_x.f, n_classes);
    let train_set = LabelledSet::new(train_x, data.labels(&split.train), n_classes)?;
    let val_set = LabelledSet::new(val_x, data.labels(&split.validation), n_classes)?;
    let seed = cfg.fold_seed(fold);
    let mut state = TrainState::new(init_params(&net, seed)?, seed);
    let history = train(&mut state, &cfg.training, &train_set, Some(&val_set))?;
    let trajectory = history.validation_trajectory();
    let accuracy = match trajectory.last() {
        Some(&a) => a,
        None => accuracy(&state.params, &val_set, cfg.training.batch_size)?,
    };
    log::info!("{} {} fold {fold}: accuracy {accuracy:.4}", cfg.pipeline.model_label(), cfg.pipeline.hyper_label());
    Ok(FoldResult {
        fold,
        accuracy,
        trajectory,
        losses: history.epochs.iter().map(|e| e.loss).collect(),
        final_train_accuracy: history.final_train_accuracy(),
        param_count: count_params(&net).total,
        pca_components,
        train_size: split.train.len(),
        validation_size: split.validation.len(),
    })
}

/// Trains and scores one model per requested fold. Fold `f` uses seed `seed + f`.
pub fn run_pipeline(cfg: &RunConfig, data: &FeatureDataset) -> Result<RunResult> {
    cfg.validate()?;
    if data.features.extraction_digest() != cfg.features.extraction_digest()
        || data.features.cnn_frames != cfg.features.cnn_frames
        || data.features.pca_frames != cfg.features.pca_frames
    {
        return Err(Error::InvalidParameter(
            "dataset features were extracted with different settings than the run config".into(),
        ));
    }
    let start = Instant::now();
    let folds: Vec<FoldResult> = if cfg.parallel_folds {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg.folds.iter().map(|&f| s.spawn(move || run_fold(cfg, data, f))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fold thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        cfg.folds.iter().map(|&f| run_fold(cfg, data, f)).collect::<Result<Vec<_>>>()?
    };
    let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len() as f64;
    let first = &folds[0];
    let input_shape = match first.pca_components {
        Some(k) => (k, 1),
        None => (cfg.features.cnn_frames, data.n_mels()),
    };
    Ok(RunResult {
        model: cfg.pipeline.model_label().to_string(),
        hyper: cfg.pipeline.hyper_label(),
        pipeline: cfg.pipeline.clone(),
        param_count: first.param_count,
        conv_layers: cfg.network.conv_filters.len(),
        n_classes: data.manifest.n_classes(),
        input_shape,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
        mean_accuracy,
        folds,
    })
}

/// One line of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub hyper: String,
    pub mean_accuracy: Option<f64>,
    pub params: Option<usize>,
    /// `ok`, or the error that stopped the run.
    pub status: String,
}

/// Runs every config in order; a failing run becomes an error row and the
/// sweep continues.
pub fn sweep(cfgs: &[RunConfig], data: &FeatureDataset) -> Result<(Vec<SweepRow>, Vec<RunResult>)> {
    if cfgs.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one config".into()));
    }
    let mut rows = Vec::with_capacity(cfgs.len());
    let mut results = Vec::new();
    for cfg in cfgs {
        let (model, hyper) = (cfg.pipeline.model_label().to_string(), cfg.pipeline.hyper_label());
        match run_pipeline(cfg, data) {
            Ok(r) => {
                rows.push(SweepRow {
                    model,
                    hyper,
                    mean_accuracy: Some(r.mean_accuracy),
                    params: Some(r.param_count),
                    status: "ok".into(),
                });
                results.push(r);
            }
            Err(e) => {
                log::warn!("sweep: {model} {hyper} failed: {e}");
                rows.push(SweepRow {
                    model,
                    hyper,
                    mean_accuracy: None,
                    params: None,
                    status: format!("error: {e}"),
                });
            }
        }
    }
    Ok((rows, results))
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Serialization(e.to_string()))?;
    }
    wr.flush().map_err(|e| Error::Serialization(e.to_string()))
}

pub fn read_sweep_csv<R: Read>(r: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .map_err(|e| Error::Schema(format!("sweep table: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::FeatureConfig;
    use crate::experiment::synth::{synthesize_dataset, SyntheticSpec};
    use crate::features::LogMelSpectrogram;

    fn tiny_data() -> FeatureDataset {
        let spec = SyntheticSpec {
            n_classes: 2,
            clips_per_class: 5,
            duration_secs: 0.25,
            ..SyntheticSpec::default()
        };
        FeatureDataset::from_synthetic(&synthesize_dataset(&spec).unwrap(), &FeatureConfig::for_duration(0.25)).unwrap()
    }

    fn tiny_cfg(pipeline: PipelineSpec, epochs: usize) -> RunConfig {
        let mut c = RunConfig::desk(pipeline);
        c.features = FeatureConfig::for_duration(0.25);
        c.network.conv_filters = vec![2, 2, 2];
        c.network.dense_units = 4;
        c.training.epochs = epochs;
        c.folds = vec![1, 2];
        c
    }

    #[test]
    fn zero_epochs_give_untrained_accuracy_and_empty_trajectory() {
        let data = tiny_data();
        let r = run_pipeline(&tiny_cfg(PipelineSpec::SsrpT { top_k: 2 }, 0), &data).unwrap();
        assert_eq!(r.folds.len(), 2);
        for f in &r.folds {
            assert!(f.trajectory.is_empty());
            assert!((0.0..=1.0).contains(&f.accuracy));
            assert_eq!(f.validation_size, 2);
        }
    }

    #[test]
    fn trajectory_length_equals_epochs() {
        let data = tiny_data();
        let r = run_pipeline(&tiny_cfg(PipelineSpec::PcaCnn { variance: 0.95 }, 3), &data).unwrap();
        for f in &r.folds {
            assert_eq!(f.trajectory.len(), 3);
            assert_eq!(f.accuracy, f.trajectory[2]);
            assert!(f.pca_components.unwrap() >= 1);
        }
        assert_eq!(r.input_shape, (r.folds[0].pca_components.unwrap(), 1));
    }

    #[test]
    fn parallel_folds_match_sequential() {
        let data = tiny_data();
        let mut cfg = tiny_cfg(PipelineSpec::SsrpB { window: 2 }, 2);
        let a = run_pipeline(&cfg, &data).unwrap();
        cfg.parallel_folds = true;
        let mut b = run_pipeline(&cfg, &data).unwrap();
        b.config.parallel_folds = false;
        assert!(a.same_outcome(&b));
    }

    #[test]
    fn sweep_records_failures_and_keeps_order() {
        let data = tiny_data();
        let cfgs = vec![
            tiny_cfg(PipelineSpec::SsrpT { top_k: 2 }, 1),
            tiny_cfg(PipelineSpec::SsrpT { top_k: 500 }, 1),
            tiny_cfg(PipelineSpec::BaselineGap, 1),
        ];
        let (rows, results) = sweep(&cfgs, &data).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(results.len(), 2);
        assert_eq!(rows[0].hyper, "K=2");
        assert!(rows[1].status.starts_with("error"));
        assert_eq!(rows[2].model, "CNN (baseline, GAP)");
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let back = read_sweep_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let mut again = Vec::new();
        write_sweep_csv(&back, &mut again).unwrap();
        assert_eq!(again, buf);
        assert!(sweep(&[], &data).is_err());
    }

    #[test]
    fn result_json_round_trip() {
        let data = tiny_data();
        let r = run_pipeline(&tiny_cfg(PipelineSpec::BaselineGap, 1), &data).unwrap();
        let mut buf = Vec::new();
        r.write_json(&mut buf).unwrap();
        assert_eq!(RunResult::read_json(buf.as_slice()).unwrap(), r);
    }

    #[test]
    fn pca_fit_ignores_validation_clips_unless_asked() {
        let mut data = tiny_data();
        let mut cfg = tiny_cfg(PipelineSpec::PcaCnn { variance: 0.9 }, 0);
        let split = make_folds(&data.manifest, 1).unwrap();
        let before = fit_fold_pca(&cfg, &data, &split, 0.9).unwrap();
        cfg.pca_fit_all_data = true;
        let leaky_before = fit_fold_pca(&cfg, &data, &split, 0.9).unwrap();
        let v = split.validation[0];
        let shifted = data.spectrograms[v].values().iter().enumerate().map(|(i, x)| x + (i % 7) as f64).collect();
        data.spectrograms[v] = LogMelSpectrogram::new(shifted, data.spectrograms[v].n_frames(), data.n_mels()).unwrap();
        assert_ne!(fit_fold_pca(&cfg, &data, &split, 0.9).unwrap(), leaky_before);
        cfg.pca_fit_all_data = false;
        assert_eq!(fit_fold_pca(&cfg, &data, &split, 0.9).unwrap(), before);
    }

    #[test]
    fn mismatched_feature_settings_rejected() {
        let data = tiny_data();
        let cfg = RunConfig::desk(PipelineSpec::BaselineGap);
        assert!(matches!(run_pipeline(&cfg, &data), Err(Error::InvalidParameter(_))));
    }
}
