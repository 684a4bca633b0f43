//! Experiment orchestration: configuration, the synthetic/real data path,
//! the train-embed-score-evaluate pipeline, per-phase timing, and report
//! emission. One experiment runs per output directory at a time (lock
//! file); everything is seeded and reproducible apart from the timings.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cae::{build_cae, train_cae, CaeModel, CaeSpec, Precision, TrainConfig};
use crate::data::cache::load_dataset;
use crate::data::catalog::{Catalog, ColumnAliases};
use crate::data::subset::{build_subset, split, ImageSource, LabeledDataset, SubsetSpec};
use crate::data::synth::DEFAULT_NOISE_SIGMA;
use crate::error::{Error, Result};
use crate::knn::{knn_scores, KnnConfig, PointSet, ScoreMode};
use crate::metrics::{fraction_sweep, MetricReport, RocCurve};
use crate::model_io::save_model_any;
use crate::seeding::derive_seed;
use crate::tensor::{ImageTensor, Real};

/// Detection method under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// k-NN directly on flattened test pixels; no training phase.
    KnnRaw,
    /// k-NN on plain autoencoder embeddings.
    CaeKnn,
    /// k-NN on attention-augmented autoencoder embeddings.
    AttcaeKnn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::KnnRaw => "knn_raw",
            Method::CaeKnn => "cae_knn",
            Method::AttcaeKnn => "attcae_knn",
        }
    }

    pub fn is_trained(self) -> bool {
        !matches!(self, Method::KnnRaw)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn_raw" => Ok(Method::KnnRaw),
            "cae_knn" => Ok(Method::CaeKnn),
            "attcae_knn" => Ok(Method::AttcaeKnn),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (knn_raw, cae_knn, attcae_knn)"
            ))),
        }
    }
}

/// Which dataset the experiment runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetChoice {
    /// One of the five published compositions, built from real images.
    Subset(u8),
    /// The synthetic analog (scaled composition, procedural renders).
    Synthetic,
}

impl SubsetChoice {
    pub fn name(self) -> String {
        match self {
            SubsetChoice::Subset(n) => format!("subset{n}"),
            SubsetChoice::Synthetic => "synthetic".into(),
        }
    }
}

impl std::str::FromStr for SubsetChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "synthetic" {
            return Ok(SubsetChoice::Synthetic);
        }
        if let Some(n) = s.strip_prefix("subset").and_then(|d| d.parse::<u8>().ok()) {
            if (1..=5).contains(&n) {
                return Ok(SubsetChoice::Subset(n));
            }
        }
        Err(Error::Config(format!(
            "unknown subset `{s}` (subset1..subset5, synthetic)"
        )))
    }
}

impl Serialize for SubsetChoice {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for SubsetChoice {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where the images come from and how the synthetic analog is sized.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Pre-built dataset cache; skips assembly when set.
    pub cache: Option<PathBuf>,
    /// Truth-table CSV (real subsets).
    pub catalog: Option<PathBuf>,
    /// Directory of `<galaxy_id>.jpg` images (real subsets).
    pub image_dir: Option<PathBuf>,
    /// Scale applied to the published subset counts for synthetic runs.
    pub synthetic_scale: f64,
    /// Pixel noise sigma for synthetic renders.
    pub noise_sigma: f32,
    /// Column aliases for the catalog header.
    pub aliases: ColumnAliases,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            cache: None,
            catalog: None,
            image_dir: None,
            synthetic_scale: 0.1,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            aliases: ColumnAliases::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnSettings {
    pub k: usize,
    pub score_mode: String,
}

impl Default for KnnSettings {
    fn default() -> Self {
        Self { k: 5, score_mode: "kth_distance".into() }
    }
}

impl KnnSettings {
    pub fn to_config(&self) -> Result<KnnConfig> {
        let score_mode = match self.score_mode.as_str() {
            "kth_distance" => ScoreMode::KthDistance,
            "mean_k_distance" => ScoreMode::MeanKDistance,
            other => {
                return Err(Error::Config(format!(
                    "unknown score mode `{other}` (kth_distance, mean_k_distance)"
                )))
            }
        };
        if self.k == 0 {
            return Err(Error::Config("knn k must be >= 1".into()));
        }
        Ok(KnnConfig { k: self.k, score_mode })
    }
}

/// Full experiment configuration (TOML-loadable).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub subset: SubsetChoice,
    pub seed: u64,
    pub fractions: Vec<f64>,
    pub embedding_dim: usize,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub knn: KnnSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::AttcaeKnn,
            subset: SubsetChoice::Synthetic,
            seed: 0,
            fractions: vec![0.10],
            embedding_dim: 20,
            out_dir: PathBuf::from("runs/out"),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            knn: KnnSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("config {}: {e}", path.display())))
    }

    pub fn cae_spec(&self) -> CaeSpec {
        CaeSpec {
            embedding_dim: self.embedding_dim,
            use_attention: self.method == Method::AttcaeKnn,
            ..CaeSpec::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub prepare: f64,
    pub train: f64,
    pub score: f64,
    pub evaluate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunCounts {
    pub total: usize,
    pub train: usize,
    pub test: usize,
    pub test_outliers: usize,
}

/// Everything one run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub method: Method,
    pub subset: String,
    pub seed: u64,
    pub embedding_dim: usize,
    pub counts: RunCounts,
    pub metrics: Vec<(f64, MetricReport)>,
    pub loss_history: Vec<f64>,
    pub timings: PhaseTimings,
    pub artifacts: Vec<(String, PathBuf)>,
    pub config_echo: Vec<(String, String)>,
}

/// Exclusive ownership of an output directory while a run is active.
pub struct OutDirLock {
    path: PathBuf,
}

impl OutDirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory {} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Assemble or load the dataset named by the config.
pub fn prepare_dataset(config: &ExperimentConfig) -> Result<LabeledDataset> {
    if let Some(cache) = &config.data.cache {
        return Ok(load_dataset(cache)?.dataset);
    }
    match config.subset {
        SubsetChoice::Synthetic => {
            let spec = SubsetSpec::subset(1)?.scaled(config.data.synthetic_scale);
            build_subset(
                &ImageSource::Synthetic { noise_sigma: config.data.noise_sigma },
                &spec,
                derive_seed(config.seed, 0xDA7A),
            )
        }
        SubsetChoice::Subset(n) => {
            let catalog_path = config.data.catalog.as_ref().ok_or_else(|| {
                Error::Config("real subsets need data.catalog pointing at the truth-table CSV".into())
            })?;
            let image_dir = config.data.image_dir.as_ref().ok_or_else(|| {
                Error::Config("real subsets need data.image_dir pointing at the image directory".into())
            })?;
            let catalog = Catalog::from_path(catalog_path)?;
            let spec = SubsetSpec::subset(n)?;
            build_subset(
                &ImageSource::Directory {
                    catalog: &catalog,
                    aliases: &config.data.aliases,
                    image_dir,
                },
                &spec,
                derive_seed(config.seed, 0xDA7A),
            )
        }
    }
}

fn score_with_model<T: Real>(
    spec: &CaeSpec,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    config: &ExperimentConfig,
    knn: &KnnConfig,
    model_path: &Path,
) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
    let train_start = Instant::now();
    let mut model: CaeModel<T> = build_cae(spec, derive_seed(config.seed, 0x0DE1))?;
    let train_images: ImageTensor<T> = train_set.images.cast();
    let mut train_cfg = config.train;
    train_cfg.seed = derive_seed(config.seed, 0x7361);
    let history = train_cae(&mut model, &train_images, &train_cfg)?;
    let train_seconds = train_start.elapsed().as_secs_f64();
    save_model_any(&model, model_path)?;

    let score_start = Instant::now();
    let test_images: ImageTensor<T> = test_set.images.cast();
    let embeddings = model.encode(&test_images)?;
    let rows: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect();
    let scores = knn_scores(&PointSet::from_rows(&rows)?, knn)?;
    let score_seconds = score_start.elapsed().as_secs_f64();
    Ok((scores, history.per_epoch, train_seconds, score_seconds))
}

/// The full pipeline: prepare -> split 7:3 -> (train ->) score -> evaluate
/// at every fraction -> persist scores, ROC, model and report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let _lock = OutDirLock::acquire(&config.out_dir)?;
    let knn = config.knn.to_config()?;
    if config.fractions.is_empty() {
        return Err(Error::Config("at least one fraction is required".into()));
    }

    let prepare_start = Instant::now();
    let dataset = prepare_dataset(config)?;
    let (train_set, test_set) = split(&dataset, 0.7, derive_seed(config.seed, 0x59117))?;
    let prepare_seconds = prepare_start.elapsed().as_secs_f64();

    let model_path = config.out_dir.join("model.cae");
    let (scores, loss_history, train_seconds, score_seconds) = match config.method {
        Method::KnnRaw => {
            let score_start = Instant::now();
            let (n, h, w, c) = test_set.images.dims();
            let flat: Vec<f64> = test_set.images.data().iter().map(|&v| v as f64).collect();
            let points = PointSet::new(n, h * w * c, flat)?;
            let scores = knn_scores(&points, &knn)?;
            (scores, Vec::new(), 0.0, score_start.elapsed().as_secs_f64())
        }
        Method::CaeKnn | Method::AttcaeKnn => {
            let spec = config.cae_spec();
            match config.train.precision {
                Precision::F32 => score_with_model::<f32>(&spec, &train_set, &test_set, config, &knn, &model_path)?,
                Precision::F64 => score_with_model::<f64>(&spec, &train_set, &test_set, config, &knn, &model_path)?,
            }
        }
    };

    let evaluate_start = Instant::now();
    let mut metrics = fraction_sweep(&scores, &test_set.labels, &config.fractions)?;
    for (_, report) in metrics.iter_mut() {
        report.wall_time = score_seconds;
    }
    let curve = crate::metrics::roc_auc(&scores, &test_set.labels)?;
    let evaluate_seconds = evaluate_start.elapsed().as_secs_f64();

    let scores_path = config.out_dir.join("scores.csv");
    write_scores(&scores_path, &test_set.ids, &scores)?;
    let roc_path = config.out_dir.join("roc.csv");
    write_roc(&roc_path, &curve)?;

    let mut artifacts = vec![
        ("scores".to_string(), scores_path),
        ("roc".to_string(), roc_path),
    ];
    if config.method.is_trained() {
        artifacts.push(("model".to_string(), model_path));
    }

    let report = RunReport {
        method: config.method,
        subset: config.subset.name(),
        seed: config.seed,
        embedding_dim: config.embedding_dim,
        counts: RunCounts {
            total: dataset.len(),
            train: train_set.len(),
            test: test_set.len(),
            test_outliers: test_set.outlier_count(),
        },
        metrics,
        loss_history,
        timings: PhaseTimings {
            prepare: prepare_seconds,
            train: train_seconds,
            score: score_seconds,
            evaluate: evaluate_seconds,
        },
        artifacts,
        config_echo: config_echo(config),
    };
    let report_path = config.out_dir.join("report.txt");
    emit_report(&report, &report_path)?;
    Ok(report)
}

fn config_echo(config: &ExperimentConfig) -> Vec<(String, String)> {
    vec![
        ("method".into(), config.method.name().into()),
        ("subset".into(), config.subset.name()),
        ("seed".into(), config.seed.to_string()),
        ("embedding_dim".into(), config.embedding_dim.to_string()),
        ("epochs".into(), config.train.epochs.to_string()),
        ("batch_size".into(), config.train.batch_size.to_string()),
        ("learning_rate".into(), config.train.learning_rate.to_string()),
        ("knn_k".into(), config.knn.k.to_string()),
        ("knn_score_mode".into(), config.knn.score_mode.clone()),
        (
            "fractions".into(),
            config.fractions.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        ),
        ("synthetic_scale".into(), config.data.synthetic_scale.to_string()),
        ("noise_sigma".into(), config.data.noise_sigma.to_string()),
    ]
}

/// Write the structured key-value report. Field order is fixed so two runs
/// of the same config differ only in the trailing timing section.
pub fn emit_report(report: &RunReport, path: &Path) -> Result<()> {
    for (role, artifact) in &report.artifacts {
        if !artifact.exists() {
            return Err(Error::State(format!(
                "report references missing {role} artifact {}",
                artifact.display()
            )));
        }
    }
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "format = outlier-run/1")?;
    for (k, v) in &report.config_echo {
        writeln!(out, "{k} = {v}")?;
    }
    writeln!(out, "samples_total = {}", report.counts.total)?;
    writeln!(out, "samples_train = {}", report.counts.train)?;
    writeln!(out, "samples_test = {}", report.counts.test)?;
    writeln!(out, "test_outliers = {}", report.counts.test_outliers)?;
    writeln!(
        out,
        "loss_history = {}",
        report.loss_history.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
    )?;
    for (role, artifact) in &report.artifacts {
        writeln!(out, "artifact_{role} = {}", artifact.display())?;
    }
    for (fraction, m) in &report.metrics {
        writeln!(out, "[metrics fraction={fraction}]")?;
        writeln!(out, "auc = {}", m.auc)?;
        writeln!(out, "recall = {}", m.recall)?;
        writeln!(out, "precision = {}", m.precision)?;
        writeln!(out, "f1 = {}", m.f1)?;
        writeln!(out, "accuracy = {}", m.accuracy)?;
        writeln!(out, "score_wall_time = {:.3}", m.wall_time)?;
    }
    writeln!(out, "[timings]")?;
    writeln!(out, "prepare_seconds = {:.3}", report.timings.prepare)?;
    writeln!(out, "train_seconds = {:.3}", report.timings.train)?;
    writeln!(out, "score_seconds = {:.3}", report.timings.score)?;
    writeln!(out, "evaluate_seconds = {:.3}", report.timings.evaluate)?;
    out.flush()?;
    Ok(())
}

/// Two-column delimited scores: sample_id, score.
pub fn write_scores(path: &Path, ids: &[String], scores: &[f64]) -> Result<()> {
    if ids.len() != scores.len() {
        return Err(Error::Shape("scores/ids length mismatch".into()));
    }
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "sample_id,score")?;
    for (id, score) in ids.iter().zip(scores) {
        writeln!(out, "{id},{score}")?;
    }
    out.flush()?;
    Ok(())
}

/// Two-column delimited ROC points: fpr, tpr.
pub fn write_roc(path: &Path, curve: &RocCurve) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "fpr,tpr")?;
    for (fpr, tpr) in &curve.points {
        writeln!(out, "{fpr},{tpr}")?;
    }
    out.flush()?;
    Ok(())
}

/// Re-read an emitted ROC file.
pub fn read_roc_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "fpr,tpr" {
                return Err(Error::Parse(format!("bad ROC header `{line}`")));
            }
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("bad ROC line `{line}`")))?;
        let fpr: f64 = a.parse().map_err(|e| Error::Parse(format!("bad fpr `{a}`: {e}")))?;
        let tpr: f64 = b.parse().map_err(|e| Error::Parse(format!("bad tpr `{b}`: {e}")))?;
        points.push((fpr, tpr));
    }
    Ok(points)
}

/// Trapezoidal area under explicit points (for re-integrating ROC files).
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    for pair in points.windows(2) {
        area += (pair[1].0 - pair[0].0) * (pair[0].1 + pair[1].1) / 2.0;
    }
    area
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} on {} (seed {}): {} test samples, {} outliers",
            self.method.name(),
            self.subset,
            self.seed,
            self.counts.test,
            self.counts.test_outliers
        )?;
        for (fraction, m) in &self.metrics {
            writeln!(
                f,
                "  fraction {:>5.2}: auc {:.4} recall {:.4} precision {:.4} f1 {:.4} acc {:.4}",
                fraction, m.auc, m.recall, m.precision, m.f1, m.accuracy
            )?;
        }
        write!(
            f,
            "  phases: prepare {:.2}s train {:.2}s score {:.2}s evaluate {:.2}s",
            self.timings.prepare, self.timings.train, self.timings.score, self.timings.evaluate
        )
    }
}
