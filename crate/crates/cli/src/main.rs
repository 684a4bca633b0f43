//! Command-line driver: dataset preparation (real or synthetic), training,
//! scoring, evaluation, the full experiment pipeline, and the
//! embedding-dimension sweep.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use galaxy_outliers::cae::{build_cae, sweep_embedding_dim, train_cae, CaeModel, CaeSpec, TrainConfig};
use galaxy_outliers::data::cache::{load_dataset, save_dataset, DatasetCache};
use galaxy_outliers::data::catalog::{Catalog, ColumnAliases};
use galaxy_outliers::data::subset::{build_subset, split, ImageSource, LabeledDataset, SubsetSpec};
use galaxy_outliers::data::synth::DEFAULT_NOISE_SIGMA;
use galaxy_outliers::error::{Error, Result};
use galaxy_outliers::experiment::{
    run_experiment, write_roc, write_scores, ExperimentConfig, KnnSettings, Method, SubsetChoice,
};
use galaxy_outliers::knn::{knn_scores, KnnConfig, PointSet, ScoreMode};
use galaxy_outliers::metrics::{fraction_sweep, roc_auc};
use galaxy_outliers::model_io::{load_model, save_model};
use galaxy_outliers::seeding::derive_seed;

#[derive(Parser)]
#[command(name = "galaxy-outliers", about = "Unsupervised outlier detection on galaxy images", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SplitArgs {
    /// Train fraction of the stratified split.
    #[arg(long, default_value_t = 0.7)]
    split: f64,
    /// Use the whole dataset instead of splitting.
    #[arg(long)]
    no_split: bool,
}

impl SplitArgs {
    /// (train, test) halves, or the whole set twice when --no-split.
    fn apply(&self, dataset: &LabeledDataset, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        if self.no_split {
            Ok((dataset.clone(), dataset.clone()))
        } else {
            split(dataset, self.split, derive_seed(seed, 0x59117))
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a truth-table catalog plus an image directory into a dataset cache.
    Prepare {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// subset1..subset5
        #[arg(long)]
        subset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset cache.
    Synth {
        /// subset1..subset5 composition to scale down.
        #[arg(long, default_value = "subset1")]
        subset: String,
        /// Scale applied to the published counts.
        #[arg(long, default_value_t = 0.1)]
        scale: f64,
        /// Pixel noise sigma.
        #[arg(long, default_value_t = DEFAULT_NOISE_SIGMA)]
        noise: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an autoencoder on the training half of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Insert CBAM blocks into the encoder.
        #[arg(long)]
        attention: bool,
        #[arg(long, default_value_t = 20)]
        embedding_dim: usize,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        split: SplitArgs,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test half of a dataset with k-NN distances.
    Score {
        #[arg(long)]
        data: PathBuf,
        /// Trained model; omit with --raw to score flattened pixels.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Score raw pixels instead of embeddings.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// kth_distance or mean_k_distance.
        #[arg(long, default_value = "kth_distance")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        split: SplitArgs,
        /// Output scores CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a scores file against dataset labels.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Outlier fractions, comma separated.
        #[arg(long, default_value = "0.10", value_delimiter = ',')]
        fractions: Vec<f64>,
        /// Output directory for report.txt and roc.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline: prepare, split, train, score, evaluate, persist.
    Experiment {
        /// TOML config file; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        subset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embedding-dimension study: mean/std AUC per dimension.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// Dimensions to try, comma separated.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long)]
        attention: bool,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Output CSV (dim, mean_auc, std_auc).
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(mode: &str) -> Result<ScoreMode> {
    match mode {
        "kth_distance" => Ok(ScoreMode::KthDistance),
        "mean_k_distance" => Ok(ScoreMode::MeanKDistance),
        other => Err(Error::Config(format!("unknown score mode `{other}`"))),
    }
}

fn read_scores_csv(path: &PathBuf) -> Result<Vec<(String, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "sample_id,score" {
                return Err(Error::Parse(format!("bad scores header `{line}`")));
            }
            continue;
        }
        let (id, score) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("bad scores line `{line}`")))?;
        let score: f64 = score
            .parse()
            .map_err(|e| Error::Parse(format!("bad score `{score}`: {e}")))?;
        out.push((id.to_string(), score));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { catalog, images, subset, seed, out } => {
            let choice: SubsetChoice = subset.parse()?;
            let n = match choice {
                SubsetChoice::Subset(n) => n,
                SubsetChoice::Synthetic => {
                    return Err(Error::Config("prepare works on real subsets; use `synth` for synthetic data".into()))
                }
            };
            let catalog = Catalog::from_path(&catalog)?;
            let spec = SubsetSpec::subset(n)?;
            let aliases = ColumnAliases::default();
            let dataset = build_subset(
                &ImageSource::Directory { catalog: &catalog, aliases: &aliases, image_dir: &images },
                &spec,
                derive_seed(seed, 0xDA7A),
            )?;
            let provenance = format!("real {subset} from catalog");
            save_dataset(&DatasetCache { dataset, seed, provenance }, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Synth { subset, scale, noise, seed, out } => {
            let choice: SubsetChoice = subset.parse()?;
            let n = match choice {
                SubsetChoice::Subset(n) => n,
                SubsetChoice::Synthetic => 1,
            };
            let spec = SubsetSpec::subset(n)?.scaled(scale);
            let dataset = build_subset(&ImageSource::Synthetic { noise_sigma: noise }, &spec, derive_seed(seed, 0xDA7A))?;
            let provenance = format!("synthetic {subset} scale={scale} noise={noise}");
            println!(
                "built {} samples ({} outliers)",
                dataset.len(),
                dataset.outlier_count()
            );
            save_dataset(&DatasetCache { dataset, seed, provenance }, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Train {
            data,
            attention,
            embedding_dim,
            epochs,
            batch_size,
            learning_rate,
            seed,
            split,
            out,
        } => {
            let dataset = load_dataset(&data)?.dataset;
            let (train_set, _) = split.apply(&dataset, seed)?;
            let spec = CaeSpec {
                embedding_dim,
                use_attention: attention,
                ..CaeSpec::default()
            };
            let mut model: CaeModel<f32> = build_cae(&spec, derive_seed(seed, 0x0DE1))?;
            let config = TrainConfig {
                batch_size,
                epochs,
                learning_rate,
                seed: derive_seed(seed, 0x7361),
                ..TrainConfig::default()
            };
            let history = train_cae(&mut model, &train_set.images, &config)?;
            if let (Some(first), Some(last)) = (history.per_epoch.first(), history.per_epoch.last()) {
                println!("trained {} epochs on {} images: loss {first:.4} -> {last:.4}", epochs, train_set.len());
            }
            save_model(&model, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Score { data, model, raw, k, mode, seed, split, out } => {
            let dataset = load_dataset(&data)?.dataset;
            let (_, test_set) = split.apply(&dataset, seed)?;
            let config = KnnConfig { k, score_mode: parse_mode(&mode)? };
            let scores = if raw {
                let (n, h, w, c) = test_set.images.dims();
                let flat: Vec<f64> = test_set.images.data().iter().map(|&v| v as f64).collect();
                knn_scores(&PointSet::new(n, h * w * c, flat)?, &config)?
            } else {
                let model_path = model.ok_or_else(|| Error::Config("score needs --model or --raw".into()))?;
                let model = load_model(&model_path)?;
                let embeddings = model.encode(&test_set.images)?;
                let rows: Vec<Vec<f64>> = embeddings
                    .iter()
                    .map(|r| r.iter().map(|&v| v as f64).collect())
                    .collect();
                knn_scores(&PointSet::from_rows(&rows)?, &config)?
            };
            write_scores(&out, &test_set.ids, &scores)?;
            println!("wrote {} scores to {}", scores.len(), out.display());
            Ok(())
        }
        Command::Evaluate { scores, data, fractions, out } => {
            let dataset = load_dataset(&data)?.dataset;
            let rows = read_scores_csv(&scores)?;
            let mut truth = Vec::with_capacity(rows.len());
            let mut values = Vec::with_capacity(rows.len());
            for (id, score) in &rows {
                let idx = dataset
                    .ids
                    .iter()
                    .position(|d| d == id)
                    .ok_or_else(|| Error::Data(format!("scored sample `{id}` not in dataset")))?;
                truth.push(dataset.labels[idx]);
                values.push(*score);
            }
            std::fs::create_dir_all(&out)?;
            let metrics = fraction_sweep(&values, &truth, &fractions)?;
            let curve = roc_auc(&values, &truth)?;
            write_roc(&out.join("roc.csv"), &curve)?;
            let mut report = String::from("format = outlier-eval/1\n");
            for (fraction, m) in &metrics {
                report.push_str(&format!(
                    "[metrics fraction={fraction}]\nauc = {}\nrecall = {}\nprecision = {}\nf1 = {}\naccuracy = {}\n",
                    m.auc, m.recall, m.precision, m.f1, m.accuracy
                ));
                println!(
                    "fraction {fraction}: auc {:.4} recall {:.4} precision {:.4} f1 {:.4} acc {:.4}",
                    m.auc, m.recall, m.precision, m.f1, m.accuracy
                );
            }
            std::fs::write(out.join("report.txt"), report)?;
            println!("wrote {}", out.join("report.txt").display());
            Ok(())
        }
        Command::Experiment { config, method, subset, seed, fractions, epochs, out } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::from_toml_path(&path)?,
                None => ExperimentConfig::default(),
            };
            if let Some(m) = method {
                cfg.method = m.parse::<Method>()?;
            }
            if let Some(s) = subset {
                cfg.subset = s.parse()?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(f) = fractions {
                cfg.fractions = f;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let report = run_experiment(&cfg)?;
            println!("{report}");
            println!("report: {}", cfg.out_dir.join("report.txt").display());
            Ok(())
        }
        Command::Sweep { data, dims, trials, attention, epochs, seed, k, out } => {
            let dataset = load_dataset(&data)?.dataset;
            let spec = CaeSpec { use_attention: attention, ..CaeSpec::default() };
            let train_config = TrainConfig { epochs, ..TrainConfig::default() };
            let knn = KnnSettings { k, ..KnnSettings::default() }.to_config()?;
            let points = sweep_embedding_dim(&spec, &dims, &dataset, &train_config, &knn, trials, seed)?;
            let mut csv = String::from("dim,mean_auc,std_auc\n");
            for p in &points {
                csv.push_str(&format!("{},{},{}\n", p.dim, p.mean_auc, p.std_auc));
                println!("dim {:>3}: mean AUC {:.4} (std {:.4})", p.dim, p.mean_auc, p.std_auc);
            }
            std::fs::write(&out, csv)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
