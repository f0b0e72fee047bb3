//! Operator entry point: dataset preparation, training, evaluation,
//! forecast export, and baselines. Every command writes its fully
//! resolved configuration next to its outputs.

use crate::data;
use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig, Forecaster, ModelForecaster, RunningAverage, ZeroVelocity};
use crate::model::{Model, ModelConfig, ModelState};
use crate::rng::Mt19937;
use crate::skeleton::Skeleton;
use crate::training::{self, Adam, TrainConfig};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    /// Skeleton description file; bundled H3.6M skeleton when unset.
    pub skeleton: Option<PathBuf>,
    pub fps_in: Option<f64>,
    pub downsample_offset: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub split: data::DatasetSplit,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn fps_in(&self) -> f64 {
        self.fps_in.unwrap_or(50.0)
    }

    pub fn offset(&self) -> usize {
        self.downsample_offset.unwrap_or(0)
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        match &self.skeleton {
            Some(p) => Skeleton::load(p),
            None => Ok(Skeleton::h36m()),
        }
    }

    /// Cache directory: config value, then `SF_CACHE_DIR`, then `./cache`.
    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os("SF_CACHE_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("cache"))
    }

    fn write_manifest(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("resolved_config.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(name = "skelforecast", about = "Skeletal human-motion forecasting", version)]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the training RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u32>,
    /// Worker thread count (currently everything runs on one thread).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse and preprocess the raw dataset into the binary cache.
    Prepare {
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Train a model from the prepared cache.
    Train {
        /// Output directory for checkpoints, history and manifest.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from `<out>/checkpoint` when present.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint (and optionally the baselines) on the test
    /// split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        with_baselines: bool,
    },
    /// Evaluate only the baselines; no checkpoint needed.
    Baselines {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast one sequence and emit plot-ready CSV.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw exponential-map text file.
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long, default_value_t = 10)]
        horizon: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Usage("--threads must be >= 1".into()));
        }
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.rng_seed = seed;
    }
    match cli.command {
        Command::Prepare { data_root, cache_dir } => cmd_prepare(cfg, data_root, cache_dir),
        Command::Train { out, epochs, resume } => cmd_train(cfg, &out, epochs, resume),
        Command::Eval { checkpoint, out, with_baselines } => {
            cmd_eval(cfg, checkpoint.as_deref(), out.as_deref(), with_baselines)
        }
        Command::Baselines { out } => cmd_eval(cfg, None, out.as_deref(), true),
        Command::Forecast { checkpoint, sequence, horizon, out } => {
            cmd_forecast(cfg, &checkpoint, &sequence, horizon, &out)
        }
    }
}

fn cmd_prepare(
    mut cfg: RunConfig,
    data_root: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
) -> Result<()> {
    if let Some(d) = data_root {
        cfg.data_root = Some(d);
    }
    if let Some(c) = cache_dir {
        cfg.cache_dir = Some(c);
    }
    let root = cfg
        .data_root
        .clone()
        .ok_or_else(|| Error::Usage("no data root: pass --data-root or set it in the config".into()))?;
    let cache = cfg.cache_dir();
    let skeleton = cfg.skeleton()?;
    let report = data::prepare_cache(&root, &cache, &skeleton, cfg.fps_in(), cfg.offset())?;
    cfg.write_manifest(&cache)?;
    println!(
        "prepared {} sequence(s), {} already cached, cache at {}",
        report.written,
        report.skipped,
        cache.display()
    );
    Ok(())
}

fn cmd_train(cfg: RunConfig, out: &Path, epochs: Option<usize>, resume: bool) -> Result<()> {
    let mut tcfg = cfg.train.clone();
    if let Some(e) = epochs {
        tcfg.epochs = e;
    }
    let skeleton = cfg.skeleton()?;
    let ds = data::load_cached(&cfg.cache_dir(), &skeleton, &cfg.split)?;
    let train_items = ds.train_items(&skeleton)?;
    let val_items = ds.val_items();

    let ckpt_dir = out.join("checkpoint");
    let (model, mut state, mut adam, start_epoch) = if resume && ckpt_dir.is_dir() {
        let (mcfg, state, adam, epoch) = training::load_checkpoint(&ckpt_dir)?;
        let model = Model::new(mcfg, &skeleton)?;
        let adam = adam.unwrap_or_else(|| Adam::new(&state));
        println!("resuming from epoch {epoch}");
        (model, state, adam, epoch)
    } else {
        let model = Model::new(cfg.model.clone(), &skeleton)?;
        let state = ModelState::init(&cfg.model, &mut Mt19937::new(tcfg.rng_seed.wrapping_add(1)))?;
        let adam = Adam::new(&state);
        (model, state, adam, 0)
    };

    std::fs::create_dir_all(out)?;
    cfg.write_manifest(out)?;
    let history = training::fit(
        &model,
        &mut state,
        &mut adam,
        &tcfg,
        &train_items,
        &val_items,
        start_epoch,
        Some(out),
    )?;
    let hist_path = out.join("history.csv");
    let body = training::history_csv(&history);
    if start_epoch > 0 && hist_path.is_file() {
        // drop the header when appending to an existing history
        let existing = std::fs::read_to_string(&hist_path)?;
        let tail = body.splitn(2, '\n').nth(1).unwrap_or("");
        std::fs::write(&hist_path, format!("{existing}{tail}"))?;
    } else {
        std::fs::write(&hist_path, body)?;
    }
    if !history.is_empty() {
        training::save_checkpoint(&ckpt_dir, model.config(), &state, &adam, tcfg.epochs)?;
    }
    println!(
        "trained {} epoch(s); history at {}",
        history.len(),
        hist_path.display()
    );
    Ok(())
}

fn cmd_eval(
    cfg: RunConfig,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
    with_baselines: bool,
) -> Result<()> {
    if checkpoint.is_none() && !with_baselines {
        return Err(Error::Usage(
            "nothing to evaluate: pass --checkpoint and/or --with-baselines".into(),
        ));
    }
    let skeleton = cfg.skeleton()?;
    let ds = data::load_cached(&cfg.cache_dir(), &skeleton, &cfg.split)?;
    if let Some(s) = ds.test.first() {
        if s.frames.shape()[1] != skeleton.n_joints() {
            return Err(Error::Validation(format!(
                "test data has {} joints, skeleton has {}",
                s.frames.shape()[1],
                skeleton.n_joints()
            )));
        }
    }
    let loaded = match checkpoint {
        Some(p) => {
            let (mcfg, state) = ModelState::load(p)?;
            let model = Model::new(mcfg, &skeleton)?;
            Some((model, state))
        }
        None => None,
    };
    let model_fc = loaded.as_ref().map(|(model, state)| ModelForecaster {
        model,
        state,
        label: "model".into(),
    });
    let zv = ZeroVelocity::default();
    let ra2 = RunningAverage::new(2);
    let ra4 = RunningAverage::new(4);
    let mut forecasters: Vec<&dyn Forecaster> = Vec::new();
    if let Some(f) = &model_fc {
        forecasters.push(f);
    }
    if with_baselines {
        forecasters.push(&zv);
        forecasters.push(&ra2);
        forecasters.push(&ra4);
    }
    let report = eval::run_protocol(&forecasters, &ds.test, skeleton.root(), &cfg.eval)?;
    print!("{}", report.table());
    if let Some(path) = out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
            cfg.write_manifest(dir)?;
        }
        std::fs::write(path, report.to_csv())?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_forecast(
    cfg: RunConfig,
    checkpoint: &Path,
    sequence: &Path,
    horizon: usize,
    out: &Path,
) -> Result<()> {
    if horizon == 0 {
        return Err(Error::Usage("--horizon must be >= 1".into()));
    }
    let skeleton = cfg.skeleton()?;
    let (mcfg, state) = ModelState::load(checkpoint)?;
    let model = Model::new(mcfg, &skeleton)?;
    let rf = model.config().receptive_field();
    let raw = data::parse_expmap_file(sequence)?;
    let frames = data::preprocess(&raw, &skeleton, cfg.offset())?;
    let t_len = frames.shape()[0];
    if t_len < rf {
        return Err(Error::Usage(format!(
            "sequence has {t_len} downsampled frames, the model needs {rf} seed frames"
        )));
    }
    let seed = eval::time_slice(&frames, 0, rf)?;
    let pred = model.predict(&state, &seed, horizon)?;
    let j = skeleton.n_joints();
    let mut csv = String::from("frame,joint,component,ground_truth,prediction\n");
    let comp = ["w", "x", "y", "z"];
    for t in 0..rf + horizon {
        for jj in 0..j {
            for c in 0..4 {
                let gt = if t < t_len {
                    format!("{:.9}", frames.data()[(t * j + jj) * 4 + c])
                } else {
                    String::new()
                };
                let p = if t < rf {
                    // conditioning frames: the model echoes its input
                    format!("{:.9}", seed.data()[(t * j + jj) * 4 + c])
                } else {
                    format!("{:.9}", pred.data()[((t - rf) * j + jj) * 4 + c])
                };
                csv.push_str(&format!("{t},{},{},{gt},{p}\n", skeleton.joint_names()[jj], comp[c]));
            }
        }
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
        cfg.write_manifest(dir)?;
    }
    std::fs::write(out, csv)?;
    println!(
        "wrote {} frames ({rf} seed + {horizon} forecast) to {}",
        rf + horizon,
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.fps_in(), 50.0);
        assert_eq!(cfg.offset(), 0);
        assert_eq!(cfg.model.receptive_field(), 32);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.eval.rng_seed, 1234567890);
        assert_eq!(cfg.skeleton().unwrap().n_joints(), 32);
    }

    #[test]
    fn run_config_partial_json_merges_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(
            &p,
            r#"{ "train": { "epochs": 7 }, "model": { "n_blocks": 2, "dilations": [1, 2] } }"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.model.n_blocks, 2);
        assert_eq!(cfg.model.block_dim, 64);
    }

    #[test]
    fn run_config_rejects_malformed_json() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, "{ not json").unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
    }

    #[test]
    fn cache_dir_resolution_order() {
        let cfg = RunConfig {
            cache_dir: Some(PathBuf::from("/tmp/explicit")),
            ..RunConfig::default()
        };
        assert_eq!(cfg.cache_dir(), PathBuf::from("/tmp/explicit"));
    }

    #[test]
    fn cli_parses_subcommands() {
        let cli = Cli::try_parse_from([
            "skelforecast",
            "--seed",
            "42",
            "train",
            "--out",
            "/tmp/run",
            "--epochs",
            "3",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(42));
        match cli.command {
            Command::Train { epochs, resume, .. } => {
                assert_eq!(epochs, Some(3));
                assert!(!resume);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
