//! Optimization: epoch window sampling, quaternion-space MAE, Adam with
//! exponential learning-rate decay, checkpointing, and deterministic
//! seeding.

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelState};
use crate::rng::Mt19937;
use crate::tape::Tape;
use crate::{Real, Tensor64};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Initial learning rate; epoch e uses `lr * decay^e`.
    pub lr: f64,
    pub decay: f64,
    pub samples_per_sequence: usize,
    pub seed_len: usize,
    pub target_len: usize,
    pub rng_seed: u32,
    /// Feed ground truth instead of predictions during rollout.
    pub teacher_forcing: bool,
    /// Optional global gradient-norm clip.
    pub grad_clip: Option<f64>,
    pub val_every: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 3000,
            lr: 0.001,
            decay: 0.999,
            samples_per_sequence: 5,
            seed_len: 32,
            target_len: 10,
            rng_seed: 1234567890,
            teacher_forcing: false,
            grad_clip: None,
            val_every: 10,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn window_len(&self) -> usize {
        self.seed_len + self.target_len
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.seed_len == 0 || self.target_len == 0 {
            return Err(Error::Config(
                "batch_size, seed_len and target_len must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("lr must be > 0 and decay in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One training sequence: plain frames plus the optional mirrored variant
/// used as a per-sample coin flip.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub frames: Tensor64,
    pub mirrored: Option<Tensor64>,
}

/// One sampled window: which sequence, which variant, where it starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub seq: usize,
    pub start: usize,
    pub mirrored: bool,
}

/// Per sequence, `samples_per_sequence` uniform window starts; each sample
/// independently picks the plain or mirrored variant when one exists.
/// Sequences shorter than one window are skipped with a warning.
pub fn sample_epoch(items: &[TrainItem], cfg: &TrainConfig, rng: &mut Mt19937) -> Result<Vec<Window>> {
    let w = cfg.window_len();
    let mut out = Vec::with_capacity(items.len() * cfg.samples_per_sequence);
    for (i, item) in items.iter().enumerate() {
        let t = item.frames.shape()[0];
        if t < w {
            eprintln!("warning: sequence {i} has {t} frames, needs {w}; skipped");
            continue;
        }
        for _ in 0..cfg.samples_per_sequence {
            let start = rng.randint(0, (t - w + 1) as i64)? as usize;
            let mirrored = match item.mirrored {
                Some(_) => rng.randint(0, 2)? == 1,
                None => false,
            };
            out.push(Window { seq: i, start, mirrored });
        }
    }
    Ok(out)
}

/// Mean absolute error over all tensor elements.
pub fn train_loss(pred: &Tensor64, target: &Tensor64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.numel().max(1);
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n as f64)
}

/// Bias-corrected Adam. Moment buffers are kept in the parameter order of
/// [`ModelState::named`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor64>,
    v: Vec<Tensor64>,
    t: u64,
}

impl Adam {
    pub fn new(state: &ModelState) -> Self {
        Adam::with_shapes(
            state
                .named()
                .iter()
                .map(|(_, t)| t.shape().to_vec())
                .collect(),
        )
    }

    pub fn with_shapes(shapes: Vec<Vec<usize>>) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|s| Tensor64::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor64::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Tensor64>, grads: &[&Tensor64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer holds {} buffers, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for g in grads {
            if !g.all_finite() {
                return Err(Error::NonFinite("gradient".into()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Dimension(format!(
                    "optimizer buffer shape {:?} vs param {:?} / grad {:?}",
                    m.shape(),
                    p.shape(),
                    g.shape()
                )));
            }
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            m.save(&dir.join(format!("m{i}.sftn")))?;
            v.save(&dir.join(format!("v{i}.sftn")))?;
        }
        std::fs::write(
            dir.join("meta.json"),
            serde_json::to_string(&serde_json::json!({
                "step": self.t, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps
            }))?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, state: &ModelState) -> Result<Self> {
        let mut adam = Adam::new(state);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        adam.t = meta["step"].as_u64().unwrap_or(0);
        for i in 0..adam.m.len() {
            adam.m[i] = Tensor64::load(&dir.join(format!("m{i}.sftn")))?;
            adam.v[i] = Tensor64::load(&dir.join(format!("v{i}.sftn")))?;
        }
        for ((_, p), m) in state.named().iter().zip(&adam.m) {
            if p.shape() != m.shape() {
                return Err(Error::Validation(
                    "optimizer checkpoint does not match the model".into(),
                ));
            }
        }
        Ok(adam)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_loss\n");
    for r in history {
        let val = r.val_loss.map(|v| format!("{v:.12}")).unwrap_or_default();
        out.push_str(&format!("{},{:.12},{:.12},{}\n", r.epoch, r.lr, r.train_loss, val));
    }
    out
}

/// Full checkpoint: model parameters, optimizer moments, epoch counter.
pub fn save_checkpoint(
    dir: &Path,
    cfg: &ModelConfig,
    state: &ModelState,
    adam: &Adam,
    epoch: usize,
) -> Result<()> {
    state.save(dir, cfg)?;
    adam.save(&dir.join("optim"))?;
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string(&serde_json::json!({ "epoch": epoch }))?,
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelConfig, ModelState, Option<Adam>, usize)> {
    let (cfg, state) = ModelState::load(dir)?;
    let epoch = std::fs::read_to_string(dir.join("meta.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| v["epoch"].as_u64())
        .unwrap_or(0) as usize;
    let adam = if dir.join("optim").is_dir() {
        Some(Adam::load(&dir.join("optim"), &state)?)
    } else {
        None
    };
    Ok((cfg, state, adam, epoch))
}

fn variant(item: &TrainItem, w: Window) -> &Tensor64 {
    match (w.mirrored, &item.mirrored) {
        (true, Some(m)) => m,
        _ => &item.frames,
    }
}

fn batch_tensors(
    items: &[TrainItem],
    windows: &[Window],
    seed_len: usize,
    target_len: usize,
) -> Result<(Tensor64, Tensor64)> {
    let first = &items[windows[0].seq].frames;
    let (j, dj) = (first.shape()[1], first.shape()[2]);
    let b = windows.len();
    let frame = j * dj;
    let mut seed = Tensor64::zeros(&[b, seed_len, j, dj]);
    let mut target = Tensor64::zeros(&[b, target_len, j, dj]);
    for (bi, &w) in windows.iter().enumerate() {
        let src = variant(&items[w.seq], w);
        let base = w.start * frame;
        seed.data_mut()[bi * seed_len * frame..(bi + 1) * seed_len * frame]
            .copy_from_slice(&src.data()[base..base + seed_len * frame]);
        let tbase = (w.start + seed_len) * frame;
        target.data_mut()[bi * target_len * frame..(bi + 1) * target_len * frame]
            .copy_from_slice(&src.data()[tbase..tbase + target_len * frame]);
    }
    Ok((seed, target))
}

/// One optimization step over a batch; returns the batch loss.
pub fn train_batch(
    model: &Model,
    state: &mut ModelState,
    adam: &mut Adam,
    cfg: &TrainConfig,
    seed: Tensor64,
    target: Tensor64,
    lr: f64,
) -> Result<f64> {
    let mut tape: Tape<Real> = Tape::new();
    let refs = model.register(&mut tape, state, true)?;
    let seed_ref = tape.constant(seed)?;
    let tgt_ref = tape.constant(target)?;
    let mut window = seed_ref;
    let mut preds = Vec::with_capacity(cfg.target_len);
    for t in 0..cfg.target_len {
        let p = model.forward(&mut tape, &refs, window)?;
        preds.push(p);
        let next = if cfg.teacher_forcing {
            tape.select_time(tgt_ref, t)?
        } else {
            p
        };
        window = tape.shift_append_time(window, next)?;
    }
    let stacked = tape.stack_time(&preds)?;
    let loss = tape.mean_abs_error(stacked, tgt_ref)?;
    let loss_val = tape.value(loss).data()[0];
    if !loss_val.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    tape.backward(loss)?;
    let ordered = refs.ordered();
    let mut grads: Vec<Tensor64> = Vec::with_capacity(ordered.len());
    for r in &ordered {
        grads.push(
            tape.grad(*r)
                .ok_or_else(|| Error::Usage("parameter missing gradient".into()))?
                .clone(),
        );
    }
    if let Some(max_norm) = cfg.grad_clip {
        let norm = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm {
            let scale = max_norm / norm;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
        }
    }
    let params: Vec<&mut Tensor64> = state.named_mut().into_iter().map(|(_, t)| t).collect();
    adam.step(params, &grads.iter().collect::<Vec<_>>(), lr)?;
    Ok(loss_val)
}

/// Forward-only loss of the current parameters on a fixed window set.
pub fn eval_loss(
    model: &Model,
    state: &ModelState,
    cfg: &TrainConfig,
    items: &[TrainItem],
    windows: &[Window],
) -> Result<f64> {
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in windows.chunks(cfg.batch_size) {
        let (seed, target) = batch_tensors(items, chunk, cfg.seed_len, cfg.target_len)?;
        let pred = model.predict(state, &seed, cfg.target_len)?;
        total += train_loss(&pred, &target)? * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// The training loop. Resumable: `start_epoch` continues numbering, and
/// checkpoints land in `<out_dir>/checkpoint` at the configured cadence.
/// A non-finite loss aborts with the last checkpoint left on disk.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    model: &Model,
    state: &mut ModelState,
    adam: &mut Adam,
    cfg: &TrainConfig,
    train: &[TrainItem],
    val: &[TrainItem],
    start_epoch: usize,
    out_dir: Option<&Path>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if cfg.seed_len != model.config().receptive_field() {
        return Err(Error::Config(format!(
            "seed_len {} does not match the model receptive field {}",
            cfg.seed_len,
            model.config().receptive_field()
        )));
    }
    let mut rng = Mt19937::new(cfg.rng_seed.wrapping_add(start_epoch as u32));
    // fixed validation windows, independent of the training stream
    let mut val_rng = Mt19937::new(cfg.rng_seed ^ 0x9e37_79b9);
    let val_windows = sample_epoch(val, cfg, &mut val_rng)?;
    let mut history = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut windows = sample_epoch(train, cfg, &mut rng)?;
        if windows.is_empty() {
            return Err(Error::Usage("no trainable sequences".into()));
        }
        // deterministic in-place shuffle from the same stream
        for i in (1..windows.len()).rev() {
            let j = rng.randint(0, i as i64 + 1)? as usize;
            windows.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for chunk in windows.chunks(cfg.batch_size) {
            let (seed, target) = batch_tensors(train, chunk, cfg.seed_len, cfg.target_len)?;
            let loss = train_batch(model, state, adam, cfg, seed, target, lr)?;
            epoch_loss += loss * chunk.len() as f64;
        }
        epoch_loss /= windows.len() as f64;
        let is_last = epoch + 1 == cfg.epochs;
        let val_loss = if !val_windows.is_empty()
            && (is_last || (cfg.val_every > 0 && epoch % cfg.val_every == 0))
        {
            Some(eval_loss(model, state, cfg, val, &val_windows)?)
        } else {
            None
        };
        history.push(EpochRecord { epoch, lr, train_loss: epoch_loss, val_loss });
        if let Some(dir) = out_dir {
            if is_last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
                save_checkpoint(&dir.join("checkpoint"), model.config(), state, adam, epoch + 1)?;
            }
        }
    }
    Ok(history)
}
