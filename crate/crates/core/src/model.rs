//! The forecasting network: per-joint embedding, N spatio-temporal blocks
//! (gated causal ST-Conv over kinematic chains, three-subgraph graph
//! convolution, residual and skip connections), an output MLP, and
//! autoregressive decoding over unit quaternions.

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::rng::Mt19937;
use crate::skeleton::Skeleton;
use crate::tape::{Tape, TensorRef};
use crate::{Real, Tensor64};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    Absolute,
    #[default]
    Velocity,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Per-joint feature size (4 for quaternions).
    pub d_j: usize,
    pub embed_dim: usize,
    pub n_blocks: usize,
    pub block_dim: usize,
    pub skip_dim: usize,
    pub mlp_hidden: usize,
    /// Spatial kernel extent; equals the chain length.
    pub tau_s: usize,
    /// Temporal kernel extent.
    pub tau_t: usize,
    pub dilations: Vec<usize>,
    pub output_mode: OutputMode,
    /// Normalize emitted quaternions (inference default ON; training
    /// leaves the raw loss path untouched in absolute mode when OFF).
    pub normalize_output: bool,
    /// Swap the roles of the two directed subgraphs in the graph
    /// convolution.
    pub swap_gcn_direction: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_j: 4,
            embed_dim: 64,
            n_blocks: 5,
            block_dim: 64,
            skip_dim: 256,
            mlp_hidden: 256,
            tau_s: 3,
            tau_t: 2,
            dilations: vec![1, 2, 4, 8, 16],
            output_mode: OutputMode::Velocity,
            normalize_output: true,
            swap_gcn_direction: false,
        }
    }
}

impl ModelConfig {
    /// Number of past frames influencing one output frame.
    pub fn receptive_field(&self) -> usize {
        1 + (self.tau_t - 1) * self.dilations.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilations.len() != self.n_blocks {
            return Err(Error::Config(format!(
                "{} dilations for {} blocks",
                self.dilations.len(),
                self.n_blocks
            )));
        }
        if self.tau_s != 3 {
            return Err(Error::Config(format!(
                "tau_s must equal the chain length 3, got {}",
                self.tau_s
            )));
        }
        if self.embed_dim != self.block_dim {
            return Err(Error::Config(format!(
                "embed_dim {} must equal block_dim {} for the residual path",
                self.embed_dim, self.block_dim
            )));
        }
        if self.tau_t == 0 || self.d_j == 0 || self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::Config("extents and dilations must be positive".into()));
        }
        Ok(())
    }
}

/// Exact trainable-parameter count for a configuration.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    let embed = cfg.d_j * cfg.embed_dim + cfg.embed_dim;
    let per_block = {
        let st = 2 * cfg.block_dim * cfg.block_dim * cfg.tau_s * cfg.tau_t + 2 * cfg.block_dim;
        let kgcn = 3 * cfg.block_dim * cfg.block_dim + cfg.block_dim;
        let skip = cfg.block_dim * cfg.skip_dim + cfg.skip_dim;
        st + kgcn + skip
    };
    let mlp = cfg.skip_dim * cfg.mlp_hidden + cfg.mlp_hidden + cfg.mlp_hidden * cfg.d_j + cfg.d_j;
    embed + cfg.n_blocks * per_block + mlp
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub st_kernel: Tensor64,
    pub st_bias: Tensor64,
    pub kgcn_w: [Tensor64; 3],
    pub kgcn_b: Tensor64,
    pub skip_w: Tensor64,
    pub skip_b: Tensor64,
}

#[derive(Clone, Debug)]
pub struct ModelState {
    pub embed_w: Tensor64,
    pub embed_b: Tensor64,
    pub blocks: Vec<BlockParams>,
    pub mlp_w1: Tensor64,
    pub mlp_b1: Tensor64,
    pub mlp_w2: Tensor64,
    pub mlp_b2: Tensor64,
}

fn uniform(rng: &mut Mt19937, shape: &[usize], fan_in: usize) -> Tensor64 {
    let limit = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| (rng.next_f64() * 2.0 - 1.0) * limit)
        .collect();
    Tensor64::from_vec(shape, data).expect("uniform init shape")
}

impl ModelState {
    /// Fan-in-scaled uniform weights, zero biases. The final output bias
    /// is set to the identity quaternion so the initial network emits a
    /// valid (identity) delta in velocity mode.
    pub fn init(cfg: &ModelConfig, rng: &mut Mt19937) -> Result<Self> {
        cfg.validate()?;
        let db = cfg.block_dim;
        let blocks = (0..cfg.n_blocks)
            .map(|_| BlockParams {
                st_kernel: uniform(
                    rng,
                    &[2 * db, db, cfg.tau_s, cfg.tau_t],
                    db * cfg.tau_s * cfg.tau_t,
                ),
                st_bias: Tensor64::zeros(&[2 * db]),
                kgcn_w: [
                    uniform(rng, &[db, db], db),
                    uniform(rng, &[db, db], db),
                    uniform(rng, &[db, db], db),
                ],
                kgcn_b: Tensor64::zeros(&[db]),
                skip_w: uniform(rng, &[db, cfg.skip_dim], db),
                skip_b: Tensor64::zeros(&[cfg.skip_dim]),
            })
            .collect();
        let mut mlp_b2 = Tensor64::zeros(&[cfg.d_j]);
        if cfg.d_j > 0 {
            mlp_b2.data_mut()[0] = 1.0;
        }
        Ok(ModelState {
            embed_w: uniform(rng, &[cfg.d_j, cfg.embed_dim], cfg.d_j),
            embed_b: Tensor64::zeros(&[cfg.embed_dim]),
            blocks,
            mlp_w1: uniform(rng, &[cfg.skip_dim, cfg.mlp_hidden], cfg.skip_dim),
            mlp_b1: Tensor64::zeros(&[cfg.mlp_hidden]),
            mlp_w2: uniform(rng, &[cfg.mlp_hidden, cfg.d_j], cfg.mlp_hidden),
            mlp_b2,
        })
    }

    /// All parameters as zero tensors (useful for shape templates).
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let mut s = ModelState::init(cfg, &mut Mt19937::new(0))?;
        for (_, t) in s.named_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        Ok(s)
    }

    pub fn named(&self) -> Vec<(String, &Tensor64)> {
        let mut out: Vec<(String, &Tensor64)> = vec![
            ("embed.w".into(), &self.embed_w),
            ("embed.b".into(), &self.embed_b),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.st_kernel"), &b.st_kernel));
            out.push((format!("block{i}.st_bias"), &b.st_bias));
            for k in 0..3 {
                out.push((format!("block{i}.kgcn_w{k}"), &b.kgcn_w[k]));
            }
            out.push((format!("block{i}.kgcn_b"), &b.kgcn_b));
            out.push((format!("block{i}.skip_w"), &b.skip_w));
            out.push((format!("block{i}.skip_b"), &b.skip_b));
        }
        out.push(("mlp.w1".into(), &self.mlp_w1));
        out.push(("mlp.b1".into(), &self.mlp_b1));
        out.push(("mlp.w2".into(), &self.mlp_w2));
        out.push(("mlp.b2".into(), &self.mlp_b2));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor64)> {
        let mut out: Vec<(String, &mut Tensor64)> = vec![
            ("embed.w".into(), &mut self.embed_w),
            ("embed.b".into(), &mut self.embed_b),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.st_kernel"), &mut b.st_kernel));
            out.push((format!("block{i}.st_bias"), &mut b.st_bias));
            let [w0, w1, w2] = &mut b.kgcn_w;
            out.push((format!("block{i}.kgcn_w0"), w0));
            out.push((format!("block{i}.kgcn_w1"), w1));
            out.push((format!("block{i}.kgcn_w2"), w2));
            out.push((format!("block{i}.kgcn_b"), &mut b.kgcn_b));
            out.push((format!("block{i}.skip_w"), &mut b.skip_w));
            out.push((format!("block{i}.skip_b"), &mut b.skip_b));
        }
        out.push(("mlp.w1".into(), &mut self.mlp_w1));
        out.push(("mlp.b1".into(), &mut self.mlp_b1));
        out.push(("mlp.w2".into(), &mut self.mlp_w2));
        out.push(("mlp.b2".into(), &mut self.mlp_b2));
        out
    }

    pub fn total_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Write `config.json` plus one tensor container per parameter.
    pub fn save(&self, dir: &Path, cfg: &ModelConfig) -> Result<()> {
        std::fs::create_dir_all(dir.join("params"))?;
        let cfg_json = serde_json::to_string_pretty(cfg)?;
        std::fs::write(dir.join("config.json"), cfg_json)?;
        for (name, t) in self.named() {
            t.save(&dir.join("params").join(format!("{name}.sftn")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(ModelConfig, ModelState)> {
        let cfg: ModelConfig =
            serde_json::from_str(&std::fs::read_to_string(dir.join("config.json"))?)?;
        cfg.validate()?;
        let mut state = ModelState::zeros(&cfg)?;
        for (name, t) in state.named_mut() {
            let path = dir.join("params").join(format!("{name}.sftn"));
            let loaded = Tensor64::load(&path)?;
            if loaded.shape() != t.shape() {
                return Err(Error::Validation(format!(
                    "checkpoint tensor {name} has shape {:?}, config implies {:?}",
                    loaded.shape(),
                    t.shape()
                )));
            }
            *t = loaded;
        }
        Ok((cfg, state))
    }
}

/// Tape handles for every parameter of a registered [`ModelState`].
pub struct ModelRefs {
    pub embed_w: TensorRef,
    pub embed_b: TensorRef,
    pub blocks: Vec<BlockRefs>,
    pub mlp_w1: TensorRef,
    pub mlp_b1: TensorRef,
    pub mlp_w2: TensorRef,
    pub mlp_b2: TensorRef,
}

pub struct BlockRefs {
    pub st_kernel: TensorRef,
    pub st_bias: TensorRef,
    pub kgcn_w: [TensorRef; 3],
    pub kgcn_b: TensorRef,
    pub skip_w: TensorRef,
    pub skip_b: TensorRef,
}

impl ModelRefs {
    /// Parameter refs in the same order as [`ModelState::named`].
    pub fn ordered(&self) -> Vec<TensorRef> {
        let mut out = vec![self.embed_w, self.embed_b];
        for b in &self.blocks {
            out.push(b.st_kernel);
            out.push(b.st_bias);
            out.extend_from_slice(&b.kgcn_w);
            out.push(b.kgcn_b);
            out.push(b.skip_w);
            out.push(b.skip_b);
        }
        out.extend_from_slice(&[self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2]);
        out
    }
}

/// Spatio-temporal convolution: gather each joint's (grandparent, parent,
/// self) trajectories into a 3-row slab, apply the causal dilated 2-d
/// kernel (spatial extent collapses to 1), and lay the result back out per
/// joint with channels trailing.
pub fn st_conv<T: Scalar>(
    tape: &mut Tape<T>,
    x: TensorRef,
    chains: &[[usize; 3]],
    kernel: TensorRef,
    bias: Option<TensorRef>,
    dilation: usize,
) -> Result<TensorRef> {
    let xs = tape.value(x).shape().to_vec();
    if xs.len() != 4 {
        return Err(Error::Dimension(format!(
            "st_conv: need x[B,T,J,C], got {:?}",
            xs
        )));
    }
    let (bsz, j) = (xs[0], xs[2]);
    let slabs = tape.gather_chains(x, chains)?;
    let conv = tape.conv2d_causal(slabs, kernel, dilation)?;
    let y = tape.scatter_joints(conv, bsz, j)?;
    match bias {
        Some(b) => tape.add_bias(y, b),
        None => Ok(y),
    }
}

/// K-GCN: sum over the three subgraphs of row-normalized aggregation then
/// per-subgraph linear map, plus one shared bias.
pub fn k_gcn<T: Scalar>(
    tape: &mut Tape<T>,
    x: TensorRef,
    norm_adj: &[Vec<T>; 3],
    weights: [TensorRef; 3],
    bias: Option<TensorRef>,
) -> Result<TensorRef> {
    let mut acc: Option<TensorRef> = None;
    for i in 0..3 {
        let agg = tape.joint_aggregate(x, &norm_adj[i])?;
        let mapped = tape.matmul(agg, weights[i])?;
        acc = Some(match acc {
            Some(a) => tape.add(a, mapped)?,
            None => mapped,
        });
    }
    let summed = acc.expect("three subgraphs");
    match bias {
        Some(b) => tape.add_bias(summed, b),
        None => Ok(summed),
    }
}

/// The forecaster: configuration plus skeleton-derived constants.
pub struct Model {
    config: ModelConfig,
    n_joints: usize,
    chains: Vec<[usize; 3]>,
    norm_adj: [Vec<Real>; 3],
}

impl Model {
    pub fn new(config: ModelConfig, skeleton: &Skeleton) -> Result<Self> {
        config.validate()?;
        let mut graphs = skeleton.subgraphs();
        if config.swap_gcn_direction {
            graphs = graphs.swapped();
        }
        Ok(Model {
            n_joints: skeleton.n_joints(),
            chains: skeleton.chain_table(),
            norm_adj: [
                graphs.normalized(0),
                graphs.normalized(1),
                graphs.normalized(2),
            ],
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn register(&self, tape: &mut Tape<Real>, state: &ModelState, requires_grad: bool) -> Result<ModelRefs> {
        let mut blocks = Vec::with_capacity(state.blocks.len());
        for b in &state.blocks {
            blocks.push(BlockRefs {
                st_kernel: tape.leaf(b.st_kernel.clone(), requires_grad)?,
                st_bias: tape.leaf(b.st_bias.clone(), requires_grad)?,
                kgcn_w: [
                    tape.leaf(b.kgcn_w[0].clone(), requires_grad)?,
                    tape.leaf(b.kgcn_w[1].clone(), requires_grad)?,
                    tape.leaf(b.kgcn_w[2].clone(), requires_grad)?,
                ],
                kgcn_b: tape.leaf(b.kgcn_b.clone(), requires_grad)?,
                skip_w: tape.leaf(b.skip_w.clone(), requires_grad)?,
                skip_b: tape.leaf(b.skip_b.clone(), requires_grad)?,
            });
        }
        Ok(ModelRefs {
            embed_w: tape.leaf(state.embed_w.clone(), requires_grad)?,
            embed_b: tape.leaf(state.embed_b.clone(), requires_grad)?,
            blocks,
            mlp_w1: tape.leaf(state.mlp_w1.clone(), requires_grad)?,
            mlp_b1: tape.leaf(state.mlp_b1.clone(), requires_grad)?,
            mlp_w2: tape.leaf(state.mlp_w2.clone(), requires_grad)?,
            mlp_b2: tape.leaf(state.mlp_b2.clone(), requires_grad)?,
        })
    }

    /// One spatio-temporal block: `y = K-GCN(gate(ST-Conv(x)))`, residual
    /// `x + y`, and a skip tap projected to the skip dimensionality.
    pub fn block_forward(
        &self,
        tape: &mut Tape<Real>,
        x: TensorRef,
        blk: &BlockRefs,
        dilation: usize,
    ) -> Result<(TensorRef, TensorRef)> {
        let st = st_conv(tape, x, &self.chains, blk.st_kernel, Some(blk.st_bias), dilation)?;
        let gated = tape.gated(st)?;
        let y = k_gcn(tape, gated, &self.norm_adj, blk.kgcn_w, Some(blk.kgcn_b))?;
        let skip = tape.linear(y, blk.skip_w, Some(blk.skip_b))?;
        let residual = tape.add(x, y)?;
        Ok((residual, skip))
    }

    /// Next-frame prediction from a full receptive-field window.
    /// `window: [B, T, J, d_j]` with `T` equal to the receptive field;
    /// returns `[B, J, d_j]`.
    pub fn forward(&self, tape: &mut Tape<Real>, refs: &ModelRefs, window: TensorRef) -> Result<TensorRef> {
        let xs = tape.value(window).shape().to_vec();
        let rf = self.config.receptive_field();
        if xs.len() != 4 || xs[2] != self.n_joints || xs[3] != self.config.d_j {
            return Err(Error::Dimension(format!(
                "forward: need [B, {}, {}, {}], got {:?}",
                rf, self.n_joints, self.config.d_j, xs
            )));
        }
        if xs[1] != rf {
            return Err(Error::Usage(format!(
                "forward: seed length {} does not match the receptive field {}",
                xs[1], rf
            )));
        }
        let t_len = xs[1];
        let mut h = tape.linear(window, refs.embed_w, Some(refs.embed_b))?;
        let mut skip_sum: Option<TensorRef> = None;
        for (blk, &dil) in refs.blocks.iter().zip(self.config.dilations.iter()) {
            let (residual, skip) = self.block_forward(tape, h, blk, dil)?;
            h = residual;
            skip_sum = Some(match skip_sum {
                Some(s) => tape.add(s, skip)?,
                None => skip,
            });
        }
        let skips = skip_sum.ok_or_else(|| Error::Config("model has zero blocks".into()))?;
        let last = tape.select_time(skips, t_len - 1)?;
        let a = tape.relu(last)?;
        let a = tape.linear(a, refs.mlp_w1, Some(refs.mlp_b1))?;
        let a = tape.relu(a)?;
        let raw = tape.linear(a, refs.mlp_w2, Some(refs.mlp_b2))?;
        match self.config.output_mode {
            OutputMode::Velocity => {
                let delta = tape.normalize_lastdim(raw)?;
                let last_frame = tape.select_time(window, t_len - 1)?;
                let pred = tape.quat_mul_lastdim(last_frame, delta)?;
                if self.config.normalize_output {
                    tape.normalize_lastdim(pred)
                } else {
                    Ok(pred)
                }
            }
            OutputMode::Absolute => {
                if self.config.normalize_output {
                    tape.normalize_lastdim(raw)
                } else {
                    Ok(raw)
                }
            }
        }
    }

    /// Predict `horizon` frames, feeding each prediction back into the
    /// sliding window. Returns `[B, horizon, J, d_j]`.
    pub fn autoregress(
        &self,
        tape: &mut Tape<Real>,
        refs: &ModelRefs,
        seed: TensorRef,
        horizon: usize,
    ) -> Result<TensorRef> {
        if horizon == 0 {
            return Err(Error::Usage("autoregress: horizon must be >= 1".into()));
        }
        let mut window = seed;
        let mut frames = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let pred = self.forward(tape, refs, window)?;
            frames.push(pred);
            window = tape.shift_append_time(window, pred)?;
        }
        tape.stack_time(&frames)
    }

    /// Inference convenience: run `autoregress` on a fresh tape without
    /// gradient tracking.
    pub fn predict(&self, state: &ModelState, seed: &Tensor64, horizon: usize) -> Result<Tensor64> {
        let mut tape = Tape::new();
        let refs = self.register(&mut tape, state, false)?;
        let batched;
        let seed_in = if seed.rank() == 3 {
            let mut shape = vec![1];
            shape.extend_from_slice(seed.shape());
            batched = seed.reshape(&shape)?;
            &batched
        } else {
            seed
        };
        let s = tape.constant(seed_in.clone())?;
        let out = self.autoregress(&mut tape, &refs, s, horizon)?;
        let v = tape.value(out).clone();
        if seed.rank() == 3 {
            let sh = v.shape().to_vec();
            v.reshape(&sh[1..])
        } else {
            Ok(v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Skeleton;

    fn chain3() -> Skeleton {
        Skeleton::new(
            vec!["r".into(), "a".into(), "b".into()],
            vec![0, 0, 1],
            vec![0, 1, 2],
        )
        .unwrap()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            d_j: 4,
            embed_dim: 8,
            n_blocks: 2,
            block_dim: 8,
            skip_dim: 12,
            mlp_hidden: 12,
            tau_s: 3,
            tau_t: 2,
            dilations: vec![1, 2],
            ..ModelConfig::default()
        }
    }

    fn rand_window(rng: &mut Mt19937, b: usize, t: usize, j: usize) -> Tensor64 {
        let n = b * t * j * 4;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n / 4 {
            let q = crate::Quat64::new(
                rng.next_f64() * 2.0 - 1.0,
                rng.next_f64() * 2.0 - 1.0,
                rng.next_f64() * 2.0 - 1.0,
                rng.next_f64() * 2.0 - 1.0,
            )
            .normalize()
            .unwrap();
            data.extend_from_slice(&q.to_array());
        }
        Tensor64::from_vec(&[b, t, j, 4], data).unwrap()
    }

    #[test]
    fn receptive_field_defaults_to_32() {
        assert_eq!(ModelConfig::default().receptive_field(), 32);
    }

    #[test]
    fn parameter_count_near_paper_value() {
        let n = count_parameters(&ModelConfig::default());
        assert!(
            (424_000..=468_000).contains(&n),
            "parameter count {n} outside the expected band"
        );
        // analytic formula matches actual tensor sizes
        let state = ModelState::init(&ModelConfig::default(), &mut Mt19937::new(1)).unwrap();
        assert_eq!(state.total_parameters(), n);
    }

    #[test]
    fn parameter_count_scaling() {
        let base = small_config();
        let mut doubled = base.clone();
        doubled.block_dim *= 2;
        doubled.embed_dim *= 2;
        let per_block = |c: &ModelConfig| {
            (count_parameters(c)
                - (c.d_j * c.embed_dim + c.embed_dim)
                - (c.skip_dim * c.mlp_hidden + c.mlp_hidden + c.mlp_hidden * c.d_j + c.d_j))
                / c.n_blocks
        };
        let (p1, p2) = (per_block(&base), per_block(&doubled));
        // dominated by the d_b^2 terms: roughly quadruples
        assert!(p2 > 3 * p1 && p2 < 5 * p1);
    }

    #[test]
    fn zero_block_count_parameters_hand_value() {
        let mut cfg = small_config();
        cfg.n_blocks = 0;
        cfg.dilations = vec![];
        // embed (4*8+8) + mlp (12*12+12 + 12*4+4)
        assert_eq!(count_parameters(&cfg), 40 + 144 + 12 + 48 + 4);
    }

    #[test]
    fn kgcn_identity_when_only_self_loops() {
        let skel = chain3();
        let graphs = skel.subgraphs();
        let norm: [Vec<f64>; 3] = [
            graphs.normalized(0),
            graphs.normalized(1),
            graphs.normalized(2),
        ];
        let mut tape = Tape::new();
        let x = tape
            .leaf(rand_window(&mut Mt19937::new(5), 1, 2, 3), false)
            .unwrap();
        let zero = tape.leaf(Tensor64::zeros(&[4, 4]), false).unwrap();
        let mut eye = Tensor64::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        let eye = tape.leaf(eye, false).unwrap();
        let y = k_gcn(&mut tape, x, &norm, [zero, zero, eye], None).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn kgcn_two_joint_dense_oracle() {
        // Chain root -> c with scalar features [1], [2] and identity maps.
        let skel = Skeleton::new(
            vec!["root".into(), "c".into()],
            vec![0, 0],
            vec![0, 1],
        )
        .unwrap();
        let graphs = skel.subgraphs();
        let norm: [Vec<f64>; 3] = [
            graphs.normalized(0),
            graphs.normalized(1),
            graphs.normalized(2),
        ];
        let mut tape = Tape::new();
        let x = tape
            .leaf(Tensor64::from_vec(&[1, 1, 2, 1], vec![1.0, 2.0]).unwrap(), false)
            .unwrap();
        let eye = tape
            .leaf(Tensor64::from_vec(&[1, 1], vec![1.0]).unwrap(), false)
            .unwrap();
        let y = k_gcn(&mut tape, x, &norm, [eye, eye, eye], None).unwrap();
        // root receives its child (A0 direction) plus itself: 2 + 1 = 3
        // c receives its parent (A1 direction) plus itself: 1 + 2 = 3
        assert_eq!(tape.value(y).data(), &[3.0, 3.0]);
    }

    #[test]
    fn kgcn_matches_neighbor_loop_oracle() {
        let mut rng = Mt19937::new(6);
        for trial in 0..20 {
            let j = 2 + (rng.next_u32() % 6) as usize;
            // random tree: parent of i is a random earlier joint
            let mut parent = vec![0usize];
            for i in 1..j {
                parent.push((rng.next_u32() as usize) % i);
            }
            let skel = Skeleton::new(
                (0..j).map(|i| format!("j{i}")).collect(),
                parent.clone(),
                (0..j).collect(),
            )
            .unwrap();
            let graphs = skel.subgraphs();
            let norm: [Vec<f64>; 3] = [
                graphs.normalized(0),
                graphs.normalized(1),
                graphs.normalized(2),
            ];
            let c = 3;
            let x = Tensor64::from_vec(
                &[1, 2, j, c],
                (0..2 * j * c).map(|_| rng.next_f64() * 2.0 - 1.0).collect(),
            )
            .unwrap();
            let ws: Vec<Tensor64> = (0..3)
                .map(|_| {
                    Tensor64::from_vec(
                        &[c, c],
                        (0..c * c).map(|_| rng.next_f64() * 2.0 - 1.0).collect(),
                    )
                    .unwrap()
                })
                .collect();
            let mut tape = Tape::new();
            let xr = tape.leaf(x.clone(), false).unwrap();
            let wr = [
                tape.leaf(ws[0].clone(), false).unwrap(),
                tape.leaf(ws[1].clone(), false).unwrap(),
                tape.leaf(ws[2].clone(), false).unwrap(),
            ];
            let y = k_gcn(&mut tape, xr, &norm, wr, None).unwrap();
            let out = tape.value(y);

            // brute force: per node, average neighbors per subgraph, then map
            for t in 0..2 {
                for jj in 0..j {
                    for co in 0..c {
                        let mut expect = 0.0;
                        for i in 0..3 {
                            let row = &norm[i][jj * j..(jj + 1) * j];
                            for ci in 0..c {
                                let mut agg = 0.0;
                                for (u, &a) in row.iter().enumerate() {
                                    agg += a * x.data()[(t * j + u) * c + ci];
                                }
                                expect += agg * ws[i].data()[ci * c + co];
                            }
                        }
                        let got = out.data()[(t * j + jj) * c + co];
                        assert!(
                            (got - expect).abs() < 1e-12,
                            "trial {trial} t={t} j={jj} c={co}: {got} vs {expect}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn st_conv_hand_kernel_small_chain() {
        // 3-joint chain, 1 channel, tau_t=2, dilation 1, hand-set kernel.
        let skel = chain3();
        let chains = skel.chain_table();
        let t_len = 3;
        // x[1, T, J, 1]: joint j at time t holds 10*t + j
        let mut x = Tensor64::zeros(&[1, t_len, 3, 1]);
        for t in 0..t_len {
            for j in 0..3 {
                x.data_mut()[t * 3 + j] = (10 * t + j) as f64;
            }
        }
        // kernel [1, 1, 3, 2]: spatial taps (gp, p, j) x temporal (t-1, t)
        let w = Tensor64::from_vec(&[1, 1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut tape = Tape::new();
        let xr = tape.leaf(x, false).unwrap();
        let wr = tape.leaf(w, false).unwrap();
        let y = st_conv(&mut tape, xr, &chains, wr, None, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, t_len, 3, 1]);
        // Joint 2 has chain (0, 1, 2). At t=1:
        //   gp:  1*x[0,0] + 2*x[1,0] = 0 + 20
        //   p:   3*x[0,1] + 4*x[1,1] = 3 + 44
        //   j:   5*x[0,2] + 6*x[1,2] = 10 + 72
        let got = tape.value(y).data()[(1 * 3 + 2) * 1];
        assert_eq!(got, 20.0 + 3.0 + 44.0 + 10.0 + 72.0);
        // At t=0 the t-1 taps fall into the causal pad:
        let got0 = tape.value(y).data()[2];
        assert_eq!(got0, 2.0 * 0.0 + 4.0 * 1.0 + 6.0 * 2.0);
    }

    #[test]
    fn st_conv_zero_input() {
        let skel = chain3();
        let chains = skel.chain_table();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor64::zeros(&[2, 4, 3, 5]), false).unwrap();
        let w = tape.leaf(Tensor64::filled(&[6, 5, 3, 2], 0.3), false).unwrap();
        let y = st_conv(&mut tape, x, &chains, w, None, 2).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn st_conv_locality_and_causality() {
        let skel = chain3();
        let chains = skel.chain_table();
        let mut rng = Mt19937::new(7);
        let x = rand_window(&mut rng, 1, 6, 3);
        let w = Tensor64::from_vec(
            &[4, 4, 3, 2],
            (0..4 * 4 * 6).map(|_| rng.next_f64() - 0.5).collect(),
        )
        .unwrap();
        let run = |input: &Tensor64| {
            let mut tape = Tape::new();
            let xr = tape.leaf(input.clone(), false).unwrap();
            let wr = tape.leaf(w.clone(), false).unwrap();
            let y = st_conv(&mut tape, xr, &chains, wr, None, 1).unwrap();
            tape.value(y).clone()
        };
        let base = run(&x);
        // perturb joint u=2 (leaf) at time 3
        let (tp, u) = (3usize, 2usize);
        let mut pert = x.clone();
        for c in 0..4 {
            pert.data_mut()[(tp * 3 + u) * 4 + c] += 0.5;
        }
        let out = run(&pert);
        for t in 0..6 {
            for j in 0..3 {
                for c in 0..4 {
                    let i = (t * 3 + j) * 4 + c;
                    let affected_joint = chains[j].contains(&u);
                    let may_change = affected_joint && t >= tp;
                    if !may_change {
                        assert_eq!(
                            base.data()[i].to_bits(),
                            out.data()[i].to_bits(),
                            "t={t} j={j} changed unexpectedly"
                        );
                    }
                }
            }
        }
        // and something at (t >= tp, affected joint) did change
        assert!(base.data() != out.data());
    }

    #[test]
    fn block_with_zero_parameters_is_residual_identity() {
        let skel = chain3();
        let cfg = small_config();
        let model = Model::new(cfg.clone(), &skel).unwrap();
        let mut state = ModelState::zeros(&cfg).unwrap();
        // keep embed passing something nonzero through
        state.embed_w = {
            let mut w = Tensor64::zeros(&[4, 8]);
            for i in 0..4 {
                w.data_mut()[i * 8 + i] = 1.0;
            }
            w
        };
        let mut tape = Tape::new();
        let refs = model.register(&mut tape, &state, false).unwrap();
        let x = tape
            .leaf(rand_window(&mut Mt19937::new(8), 1, 4, 3), false)
            .unwrap();
        let h = tape.linear(x, refs.embed_w, Some(refs.embed_b)).unwrap();
        let (residual, skip) = model.block_forward(&mut tape, h, &refs.blocks[0], 1).unwrap();
        assert_eq!(tape.value(residual).data(), tape.value(h).data());
        assert!(tape.value(skip).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_shape_and_unit_norm() {
        let skel = chain3();
        let cfg = small_config();
        let rf = cfg.receptive_field();
        let model = Model::new(cfg.clone(), &skel).unwrap();
        let state = ModelState::init(&cfg, &mut Mt19937::new(9)).unwrap();
        let mut tape = Tape::new();
        let refs = model.register(&mut tape, &state, false).unwrap();
        let seed = tape
            .leaf(rand_window(&mut Mt19937::new(10), 2, rf, 3), false)
            .unwrap();
        let pred = model.forward(&mut tape, &refs, seed).unwrap();
        assert_eq!(tape.value(pred).shape(), &[2, 3, 4]);
        for g in 0..6 {
            let q = &tape.value(pred).data()[g * 4..(g + 1) * 4];
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_rejects_wrong_seed_length() {
        let skel = chain3();
        let cfg = small_config();
        let model = Model::new(cfg.clone(), &skel).unwrap();
        let state = ModelState::init(&cfg, &mut Mt19937::new(9)).unwrap();
        let mut tape = Tape::new();
        let refs = model.register(&mut tape, &state, false).unwrap();
        let seed = tape
            .leaf(rand_window(&mut Mt19937::new(10), 1, 5, 3), false)
            .unwrap();
        assert!(matches!(
            model.forward(&mut tape, &refs, seed),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn identity_delta_network_freezes_pose() {
        // Zero final layer with identity-quaternion bias => prediction
        // equals the last seed frame, at every autoregression step.
        let skel = chain3();
        let cfg = small_config();
        let rf = cfg.receptive_field();
        let model = Model::new(cfg.clone(), &skel).unwrap();
        let mut state = ModelState::init(&cfg, &mut Mt19937::new(11)).unwrap();
        for v in state.mlp_w2.data_mut() {
            *v = 0.0;
        }
        state.mlp_b2 = Tensor64::from_vec(&[4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let seed = rand_window(&mut Mt19937::new(12), 1, rf, 3);
        let out = model.predict(&state, &seed, 10).unwrap();
        assert_eq!(out.shape(), &[1, 10, 3, 4]);
        let last = &seed.data()[(rf - 1) * 3 * 4..rf * 3 * 4];
        for h in 0..10 {
            for (i, &v) in out.data()[h * 12..(h + 1) * 12].iter().enumerate() {
                assert!((v - last[i]).abs() < 1e-12, "horizon {h} elem {i}");
            }
        }
    }

    #[test]
    fn horizon_one_equals_single_forward() {
        let skel = chain3();
        let cfg = small_config();
        let rf = cfg.receptive_field();
        let model = Model::new(cfg.clone(), &skel).unwrap();
        let state = ModelState::init(&cfg, &mut Mt19937::new(13)).unwrap();
        let seed = rand_window(&mut Mt19937::new(14), 1, rf, 3);
        let auto = model.predict(&state, &seed, 1).unwrap();

        let mut tape = Tape::new();
        let refs = model.register(&mut tape, &state, false).unwrap();
        let s = tape.constant(seed).unwrap();
        let single = model.forward(&mut tape, &refs, s).unwrap();
        assert_eq!(auto.data(), tape.value(single).data());
    }

    #[test]
    fn predict_is_bit_deterministic() {
        let skel = chain3();
        let cfg = small_config();
        let rf = cfg.receptive_field();
        let model = Model::new(cfg.clone(), &skel).unwrap();
        let state = ModelState::init(&cfg, &mut Mt19937::new(15)).unwrap();
        let seed = rand_window(&mut Mt19937::new(16), 1, rf, 3);
        let a = model.predict(&state, &seed, 5).unwrap();
        let b = model.predict(&state, &seed, 5).unwrap();
        for i in 0..a.numel() {
            assert_eq!(a.data()[i].to_bits(), b.data()[i].to_bits());
        }
    }

    #[test]
    fn joint_permutation_consistency() {
        // Relabeling joints (skeleton + input) permutes outputs identically;
        // parameters are joint-shared so the same state serves both.
        let skel = Skeleton::new(
            vec!["r".into(), "a".into(), "b".into(), "c".into()],
            vec![0, 0, 1, 1],
            vec![0, 1, 2, 3],
        )
        .unwrap();
        let perm = [1usize, 3, 0, 2]; // new index of old joint
        let mut inv = [0usize; 4];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let permuted = Skeleton::new(
            (0..4).map(|n| format!("j{}", inv[n])).collect(),
            (0..4).map(|n| perm[skel.parent(inv[n])]).collect(),
            (0..4).map(|n| perm[skel.mirror(inv[n])]).collect(),
        )
        .unwrap();
        let cfg = small_config();
        let rf = cfg.receptive_field();
        let state = ModelState::init(&cfg, &mut Mt19937::new(17)).unwrap();
        let m1 = Model::new(cfg.clone(), &skel).unwrap();
        let m2 = Model::new(cfg.clone(), &permuted).unwrap();
        let seed = rand_window(&mut Mt19937::new(18), 1, rf, 4);
        let mut seed_p = Tensor64::zeros(&[1, rf, 4, 4]);
        for t in 0..rf {
            for j in 0..4 {
                for c in 0..4 {
                    seed_p.data_mut()[(t * 4 + perm[j]) * 4 + c] =
                        seed.data()[(t * 4 + j) * 4 + c];
                }
            }
        }
        let out1 = m1.predict(&state, &seed, 3).unwrap();
        let out2 = m2.predict(&state, &seed_p, 3).unwrap();
        for h in 0..3 {
            for j in 0..4 {
                for c in 0..4 {
                    let a = out1.data()[(h * 4 + j) * 4 + c];
                    let b = out2.data()[(h * 4 + perm[j]) * 4 + c];
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let state = ModelState::init(&cfg, &mut Mt19937::new(19)).unwrap();
        state.save(dir.path(), &cfg).unwrap();
        let (cfg2, state2) = ModelState::load(dir.path()).unwrap();
        assert_eq!(cfg2.block_dim, cfg.block_dim);
        for ((n1, t1), (n2, t2)) in state.named().iter().zip(state2.named().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.data(), t2.data());
        }
    }
}
