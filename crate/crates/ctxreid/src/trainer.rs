//! Self-training loop over a toy linear encoder: embed, cluster, initialize
//! the banks, then run mini-batch contrastive updates, re-clustering at the
//! start of every epoch.
//!
//! The encoder is `y = normalize(x W)` with a learnable `W`; the gradient
//! path through the projection and the normalization is hand-written so it
//! can be checked against finite differences. Plain gradient descent is the
//! default optimizer; Adam (beta 0.9/0.999) is available as a mode.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cgc;
use crate::core::{dot, l2_normalize, norm, EmbeddingMatrix, SceneCatalog};
use crate::error::{Error, Result};
use crate::similarity::NeighborMode;
use crate::uam::{self, PairedBank, UnpairedBank};

/// Linear projection followed by L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    w: Vec<f64>, // d_in x d_out, row-major
    d_in: usize,
    d_out: usize,
}

impl LinearEncoder {
    /// Build from an explicit weight matrix (rows indexed by input
    /// dimension).
    pub fn from_weights(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d_in = rows.len();
        let d_out = rows.first().map_or(0, |r| r.len());
        if d_in == 0 || d_out < 2 {
            return Err(Error::InvalidConfig(format!(
                "encoder needs d_in >= 1 and d_out >= 2, got {d_in} x {d_out}"
            )));
        }
        let mut w = Vec::with_capacity(d_in * d_out);
        for row in &rows {
            if row.len() != d_out {
                return Err(Error::InvalidConfig("ragged weight matrix".into()));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig("non-finite weight".into()));
            }
            w.extend_from_slice(row);
        }
        Ok(LinearEncoder { w, d_in, d_out })
    }

    /// Gaussian init scaled by 1/sqrt(d_in), seeded.
    pub fn random(d_in: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d_in as f64).sqrt();
        let w = (0..d_in * d_out)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * scale
            })
            .collect();
        LinearEncoder { w, d_in, d_out }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weights(&self) -> Vec<Vec<f64>> {
        (0..self.d_in)
            .map(|i| self.w[i * self.d_out..(i + 1) * self.d_out].to_vec())
            .collect()
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.d_in);
        let mut z = vec![0.0; self.d_out];
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.w[i * self.d_out..(i + 1) * self.d_out];
            for (zk, wk) in z.iter_mut().zip(row) {
                *zk += xi * wk;
            }
        }
        z
    }

    /// `normalize(x W)` for one input row.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        l2_normalize(&self.project(x))
    }

    /// Encode every row of a matrix.
    pub fn encode_matrix(&self, raw: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let rows: Result<Vec<Vec<f64>>> = raw.iter_rows().map(|x| self.encode(x)).collect();
        EmbeddingMatrix::from_rows(rows?)
    }
}

/// Gradient of the batch loss with respect to `W`, given the upstream
/// gradients on the normalized outputs.
///
/// Per row: with `z = x W`, `y = z / |z|`, the chain rule gives
/// `dL/dz = (g - (g . y) y) / |z|` and `dL/dW += outer(x, dL/dz)`.
pub fn backward(
    enc: &LinearEncoder,
    inputs: &[&[f64]],
    upstream: &[Vec<f64>],
) -> Vec<f64> {
    assert_eq!(inputs.len(), upstream.len());
    let (d_in, d_out) = (enc.d_in, enc.d_out);
    let mut dw = vec![0.0; d_in * d_out];
    for (x, g) in inputs.iter().zip(upstream.iter()) {
        let z = enc.project(x);
        let nz = norm(&z);
        let y: Vec<f64> = z.iter().map(|v| v / nz).collect();
        let gy = dot(g, &y);
        let dz: Vec<f64> = g.iter().zip(y.iter()).map(|(gk, yk)| (gk - gy * yk) / nz).collect();
        for (i, &xi) in x.iter().enumerate() {
            let row = &mut dw[i * d_out..(i + 1) * d_out];
            for (slot, dzk) in row.iter_mut().zip(dz.iter()) {
                *slot += xi * dzk;
            }
        }
    }
    dw
}

/// Optimizer choice for the encoder weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, w: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for ((wk, gk), (mk, vk)) in w
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *mk = Self::BETA1 * *mk + (1.0 - Self::BETA1) * gk;
            *vk = Self::BETA2 * *vk + (1.0 - Self::BETA2) * gk * gk;
            let mhat = *mk / bc1;
            let vhat = *vk / bc2;
            *wk -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

fn default_epochs() -> usize {
    5
}
fn default_iters() -> usize {
    50
}
fn default_batch_size() -> usize {
    64
}
fn default_lr() -> f64 {
    0.5
}
fn default_tau_c() -> f64 {
    0.05
}
fn default_momentum() -> f64 {
    0.1
}
fn default_lambda_sim() -> f64 {
    0.1
}
fn default_lambda_reid() -> f64 {
    0.8
}
fn default_instances_per_cluster() -> usize {
    4
}
fn default_d_out() -> usize {
    32
}
fn default_true() -> bool {
    true
}
fn default_lr_decay_every() -> usize {
    10
}
fn default_lr_decay_factor() -> f64 {
    0.1
}

/// Training hyperparameters. The defaults are the ones exercised by the
/// test suite: temperature 0.05, bank momentum 0.1, similarity trade-off
/// 0.1, paired/unpaired balance 0.8, batch size 64 with 4 instances per
/// sampled cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau_c: f64,
    pub momentum: f64,
    pub lambda_sim: f64,
    pub lambda_reid: f64,
    pub instances_per_cluster: usize,
    pub seed: u64,
    pub d_out: usize,
    pub optimizer: OptimizerKind,
    pub neighbor_mode: NeighborMode,
    /// Re-normalize bank rows after every momentum update. Turning this off
    /// keeps the literal blend for ablation runs.
    pub renormalize: bool,
    /// Multiply the learning rate by `lr_decay_factor` every this many
    /// epochs; 0 disables the schedule.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            iters_per_epoch: default_iters(),
            batch_size: default_batch_size(),
            lr: default_lr(),
            tau_c: default_tau_c(),
            momentum: default_momentum(),
            lambda_sim: default_lambda_sim(),
            lambda_reid: default_lambda_reid(),
            instances_per_cluster: default_instances_per_cluster(),
            seed: 0,
            d_out: default_d_out(),
            optimizer: OptimizerKind::default(),
            neighbor_mode: NeighborMode::default(),
            renormalize: default_true(),
            lr_decay_every: default_lr_decay_every(),
            lr_decay_factor: default_lr_decay_factor(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.iters_per_epoch == 0
            || self.batch_size == 0
            || self.instances_per_cluster == 0
        {
            return Err(Error::InvalidConfig(
                "epochs, iters_per_epoch, batch_size, instances_per_cluster must be positive"
                    .into(),
            ));
        }
        if self.lr < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be non-negative, got {}",
                self.lr
            )));
        }
        if self.tau_c <= 0.0 {
            return Err(Error::InvalidTemperature(self.tau_c));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1], got {}",
                self.momentum
            )));
        }
        if self.lambda_sim < 0.0 {
            return Err(Error::NegativeLambda(self.lambda_sim));
        }
        if !(0.0..=1.0).contains(&self.lambda_reid) {
            return Err(Error::InvalidConfig(format!(
                "lambda_reid must lie in [0, 1], got {}",
                self.lambda_reid
            )));
        }
        if self.d_out < 2 {
            return Err(Error::InvalidConfig(format!(
                "d_out must be at least 2, got {}",
                self.d_out
            )));
        }
        Ok(())
    }

    fn lr_at_epoch(&self, epoch: usize) -> f64 {
        match epoch.checked_div(self.lr_decay_every) {
            Some(steps) => self.lr * self.lr_decay_factor.powi(steps as i32),
            None => self.lr, // decay disabled
        }
    }
}

/// Per-epoch summary. `queried` lists the distinct instances that served as
/// queries, so the no-unpaired-query rule can be audited after the fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub n_paired: usize,
    pub n_unpaired: usize,
    pub queried: Vec<usize>,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The randomly initialized encoder, before any update (the untrained
    /// baseline for evaluation).
    pub initial_encoder: LinearEncoder,
    pub encoder: LinearEncoder,
    pub history: Vec<EpochRecord>,
    pub paired_bank: PairedBank,
    pub unpaired_bank: UnpairedBank,
}

/// Run the self-training loop. Fully reproducible from `cfg.seed`.
pub fn train(
    raw: &EmbeddingMatrix,
    catalog: &SceneCatalog,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if raw.n() < 4 {
        return Err(Error::TooFewInstances { got: raw.n(), need: 4 });
    }
    crate::core::validate_catalog(catalog, raw.n())?;

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let enc_seed: u64 = master.gen();
    let sample_seed: u64 = master.gen();
    let upos_seed: u64 = master.gen();

    let mut encoder = LinearEncoder::random(raw.dim(), cfg.d_out, enc_seed);
    let initial_encoder = encoder.clone();
    let mut sample_rng = ChaCha8Rng::seed_from_u64(sample_seed);
    // Dedicated stream for the random unpaired positives, independent of the
    // batch sampling stream.
    let mut upos_rng = ChaCha8Rng::seed_from_u64(upos_seed);

    let mut adam = match cfg.optimizer {
        OptimizerKind::Adam => Some(AdamState::new(encoder.w.len())),
        OptimizerKind::Sgd => None,
    };

    let clusters_per_batch = (cfg.batch_size / cfg.instances_per_cluster).max(1);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut final_banks: Option<(PairedBank, UnpairedBank)> = None;

    for epoch in 0..cfg.epochs {
        let emb = encoder.encode_matrix(raw)?;
        let assignment = cgc::cgc_cluster(&emb, catalog, cfg.lambda_sim, cfg.neighbor_mode)?;
        assignment.check_scene_unique(catalog)?;
        let (mut paired, mut unpaired) = uam::init_banks(&assignment, &emb)?;
        let (n_paired, n_unpaired) = (paired.len(), unpaired.len());

        let lr = cfg.lr_at_epoch(epoch);
        let mut queried: BTreeSet<usize> = BTreeSet::new();
        let mut loss_sum = 0.0;

        for _ in 0..cfg.iters_per_epoch {
            // Sample paired clusters, then members (with replacement when a
            // cluster is smaller than instances_per_cluster).
            let chosen: Vec<usize> = if paired.len() >= clusters_per_batch {
                rand::seq::index::sample(&mut sample_rng, paired.len(), clusters_per_batch)
                    .into_vec()
            } else {
                (0..clusters_per_batch)
                    .map(|_| sample_rng.gen_range(0..paired.len()))
                    .collect()
            };
            let mut batch: Vec<usize> = Vec::with_capacity(cfg.batch_size);
            for &cid in &chosen {
                let members = paired.store_ids(cid);
                if members.len() >= cfg.instances_per_cluster {
                    let picks = rand::seq::index::sample(
                        &mut sample_rng,
                        members.len(),
                        cfg.instances_per_cluster,
                    );
                    batch.extend(picks.iter().map(|k| members[k]));
                } else {
                    for _ in 0..cfg.instances_per_cluster {
                        batch.push(members[sample_rng.gen_range(0..members.len())]);
                    }
                }
            }

            // Forward pass and per-query losses against the current banks.
            let mut feats: Vec<(usize, Vec<f64>)> = Vec::with_capacity(batch.len());
            let mut upstream: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
            let mut batch_loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &inst in &batch {
                queried.insert(inst);
                let q = encoder.encode(raw.row(inst))?;
                let pos = paired.cluster_of(inst).expect("query from a paired cluster");
                let lv = uam::reid_loss(
                    &q,
                    pos,
                    &paired,
                    &unpaired,
                    cfg.tau_c,
                    cfg.lambda_reid,
                    upos_rng.gen(),
                )?;
                batch_loss += lv.value * scale;
                upstream.push(lv.grad_q.iter().map(|g| g * scale).collect());
                feats.push((inst, q));
            }
            loss_sum += batch_loss;

            // Paired bank moves on the forward-pass features.
            uam::update_paired_bank(&mut paired, &feats, cfg.momentum, cfg.renormalize)?;

            // Gradient step on W.
            let inputs: Vec<&[f64]> = batch.iter().map(|&i| raw.row(i)).collect();
            let dw = backward(&encoder, &inputs, &upstream);
            match &mut adam {
                Some(state) => state.step(&mut encoder.w, &dw, lr),
                None => {
                    for (wk, gk) in encoder.w.iter_mut().zip(dw.iter()) {
                        *wk -= lr * gk;
                    }
                }
            }

            // Unpaired rows are refreshed from the updated encoder.
            if !unpaired.is_empty() {
                let updates: Result<Vec<(usize, Vec<f64>)>> = unpaired
                    .instance_ids()
                    .to_vec()
                    .iter()
                    .enumerate()
                    .map(|(row, &inst)| Ok((row, encoder.encode(raw.row(inst))?)))
                    .collect();
                uam::update_unpaired_bank(
                    &mut unpaired,
                    &updates?,
                    cfg.momentum,
                    cfg.renormalize,
                )?;
            }
        }

        history.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / cfg.iters_per_epoch as f64,
            n_paired,
            n_unpaired,
            queried: queried.into_iter().collect(),
        });
        final_banks = Some((paired, unpaired));
    }

    let (paired_bank, unpaired_bank) = final_banks.expect("at least one epoch");
    Ok(TrainOutcome {
        initial_encoder,
        encoder,
        history,
        paired_bank,
        unpaired_bank,
    })
}
