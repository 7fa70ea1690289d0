//! Paired/unpaired memory banks and the contrastive losses computed against
//! them.
//!
//! The paired bank holds one centroid per multi-member cluster plus each
//! cluster's instance features (for hard mining); the unpaired bank holds
//! one feature per singleton. A query is always a member of a paired
//! cluster — unpaired features only ever appear on the negative side, which
//! is what pushes them away from paired identities.
//!
//! Losses (all softmax cross-entropy over temperature-scaled dot products):
//! * centroid loss: positives/negatives are the paired centroids;
//! * hard loss: per cluster, the stored instance with the highest similarity
//!   to the query (the hard negative), except the positive cluster which
//!   contributes its least similar instance (the hard positive);
//! * unpaired loss: logits over the unpaired bank with a seeded random row
//!   acting as the positive.
//!
//! Bank rows move by momentum blending and are re-normalized to the unit
//! sphere afterwards (the raw blend is available via `renorm = false`).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{dot, l2_normalize, ClusterAssignment, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Centroid bank over paired clusters, with the per-cluster instance store
/// used for hard mining.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedBank {
    centroids: Vec<Vec<f64>>,
    store_features: Vec<Vec<Vec<f64>>>,
    store_ids: Vec<Vec<usize>>,
    cluster_of: BTreeMap<usize, usize>,
    dim: usize,
}

impl PairedBank {
    /// Number of paired clusters.
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, cluster: usize) -> &[f64] {
        &self.centroids[cluster]
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// Stored instance features of one cluster.
    pub fn store(&self, cluster: usize) -> &[Vec<f64>] {
        &self.store_features[cluster]
    }

    pub fn store_ids(&self, cluster: usize) -> &[usize] {
        &self.store_ids[cluster]
    }

    /// Bank-local cluster id of an instance, if it belongs to a paired
    /// cluster.
    pub fn cluster_of(&self, instance: usize) -> Option<usize> {
        self.cluster_of.get(&instance).copied()
    }

    pub fn cluster_map(&self) -> &BTreeMap<usize, usize> {
        &self.cluster_of
    }
}

/// Instance bank over singleton clusters, in cluster-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct UnpairedBank {
    features: Vec<Vec<f64>>,
    instance_ids: Vec<usize>,
}

impl UnpairedBank {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, row: usize) -> &[f64] {
        &self.features[row]
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    /// Instance id behind each bank row.
    pub fn instance_ids(&self) -> &[usize] {
        &self.instance_ids
    }
}

/// A scalar loss together with its gradient with respect to the query.
///
/// `probs` holds the softmax probabilities of the underlying cross-entropy
/// (empty for composite losses), kept around so tests can check they sum
/// to one.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad_q: Vec<f64>,
    pub probs: Vec<f64>,
}

impl LossValue {
    fn zero(dim: usize) -> Self {
        LossValue {
            value: 0.0,
            grad_q: vec![0.0; dim],
            probs: Vec::new(),
        }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

/// Initialize both banks from a cluster assignment.
///
/// Paired centroids are normalized means of the member features; the store
/// keeps every member feature. Unpaired rows are the singleton features in
/// cluster-id order.
pub fn init_banks(
    assignment: &ClusterAssignment,
    emb: &EmbeddingMatrix,
) -> Result<(PairedBank, UnpairedBank)> {
    if assignment.n_instances() != emb.n() {
        return Err(Error::InvalidConfig(format!(
            "assignment covers {} instances, embeddings have {}",
            assignment.n_instances(),
            emb.n()
        )));
    }
    if assignment.paired_ids().is_empty() {
        return Err(Error::NoPairedClusters);
    }
    let d = emb.dim();

    let mut centroids = Vec::new();
    let mut store_features = Vec::new();
    let mut store_ids = Vec::new();
    let mut cluster_of = BTreeMap::new();
    for (bank_id, &cid) in assignment.paired_ids().iter().enumerate() {
        let members = assignment.cluster(cid);
        let mut mean = vec![0.0; d];
        for &inst in members {
            for (acc, x) in mean.iter_mut().zip(emb.row(inst)) {
                *acc += x;
            }
            cluster_of.insert(inst, bank_id);
        }
        for acc in mean.iter_mut() {
            *acc /= members.len() as f64;
        }
        centroids.push(l2_normalize(&mean)?);
        store_features.push(members.iter().map(|&i| emb.row(i).to_vec()).collect());
        store_ids.push(members.to_vec());
    }

    let mut features = Vec::new();
    let mut instance_ids = Vec::new();
    for &cid in assignment.unpaired_ids() {
        let inst = assignment.cluster(cid)[0];
        features.push(emb.row(inst).to_vec());
        instance_ids.push(inst);
    }

    Ok((
        PairedBank {
            centroids,
            store_features,
            store_ids,
            cluster_of,
            dim: d,
        },
        UnpairedBank {
            features,
            instance_ids,
        },
    ))
}

/// Numerically stable softmax cross-entropy over `q . row / tau` logits.
/// Returns the loss, its gradient w.r.t. `q`, and the probabilities.
fn softmax_cross_entropy<'a, I>(q: &[f64], rows: I, pos: usize, tau: f64) -> LossValue
where
    I: Iterator<Item = &'a [f64]> + Clone,
{
    let logits: Vec<f64> = rows.clone().map(|r| dot(q, r) / tau).collect();
    debug_assert!(pos < logits.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let value = z.ln() - (logits[pos] - max);

    // d/dq of -log softmax_pos = (sum_i p_i r_i - r_pos) / tau
    let mut grad = vec![0.0; q.len()];
    for (i, r) in rows.enumerate() {
        let w = if i == pos {
            (probs[i] - 1.0) / tau
        } else {
            probs[i] / tau
        };
        for (g, x) in grad.iter_mut().zip(r) {
            *g += w * x;
        }
    }
    LossValue {
        value,
        grad_q: grad,
        probs,
    }
}

fn check_temperature(tau_c: f64) -> Result<()> {
    if tau_c > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(tau_c))
    }
}

/// Cross-entropy of the query against the paired centroids, positive at
/// `pos`.
pub fn cluster_loss(
    q: &[f64],
    pos: usize,
    bank: &PairedBank,
    tau_c: f64,
) -> Result<LossValue> {
    check_temperature(tau_c)?;
    if pos >= bank.len() {
        return Err(Error::UnknownCluster(pos));
    }
    Ok(softmax_cross_entropy(
        q,
        bank.centroids.iter().map(|c| c.as_slice()),
        pos,
        tau_c,
    ))
}

/// Hard-mined variant: each cluster's logit uses its stored instance with
/// the highest similarity to the query, except the positive cluster which
/// uses its lowest-similarity instance. The selection is treated as constant
/// when differentiating.
pub fn hard_loss(q: &[f64], pos: usize, bank: &PairedBank, tau_c: f64) -> Result<LossValue> {
    check_temperature(tau_c)?;
    if pos >= bank.len() {
        return Err(Error::UnknownCluster(pos));
    }
    let mut picked: Vec<&[f64]> = Vec::with_capacity(bank.len());
    for (cid, store) in bank.store_features.iter().enumerate() {
        debug_assert!(!store.is_empty(), "paired cluster with empty store");
        let mut best = store[0].as_slice();
        let mut best_sim = dot(q, best);
        for feat in &store[1..] {
            let sim = dot(q, feat);
            let better = if cid == pos { sim < best_sim } else { sim > best_sim };
            if better {
                best = feat.as_slice();
                best_sim = sim;
            }
        }
        picked.push(best);
    }
    Ok(softmax_cross_entropy(
        q,
        picked.iter().copied(),
        pos,
        tau_c,
    ))
}

/// Sum of the centroid and hard-mined losses.
pub fn paired_loss(q: &[f64], pos: usize, bank: &PairedBank, tau_c: f64) -> Result<LossValue> {
    let a = cluster_loss(q, pos, bank, tau_c)?;
    let b = hard_loss(q, pos, bank, tau_c)?;
    Ok(LossValue {
        value: a.value + b.value,
        grad_q: a
            .grad_q
            .iter()
            .zip(b.grad_q.iter())
            .map(|(x, y)| x + y)
            .collect(),
        probs: Vec::new(),
    })
}

/// Cross-entropy of the query against the unpaired bank. There is no true
/// positive among singletons, so one row — drawn uniformly by a generator
/// seeded with `rng_seed` and used for nothing else — stands in as the
/// positive.
pub fn unpaired_loss(
    q: &[f64],
    bank: &UnpairedBank,
    tau_c: f64,
    rng_seed: u64,
) -> Result<LossValue> {
    check_temperature(tau_c)?;
    if bank.is_empty() {
        return Err(Error::EmptyUnpairedBank);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pos = rng.gen_range(0..bank.len());
    Ok(softmax_cross_entropy(
        q,
        bank.features.iter().map(|f| f.as_slice()),
        pos,
        tau_c,
    ))
}

/// The combined objective: `lambda_reid * L_paired + (1 - lambda_reid) *
/// L_unpaired`. With an empty unpaired bank the unpaired term is zero and no
/// renormalization of the balance takes place.
pub fn reid_loss(
    q: &[f64],
    pos: usize,
    paired: &PairedBank,
    unpaired: &UnpairedBank,
    tau_c: f64,
    lambda_reid: f64,
    rng_seed: u64,
) -> Result<LossValue> {
    if !(0.0..=1.0).contains(&lambda_reid) {
        return Err(Error::InvalidConfig(format!(
            "lambda_reid must lie in [0, 1], got {lambda_reid}"
        )));
    }
    let p = paired_loss(q, pos, paired, tau_c)?;
    let u = if unpaired.is_empty() {
        LossValue::zero(q.len())
    } else {
        unpaired_loss(q, unpaired, tau_c, rng_seed)?
    };
    Ok(LossValue {
        value: lambda_reid * p.value + (1.0 - lambda_reid) * u.value,
        grad_q: p
            .grad_q
            .iter()
            .zip(u.grad_q.iter())
            .map(|(gp, gu)| lambda_reid * gp + (1.0 - lambda_reid) * gu)
            .collect(),
        probs: Vec::new(),
    })
}

fn check_momentum(m: f64) -> Result<()> {
    if (0.0..=1.0).contains(&m) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "momentum must lie in [0, 1], got {m}"
        )))
    }
}

fn blend(old: &[f64], new: &[f64], m: f64, renorm: bool) -> Result<Vec<f64>> {
    let mixed: Vec<f64> = old
        .iter()
        .zip(new.iter())
        .map(|(o, n)| m * o + (1.0 - m) * n)
        .collect();
    if renorm {
        l2_normalize(&mixed)
    } else {
        Ok(mixed)
    }
}

/// Momentum update of the paired bank from one mini-batch.
///
/// `batch` pairs instance ids with their freshly computed features. Per
/// affected cluster the batch mean is blended into the centroid
/// (`m * old + (1 - m) * mean`); store rows of batch instances are replaced.
pub fn update_paired_bank(
    bank: &mut PairedBank,
    batch: &[(usize, Vec<f64>)],
    m: f64,
    renorm: bool,
) -> Result<()> {
    check_momentum(m)?;
    // Per-cluster means first, then one blend per cluster, so the order of
    // batch entries cannot matter.
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (instance, feat) in batch {
        let cid = bank
            .cluster_of(*instance)
            .ok_or(Error::UnknownCluster(*instance))?;
        let entry = sums
            .entry(cid)
            .or_insert_with(|| (vec![0.0; bank.dim], 0));
        for (acc, x) in entry.0.iter_mut().zip(feat) {
            *acc += x;
        }
        entry.1 += 1;
    }
    for (cid, (sum, count)) in &sums {
        let mean: Vec<f64> = sum.iter().map(|s| s / *count as f64).collect();
        bank.centroids[*cid] = blend(&bank.centroids[*cid], &mean, m, renorm)?;
    }
    for (instance, feat) in batch {
        let cid = bank.cluster_of(*instance).expect("checked above");
        let slot = bank.store_ids[cid]
            .iter()
            .position(|&i| i == *instance)
            .expect("instance listed in its cluster store");
        bank.store_features[cid][slot] = feat.clone();
    }
    Ok(())
}

/// Momentum update of unpaired rows: `u <- m * u + (1 - m) * u_new` per
/// listed bank row.
pub fn update_unpaired_bank(
    bank: &mut UnpairedBank,
    updates: &[(usize, Vec<f64>)],
    m: f64,
    renorm: bool,
) -> Result<()> {
    check_momentum(m)?;
    for (row, _) in updates {
        if *row >= bank.len() {
            return Err(Error::UnknownCluster(*row));
        }
    }
    for (row, feat) in updates {
        bank.features[*row] = blend(&bank.features[*row], feat, m, renorm)?;
    }
    Ok(())
}

/// Serializable view of both banks, for checkpointing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankSnapshot {
    pub paired: Vec<Vec<f64>>,
    pub unpaired: Vec<Vec<f64>>,
    pub cluster_of: BTreeMap<usize, usize>,
}

impl BankSnapshot {
    pub fn capture(paired: &PairedBank, unpaired: &UnpairedBank) -> Self {
        BankSnapshot {
            paired: paired.centroids.clone(),
            unpaired: unpaired.features.clone(),
            cluster_of: paired.cluster_of.clone(),
        }
    }
}
