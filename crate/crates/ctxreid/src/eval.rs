//! Retrieval and clustering-quality metrics: ranked gallery retrieval by
//! cosine similarity, average precision / mAP, top-k matching rates (with an
//! IoU >= 0.5 gate when boxes are available), and pairwise precision/recall/
//! F1 against ground-truth labels.
//!
//! Conventions: AP is the plain discrete sum (precision at each relevant
//! rank, no interpolation); queries without any relevant gallery item are
//! excluded from both the mAP and the top-k denominators.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{dot, Box2d, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Minimum overlap for a box match to count.
pub const IOU_THRESHOLD: f64 = 0.5;

/// Intersection over union of two boxes; 0 when disjoint.
pub fn iou(a: &Box2d, b: &Box2d) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    Ok(inter / union)
}

/// Gallery ids ranked by descending similarity to one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_id: usize,
    pub ranked: Vec<usize>,
    pub scores: Vec<f64>,
}

fn rank_rows(query_feat: &[f64], gallery: &EmbeddingMatrix, ids: &[usize]) -> RetrievalResult {
    debug_assert_eq!(ids.len(), gallery.n());
    let mut order: Vec<usize> = (0..gallery.n()).collect();
    let scores: Vec<f64> = (0..gallery.n())
        .map(|r| dot(query_feat, gallery.row(r)))
        .collect();
    // Descending score, then ascending id.
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(ids[a].cmp(&ids[b]))
    });
    RetrievalResult {
        query_id: usize::MAX,
        ranked: order.iter().map(|&r| ids[r]).collect(),
        scores: order.iter().map(|&r| scores[r]).collect(),
    }
}

/// Rank every gallery row against a query feature. Gallery ids are the row
/// indices; ties break toward the smaller id.
pub fn retrieve(query_id: usize, query_feat: &[f64], gallery: &EmbeddingMatrix) -> RetrievalResult {
    let ids: Vec<usize> = (0..gallery.n()).collect();
    let mut result = rank_rows(query_feat, gallery, &ids);
    result.query_id = query_id;
    result
}

/// Discrete average precision over a ranked relevance vector:
/// `AP = (1/R) * sum over relevant ranks k of (relevant in top k) / k`.
pub fn average_precision(flags: &[bool]) -> Result<f64> {
    let total = flags.iter().filter(|&&f| f).count();
    if total == 0 {
        return Err(Error::NoRelevant);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &flag) in flags.iter().enumerate() {
        if flag {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

/// Fraction of queries with at least one relevant item in the top k, for
/// each k. Input is one rank-ordered relevance vector per query.
pub fn cmc_topk(flags_per_query: &[Vec<bool>], ks: &[usize]) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    if flags_per_query.is_empty() {
        for &k in ks {
            out.insert(k, 0.0);
        }
        return out;
    }
    for &k in ks {
        let hits = flags_per_query
            .iter()
            .filter(|flags| flags.iter().take(k).any(|&f| f))
            .count();
        out.insert(k, hits as f64 / flags_per_query.len() as f64);
    }
    out
}

/// Which gallery items count as matches for one query, plus the optional
/// ground-truth box used for the IoU gate.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRelevance {
    pub query: usize,
    pub relevant: BTreeSet<usize>,
    pub gt_box: Option<Box2d>,
}

/// mAP, top-k rates, and the per-query APs behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub cmc: BTreeMap<usize, f64>,
    pub per_query_ap: BTreeMap<usize, f64>,
}

fn relevance_flags(
    result: &RetrievalResult,
    rel: &QueryRelevance,
    gallery_boxes: Option<&BTreeMap<usize, Box2d>>,
) -> Result<Vec<bool>> {
    let mut flags = Vec::with_capacity(result.ranked.len());
    for &gid in &result.ranked {
        let mut hit = rel.relevant.contains(&gid);
        if hit {
            if let (Some(gt), Some(boxes)) = (rel.gt_box, gallery_boxes) {
                hit = match boxes.get(&gid) {
                    Some(b) => iou(b, &gt)? >= IOU_THRESHOLD,
                    None => false,
                };
            }
        }
        flags.push(hit);
    }
    Ok(flags)
}

/// Full retrieval protocol: rank the gallery per query, apply the relevance
/// (and IoU, when boxes are present) rules, and aggregate mAP and top-k.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    query_ids: &[usize],
    query_feats: &EmbeddingMatrix,
    gallery_ids: &[usize],
    gallery: &EmbeddingMatrix,
    relevance: &[QueryRelevance],
    gallery_boxes: Option<&BTreeMap<usize, Box2d>>,
    ks: &[usize],
) -> Result<MetricsReport> {
    if query_ids.len() != query_feats.n() {
        return Err(Error::InvalidConfig(format!(
            "{} query ids for {} query features",
            query_ids.len(),
            query_feats.n()
        )));
    }
    if gallery_ids.len() != gallery.n() {
        return Err(Error::InvalidConfig(format!(
            "{} gallery ids for {} gallery rows",
            gallery_ids.len(),
            gallery.n()
        )));
    }
    let rel_of: BTreeMap<usize, &QueryRelevance> =
        relevance.iter().map(|r| (r.query, r)).collect();

    let mut per_query_ap = BTreeMap::new();
    let mut flag_rows = Vec::new();
    for (row, &qid) in query_ids.iter().enumerate() {
        let rel = rel_of.get(&qid).ok_or_else(|| {
            Error::InvalidConfig(format!("no relevance entry for query {qid}"))
        })?;
        let mut result = rank_rows(query_feats.row(row), gallery, gallery_ids);
        result.query_id = qid;
        let flags = relevance_flags(&result, rel, gallery_boxes)?;
        if !flags.iter().any(|&f| f) {
            continue; // excluded from all denominators
        }
        per_query_ap.insert(qid, average_precision(&flags)?);
        flag_rows.push(flags);
    }
    if per_query_ap.is_empty() {
        return Err(Error::NoRelevant);
    }
    let map = per_query_ap.values().sum::<f64>() / per_query_ap.len() as f64;
    Ok(MetricsReport {
        map,
        cmc: cmc_topk(&flag_rows, ks),
        per_query_ap,
    })
}

/// Re-run the evaluation at fixed gallery sizes. Each query keeps its
/// relevant items and pads with seeded-random distractors up to the size, so
/// larger sizes mean more distraction.
#[allow(clippy::too_many_arguments)]
pub fn gallery_sweep(
    query_ids: &[usize],
    query_feats: &EmbeddingMatrix,
    gallery_ids: &[usize],
    gallery: &EmbeddingMatrix,
    relevance: &[QueryRelevance],
    gallery_boxes: Option<&BTreeMap<usize, Box2d>>,
    ks: &[usize],
    sizes: &[usize],
    seed: u64,
) -> Result<BTreeMap<usize, MetricsReport>> {
    let rel_of: BTreeMap<usize, &QueryRelevance> =
        relevance.iter().map(|r| (r.query, r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for &size in sizes {
        let mut per_query_ap = BTreeMap::new();
        let mut flag_rows = Vec::new();
        for (row, &qid) in query_ids.iter().enumerate() {
            let rel = rel_of.get(&qid).ok_or_else(|| {
                Error::InvalidConfig(format!("no relevance entry for query {qid}"))
            })?;
            let mut keep: Vec<usize> = Vec::new();
            let mut distractors: Vec<usize> = Vec::new();
            for (r, &gid) in gallery_ids.iter().enumerate() {
                if rel.relevant.contains(&gid) {
                    keep.push(r);
                } else {
                    distractors.push(r);
                }
            }
            distractors.shuffle(&mut rng);
            for &r in &distractors {
                if keep.len() >= size {
                    break;
                }
                keep.push(r);
            }
            keep.sort_unstable();
            let sub_ids: Vec<usize> = keep.iter().map(|&r| gallery_ids[r]).collect();
            let sub = EmbeddingMatrix::from_rows(
                keep.iter().map(|&r| gallery.row(r).to_vec()).collect(),
            )?;
            let mut result = rank_rows(query_feats.row(row), &sub, &sub_ids);
            result.query_id = qid;
            let flags = relevance_flags(&result, rel, gallery_boxes)?;
            if !flags.iter().any(|&f| f) {
                continue;
            }
            per_query_ap.insert(qid, average_precision(&flags)?);
            flag_rows.push(flags);
        }
        if per_query_ap.is_empty() {
            return Err(Error::NoRelevant);
        }
        let map = per_query_ap.values().sum::<f64>() / per_query_ap.len() as f64;
        out.insert(
            size,
            MetricsReport {
                map,
                cmc: cmc_topk(&flag_rows, ks),
                per_query_ap,
            },
        );
    }
    Ok(out)
}

/// Pairwise clustering quality against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision/recall/F1 of "same predicted cluster" against "same true
/// label", over all unordered instance pairs. Vacuous denominators count as
/// perfect; F1 is 0 when precision and recall are both 0.
pub fn pairwise_f1(predicted: &[usize], truth: &[usize]) -> Result<PairwiseScore> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidConfig(format!(
            "{} predicted labels vs {} true labels",
            predicted.len(),
            truth.len()
        )));
    }
    let n = predicted.len();
    let (mut tp, mut pred_pairs, mut true_pairs) = (0u64, 0u64, 0u64);
    for i in 0..n {
        for j in (i + 1)..n {
            let same_pred = predicted[i] == predicted[j];
            let same_true = truth[i] == truth[j];
            pred_pairs += same_pred as u64;
            true_pairs += same_true as u64;
            tp += (same_pred && same_true) as u64;
        }
    }
    let precision = if pred_pairs == 0 {
        1.0
    } else {
        tp as f64 / pred_pairs as f64
    };
    let recall = if true_pairs == 0 {
        1.0
    } else {
        tp as f64 / true_pairs as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PairwiseScore {
        precision,
        recall,
        f1,
    })
}
