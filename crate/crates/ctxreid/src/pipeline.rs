//! One-shot pipeline: obtain a world (generated or loaded), cluster it,
//! train the encoder on the pseudo labels, and evaluate retrieval on a
//! held-out query/gallery split. Every run writes a manifest with all seeds
//! and hyperparameters; re-running from the manifest reproduces the metrics
//! file byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cgc;
use crate::core::{EmbeddingMatrix, SceneCatalog};
use crate::datagen::{self, WorldConfig};
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport, PairwiseScore, QueryRelevance};
use crate::io;
use crate::similarity::NeighborMode;
use crate::trainer::{self, TrainConfig};
use crate::uam::BankSnapshot;

fn default_topk() -> Vec<usize> {
    vec![1, 5, 10]
}

/// Clustering knobs exposed by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub lambda_sim: f64,
    pub neighbor_mode: NeighborMode,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            lambda_sim: 0.1,
            neighbor_mode: NeighborMode::Faithful,
        }
    }
}

/// Evaluation knobs exposed by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub topk: Vec<usize>,
    /// Optional gallery-size sweep (per-query subsampling with `sweep_seed`).
    pub gallery_sizes: Option<Vec<usize>>,
    pub sweep_seed: u64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            topk: default_topk(),
            gallery_sizes: None,
            sweep_seed: 0,
        }
    }
}

/// Full pipeline configuration. Either `world` (generate) or the three input
/// paths (load) must be given; the manifest written by a run is itself a
/// valid config that replays it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub world: Option<WorldConfig>,
    pub embeddings: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub cluster: ClusterParams,
    pub train: TrainConfig,
    pub eval: EvalParams,
}

/// Everything the pipeline reports into `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    /// Pseudo-label quality on the raw features, against ground truth.
    pub clustering: PairwiseScore,
    /// Retrieval with the randomly initialized encoder.
    pub untrained: MetricsReport,
    /// Retrieval with the trained encoder.
    pub trained: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gallery_sweep: Option<BTreeMap<usize, MetricsReport>>,
}

/// In-memory results of one run, alongside the files written to `out_dir`.
#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub metrics: PipelineMetrics,
    pub n_instances: usize,
    pub n_queries: usize,
    pub manifest_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// Hold out one query per multi-sighting identity; everything else (other
/// sightings and all unpaired persons) forms the gallery.
pub fn holdout_split(truth: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut first_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (inst, &label) in truth.iter().enumerate() {
        first_of.entry(label).or_insert(inst);
        *counts.entry(label).or_insert(0) += 1;
    }
    let queries: Vec<usize> = first_of
        .iter()
        .filter(|(label, _)| counts[label] >= 2)
        .map(|(_, &inst)| inst)
        .collect();
    let query_set: std::collections::BTreeSet<usize> = queries.iter().copied().collect();
    let gallery: Vec<usize> = (0..truth.len())
        .filter(|i| !query_set.contains(i))
        .collect();
    (queries, gallery)
}

/// Identity relevance for a held-out split.
pub fn split_relevance(
    truth: &[usize],
    queries: &[usize],
    gallery: &[usize],
) -> Vec<QueryRelevance> {
    queries
        .iter()
        .map(|&q| QueryRelevance {
            query: q,
            relevant: gallery
                .iter()
                .copied()
                .filter(|&g| truth[g] == truth[q])
                .collect(),
            gt_box: None,
        })
        .collect()
}

fn subset(emb: &EmbeddingMatrix, rows: &[usize]) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::from_rows(rows.iter().map(|&r| emb.row(r).to_vec()).collect())
}

fn load_world(cfg: &PipelineConfig) -> Result<(EmbeddingMatrix, SceneCatalog, Vec<usize>)> {
    if let Some(world_cfg) = &cfg.world {
        let world = datagen::generate(world_cfg)?;
        return Ok((world.raw_features, world.catalog, world.true_identity));
    }
    let emb_path = cfg
        .embeddings
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("neither world nor embeddings given".into()))?;
    let cat_path = cfg
        .catalog
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("catalog path required when loading a world".into()))?;
    let lab_path = cfg.labels.as_ref().ok_or_else(|| {
        Error::InvalidConfig("labels path required for held-out evaluation".into())
    })?;
    let (ids, emb) = io::read_embeddings_jsonl(emb_path)?;
    if ids != (0..ids.len()).collect::<Vec<usize>>() {
        return Err(Error::InvalidConfig(format!(
            "{}: instance ids must be contiguous from 0",
            emb_path.display()
        )));
    }
    let catalog = io::read_catalog_json(cat_path)?;
    crate::core::validate_catalog(&catalog, emb.n())?;
    let labels = io::read_labels_json(lab_path)?;
    if labels.len() != emb.n() {
        return Err(Error::InvalidConfig(format!(
            "{}: {} labels for {} instances",
            lab_path.display(),
            labels.len(),
            emb.n()
        )));
    }
    Ok((emb, catalog, labels))
}

/// Run all stages and write `manifest.json`, `clusters.json`,
/// `encoder.json`, `banks.json`, `history.jsonl`, and `metrics.json` under
/// `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<PipelineSummary> {
    cfg.train.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::File {
        path: out_dir.display().to_string(),
        source: e,
    })?;

    // The manifest is the fully resolved config; replaying it reproduces
    // this run exactly.
    let manifest_path = out_dir.join("manifest.json");
    io::write_json(&manifest_path, cfg)?;

    let (raw, catalog, truth) = load_world(cfg)?;

    // Stage 1: pseudo labels on the raw features.
    let assignment = cgc::cgc_cluster(
        &raw,
        &catalog,
        cfg.cluster.lambda_sim,
        cfg.cluster.neighbor_mode,
    )?;
    assignment.check_scene_unique(&catalog)?;
    io::write_json(
        &out_dir.join("clusters.json"),
        &io::ClusterOutput::from_assignment(&assignment),
    )?;
    let clustering = eval::pairwise_f1(assignment.label_of(), &truth)?;

    // Stage 2: train the encoder.
    let outcome = trainer::train(&raw, &catalog, &cfg.train)?;
    io::write_encoder_json(&out_dir.join("encoder.json"), &outcome.encoder)?;
    io::write_json(
        &out_dir.join("banks.json"),
        &BankSnapshot::capture(&outcome.paired_bank, &outcome.unpaired_bank),
    )?;
    io::write_history_jsonl(&out_dir.join("history.jsonl"), &outcome.history)?;

    // Stage 3: held-out retrieval, trained vs untrained.
    let (queries, gallery) = holdout_split(&truth);
    if queries.is_empty() {
        return Err(Error::InvalidConfig(
            "held-out split is empty: no identity has two or more sightings".into(),
        ));
    }
    let relevance = split_relevance(&truth, &queries, &gallery);

    let eval_with = |encoder: &trainer::LinearEncoder| -> Result<MetricsReport> {
        let emb = encoder.encode_matrix(&raw)?;
        let qf = subset(&emb, &queries)?;
        let gf = subset(&emb, &gallery)?;
        eval::evaluate(
            &queries,
            &qf,
            &gallery,
            &gf,
            &relevance,
            None,
            &cfg.eval.topk,
        )
    };
    let untrained = eval_with(&outcome.initial_encoder)?;
    let trained = eval_with(&outcome.encoder)?;

    let gallery_sweep = match &cfg.eval.gallery_sizes {
        Some(sizes) if !sizes.is_empty() => {
            let emb = outcome.encoder.encode_matrix(&raw)?;
            let qf = subset(&emb, &queries)?;
            let gf = subset(&emb, &gallery)?;
            Some(eval::gallery_sweep(
                &queries,
                &qf,
                &gallery,
                &gf,
                &relevance,
                None,
                &cfg.eval.topk,
                sizes,
                cfg.eval.sweep_seed,
            )?)
        }
        _ => None,
    };

    let metrics = PipelineMetrics {
        clustering,
        untrained,
        trained,
        gallery_sweep,
    };
    let metrics_path = out_dir.join("metrics.json");
    io::write_json(&metrics_path, &metrics)?;

    Ok(PipelineSummary {
        metrics,
        n_instances: raw.n(),
        n_queries: queries.len(),
        manifest_path,
        metrics_path,
    })
}
