//! File-based command line over the library: `gen`, `cluster`, `train`,
//! `eval`, and the one-shot `pipeline`. Logs go to stderr, data to files or
//! stdout. Exit codes: 0 success, 1 internal error, 2 bad input or config.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctxreid::core::Box2d;
use ctxreid::datagen::WorldConfig;
use ctxreid::io;
use ctxreid::pipeline::PipelineConfig;
use ctxreid::trainer::TrainConfig;
use ctxreid::{cgc, datagen, eval, pipeline, trainer, Error, NeighborMode, Result};

#[derive(Parser)]
#[command(name = "ctxreid", version, about = "Context-guided clustering, contrastive training, and retrieval evaluation over embedding files")]
struct Cli {
    /// Override every config seed (world, training, gallery sweep).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Size of the thread pool used for similarity rows (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world: embeddings JSONL, catalog JSON, labels JSON.
    Gen(GenArgs),
    /// Cluster embeddings with context guidance and print/write the labels.
    Cluster(ClusterArgs),
    /// Train the linear encoder with the contrastive objective.
    Train(TrainArgs),
    /// Retrieval metrics for query/gallery embedding files.
    Eval(EvalArgs),
    /// Generate (or load), cluster, train, and evaluate in one run.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct GenArgs {
    /// World config JSON (see WorldConfig; all fields have defaults).
    #[arg(long)]
    config: PathBuf,
    /// Directory for embeddings.jsonl, catalog.json, labels.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Instance features, one {"id", "vec"} object per line.
    #[arg(long)]
    embeddings: PathBuf,
    /// Scene catalog JSON.
    #[arg(long)]
    catalog: PathBuf,
    /// Weight of the context similarity in the hybrid score.
    #[arg(long, default_value_t = 0.1)]
    lambda_sim: f64,
    /// First-neighbor handling of same-scene candidates.
    #[arg(long, default_value = "faithful")]
    neighbor_mode: NeighborMode,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Raw instance features (JSONL), ids must be contiguous from 0.
    #[arg(long)]
    embeddings: PathBuf,
    /// Scene catalog JSON.
    #[arg(long)]
    catalog: PathBuf,
    /// TrainConfig JSON; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for encoder.json, banks.json, history.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Keep the literal momentum blend, skipping bank re-normalization.
    #[arg(long)]
    no_renorm: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Query features (JSONL).
    #[arg(long)]
    queries: PathBuf,
    /// Gallery features (JSONL).
    #[arg(long)]
    gallery: PathBuf,
    /// Relevance JSON: [{"query", "relevant", "gt_box"?}, ...].
    #[arg(long)]
    relevance: PathBuf,
    /// Catalog providing gallery boxes for the IoU gate (optional).
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Ranks for the top-k matching rate.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    topk: Vec<usize>,
    /// Re-evaluate at these gallery sizes (per-query seeded subsampling).
    #[arg(long, value_delimiter = ',')]
    gallery_sizes: Option<Vec<usize>>,
    /// Seed for the gallery-size subsampling.
    #[arg(long, default_value_t = 0)]
    sweep_seed: u64,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// PipelineConfig JSON; a manifest.json from a previous run replays it.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for all stage artifacts.
    #[arg(long)]
    out: PathBuf,
}

fn emit_json<T: serde::Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    match out {
        Some(path) => io::write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn run_gen(args: GenArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: WorldConfig = io::read_json(&args.config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let world = datagen::generate(&cfg)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::File {
        path: args.out_dir.display().to_string(),
        source: e,
    })?;
    let n = world.raw_features.n();
    let ids: Vec<usize> = (0..n).collect();
    io::write_embeddings_jsonl(
        &args.out_dir.join("embeddings.jsonl"),
        &ids,
        &world.raw_features,
    )?;
    io::write_catalog_json(&args.out_dir.join("catalog.json"), &world.catalog)?;
    io::write_labels_json(&args.out_dir.join("labels.json"), &world.true_identity)?;
    eprintln!(
        "generated {n} instances across {} scenes into {}",
        world.catalog.n_scenes(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_cluster(args: ClusterArgs) -> Result<()> {
    let (ids, emb) = io::read_embeddings_jsonl(&args.embeddings)?;
    if ids != (0..ids.len()).collect::<Vec<usize>>() {
        return Err(Error::InvalidConfig(format!(
            "{}: instance ids must be contiguous from 0",
            args.embeddings.display()
        )));
    }
    let catalog = io::read_catalog_json(&args.catalog)?;
    ctxreid::core::validate_catalog(&catalog, emb.n())?;
    let assignment = cgc::cgc_cluster(&emb, &catalog, args.lambda_sim, args.neighbor_mode)?;
    eprintln!(
        "{} clusters ({} paired, {} unpaired)",
        assignment.n_clusters(),
        assignment.paired_ids().len(),
        assignment.unpaired_ids().len()
    );
    emit_json(&args.out, &io::ClusterOutput::from_assignment(&assignment))
}

fn run_train(args: TrainArgs, seed: Option<u64>) -> Result<()> {
    let (ids, raw) = io::read_embeddings_jsonl(&args.embeddings)?;
    if ids != (0..ids.len()).collect::<Vec<usize>>() {
        return Err(Error::InvalidConfig(format!(
            "{}: instance ids must be contiguous from 0",
            args.embeddings.display()
        )));
    }
    let catalog = io::read_catalog_json(&args.catalog)?;
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => io::read_json(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if args.no_renorm {
        cfg.renormalize = false;
    }
    let outcome = trainer::train(&raw, &catalog, &cfg)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::File {
        path: args.out.display().to_string(),
        source: e,
    })?;
    io::write_encoder_json(&args.out.join("encoder.json"), &outcome.encoder)?;
    io::write_json(
        &args.out.join("banks.json"),
        &ctxreid::uam::BankSnapshot::capture(&outcome.paired_bank, &outcome.unpaired_bank),
    )?;
    io::write_history_jsonl(&args.out.join("history.jsonl"), &outcome.history)?;
    for rec in &outcome.history {
        eprintln!(
            "epoch {}: mean loss {:.6}, {} paired / {} unpaired clusters",
            rec.epoch, rec.mean_loss, rec.n_paired, rec.n_unpaired
        );
    }
    Ok(())
}

fn run_eval(args: EvalArgs, seed: Option<u64>) -> Result<()> {
    let (query_ids, query_feats) = io::read_embeddings_jsonl(&args.queries)?;
    let (gallery_ids, gallery_feats) = io::read_embeddings_jsonl(&args.gallery)?;
    let relevance = io::read_relevance_json(&args.relevance)?;
    let boxes: Option<BTreeMap<usize, Box2d>> = match &args.catalog {
        Some(path) => {
            let catalog = io::read_catalog_json(path)?;
            catalog.boxes().map(|all| {
                all.iter()
                    .enumerate()
                    .map(|(i, b)| (i, *b))
                    .collect::<BTreeMap<usize, Box2d>>()
            })
        }
        None => None,
    };
    let report = eval::evaluate(
        &query_ids,
        &query_feats,
        &gallery_ids,
        &gallery_feats,
        &relevance,
        boxes.as_ref(),
        &args.topk,
    )?;

    #[derive(serde::Serialize)]
    struct EvalOutput {
        #[serde(flatten)]
        report: eval::MetricsReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        gallery_sweep: Option<BTreeMap<usize, eval::MetricsReport>>,
    }

    let gallery_sweep = match &args.gallery_sizes {
        Some(sizes) if !sizes.is_empty() => Some(eval::gallery_sweep(
            &query_ids,
            &query_feats,
            &gallery_ids,
            &gallery_feats,
            &relevance,
            boxes.as_ref(),
            &args.topk,
            sizes,
            seed.unwrap_or(args.sweep_seed),
        )?),
        _ => None,
    };
    emit_json(
        &args.out,
        &EvalOutput {
            report,
            gallery_sweep,
        },
    )
}

fn run_pipeline_cmd(args: PipelineArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: PipelineConfig = io::read_json(&args.config)?;
    if let Some(seed) = seed {
        if let Some(world) = &mut cfg.world {
            world.seed = seed;
        }
        cfg.train.seed = seed;
        cfg.eval.sweep_seed = seed;
    }
    let summary = pipeline::run_pipeline(&cfg, &args.out)?;
    eprintln!(
        "pipeline done: {} instances, {} queries; clustering F1 {:.4}; mAP {:.4} untrained -> {:.4} trained",
        summary.n_instances,
        summary.n_queries,
        summary.metrics.clustering.f1,
        summary.metrics.untrained.map,
        summary.metrics.trained.map
    );
    eprintln!("metrics written to {}", summary.metrics_path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => run_gen(args, cli.seed),
        Command::Cluster(args) => run_cluster(args),
        Command::Train(args) => run_train(args, cli.seed),
        Command::Eval(args) => run_eval(args, cli.seed),
        Command::Pipeline(args) => run_pipeline_cmd(args, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore failure: the pool may already be initialized in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = serde_json::json!({
                "error": { "kind": err.kind(), "message": err.to_string() }
            });
            eprintln!("{payload}");
            if err.is_user_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
