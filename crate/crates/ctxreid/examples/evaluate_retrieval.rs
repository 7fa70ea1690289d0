//! Retrieval evaluation piece by piece: ranking, average precision, top-k
//! matching with the IoU gate, the gallery-size sweep, and pairwise-F1
//! clustering quality.
//!
//! Run: cargo run -p ctxreid --example evaluate_retrieval

use std::collections::BTreeMap;

use ctxreid::core::{Box2d, l2_normalize};
use ctxreid::eval::{
    average_precision, evaluate, gallery_sweep, iou, pairwise_f1, retrieve, QueryRelevance,
};
use ctxreid::EmbeddingMatrix;

fn main() -> ctxreid::Result<()> {
    // A tiny hand-made gallery: item 1 matches the query, items 0 and 2 are
    // distractors at various angles.
    let gallery = EmbeddingMatrix::from_rows(vec![
        l2_normalize(&[0.8, 0.6])?,
        vec![1.0, 0.0],
        vec![0.0, 1.0],
    ])?;
    let query = vec![1.0, 0.0];

    let result = retrieve(0, &query, &gallery);
    println!("ranking for the query: {:?}", result.ranked);
    println!("scores               : {:?}\n", result.scores);

    println!("average precision of [relevant, miss, relevant]: {:.4}",
        average_precision(&[true, false, true])?);
    println!("average precision of [miss, relevant]          : {:.4}\n",
        average_precision(&[false, true])?);

    // Identity relevance alone.
    let relevance = vec![QueryRelevance {
        query: 0,
        relevant: [1usize].into_iter().collect(),
        gt_box: None,
    }];
    let queries = EmbeddingMatrix::from_rows(vec![query.clone()])?;
    let report = evaluate(
        &[0],
        &queries,
        &[0, 1, 2],
        &gallery,
        &relevance,
        None,
        &[1, 2, 3],
    )?;
    println!("identity-only evaluation: mAP {:.4}, top-1 {:.1}", report.map, report.cmc[&1]);

    // With boxes, a match must also overlap the ground truth (IoU >= 0.5).
    let gt = Box2d::new(0.0, 0.0, 10.0, 10.0);
    let good = Box2d::new(0.0, 0.0, 10.0, 9.0);
    let bad = Box2d::new(40.0, 40.0, 50.0, 50.0);
    println!(
        "\nIoU(gt, shifted) = {:.4}, IoU(gt, far away) = {:.4}",
        iou(&gt, &good)?,
        iou(&gt, &bad)?
    );
    let mut boxes = BTreeMap::new();
    boxes.insert(1usize, bad); // the true match is badly localized
    let relevance_boxed = vec![QueryRelevance {
        query: 0,
        relevant: [1usize].into_iter().collect(),
        gt_box: Some(gt),
    }];
    match evaluate(
        &[0],
        &queries,
        &[0, 1, 2],
        &gallery,
        &relevance_boxed,
        Some(&boxes),
        &[1],
    ) {
        Err(e) => println!("with the IoU gate the query loses its only match: {e}"),
        Ok(r) => println!("boxed evaluation: mAP {:.4}", r.map),
    }

    // Gallery-size sweep on a larger random problem: bigger galleries mean
    // more distractors and lower scores.
    let mut rows = Vec::new();
    let mut rng_state = 88u64;
    let mut next = || {
        // Tiny xorshift; enough for demo data.
        rng_state ^= rng_state << 13;
        rng_state ^= rng_state >> 7;
        rng_state ^= rng_state << 17;
        (rng_state as f64 / u64::MAX as f64) * 2.0 - 1.0
    };
    for _ in 0..60 {
        rows.push(l2_normalize(&[next(), next(), next(), next()])?);
    }
    let big_gallery = EmbeddingMatrix::from_rows(rows.clone())?;
    let big_query = EmbeddingMatrix::from_rows(vec![rows[7].clone()])?;
    let ids: Vec<usize> = (0..60).collect();
    let rel = vec![QueryRelevance {
        query: 0,
        relevant: [7usize, 8].into_iter().collect(),
        gt_box: None,
    }];
    let sweep = gallery_sweep(
        &[0], &big_query, &ids, &big_gallery, &rel, None, &[1, 5], &[10, 25, 50], 9,
    )?;
    println!("\ngallery-size sweep:");
    for (size, r) in &sweep {
        println!("  size {size:>3}: mAP {:.4}, top-1 {:.2}", r.map, r.cmc[&1]);
    }

    // Clustering quality against ground truth, over instance pairs.
    let truth = vec![0, 0, 1, 1, 2, 2];
    let pred = vec![0, 0, 1, 2, 3, 3];
    let score = pairwise_f1(&pred, &truth)?;
    println!(
        "\npairwise clustering quality: precision {:.4}, recall {:.4}, F1 {:.4}",
        score.precision, score.recall, score.f1
    );
    Ok(())
}
