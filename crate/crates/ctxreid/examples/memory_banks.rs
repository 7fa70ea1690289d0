//! The contrastive memory unit up close: bank initialization from a
//! clustering, the centroid / hard-mined / unpaired losses for one query,
//! and momentum updates of both banks.
//!
//! Run: cargo run -p ctxreid --example memory_banks

use ctxreid::cgc::cgc_cluster;
use ctxreid::datagen::{generate, WorldConfig};
use ctxreid::similarity::NeighborMode;
use ctxreid::uam::{
    cluster_loss, hard_loss, init_banks, reid_loss, unpaired_loss, update_paired_bank,
    update_unpaired_bank, BankSnapshot,
};

fn main() -> ctxreid::Result<()> {
    let world = generate(&WorldConfig {
        n_identities: 8,
        sightings_per_identity: 3,
        n_unpaired: 4,
        d_raw: 16,
        noise_sigma: 0.1,
        cotravel_prob: 0.5,
        persons_per_scene: (2, 4),
        seed: 5,
    })?;
    let assignment = cgc_cluster(&world.raw_features, &world.catalog, 0.1, NeighborMode::Faithful)?;
    let (mut paired, mut unpaired) = init_banks(&assignment, &world.raw_features)?;
    println!(
        "banks initialized: {} paired centroids, {} unpaired features\n",
        paired.len(),
        unpaired.len()
    );

    // A query is always a member of a paired cluster. Take the first stored
    // instance of cluster 0.
    let query_instance = paired.store_ids(0)[0];
    let q = world.raw_features.row(query_instance).to_vec();
    let tau = 0.05;

    let centroid = cluster_loss(&q, 0, &paired, tau)?;
    println!("centroid loss    : {:.6}", centroid.value);
    println!(
        "  softmax over {} centroids, probabilities sum to {:.9}",
        paired.len(),
        centroid.probabilities().iter().sum::<f64>()
    );

    let hard = hard_loss(&q, 0, &paired, tau)?;
    println!("hard-mined loss  : {:.6}", hard.value);
    println!("  positive logit uses the member least similar to the query,");
    println!("  each negative cluster its most similar stored instance");

    let unp = unpaired_loss(&q, &unpaired, tau, 42)?;
    println!("unpaired loss    : {:.6} (seeded random positive)", unp.value);

    let total = reid_loss(&q, 0, &paired, &unpaired, tau, 0.8, 42)?;
    println!(
        "combined         : {:.6} = 0.8 * (centroid + hard) + 0.2 * unpaired",
        total.value
    );
    println!(
        "gradient w.r.t. query has {} components, norm {:.4}\n",
        total.grad_q.len(),
        total.grad_q.iter().map(|g| g * g).sum::<f64>().sqrt()
    );

    // Momentum updates: blend new features in, then re-normalize.
    let before = paired.centroid(0).to_vec();
    let batch: Vec<(usize, Vec<f64>)> = paired.store_ids(0)[..2]
        .iter()
        .map(|&inst| (inst, world.raw_features.row(inst).to_vec()))
        .collect();
    update_paired_bank(&mut paired, &batch, 0.1, true)?;
    let moved: f64 = paired
        .centroid(0)
        .iter()
        .zip(&before)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    println!("paired centroid 0 moved by {moved:.6} under momentum 0.1");

    let refresh: Vec<(usize, Vec<f64>)> = (0..unpaired.len())
        .map(|row| {
            let inst = unpaired.instance_ids()[row];
            (row, world.raw_features.row(inst).to_vec())
        })
        .collect();
    update_unpaired_bank(&mut unpaired, &refresh, 0.1, true)?;
    println!("unpaired bank refreshed ({} rows)", unpaired.len());

    let snapshot = BankSnapshot::capture(&paired, &unpaired);
    println!(
        "\nsnapshot: {} paired rows, {} unpaired rows, {} instance-to-cluster entries",
        snapshot.paired.len(),
        snapshot.unpaired.len(),
        snapshot.cluster_of.len()
    );
    Ok(())
}
