//! Context-guided clustering against its ablations: visual-only first
//! neighbors, the hybrid similarity with the inter-scene bonus, and the
//! intra-scene uniqueness filter.
//!
//! Run: cargo run -p ctxreid --example cluster_scenes

use ctxreid::cgc::{cluster_with_options, ClusterOptions};
use ctxreid::datagen::{generate, WorldConfig};
use ctxreid::eval::pairwise_f1;
use ctxreid::similarity::{NeighborMode, SimilarityMatrices};

fn main() -> ctxreid::Result<()> {
    // A noisy co-traveler world: plain visual matching is fallible here, so
    // the context signal has something to contribute.
    let world = generate(&WorldConfig {
        n_identities: 20,
        sightings_per_identity: 3,
        n_unpaired: 6,
        d_raw: 32,
        noise_sigma: 0.2,
        cotravel_prob: 1.0,
        persons_per_scene: (2, 4),
        seed: std::env::args()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .unwrap_or(1005),
    })?;
    println!(
        "world: {} instances in {} scenes\n",
        world.raw_features.n(),
        world.catalog.n_scenes()
    );

    // The similarity stack, for a feel of the numbers involved.
    let sims = SimilarityMatrices::build(&world.raw_features, &world.catalog, 0.1)?;
    println!(
        "visual similarity Q is {}x{}, context similarity K is {}x{}",
        world.raw_features.n(),
        world.raw_features.n(),
        world.catalog.n_scenes(),
        world.catalog.n_scenes()
    );
    println!(
        "example entries: Q(0,1) = {:.4}, K(scene0, scene1) = {:.4}, Q'(0,1) = {:.4}\n",
        sims.visual.get(0, 1),
        sims.context.get(0, 1),
        sims.hybrid.get(0, 1)
    );

    let score = |lambda: f64, intra: bool| -> ctxreid::Result<(f64, usize, usize)> {
        let a = cluster_with_options(
            &world.raw_features,
            &world.catalog,
            ClusterOptions {
                lambda_sim: lambda,
                mode: NeighborMode::Faithful,
                intra,
            },
        )?;
        let f1 = pairwise_f1(a.label_of(), &world.true_identity)?.f1;
        Ok((f1, a.paired_ids().len(), a.unpaired_ids().len()))
    };

    println!("variant                                    F1      paired  unpaired");
    let (f1, p, u) = score(0.0, false)?;
    println!("plain first-neighbor linking             {f1:.4}  {p:>6}  {u:>8}");
    let (f1, p, u) = score(0.1, false)?;
    println!("+ inter-scene context (lambda 0.1)       {f1:.4}  {p:>6}  {u:>8}");
    let (f1, p, u) = score(0.0, true)?;
    println!("+ intra-scene filter only                {f1:.4}  {p:>6}  {u:>8}");
    let (f1, p, u) = score(0.1, true)?;
    println!("full context guidance                    {f1:.4}  {p:>6}  {u:>8}");

    // The full pass guarantees the uniqueness property.
    let full = cluster_with_options(
        &world.raw_features,
        &world.catalog,
        ClusterOptions::default(),
    )?;
    full.check_scene_unique(&world.catalog)?;
    println!("\nchecked: no cluster holds two instances from one scene");

    Ok(())
}
