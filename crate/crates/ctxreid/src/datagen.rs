//! Deterministic synthetic-world generator: identities with noisy sightings
//! spread across scenes, optional co-traveler structure (two identities that
//! always appear in the same scenes), unpaired persons seen exactly once,
//! and non-overlapping boxes per scene.
//!
//! The same seed always produces the same world, byte for byte. No scene
//! ever holds the same identity twice, which makes the generated catalogs
//! valid inputs for the scene-uniqueness machinery.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::core::{l2_normalize, Box2d, EmbeddingMatrix, SceneCatalog};
use crate::error::{Error, Result};

fn default_d_raw() -> usize {
    32
}
fn default_scene_range() -> (usize, usize) {
    (2, 5)
}

/// Parameters of one synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Paired identities; each gets `sightings_per_identity` instances.
    pub n_identities: usize,
    pub sightings_per_identity: usize,
    /// Persons seen exactly once, each with a unique ground-truth label.
    pub n_unpaired: usize,
    pub d_raw: usize,
    /// Standard deviation of the per-coordinate Gaussian noise added to the
    /// identity prototype before re-normalization.
    pub noise_sigma: f64,
    /// Probability that a (disjoint) pair of identities travels together:
    /// their t-th sightings always share a scene.
    pub cotravel_prob: f64,
    /// Inclusive range of persons per scene.
    pub persons_per_scene: (usize, usize),
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_identities: 20,
            sightings_per_identity: 2,
            n_unpaired: 10,
            d_raw: default_d_raw(),
            noise_sigma: 0.25,
            cotravel_prob: 0.8,
            persons_per_scene: default_scene_range(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn n_instances(&self) -> usize {
        self.n_identities * self.sightings_per_identity + self.n_unpaired
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_instances() == 0 {
            return Err(Error::InvalidConfig("world would be empty".into()));
        }
        if self.d_raw < 2 {
            return Err(Error::InvalidConfig(format!(
                "d_raw must be at least 2, got {}",
                self.d_raw
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.cotravel_prob) {
            return Err(Error::InvalidConfig(format!(
                "cotravel_prob must lie in [0, 1], got {}",
                self.cotravel_prob
            )));
        }
        let (lo, hi) = self.persons_per_scene;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!(
                "persons_per_scene range ({lo}, {hi}) is invalid"
            )));
        }
        Ok(())
    }
}

/// A generated world: raw features with their scene catalog and the hidden
/// identity labels. `companion_of` records which identities travel together
/// (both directions present).
#[derive(Debug, Clone)]
pub struct World {
    pub raw_features: EmbeddingMatrix,
    pub catalog: SceneCatalog,
    pub true_identity: Vec<usize>,
    pub companion_of: BTreeMap<usize, usize>,
}

fn sample_unit(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..d)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        if let Ok(unit) = l2_normalize(&raw) {
            return unit;
        }
    }
}

struct SceneBin {
    capacity: usize,
    instances: Vec<usize>,
    identities: Vec<usize>,
}

/// Generate a world from its config. Identity prototypes are uniform on the
/// unit sphere; each sighting is the re-normalized prototype plus Gaussian
/// noise.
pub fn generate(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_instances();
    let (lo, hi) = cfg.persons_per_scene;

    // Instance table in canonical order: paired sightings identity-major,
    // then unpaired persons. Feature draws happen in this order, so they do
    // not depend on how the packing below evolves.
    let mut true_identity = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    for id in 0..cfg.n_identities {
        let proto = sample_unit(cfg.d_raw, &mut rng);
        for _ in 0..cfg.sightings_per_identity {
            let noisy: Vec<f64> = proto
                .iter()
                .map(|p| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    p + cfg.noise_sigma * g
                })
                .collect();
            features.push(l2_normalize(&noisy)?);
            true_identity.push(id);
        }
    }
    for k in 0..cfg.n_unpaired {
        features.push(sample_unit(cfg.d_raw, &mut rng));
        true_identity.push(cfg.n_identities + k);
    }

    // Fixed co-traveler pairs: shuffle the identities, walk disjoint pairs,
    // mark each with probability cotravel_prob.
    let mut ids: Vec<usize> = (0..cfg.n_identities).collect();
    ids.shuffle(&mut rng);
    let mut companion_of = BTreeMap::new();
    for pair in ids.chunks(2) {
        if pair.len() == 2 && rng.gen_bool(cfg.cotravel_prob) {
            companion_of.insert(pair[0], pair[1]);
            companion_of.insert(pair[1], pair[0]);
        }
    }

    // Placement units: a co-traveler pair contributes its t-th sightings as
    // one unit (same scene); everything else is a one-instance unit.
    let instance_of = |id: usize, t: usize| id * cfg.sightings_per_identity + t;
    let mut units: Vec<Vec<usize>> = Vec::new();
    for id in 0..cfg.n_identities {
        match companion_of.get(&id) {
            Some(&other) if other < id => {} // emitted by the smaller id
            Some(&other) => {
                for t in 0..cfg.sightings_per_identity {
                    units.push(vec![instance_of(id, t), instance_of(other, t)]);
                }
            }
            None => {
                for t in 0..cfg.sightings_per_identity {
                    units.push(vec![instance_of(id, t)]);
                }
            }
        }
    }
    let unpaired_base = cfg.n_identities * cfg.sightings_per_identity;
    for k in 0..cfg.n_unpaired {
        units.push(vec![unpaired_base + k]);
    }
    units.shuffle(&mut rng);

    // First-fit packing; a fresh scene opens whenever no existing scene can
    // take a unit without a same-identity collision.
    let mut bins: Vec<SceneBin> = Vec::new();
    for unit in &units {
        if unit.len() > hi {
            return Err(Error::InfeasiblePacking(format!(
                "a co-traveling pair needs a scene of size >= {}, but scenes hold at most {hi}",
                unit.len()
            )));
        }
        let unit_ids: Vec<usize> = unit.iter().map(|&i| true_identity[i]).collect();
        let slot = bins.iter().position(|b| {
            b.capacity - b.instances.len() >= unit.len()
                && unit_ids.iter().all(|id| !b.identities.contains(id))
        });
        let bin = match slot {
            Some(s) => &mut bins[s],
            None => {
                bins.push(SceneBin {
                    capacity: rng.gen_range(lo..=hi).max(unit.len()),
                    instances: Vec::new(),
                    identities: Vec::new(),
                });
                bins.last_mut().unwrap()
            }
        };
        bin.instances.extend_from_slice(unit);
        bin.identities.extend_from_slice(&unit_ids);
    }

    // Non-overlapping tile boxes, one row per scene.
    let mut members = Vec::with_capacity(bins.len());
    let mut box_of = vec![Box2d::new(0.0, 0.0, 1.0, 1.0); n];
    for bin in &bins {
        let mut list = bin.instances.clone();
        list.sort_unstable();
        for (slot, &inst) in list.iter().enumerate() {
            let x = 10.0 + 110.0 * slot as f64;
            box_of[inst] = Box2d::new(x, 40.0, x + 100.0, 340.0);
        }
        members.push(list);
    }
    let catalog = SceneCatalog::from_members(members, Some(box_of))?;

    Ok(World {
        raw_features: EmbeddingMatrix::from_rows(features)?,
        catalog,
        true_identity,
        companion_of,
    })
}
