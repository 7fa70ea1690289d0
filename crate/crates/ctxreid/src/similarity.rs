//! Visual, context, and hybrid similarity matrices, and the first-neighbor
//! index built on top of them.
//!
//! Visual similarity is plain cosine between instance features. Context
//! similarity compares two scenes by the best-matching pair of their
//! members. The hybrid matrix blends the two with a non-negative trade-off
//! `lambda_sim`, and the first neighbor of an instance is the argmax of its
//! hybrid row (excluding itself).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core::{dot, EmbeddingMatrix, Matrix, SceneCatalog};
use crate::error::{Error, Result};

/// How the first-neighbor argmax treats same-scene candidates.
///
/// `Faithful` ranks every other instance and relies on the link-building
/// stage to discard same-scene links. `Masked` removes same-scene candidates
/// before the argmax, so the neighbor is always cross-scene when one exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NeighborMode {
    #[default]
    Faithful,
    Masked,
}

impl FromStr for NeighborMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "faithful" => Ok(NeighborMode::Faithful),
            "masked" => Ok(NeighborMode::Masked),
            other => Err(Error::InvalidConfig(format!(
                "unknown neighbor mode {other:?}, expected \"faithful\" or \"masked\""
            ))),
        }
    }
}

impl fmt::Display for NeighborMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NeighborMode::Faithful => write!(f, "faithful"),
            NeighborMode::Masked => write!(f, "masked"),
        }
    }
}

/// N x N cosine similarity between all instance pairs.
///
/// Rows are computed independently, so the result does not depend on the
/// degree of parallelism.
pub fn visual_similarity(emb: &EmbeddingMatrix) -> Matrix {
    let n = emb.n();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ri = emb.row(i);
            (0..n).map(|j| dot(ri, emb.row(j))).collect()
        })
        .collect();
    Matrix::from_rows(rows)
}

/// M x M context similarity: the best visual match between the members of
/// two scenes. The diagonal uses the same max formula, so it includes
/// same-instance pairs and is typically 1.
pub fn context_similarity(q: &Matrix, catalog: &SceneCatalog) -> Result<Matrix> {
    let m = catalog.n_scenes();
    for s in 0..m {
        if catalog.members_of(s).is_empty() {
            return Err(Error::EmptyScene(s));
        }
    }
    let mut k = Matrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let mut best = f64::NEG_INFINITY;
            for &i in catalog.members_of(a) {
                for &j in catalog.members_of(b) {
                    let v = q.get(i, j);
                    if v > best {
                        best = v;
                    }
                }
            }
            k.set(a, b, best);
            k.set(b, a, best);
        }
    }
    Ok(k)
}

/// Hybrid similarity: `Q'(i,j) = Q(i,j) + lambda_sim * K(scene(i), scene(j))`.
pub fn hybrid_similarity(
    q: &Matrix,
    k: &Matrix,
    catalog: &SceneCatalog,
    lambda_sim: f64,
) -> Result<Matrix> {
    if lambda_sim < 0.0 {
        return Err(Error::NegativeLambda(lambda_sim));
    }
    let n = catalog.n_instances();
    if q.rows() != n || q.cols() != n {
        return Err(Error::InvalidConfig(format!(
            "visual similarity is {}x{}, catalog has {n} instances",
            q.rows(),
            q.cols()
        )));
    }
    if k.rows() != catalog.n_scenes() || k.cols() != catalog.n_scenes() {
        return Err(Error::InvalidConfig(format!(
            "context similarity is {}x{}, catalog has {} scenes",
            k.rows(),
            k.cols(),
            catalog.n_scenes()
        )));
    }
    let mut qp = Matrix::zeros(n, n);
    for i in 0..n {
        let si = catalog.scene_of(i);
        for j in 0..n {
            let bonus = lambda_sim * k.get(si, catalog.scene_of(j));
            qp.set(i, j, q.get(i, j) + bonus);
        }
    }
    Ok(qp)
}

/// First neighbor of every instance under the hybrid similarity.
///
/// Self is always excluded. In `Masked` mode same-scene candidates are
/// excluded as well; an instance whose every other instance shares its scene
/// gets `None` and emits no link. Ties break toward the smallest index.
pub fn first_neighbors(
    q_prime: &Matrix,
    catalog: &SceneCatalog,
    mode: NeighborMode,
) -> Result<Vec<Option<usize>>> {
    let n = catalog.n_instances();
    if n < 2 {
        return Err(Error::TooFewInstances { got: n, need: 2 });
    }
    let mut kappa = Vec::with_capacity(n);
    for i in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            if mode == NeighborMode::Masked && catalog.scene_of(j) == catalog.scene_of(i) {
                continue;
            }
            let v = q_prime.get(i, j);
            // Strict > keeps the smallest index on ties.
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        kappa.push(best.map(|(j, _)| j));
    }
    Ok(kappa)
}

/// The three matrices of one clustering pass, kept together so callers can
/// inspect intermediate stages.
#[derive(Debug, Clone)]
pub struct SimilarityMatrices {
    pub visual: Matrix,
    pub context: Matrix,
    pub hybrid: Matrix,
    pub lambda_sim: f64,
}

impl SimilarityMatrices {
    pub fn build(
        emb: &EmbeddingMatrix,
        catalog: &SceneCatalog,
        lambda_sim: f64,
    ) -> Result<Self> {
        let visual = visual_similarity(emb);
        let context = context_similarity(&visual, catalog)?;
        let hybrid = hybrid_similarity(&visual, &context, catalog, lambda_sim)?;
        Ok(SimilarityMatrices {
            visual,
            context,
            hybrid,
            lambda_sim,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::l2_normalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                l2_normalize(&raw).unwrap()
            })
            .collect()
    }

    fn own_scene_catalog(n: usize) -> SceneCatalog {
        SceneCatalog::from_members((0..n).map(|i| vec![i]).collect(), None).unwrap()
    }

    #[test]
    fn visual_orthogonal_and_identical() {
        let emb =
            EmbeddingMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let q = visual_similarity(&emb);
        assert_eq!(q.get(0, 0), 1.0);
        assert_eq!(q.get(0, 1), 0.0);
        assert_eq!(q.get(1, 1), 1.0);

        let emb =
            EmbeddingMatrix::from_rows(vec![vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap();
        let q = visual_similarity(&emb);
        assert!((q.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn visual_matches_scalar_loop_oracle() {
        let rows = unit_rows(5, 8, 42);
        let emb = EmbeddingMatrix::from_rows(rows.clone()).unwrap();
        let q = visual_similarity(&emb);
        for i in 0..5 {
            for j in 0..5 {
                let mut expect = 0.0;
                for k in 0..8 {
                    expect += rows[i][k] * rows[j][k];
                }
                assert!((q.get(i, j) - expect).abs() < 1e-12);
                assert_eq!(q.get(i, j), q.get(j, i));
            }
        }
    }

    #[test]
    fn context_single_member_scenes() {
        let emb =
            EmbeddingMatrix::from_unnormalized(vec![vec![1.0, 0.0], vec![0.3, 1.0]])
                .unwrap();
        let catalog = SceneCatalog::from_members(vec![vec![0], vec![1]], None).unwrap();
        let q = visual_similarity(&emb);
        let k = context_similarity(&q, &catalog).unwrap();
        assert!((k.get(0, 0) - 1.0).abs() < 1e-9);
        assert!((k.get(0, 1) - q.get(0, 1)).abs() < 1e-15);
        assert_eq!(k.get(0, 1), k.get(1, 0));
    }

    #[test]
    fn context_takes_max_over_members() {
        // Scene 0 holds {0, 1}, scene 1 holds {2}; K(0,1) is the better of
        // the two cross pairs.
        let rows = unit_rows(3, 6, 7);
        let emb = EmbeddingMatrix::from_rows(rows).unwrap();
        let catalog = SceneCatalog::from_members(vec![vec![0, 1], vec![2]], None).unwrap();
        let q = visual_similarity(&emb);
        let k = context_similarity(&q, &catalog).unwrap();
        assert_eq!(k.get(0, 1), q.get(0, 2).max(q.get(1, 2)));
    }

    #[test]
    fn context_matches_triple_loop_oracle() {
        let rows = unit_rows(6, 8, 3);
        let emb = EmbeddingMatrix::from_rows(rows).unwrap();
        let catalog =
            SceneCatalog::from_members(vec![vec![0, 3], vec![1, 4], vec![2, 5]], None)
                .unwrap();
        let q = visual_similarity(&emb);
        let k = context_similarity(&q, &catalog).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let mut best = f64::NEG_INFINITY;
                for &i in catalog.members_of(a) {
                    for &j in catalog.members_of(b) {
                        best = best.max(q.get(i, j));
                    }
                }
                assert_eq!(k.get(a, b), best);
            }
        }
    }

    #[test]
    fn context_rejects_empty_scene() {
        let emb = EmbeddingMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        // Hand-build a catalog with an empty trailing scene; from_members
        // accepts it (cover/disjoint hold), context similarity must not.
        let catalog =
            SceneCatalog::from_members(vec![vec![0, 1], vec![]], None).unwrap();
        let q = visual_similarity(&emb);
        assert!(matches!(
            context_similarity(&q, &catalog),
            Err(Error::EmptyScene(1))
        ));
    }

    #[test]
    fn hybrid_zero_lambda_is_visual() {
        let rows = unit_rows(6, 8, 11);
        let emb = EmbeddingMatrix::from_rows(rows).unwrap();
        let catalog =
            SceneCatalog::from_members(vec![vec![0, 1], vec![2, 3], vec![4, 5]], None)
                .unwrap();
        let q = visual_similarity(&emb);
        let k = context_similarity(&q, &catalog).unwrap();
        let qp = hybrid_similarity(&q, &k, &catalog, 0.0).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(qp.get(i, j), q.get(i, j));
            }
        }
    }

    #[test]
    fn hybrid_default_lambda_matches_lookup_oracle() {
        let rows = unit_rows(6, 8, 19);
        let emb = EmbeddingMatrix::from_rows(rows).unwrap();
        let catalog =
            SceneCatalog::from_members(vec![vec![0, 5], vec![1, 2], vec![3, 4]], None)
                .unwrap();
        let q = visual_similarity(&emb);
        let k = context_similarity(&q, &catalog).unwrap();
        let qp = hybrid_similarity(&q, &k, &catalog, 0.1).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let expect =
                    q.get(i, j) + 0.1 * k.get(catalog.scene_of(i), catalog.scene_of(j));
                assert!((qp.get(i, j) - expect).abs() < 1e-12);
            }
        }
        // Same-scene pair instantiates the definition with K(a,a).
        let expect = q.get(1, 2) + 0.1 * k.get(1, 1);
        assert!((qp.get(1, 2) - expect).abs() < 1e-12);
    }

    #[test]
    fn hybrid_rejects_negative_lambda() {
        let emb = EmbeddingMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let catalog = own_scene_catalog(2);
        let q = visual_similarity(&emb);
        let k = context_similarity(&q, &catalog).unwrap();
        assert!(matches!(
            hybrid_similarity(&q, &k, &catalog, -0.1),
            Err(Error::NegativeLambda(_))
        ));
    }

    #[test]
    fn first_neighbor_basic_and_ties() {
        let mut qp = Matrix::zeros(3, 3);
        qp.set(0, 1, 0.9);
        qp.set(0, 2, 0.2);
        qp.set(1, 0, 0.5);
        qp.set(1, 2, 0.5);
        qp.set(2, 0, 0.1);
        qp.set(2, 1, 0.4);
        let catalog = own_scene_catalog(3);
        let kappa = first_neighbors(&qp, &catalog, NeighborMode::Faithful).unwrap();
        assert_eq!(kappa, vec![Some(1), Some(0), Some(1)]);
    }

    #[test]
    fn masked_mode_skips_same_scene() {
        let rows = unit_rows(4, 8, 23);
        let emb = EmbeddingMatrix::from_rows(rows).unwrap();
        let catalog =
            SceneCatalog::from_members(vec![vec![0, 1], vec![2, 3]], None).unwrap();
        let sims = SimilarityMatrices::build(&emb, &catalog, 0.1).unwrap();
        let kappa =
            first_neighbors(&sims.hybrid, &catalog, NeighborMode::Masked).unwrap();
        for (i, k) in kappa.iter().enumerate() {
            let k = k.unwrap();
            assert_ne!(catalog.scene_of(i), catalog.scene_of(k));
            // Brute-force argmax over the allowed set.
            let mut best = None;
            for j in 0..4 {
                if j == i || catalog.scene_of(j) == catalog.scene_of(i) {
                    continue;
                }
                let v = sims.hybrid.get(i, j);
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            assert_eq!(k, best.unwrap().0);
        }
    }

    #[test]
    fn masked_mode_yields_none_when_everything_shares_the_scene() {
        let emb = EmbeddingMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let catalog = SceneCatalog::from_members(vec![vec![0, 1]], None).unwrap();
        let q = visual_similarity(&emb);
        let k = context_similarity(&q, &catalog).unwrap();
        let qp = hybrid_similarity(&q, &k, &catalog, 0.1).unwrap();
        let kappa = first_neighbors(&qp, &catalog, NeighborMode::Masked).unwrap();
        assert_eq!(kappa, vec![None, None]);
    }

    #[test]
    fn argmax_invariant_under_row_shift() {
        let rows = unit_rows(7, 8, 31);
        let emb = EmbeddingMatrix::from_rows(rows).unwrap();
        let catalog = own_scene_catalog(7);
        let sims = SimilarityMatrices::build(&emb, &catalog, 0.1).unwrap();
        let kappa =
            first_neighbors(&sims.hybrid, &catalog, NeighborMode::Faithful).unwrap();
        for i in 0..7 {
            let mut shifted = sims.hybrid.clone();
            for j in 0..7 {
                shifted.set(i, j, shifted.get(i, j) + 3.25);
            }
            let moved =
                first_neighbors(&shifted, &catalog, NeighborMode::Faithful).unwrap();
            assert_eq!(moved[i], kappa[i]);
        }
    }

    #[test]
    fn visual_similarity_commutes_with_row_permutation() {
        let rows = unit_rows(6, 5, 57);
        let emb = EmbeddingMatrix::from_rows(rows.clone()).unwrap();
        let q = visual_similarity(&emb);

        let perm = [3usize, 0, 4, 1, 5, 2];
        let permuted_rows: Vec<Vec<f64>> = perm.iter().map(|&p| rows[p].clone()).collect();
        let q_perm = visual_similarity(&EmbeddingMatrix::from_rows(permuted_rows).unwrap());
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(q_perm.get(i, j), q.get(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn neighbor_mode_parses() {
        assert_eq!(
            "faithful".parse::<NeighborMode>().unwrap(),
            NeighborMode::Faithful
        );
        assert_eq!(
            "masked".parse::<NeighborMode>().unwrap(),
            NeighborMode::Masked
        );
        assert!("fuzzy".parse::<NeighborMode>().is_err());
    }
}
