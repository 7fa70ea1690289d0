//! Context-guided clustering: link instances to their first neighbors,
//! partition the link graph into connected components, then enforce the
//! uniqueness property that no cluster may hold two instances from the same
//! scene.
//!
//! An instance pair (i, j) is linked when `j` is the first neighbor of `i`,
//! or `i` is the first neighbor of `j`, or both share a first neighbor —
//! provided the two come from different scenes. Clusters violating scene
//! uniqueness after the partition (through multi-hop links) are repaired by
//! keeping, per scene, only the member closest to the cluster center.

use std::collections::{BTreeMap, BTreeSet};

use crate::core::{dot, ClusterAssignment, EmbeddingMatrix, SceneCatalog};
use crate::error::Result;
use crate::similarity::{first_neighbors, NeighborMode, SimilarityMatrices};

/// Undirected link graph over the instances. No self-loops; edges are stored
/// with the smaller index first.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl LinkGraph {
    pub fn new(n: usize) -> Self {
        LinkGraph {
            n,
            edges: BTreeSet::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn insert(&mut self, i: usize, j: usize) {
        assert!(i != j, "self-loop");
        assert!(i < self.n && j < self.n, "node out of range");
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.edges.insert((a, b));
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.edges.contains(&(a, b))
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

fn link_graph(
    kappa: &[Option<usize>],
    catalog: &SceneCatalog,
    scene_guard: bool,
) -> LinkGraph {
    let n = kappa.len();
    let mut graph = LinkGraph::new(n);
    let allowed = |i: usize, j: usize| {
        i != j && (!scene_guard || catalog.scene_of(i) != catalog.scene_of(j))
    };

    // Direct links: j = kappa_i (which also covers kappa_j = i by symmetry).
    for (i, k) in kappa.iter().enumerate() {
        if let Some(j) = *k {
            if allowed(i, j) {
                graph.insert(i, j);
            }
        }
    }

    // Shared-neighbor links: kappa_i = kappa_j.
    let mut by_target: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, k) in kappa.iter().enumerate() {
        if let Some(t) = *k {
            by_target.entry(t).or_default().push(i);
        }
    }
    for group in by_target.values() {
        for (a_pos, &a) in group.iter().enumerate() {
            for &b in &group[a_pos + 1..] {
                if allowed(a, b) {
                    graph.insert(a, b);
                }
            }
        }
    }
    graph
}

/// Build the link graph from a first-neighbor index, dropping every link
/// that would join two instances of the same scene.
pub fn build_adjacency(kappa: &[Option<usize>], catalog: &SceneCatalog) -> LinkGraph {
    link_graph(kappa, catalog, true)
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the link graph, labeled in order of smallest
/// member index.
pub fn partition(graph: &LinkGraph) -> ClusterAssignment {
    let mut uf = UnionFind::new(graph.n());
    for &(i, j) in graph.edges() {
        uf.union(i, j);
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..graph.n() {
        components.entry(uf.find(i)).or_default().push(i);
    }
    ClusterAssignment::from_clusters(components.into_values().collect(), graph.n())
        .expect("connected components form a partition")
}

/// Repair clusters that hold several instances from one scene: per scene
/// group, keep the member most similar to the (normalized-mean) cluster
/// centroid and demote the rest to singletons.
pub fn filter_clusters(
    assignment: &ClusterAssignment,
    emb: &EmbeddingMatrix,
    catalog: &SceneCatalog,
) -> ClusterAssignment {
    let d = emb.dim();
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(assignment.n_clusters());

    for members in assignment.clusters() {
        let mut by_scene: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &inst in members {
            by_scene.entry(catalog.scene_of(inst)).or_default().push(inst);
        }
        if by_scene.values().all(|g| g.len() == 1) {
            out.push(members.clone());
            continue;
        }

        // Centroid of the whole cluster before any ejection. Ranking members
        // by cosine to the normalized mean equals ranking by dot with the raw
        // mean, so no explicit normalization is needed here.
        let mut mean = vec![0.0; d];
        for &inst in members {
            for (acc, x) in mean.iter_mut().zip(emb.row(inst)) {
                *acc += x;
            }
        }
        for acc in mean.iter_mut() {
            *acc /= members.len() as f64;
        }

        let mut kept = Vec::new();
        for group in by_scene.values() {
            let mut best = group[0];
            let mut best_score = dot(emb.row(best), &mean);
            for &inst in &group[1..] {
                let score = dot(emb.row(inst), &mean);
                if score > best_score {
                    best = inst;
                    best_score = score;
                }
            }
            for &inst in group {
                if inst != best {
                    out.push(vec![inst]);
                }
            }
            kept.push(best);
        }
        out.push(kept);
    }

    ClusterAssignment::from_clusters(out, assignment.n_instances())
        .expect("ejection preserves the partition")
}

/// Knobs for one clustering pass. `intra` enables the same-scene link guard
/// and the post-partition filter; turning it off gives plain first-neighbor
/// clustering under the (possibly hybrid) similarity, for ablations.
#[derive(Debug, Clone, Copy)]
pub struct ClusterOptions {
    pub lambda_sim: f64,
    pub mode: NeighborMode,
    pub intra: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            lambda_sim: 0.1,
            mode: NeighborMode::Faithful,
            intra: true,
        }
    }
}

/// One clustering pass with explicit options.
pub fn cluster_with_options(
    emb: &EmbeddingMatrix,
    catalog: &SceneCatalog,
    opts: ClusterOptions,
) -> Result<ClusterAssignment> {
    let sims = SimilarityMatrices::build(emb, catalog, opts.lambda_sim)?;
    let kappa = first_neighbors(&sims.hybrid, catalog, opts.mode)?;
    let graph = link_graph(&kappa, catalog, opts.intra);
    let assignment = partition(&graph);
    if opts.intra {
        Ok(filter_clusters(&assignment, emb, catalog))
    } else {
        Ok(assignment)
    }
}

/// The full clustering pipeline: similarities, first neighbors, link graph,
/// partition, scene-uniqueness filter. Deterministic for fixed inputs.
pub fn cgc_cluster(
    emb: &EmbeddingMatrix,
    catalog: &SceneCatalog,
    lambda_sim: f64,
    mode: NeighborMode,
) -> Result<ClusterAssignment> {
    cluster_with_options(
        emb,
        catalog,
        ClusterOptions {
            lambda_sim,
            mode,
            intra: true,
        },
    )
}

/// Cluster ids with at least two members, and singleton ids.
pub fn split_paired_unpaired(assignment: &ClusterAssignment) -> (Vec<usize>, Vec<usize>) {
    (
        assignment.paired_ids().to_vec(),
        assignment.unpaired_ids().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::l2_normalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn own_scene_catalog(n: usize) -> SceneCatalog {
        SceneCatalog::from_members((0..n).map(|i| vec![i]).collect(), None).unwrap()
    }

    fn unit_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                l2_normalize(&raw).unwrap()
            })
            .collect()
    }

    /// Evaluate the link predicate over all pairs, straight from its
    /// definition.
    fn adjacency_oracle(kappa: &[Option<usize>], catalog: &SceneCatalog) -> Vec<(usize, usize)> {
        let n = kappa.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let linked = kappa[i] == Some(j)
                    || kappa[j] == Some(i)
                    || (kappa[i].is_some() && kappa[i] == kappa[j]);
                if linked && catalog.scene_of(i) != catalog.scene_of(j) {
                    edges.push((i, j));
                }
            }
        }
        edges
    }

    #[test]
    fn mutual_neighbors_link_across_scenes() {
        let catalog = own_scene_catalog(2);
        let g = build_adjacency(&[Some(1), Some(0)], &catalog);
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge(0, 1));
    }

    #[test]
    fn same_scene_neighbors_do_not_link() {
        let catalog = SceneCatalog::from_members(vec![vec![0, 1]], None).unwrap();
        let g = build_adjacency(&[Some(1), Some(0)], &catalog);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn shared_neighbor_links() {
        let catalog = own_scene_catalog(3);
        let kappa = [Some(2), Some(2), Some(0)];
        let g = build_adjacency(&kappa, &catalog);
        let expect = adjacency_oracle(&kappa, &catalog);
        assert_eq!(
            g.edges().iter().copied().collect::<Vec<_>>(),
            expect
        );
        assert!(g.has_edge(0, 1)); // via the shared neighbor 2
        assert!(g.has_edge(0, 2));
        assert!(g.has_edge(1, 2));
    }

    #[test]
    fn adjacency_matches_predicate_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let n = rng.gen_range(2..40);
            let n_scenes = rng.gen_range(1..=n);
            let mut members = vec![Vec::new(); n_scenes];
            for i in 0..n {
                members[rng.gen_range(0..n_scenes)].push(i);
            }
            members.retain(|m| !m.is_empty());
            let catalog = SceneCatalog::from_members(members, None).unwrap();
            let kappa: Vec<Option<usize>> = (0..n)
                .map(|i| {
                    if rng.gen_bool(0.1) {
                        None
                    } else {
                        let mut j = rng.gen_range(0..n);
                        if j == i {
                            j = (j + 1) % n;
                        }
                        Some(j)
                    }
                })
                .collect();
            let g = build_adjacency(&kappa, &catalog);
            assert_eq!(
                g.edges().iter().copied().collect::<Vec<_>>(),
                adjacency_oracle(&kappa, &catalog)
            );
        }
    }

    /// Depth-first-search components, independent of the union-find path.
    fn dfs_components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            let mut comp = Vec::new();
            seen[start] = true;
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps.sort_by_key(|c| c[0]);
        comps
    }

    #[test]
    fn partition_simple_and_edgeless() {
        let mut g = LinkGraph::new(4);
        g.insert(0, 1);
        g.insert(2, 3);
        let a = partition(&g);
        assert_eq!(a.clusters(), &[vec![0, 1], vec![2, 3]]);

        let empty = LinkGraph::new(3);
        let a = partition(&empty);
        assert_eq!(a.n_clusters(), 3);
        assert!(a.paired_ids().is_empty());
    }

    #[test]
    fn partition_matches_dfs_oracle_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..30 {
            let n = 50;
            let mut g = LinkGraph::new(n);
            for _ in 0..rng.gen_range(0..80) {
                let i = rng.gen_range(0..n);
                let j = rng.gen_range(0..n);
                if i != j {
                    g.insert(i, j);
                }
            }
            let edges: Vec<(usize, usize)> = g.edges().iter().copied().collect();
            let a = partition(&g);
            assert_eq!(a.clusters(), dfs_components(n, &edges).as_slice());
        }
    }

    #[test]
    fn filter_two_member_conflict_keeps_the_closer_one() {
        // a and b share a scene; a is closer to the centroid.
        let emb = EmbeddingMatrix::from_unnormalized(vec![
            vec![1.0, 0.05],
            vec![0.4, 1.0],
            vec![1.0, 0.0],
        ])
        .unwrap();
        let catalog = SceneCatalog::from_members(vec![vec![0, 1], vec![2]], None).unwrap();
        let joined = ClusterAssignment::from_clusters(vec![vec![0, 1, 2]], 3).unwrap();
        let filtered = filter_clusters(&joined, &emb, &catalog);
        assert_eq!(filtered.clusters(), &[vec![0, 2], vec![1]]);
        assert!(filtered.check_scene_unique(&catalog).is_ok());
    }

    #[test]
    fn filter_leaves_conflict_free_clusters_alone() {
        let emb = EmbeddingMatrix::from_rows(unit_rows(4, 6, 5)).unwrap();
        let catalog = own_scene_catalog(4);
        let a = ClusterAssignment::from_clusters(vec![vec![0, 1, 2], vec![3]], 4).unwrap();
        let filtered = filter_clusters(&a, &emb, &catalog);
        assert_eq!(filtered.clusters(), a.clusters());
    }

    #[test]
    fn filter_matches_centroid_similarity_oracle() {
        let rows = unit_rows(3, 6, 77);
        let emb = EmbeddingMatrix::from_rows(rows.clone()).unwrap();
        let catalog = SceneCatalog::from_members(vec![vec![0, 1], vec![2]], None).unwrap();
        let joined = ClusterAssignment::from_clusters(vec![vec![0, 1, 2]], 3).unwrap();

        // Scalar oracle: normalized mean, then cosine per member.
        let mut mean = vec![0.0; 6];
        for row in &rows {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / 3.0;
            }
        }
        let centroid = l2_normalize(&mean).unwrap();
        let s0 = dot(&rows[0], &centroid);
        let s1 = dot(&rows[1], &centroid);
        let keep = if s0 >= s1 { 0 } else { 1 };
        let eject = 1 - keep;

        let filtered = filter_clusters(&joined, &emb, &catalog);
        assert_eq!(filtered.label(keep), filtered.label(2));
        assert_ne!(filtered.label(eject), filtered.label(2));
        assert_eq!(filtered.cluster(filtered.label(eject)).len(), 1);
    }

    #[test]
    fn two_identical_instances_cluster_when_scenes_differ() {
        let emb =
            EmbeddingMatrix::from_rows(vec![vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap();
        let catalog = own_scene_catalog(2);
        let a = cgc_cluster(&emb, &catalog, 0.1, NeighborMode::Faithful).unwrap();
        assert_eq!(a.n_clusters(), 1);
        assert_eq!(a.paired_ids(), &[0]);
    }

    #[test]
    fn same_scene_instances_never_cluster() {
        let emb =
            EmbeddingMatrix::from_rows(vec![vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap();
        let catalog = SceneCatalog::from_members(vec![vec![0, 1]], None).unwrap();
        let a = cgc_cluster(&emb, &catalog, 0.1, NeighborMode::Faithful).unwrap();
        assert_eq!(a.n_clusters(), 2);
        assert!(a.paired_ids().is_empty());
    }

    /// Independent first-neighbor clustering oracle for the lambda = 0,
    /// one-instance-per-scene case: link i <-> argmax_j cos(i, j), plus
    /// shared-target links, then take components.
    fn plain_first_neighbor_oracle(rows: &[Vec<f64>]) -> Vec<Vec<usize>> {
        let n = rows.len();
        let mut kappa = vec![0usize; n];
        for i in 0..n {
            let mut best = None;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = dot(&rows[i], &rows[j]);
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            kappa[i] = best.unwrap().0;
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if kappa[i] == j || kappa[j] == i || kappa[i] == kappa[j] {
                    edges.push((i, j));
                }
            }
        }
        dfs_components(n, &edges)
    }

    #[test]
    fn reduces_to_plain_first_neighbor_clustering() {
        for seed in 0..10u64 {
            let n = 32;
            let rows = unit_rows(n, 8, seed);
            let emb = EmbeddingMatrix::from_rows(rows.clone()).unwrap();
            let catalog = own_scene_catalog(n);
            let a = cgc_cluster(&emb, &catalog, 0.0, NeighborMode::Faithful).unwrap();
            assert_eq!(a.clusters(), plain_first_neighbor_oracle(&rows).as_slice());
        }
    }

    #[test]
    fn clustering_is_deterministic() {
        let rows = unit_rows(40, 8, 2024);
        let emb = EmbeddingMatrix::from_rows(rows).unwrap();
        let catalog = SceneCatalog::from_members(
            (0..10).map(|s| (0..4).map(|k| s * 4 + k).collect()).collect(),
            None,
        )
        .unwrap();
        let a = cgc_cluster(&emb, &catalog, 0.1, NeighborMode::Faithful).unwrap();
        let b = cgc_cluster(&emb, &catalog, 0.1, NeighborMode::Faithful).unwrap();
        assert_eq!(a.label_of(), b.label_of());
    }

    #[test]
    fn permuting_instances_permutes_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(909);
        for trial in 0..10u64 {
            let n = 24;
            let rows = unit_rows(n, 8, trial);
            let members: Vec<Vec<usize>> =
                (0..8).map(|s| (0..3).map(|k| s * 3 + k).collect()).collect();
            let catalog = SceneCatalog::from_members(members, None).unwrap();
            let a = cgc_cluster(
                &EmbeddingMatrix::from_rows(rows.clone()).unwrap(),
                &catalog,
                0.1,
                NeighborMode::Faithful,
            )
            .unwrap();

            // Apply a random permutation to instances (and the catalog).
            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let perm_rows: Vec<Vec<f64>> = perm.iter().map(|&p| rows[p].clone()).collect();
            let mut inverse = vec![0usize; n];
            for (new, &old) in perm.iter().enumerate() {
                inverse[old] = new;
            }
            let perm_members: Vec<Vec<usize>> = (0..8)
                .map(|s| (0..3).map(|k| inverse[s * 3 + k]).collect())
                .collect();
            let perm_catalog = SceneCatalog::from_members(perm_members, None).unwrap();
            let b = cgc_cluster(
                &EmbeddingMatrix::from_rows(perm_rows).unwrap(),
                &perm_catalog,
                0.1,
                NeighborMode::Faithful,
            )
            .unwrap();

            // Same co-membership relation, relabeling aside.
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(
                        a.label(i) == a.label(j),
                        b.label(inverse[i]) == b.label(inverse[j]),
                        "pair ({i}, {j}) disagrees after permutation"
                    );
                }
            }
        }
    }

    #[test]
    fn context_similarity_recovers_cotravel_worlds_better() {
        // Co-traveler world at a noise level where visual-only linking makes
        // mistakes; the scene-similarity bonus recovers some of them.
        let world = crate::datagen::generate(&crate::datagen::WorldConfig {
            n_identities: 20,
            sightings_per_identity: 3,
            n_unpaired: 6,
            d_raw: 32,
            noise_sigma: 0.2,
            cotravel_prob: 1.0,
            persons_per_scene: (2, 4),
            seed: 1000,
        })
        .unwrap();
        let f1 = |lambda: f64| {
            let a = cgc_cluster(
                &world.raw_features,
                &world.catalog,
                lambda,
                NeighborMode::Faithful,
            )
            .unwrap();
            crate::eval::pairwise_f1(a.label_of(), &world.true_identity)
                .unwrap()
                .f1
        };
        assert!(f1(0.1) >= f1(0.0));
    }

    #[test]
    fn split_counts_cover_everything() {
        let a = ClusterAssignment::from_clusters(vec![vec![0, 1], vec![2]], 3).unwrap();
        let (paired, unpaired) = split_paired_unpaired(&a);
        assert_eq!(paired, vec![0]);
        assert_eq!(unpaired, vec![1]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(1..30);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let a = ClusterAssignment::from_labels(&labels).unwrap();
            let (paired, unpaired) = split_paired_unpaired(&a);
            let covered: usize = paired
                .iter()
                .map(|&c| a.cluster(c).len())
                .sum::<usize>()
                + unpaired.len();
            assert_eq!(covered, n);
        }
    }
}
