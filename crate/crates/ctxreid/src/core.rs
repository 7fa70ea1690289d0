//! Domain types shared by every other module: unit-norm embedding matrices,
//! the scene catalog (which instance came from which scene image, plus
//! optional boxes), cluster assignments, and a few vector primitives.
//!
//! All floating point is `f64`. Types are immutable after construction and
//! safe to share across threads for reading.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Norms at or below this are treated as zero.
pub const ZERO_EPS: f64 = 1e-12;

/// Tolerance for the unit-norm invariant on embedding rows.
pub const UNIT_TOL: f64 = 1e-6;

/// Dot product of two equal-length slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scale `v` to unit length, preserving direction.
///
/// Fails with [`Error::ZeroVector`] when the norm is at or below [`ZERO_EPS`].
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n <= ZERO_EPS {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Dense row-major matrix of `f64`. Used for the similarity matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    /// Build from row vectors. All rows must have equal length.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { data, rows: r, cols: c }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// N unit-norm d-dimensional feature rows, the substrate of all the math.
///
/// Invariants: every row has L2 norm 1 within [`UNIT_TOL`], `n >= 1`, `d >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl EmbeddingMatrix {
    /// Build from rows that are already unit norm. Validates the invariants.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::TooFewInstances { got: 0, need: 1 });
        }
        let d = rows[0].len();
        if d < 2 {
            return Err(Error::InvalidConfig(format!(
                "feature dimension must be at least 2, got {d}"
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidConfig(format!(
                    "row {i} has dimension {}, expected {d}",
                    row.len()
                )));
            }
            let nrm = norm(row);
            if (nrm - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidConfig(format!(
                    "row {i} has norm {nrm}, expected 1 within {UNIT_TOL}"
                )));
            }
            data.extend_from_slice(row);
        }
        let n = rows.len();
        Ok(EmbeddingMatrix { data, n, d })
    }

    /// Normalize each row to unit length and build the matrix.
    pub fn from_unnormalized(rows: Vec<Vec<f64>>) -> Result<Self> {
        let normalized: Result<Vec<Vec<f64>>> =
            rows.iter().map(|r| l2_normalize(r)).collect();
        Self::from_rows(normalized?)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(|r| r.to_vec()).collect()
    }
}

/// Axis-aligned box in pixel coordinates, `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2d {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2d {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Box2d { x1, y1, x2, y2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x1 < self.x2 && self.y1 < self.y2 {
            Ok(())
        } else {
            Err(Error::DegenerateBox)
        }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// The weak labels: which scene each instance came from, the member list of
/// each scene, and optionally one box per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCatalog {
    image_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    boxes: Option<Vec<Box2d>>,
}

impl SceneCatalog {
    /// Build from per-scene member lists; `image_of` is derived.
    pub fn from_members(members: Vec<Vec<usize>>, boxes: Option<Vec<Box2d>>) -> Result<Self> {
        let n: usize = members.iter().map(|m| m.len()).sum();
        let mut image_of = vec![usize::MAX; n];
        for (scene, list) in members.iter().enumerate() {
            for &inst in list {
                if inst >= n {
                    return Err(Error::InconsistentCatalog(format!(
                        "instance {inst} out of range (N = {n})"
                    )));
                }
                if image_of[inst] != usize::MAX {
                    return Err(Error::InconsistentCatalog(format!(
                        "instance {inst} appears in more than one scene"
                    )));
                }
                image_of[inst] = scene;
            }
        }
        let catalog = SceneCatalog {
            image_of,
            members,
            boxes,
        };
        catalog.validate()?;
        Ok(catalog)
    }

    #[inline]
    pub fn n_instances(&self) -> usize {
        self.image_of.len()
    }

    #[inline]
    pub fn n_scenes(&self) -> usize {
        self.members.len()
    }

    /// Scene index of instance `i`.
    #[inline]
    pub fn scene_of(&self, i: usize) -> usize {
        self.image_of[i]
    }

    #[inline]
    pub fn image_of(&self) -> &[usize] {
        &self.image_of
    }

    /// Instances of scene `s`.
    #[inline]
    pub fn members_of(&self, s: usize) -> &[usize] {
        &self.members[s]
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn boxes(&self) -> Option<&[Box2d]> {
        self.boxes.as_deref()
    }

    pub fn box_of(&self, i: usize) -> Option<Box2d> {
        self.boxes.as_ref().map(|b| b[i])
    }

    /// Check every catalog invariant, naming the first violated constraint.
    pub fn validate(&self) -> Result<()> {
        let n = self.image_of.len();
        let mut seen = vec![false; n];
        for (scene, list) in self.members.iter().enumerate() {
            for &inst in list {
                if inst >= n {
                    return Err(Error::InconsistentCatalog(format!(
                        "scene {scene} lists instance {inst}, out of range (N = {n})"
                    )));
                }
                if seen[inst] {
                    return Err(Error::InconsistentCatalog(format!(
                        "instance {inst} appears in more than one member list"
                    )));
                }
                seen[inst] = true;
                if self.image_of[inst] != scene {
                    return Err(Error::InconsistentCatalog(format!(
                        "instance {inst} listed in scene {scene} but image_of says {}",
                        self.image_of[inst]
                    )));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InconsistentCatalog(format!(
                "instance {missing} is not listed in any scene"
            )));
        }
        for (inst, &scene) in self.image_of.iter().enumerate() {
            if scene >= self.members.len() {
                return Err(Error::InconsistentCatalog(format!(
                    "instance {inst} points at scene {scene}, out of range (M = {})",
                    self.members.len()
                )));
            }
        }
        if let Some(boxes) = &self.boxes {
            if boxes.len() != n {
                return Err(Error::InconsistentCatalog(format!(
                    "{} boxes for {n} instances",
                    boxes.len()
                )));
            }
            for (inst, b) in boxes.iter().enumerate() {
                if b.validate().is_err() {
                    return Err(Error::InconsistentCatalog(format!(
                        "degenerate box for instance {inst}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Check that `catalog` is internally consistent and describes exactly `n`
/// instances.
pub fn validate_catalog(catalog: &SceneCatalog, n: usize) -> Result<()> {
    if catalog.n_instances() != n {
        return Err(Error::InconsistentCatalog(format!(
            "catalog describes {} instances, expected {n}",
            catalog.n_instances()
        )));
    }
    catalog.validate()
}

/// Pseudo labels: a partition of the instances into clusters, with paired
/// (size >= 2) and unpaired (singleton) cluster ids kept separately.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    label_of: Vec<usize>,
    clusters: Vec<Vec<usize>>,
    paired_ids: Vec<usize>,
    unpaired_ids: Vec<usize>,
}

impl ClusterAssignment {
    /// Build from member lists. Empty lists are dropped, members are sorted,
    /// and cluster ids are assigned in order of smallest member index.
    pub fn from_clusters(clusters: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut clusters: Vec<Vec<usize>> =
            clusters.into_iter().filter(|c| !c.is_empty()).collect();
        for c in &mut clusters {
            c.sort_unstable();
        }
        clusters.sort_by_key(|c| c[0]);

        let mut label_of = vec![usize::MAX; n];
        for (id, members) in clusters.iter().enumerate() {
            for &inst in members {
                if inst >= n {
                    return Err(Error::InvalidPartition(format!(
                        "instance {inst} out of range (N = {n})"
                    )));
                }
                if label_of[inst] != usize::MAX {
                    return Err(Error::InvalidPartition(format!(
                        "instance {inst} assigned to more than one cluster"
                    )));
                }
                label_of[inst] = id;
            }
        }
        if let Some(missing) = label_of.iter().position(|&l| l == usize::MAX) {
            return Err(Error::InvalidPartition(format!(
                "instance {missing} is not assigned to any cluster"
            )));
        }

        let mut paired_ids = Vec::new();
        let mut unpaired_ids = Vec::new();
        for (id, members) in clusters.iter().enumerate() {
            if members.len() >= 2 {
                paired_ids.push(id);
            } else {
                unpaired_ids.push(id);
            }
        }
        Ok(ClusterAssignment {
            label_of,
            clusters,
            paired_ids,
            unpaired_ids,
        })
    }

    /// Build from a flat label array (labels need not be contiguous).
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (inst, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(inst);
        }
        Self::from_clusters(groups.into_values().collect(), labels.len())
    }

    #[inline]
    pub fn n_instances(&self) -> usize {
        self.label_of.len()
    }

    #[inline]
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.label_of[i]
    }

    pub fn label_of(&self) -> &[usize] {
        &self.label_of
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn cluster(&self, id: usize) -> &[usize] {
        &self.clusters[id]
    }

    /// Ids of clusters with two or more members.
    pub fn paired_ids(&self) -> &[usize] {
        &self.paired_ids
    }

    /// Ids of singleton clusters.
    pub fn unpaired_ids(&self) -> &[usize] {
        &self.unpaired_ids
    }

    /// Verify that no cluster holds two instances from the same scene.
    pub fn check_scene_unique(&self, catalog: &SceneCatalog) -> Result<()> {
        for (id, members) in self.clusters.iter().enumerate() {
            let mut scenes: BTreeMap<usize, usize> = BTreeMap::new();
            for &inst in members {
                if let Some(&prev) = scenes.get(&catalog.scene_of(inst)) {
                    return Err(Error::InvalidPartition(format!(
                        "cluster {id} holds instances {prev} and {inst} from scene {}",
                        catalog.scene_of(inst)
                    )));
                }
                scenes.insert(catalog.scene_of(inst), inst);
            }
        }
        Ok(())
    }
}
