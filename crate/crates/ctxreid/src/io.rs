//! File formats: embeddings as JSONL (`{"id": .., "vec": [..]}` per line),
//! the scene catalog and ground-truth labels as JSON, plus cluster outputs,
//! relevance lists, bank snapshots, encoder weights, and training history.
//!
//! Readers attach the offending path to every error so the CLI can surface
//! it.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::core::{Box2d, ClusterAssignment, EmbeddingMatrix, SceneCatalog};
use crate::error::{Error, Result};
use crate::trainer::{EpochRecord, LinearEncoder};

fn file_err(path: &Path, source: std::io::Error) -> Error {
    Error::File {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{}: {what}", path.display()))
}

/// Read a whole file into a deserializable value, naming the path on
/// failure.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

/// Write a value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| file_err(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRecord {
    id: usize,
    vec: Vec<f64>,
}

/// One JSON object per line: `{"id": int, "vec": [float, ...]}`. Rows come
/// back sorted by id; ids must be unique.
pub fn read_embeddings_jsonl(path: &Path) -> Result<(Vec<usize>, EmbeddingMatrix)> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    let mut records: Vec<EmbeddingRecord> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, format!("line {}: {e}", lineno + 1)))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(parse_err(path, "no embedding records"));
    }
    records.sort_by_key(|r| r.id);
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.id) {
            return Err(parse_err(path, format!("duplicate id {}", r.id)));
        }
    }
    let ids: Vec<usize> = records.iter().map(|r| r.id).collect();
    let rows: Vec<Vec<f64>> = records.into_iter().map(|r| r.vec).collect();
    Ok((ids, EmbeddingMatrix::from_rows(rows)?))
}

pub fn write_embeddings_jsonl(path: &Path, ids: &[usize], emb: &EmbeddingMatrix) -> Result<()> {
    if ids.len() != emb.n() {
        return Err(Error::InvalidConfig(format!(
            "{} ids for {} rows",
            ids.len(),
            emb.n()
        )));
    }
    let mut out = fs::File::create(path).map_err(|e| file_err(path, e))?;
    for (row, &id) in ids.iter().enumerate() {
        let rec = EmbeddingRecord {
            id,
            vec: emb.row(row).to_vec(),
        };
        let line = serde_json::to_string(&rec)?;
        writeln!(out, "{line}").map_err(|e| file_err(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneRecord {
    id: usize,
    instances: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    boxes: Option<Vec<[f64; 4]>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogFile {
    scenes: Vec<SceneRecord>,
}

/// Catalog JSON: `{"scenes": [{"id": int, "instances": [int, ...],
/// "boxes": [[x1,y1,x2,y2], ...]?}]}`. Scene ids must be 0..M-1; boxes, when
/// given, are per-instance and must be present on every scene or none.
pub fn read_catalog_json(path: &Path) -> Result<SceneCatalog> {
    let parsed: CatalogFile = read_json(path)?;
    let m = parsed.scenes.len();
    let mut members: Vec<Option<Vec<usize>>> = vec![None; m];
    let mut with_boxes = 0usize;
    for scene in &parsed.scenes {
        if scene.id >= m {
            return Err(parse_err(
                path,
                format!("scene id {} out of range (M = {m})", scene.id),
            ));
        }
        if members[scene.id].is_some() {
            return Err(parse_err(path, format!("duplicate scene id {}", scene.id)));
        }
        if let Some(boxes) = &scene.boxes {
            if boxes.len() != scene.instances.len() {
                return Err(parse_err(
                    path,
                    format!(
                        "scene {} has {} boxes for {} instances",
                        scene.id,
                        boxes.len(),
                        scene.instances.len()
                    ),
                ));
            }
            with_boxes += 1;
        }
        members[scene.id] = Some(scene.instances.clone());
    }
    let members: Vec<Vec<usize>> = members
        .into_iter()
        .map(|m| m.expect("all ids covered by the range/duplicate checks"))
        .collect();
    let n: usize = members.iter().map(|l| l.len()).sum();

    let boxes = if with_boxes == 0 {
        None
    } else if with_boxes == m {
        let mut all = vec![Box2d::new(0.0, 0.0, 1.0, 1.0); n];
        for scene in &parsed.scenes {
            let boxes = scene.boxes.as_ref().expect("counted above");
            for (&inst, b) in scene.instances.iter().zip(boxes) {
                if inst >= n {
                    return Err(parse_err(path, format!("instance {inst} out of range")));
                }
                all[inst] = Box2d::new(b[0], b[1], b[2], b[3]);
            }
        }
        Some(all)
    } else {
        return Err(parse_err(path, "boxes must be given on every scene or none"));
    };

    SceneCatalog::from_members(members, boxes)
        .map_err(|e| parse_err(path, e))
}

pub fn write_catalog_json(path: &Path, catalog: &SceneCatalog) -> Result<()> {
    let scenes: Vec<SceneRecord> = (0..catalog.n_scenes())
        .map(|s| {
            let instances = catalog.members_of(s).to_vec();
            let boxes = catalog.boxes().map(|all| {
                instances
                    .iter()
                    .map(|&i| [all[i].x1, all[i].y1, all[i].x2, all[i].y2])
                    .collect()
            });
            SceneRecord {
                id: s,
                instances,
                boxes,
            }
        })
        .collect();
    write_json(path, &CatalogFile { scenes })
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelsFile {
    labels: Vec<usize>,
}

/// Ground-truth labels: `{"labels": [int, ...]}` aligned with instance ids.
pub fn read_labels_json(path: &Path) -> Result<Vec<usize>> {
    let parsed: LabelsFile = read_json(path)?;
    Ok(parsed.labels)
}

pub fn write_labels_json(path: &Path, labels: &[usize]) -> Result<()> {
    write_json(
        path,
        &LabelsFile {
            labels: labels.to_vec(),
        },
    )
}

/// Output of the `cluster` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterOutput {
    pub labels: Vec<usize>,
    pub paired: Vec<usize>,
    pub unpaired: Vec<usize>,
}

impl ClusterOutput {
    pub fn from_assignment(a: &ClusterAssignment) -> Self {
        ClusterOutput {
            labels: a.label_of().to_vec(),
            paired: a.paired_ids().to_vec(),
            unpaired: a.unpaired_ids().to_vec(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RelevanceRecord {
    query: usize,
    relevant: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gt_box: Option<[f64; 4]>,
}

/// Relevance JSON: an array of
/// `{"query": id, "relevant": [ids], "gt_box": [x1,y1,x2,y2]?}`.
pub fn read_relevance_json(path: &Path) -> Result<Vec<crate::eval::QueryRelevance>> {
    let parsed: Vec<RelevanceRecord> = read_json(path)?;
    Ok(parsed
        .into_iter()
        .map(|r| crate::eval::QueryRelevance {
            query: r.query,
            relevant: r.relevant.into_iter().collect(),
            gt_box: r.gt_box.map(|b| Box2d::new(b[0], b[1], b[2], b[3])),
        })
        .collect())
}

pub fn write_relevance_json(path: &Path, relevance: &[crate::eval::QueryRelevance]) -> Result<()> {
    let records: Vec<RelevanceRecord> = relevance
        .iter()
        .map(|r| RelevanceRecord {
            query: r.query,
            relevant: r.relevant.iter().copied().collect(),
            gt_box: r.gt_box.map(|b| [b.x1, b.y1, b.x2, b.y2]),
        })
        .collect();
    write_json(path, &records)
}

#[derive(Debug, Serialize, Deserialize)]
struct EncoderFile {
    d_in: usize,
    d_out: usize,
    w: Vec<Vec<f64>>,
}

pub fn write_encoder_json(path: &Path, enc: &LinearEncoder) -> Result<()> {
    write_json(
        path,
        &EncoderFile {
            d_in: enc.d_in(),
            d_out: enc.d_out(),
            w: enc.weights(),
        },
    )
}

pub fn read_encoder_json(path: &Path) -> Result<LinearEncoder> {
    let parsed: EncoderFile = read_json(path)?;
    let enc = LinearEncoder::from_weights(parsed.w).map_err(|e| parse_err(path, e))?;
    if enc.d_in() != parsed.d_in || enc.d_out() != parsed.d_out {
        return Err(parse_err(path, "declared dimensions do not match the matrix"));
    }
    Ok(enc)
}

/// One epoch record per line.
pub fn write_history_jsonl(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = fs::File::create(path).map_err(|e| file_err(path, e))?;
    for rec in history {
        let line = serde_json::to_string(rec)?;
        writeln!(out, "{line}").map_err(|e| file_err(path, e))?;
    }
    Ok(())
}

pub fn read_history_jsonl(path: &Path) -> Result<Vec<EpochRecord>> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpochRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
