use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::examples::{HistoryEntry, StepExample, StepInput, StepLabels};
use crate::episode_sim::{Action, ActionCandidate};
use crate::io::{read_f32_table, read_jsonl, write_f32_table, write_jsonl};
use crate::nav_graph::NodeId;
use crate::{Error, Result};

pub const EXAMPLE_MAGIC: &[u8; 8] = b"STEPEXMP";
pub const EXAMPLES_BIN: &str = "examples.bin";
pub const INDEX_JSONL: &str = "index.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CandidateMeta {
    action: Action,
    abs_bucket: u8,
    rel_bucket: u8,
}

/// One JSONL index line. Vectors live in the binary table starting at
/// `row`: the pooled observation, one row per history entry, then one row
/// per candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexRecord {
    env_id: String,
    instruction_id: String,
    t: usize,
    node: NodeId,
    heading: f64,
    tokens: Vec<u32>,
    history_buckets: Vec<u8>,
    candidates: Vec<CandidateMeta>,
    labels: StepLabels,
    row: usize,
}

pub fn save_dataset(dir: &Path, examples: &[StepExample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let dim = examples.first().map_or(0, |e| e.input.pooled_obs.len());
    let mut data: Vec<f32> = Vec::new();
    let mut index = Vec::with_capacity(examples.len());
    let mut row = 0;
    for ex in examples {
        let input = &ex.input;
        let rows = std::iter::once(&input.pooled_obs)
            .chain(input.history.iter().map(|h| &h.pooled_obs))
            .chain(input.candidates.iter().map(|c| &c.feature));
        let start = row;
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: r.len() });
            }
            data.extend_from_slice(r);
            row += 1;
        }
        index.push(IndexRecord {
            env_id: input.env_id.clone(),
            instruction_id: input.instruction_id.clone(),
            t: input.t,
            node: input.node,
            heading: input.heading,
            tokens: input.tokens.clone(),
            history_buckets: input.history.iter().map(|h| h.chosen_rel_bucket).collect(),
            candidates: input
                .candidates
                .iter()
                .map(|c| CandidateMeta { action: c.action, abs_bucket: c.abs_bucket, rel_bucket: c.rel_bucket })
                .collect(),
            labels: ex.labels.clone(),
            row: start,
        });
    }
    write_f32_table(&dir.join(EXAMPLES_BIN), EXAMPLE_MAGIC, row, dim, &data)?;
    write_jsonl(&dir.join(INDEX_JSONL), &index)
}

/// Loads a dataset and re-checks label consistency of every example.
pub fn load_dataset(dir: &Path) -> Result<Vec<StepExample>> {
    let (rows, dim, data) = read_f32_table(&dir.join(EXAMPLES_BIN), EXAMPLE_MAGIC, 1)?;
    let index: Vec<IndexRecord> = read_jsonl(&dir.join(INDEX_JSONL))?;
    let row_at = |r: usize| -> Result<Vec<f32>> {
        if r >= rows {
            return Err(Error::Format(format!("row {r} beyond {rows} stored rows")));
        }
        Ok(data[r * dim..(r + 1) * dim].to_vec())
    };
    let mut out = Vec::with_capacity(index.len());
    for rec in index {
        let mut r = rec.row;
        let pooled_obs = row_at(r)?;
        r += 1;
        let mut history = Vec::with_capacity(rec.history_buckets.len());
        for &b in &rec.history_buckets {
            history.push(HistoryEntry { pooled_obs: row_at(r)?, chosen_rel_bucket: b });
            r += 1;
        }
        let mut candidates = Vec::with_capacity(rec.candidates.len());
        for c in &rec.candidates {
            candidates.push(ActionCandidate {
                action: c.action,
                feature: row_at(r)?,
                abs_bucket: c.abs_bucket,
                rel_bucket: c.rel_bucket,
            });
            r += 1;
        }
        let example = StepExample {
            input: StepInput {
                env_id: rec.env_id,
                instruction_id: rec.instruction_id,
                t: rec.t,
                node: rec.node,
                heading: rec.heading,
                tokens: rec.tokens,
                history,
                pooled_obs,
                candidates,
            },
            labels: rec.labels,
        };
        example.check_consistency()?;
        out.push(example);
    }
    Ok(out)
}
