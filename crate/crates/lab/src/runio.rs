//! Run output directories.
//!
//! ```text
//! run.json              config echo, data provenance, per-epoch snapshots
//! labels_final.csv      index,p_stable,p_unstable,annotated
//! model.json            trained parameters
//! queries.csv           annotation transcript
//! embeddings.bin        optional, N×Z_e little-endian f32
//! embeddings_meta.json  shape of embeddings.bin
//! ```

use std::path::Path;

use mmr_core::attack::NoiseSpec;
use mmr_core::data::{Class, Dataset};
use mmr_core::hil::{Direction, LabelSource, QueryItem, QueryStatus, ScriptedAnnotator};
use mmr_core::metrics::MetricsSnapshot;
use mmr_core::model::MmrModel;
use mmr_core::trainer::{EpochLog, RunResult, RunSummary};
use serde::{Deserialize, Serialize};

use crate::config::LabConfig;
use crate::error::{LabError, Result};
use crate::store::{self, csv_bytes, parse_field, read_csv, write_file, write_json};

pub const RUN_FORMAT_VERSION: u32 = 1;

pub const CONVERGENCE_DEFINITION: &str = "smallest epoch e with accuracy >= max(trace) - band at every epoch in [e, e + patience]; \
     windows cut short by the end of the run are accepted and flagged as truncated";

pub const QUERY_HEADER: [&str; 8] = [
    "round",
    "sample_id",
    "p_false",
    "direction",
    "issued_epoch",
    "status",
    "label",
    "source",
];

/// Where the train/test data came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataInfo {
    /// `"generated"` or the dataset directory.
    pub source: String,
    pub n_train: usize,
    pub n_test: usize,
    pub h: usize,
    pub w: usize,
    pub injection: Option<NoiseSpec>,
}

/// Contents of `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub config: LabConfig,
    pub data: DataInfo,
    pub convergence_definition: String,
    pub summary: RunSummary,
    pub snapshots: Vec<MetricsSnapshot>,
    pub logs: Vec<EpochLog>,
}

impl RunRecord {
    pub fn new(config: &LabConfig, data: DataInfo, result: &RunResult) -> Self {
        RunRecord {
            format_version: RUN_FORMAT_VERSION,
            config: config.clone(),
            data,
            convergence_definition: CONVERGENCE_DEFINITION.to_string(),
            summary: result.summary.clone(),
            snapshots: result.snapshots.clone(),
            logs: result.logs.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingsMeta {
    pub n: usize,
    pub dim: usize,
    pub dtype: String,
    pub split: String,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub fn query_csv(items: &[QueryItem]) -> Vec<u8> {
    csv_bytes(
        &QUERY_HEADER,
        items.iter().map(|q| {
            [
                q.round.to_string(),
                q.sample_id.to_string(),
                q.p_false.to_string(),
                q.direction.name().to_string(),
                q.issued_epoch.to_string(),
                q.status.name().to_string(),
                opt(q.label.map(Class::name)),
                opt(q.source.map(LabelSource::name)),
            ]
        }),
    )
}

/// Parses `queries.csv`. The `duplicate` flag is not part of the file and
/// is reconstructed from earlier labeled rows.
pub fn read_queries(path: &Path) -> Result<Vec<QueryItem>> {
    let mut out: Vec<QueryItem> = Vec::new();
    read_csv(path, &QUERY_HEADER, |_, rec| {
        let cell = |i: usize| rec.get(i).unwrap_or("");
        let direction = Direction::parse(cell(3)).ok_or_else(|| format!("bad direction {:?}", cell(3)))?;
        let status = QueryStatus::parse(cell(5)).ok_or_else(|| format!("bad status {:?}", cell(5)))?;
        let label = match cell(6) {
            "" => None,
            s => Some(Class::parse(s).ok_or_else(|| format!("bad label {s:?}"))?),
        };
        let source = match cell(7) {
            "" => None,
            s => Some(LabelSource::parse(s).ok_or_else(|| format!("bad source {s:?}"))?),
        };
        if (status == QueryStatus::Labeled) != label.is_some() {
            return Err("label must be present exactly when status is labeled".into());
        }
        let sample_id: usize = parse_field(rec, 1, "sample_id")?;
        let round: usize = parse_field(rec, 0, "round")?;
        let duplicate = out
            .iter()
            .any(|q| q.round < round && q.sample_id == sample_id && q.status == QueryStatus::Labeled);
        out.push(QueryItem {
            sample_id,
            p_false: parse_field(rec, 2, "p_false")?,
            direction,
            round,
            issued_epoch: parse_field(rec, 4, "issued_epoch")?,
            status,
            label,
            source,
            duplicate,
        });
        Ok(())
    })?;
    Ok(out)
}

/// A scripted annotator replaying `queries.csv`.
pub fn load_transcript(path: &Path) -> Result<ScriptedAnnotator> {
    Ok(ScriptedAnnotator::from_items(&read_queries(path)?))
}

pub fn labels_final_csv(train: &Dataset) -> Vec<u8> {
    csv_bytes(
        &["index", "p_stable", "p_unstable", "annotated"],
        train.labels_train().iter().zip(train.annotated_mask()).enumerate().map(|(i, (l, &a))| {
            [
                i.to_string(),
                l.p_stable().to_string(),
                l.p_unstable().to_string(),
                if a { "1" } else { "0" }.to_string(),
            ]
        }),
    )
}

pub fn write_run(dir: &Path, record: &RunRecord, result: &RunResult) -> Result<()> {
    store::create_dir(dir)?;
    write_json(&dir.join("run.json"), record)?;
    write_file(&dir.join("labels_final.csv"), &labels_final_csv(&result.train))?;
    write_file(&dir.join("queries.csv"), &query_csv(&result.queries))?;
    let model = serde_json::to_vec(&result.model).expect("serializable");
    write_file(&dir.join("model.json"), &model)?;
    if record.config.export_embeddings {
        let z = result.model.embed_dataset(&result.train)?;
        write_file(&dir.join("embeddings.bin"), &store::f32_le_bytes(z.data().iter().map(|&v| v as f32)))?;
        write_json(
            &dir.join("embeddings_meta.json"),
            &EmbeddingsMeta {
                n: z.shape()[0],
                dim: z.shape()[1],
                dtype: "f32le".into(),
                split: "train".into(),
            },
        )?;
    }
    Ok(())
}

pub fn read_record(dir: &Path) -> Result<RunRecord> {
    let path = dir.join("run.json");
    let rec: RunRecord = store::read_json(&path)?;
    if rec.format_version != RUN_FORMAT_VERSION {
        return Err(LabError::format(&path, "format_version", format!("unsupported version {}", rec.format_version)));
    }
    Ok(rec)
}

pub fn read_model(path: &Path) -> Result<MmrModel> {
    store::read_json(path)
}
