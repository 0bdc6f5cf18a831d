//! Dataset directories.
//!
//! ```text
//! meta.json         N, H, W, class names, generator and injection settings
//! features.bin      N·H·W little-endian f32, row-major
//! labels_true.csv   index,label
//! labels_train.csv  index,p_stable,p_unstable
//! masks.csv         index,flipped,annotated
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use mmr_core::attack::NoiseSpec;
use mmr_core::data::{Class, Dataset, DatasetParts, GeneratorSpec, SoftLabel};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const CLASS_NAMES: [&str; 2] = ["stable", "unstable"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub format_version: u32,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub classes: Vec<String>,
    pub seed: Option<u64>,
    pub generator: Option<GeneratorSpec>,
    pub injection: Option<NoiseSpec>,
}

impl Meta {
    pub fn of(ds: &Dataset) -> Self {
        Meta {
            format_version: FORMAT_VERSION,
            n: ds.len(),
            h: ds.height(),
            w: ds.width(),
            classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            seed: ds.generator().map(|g| g.seed),
            generator: ds.generator().cloned(),
            injection: ds.injection().cloned(),
        }
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    f.write_all(bytes).map_err(|e| LabError::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| LabError::io(path, e))
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| LabError::format(path, format!("line {} column {}", e.line(), e.column()), e.to_string()))
}

/// Serializes CSV rows in memory; `rows` yields already formatted fields.
pub(crate) fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Reads a CSV file, checks its header, and hands every record with its line
/// number to `f`.
pub(crate) fn read_csv<F>(path: &Path, header: &[&str], mut f: F) -> Result<usize>
where
    F: FnMut(u64, &csv::StringRecord) -> std::result::Result<(), String>,
{
    let bytes = read_file(path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let got = r
        .headers()
        .map_err(|e| LabError::format(path, "line 1", e.to_string()))?
        .clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(LabError::format(
            path,
            "line 1",
            format!("expected header {}, found {}", header.join(","), got.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut count = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            LabError::format(path, format!("line {line}"), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        f(line, &rec).map_err(|m| LabError::format(path, format!("line {line}"), m))?;
        count += 1;
    }
    Ok(count)
}

pub(crate) fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<T, String> {
    let raw = rec.get(i).ok_or_else(|| format!("missing column {name}"))?;
    raw.parse().map_err(|_| format!("bad {name} value {raw:?}"))
}

pub(crate) fn parse_bool(rec: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<bool, String> {
    match rec.get(i) {
        Some("0") => Ok(false),
        Some("1") => Ok(true),
        Some(other) => Err(format!("bad {name} value {other:?}, expected 0 or 1")),
        None => Err(format!("missing column {name}")),
    }
}

fn check_index(line_index: usize, expected: usize) -> std::result::Result<(), String> {
    if line_index == expected {
        Ok(())
    } else {
        Err(format!("index {line_index} out of order, expected {expected}"))
    }
}

pub(crate) fn f32_le_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub(crate) fn soft_label_rows(labels: &[SoftLabel]) -> Vec<[String; 3]> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| [i.to_string(), l.p_stable().to_string(), l.p_unstable().to_string()])
        .collect()
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

pub fn save(ds: &Dataset, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join("meta.json"), &Meta::of(ds))?;
    write_file(&dir.join("features.bin"), &f32_le_bytes(ds.features().iter().copied()))?;
    write_file(
        &dir.join("labels_true.csv"),
        &csv_bytes(
            &["index", "label"],
            ds.labels_true().iter().enumerate().map(|(i, c)| [i.to_string(), c.name().to_string()]),
        ),
    )?;
    write_file(
        &dir.join("labels_train.csv"),
        &csv_bytes(&["index", "p_stable", "p_unstable"], soft_label_rows(ds.labels_train())),
    )?;
    write_file(
        &dir.join("masks.csv"),
        &csv_bytes(
            &["index", "flipped", "annotated"],
            ds.flipped_mask()
                .iter()
                .zip(ds.annotated_mask())
                .enumerate()
                .map(|(i, (&f, &a))| [i.to_string(), flag(f), flag(a)]),
        ),
    )
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = read_json(&meta_path)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(LabError::format(
            &meta_path,
            "format_version",
            format!("unsupported version {}", meta.format_version),
        ));
    }
    if meta.classes.iter().ne(CLASS_NAMES.iter()) {
        return Err(LabError::format(&meta_path, "classes", format!("expected {CLASS_NAMES:?}")));
    }
    let n = meta.n;

    let feat_path = dir.join("features.bin");
    let raw = read_file(&feat_path)?;
    let expected = n * meta.h * meta.w * 4;
    if raw.len() != expected {
        let at = raw.len().min(expected);
        return Err(LabError::format(
            &feat_path,
            format!("byte {at}"),
            format!("length mismatch: expected {expected} bytes for N={n}, H={}, W={}, found {}", meta.h, meta.w, raw.len()),
        ));
    }
    let features: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = features.iter().position(|v| !v.is_finite()) {
        return Err(LabError::format(&feat_path, format!("byte {}", 4 * i), "non-finite feature value"));
    }

    let truth_path = dir.join("labels_true.csv");
    let mut labels_true = Vec::with_capacity(n);
    read_csv(&truth_path, &["index", "label"], |_, rec| {
        check_index(parse_field(rec, 0, "index")?, labels_true.len())?;
        let raw = rec.get(1).unwrap_or("");
        labels_true.push(Class::parse(raw).ok_or_else(|| format!("unknown label {raw:?}"))?);
        Ok(())
    })?;

    let train_path = dir.join("labels_train.csv");
    let mut labels_train = Vec::with_capacity(n);
    read_csv(&train_path, &["index", "p_stable", "p_unstable"], |_, rec| {
        check_index(parse_field(rec, 0, "index")?, labels_train.len())?;
        let s: f64 = parse_field(rec, 1, "p_stable")?;
        let u: f64 = parse_field(rec, 2, "p_unstable")?;
        labels_train.push(SoftLabel::new(s, u).map_err(|e| e.to_string())?);
        Ok(())
    })?;

    let mask_path = dir.join("masks.csv");
    let (mut flipped, mut annotated) = (Vec::with_capacity(n), Vec::with_capacity(n));
    read_csv(&mask_path, &["index", "flipped", "annotated"], |_, rec| {
        check_index(parse_field(rec, 0, "index")?, flipped.len())?;
        flipped.push(parse_bool(rec, 1, "flipped")?);
        annotated.push(parse_bool(rec, 2, "annotated")?);
        Ok(())
    })?;

    for (path, len) in [(&truth_path, labels_true.len()), (&train_path, labels_train.len()), (&mask_path, flipped.len())] {
        if len != n {
            return Err(LabError::format(
                path,
                format!("line {}", len + 1),
                format!("{len} rows but meta.json declares N={n}"),
            ));
        }
    }

    Ok(Dataset::from_parts(DatasetParts {
        h: meta.h,
        w: meta.w,
        features,
        labels_true,
        labels_train,
        flipped,
        annotated,
        injection: meta.injection,
        generator: meta.generator,
    })?)
}
