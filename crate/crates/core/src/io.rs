//! File formats.
//!
//! Features are stored either as MFV1 binary (`b"MFV1"`, `u32` LE rows,
//! `u32` LE columns, then row-major `f32` LE values) or as CSV with a header
//! `f0,f1,...`; readers detect the format from the first four bytes.
//! Label files are CSV `index,hard_label,p0,...` with one row per instance;
//! unlabeled instances carry `-1` and empty probability cells. Every writer
//! goes through a temporary file in the target directory and a rename.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::labels::{LabelQuartet, ModalityLabels};
use crate::types::{argmax, FeatureMatrix, Modality, SoftLabelMatrix};

pub const MFV1_MAGIC: &[u8; 4] = b"MFV1";

/// Writes `bytes` to `path` via a sibling temporary file and a rename,
/// creating missing parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn encode_mfv1(m: &Array2<f64>) -> Vec<u8> {
    let (n, d) = m.dim();
    let mut out = Vec::with_capacity(12 + 4 * n * d);
    out.extend_from_slice(MFV1_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &x in m.iter() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn decode_mfv1(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    if bytes.len() < 12 || &bytes[..4] != MFV1_MAGIC {
        return Err(Error::format(path, "missing MFV1 header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (n, d) = (word(4), word(8));
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(12))
        .ok_or_else(|| Error::format(path, "matrix size overflows"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("{n}x{d} matrix needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Array2::from_shape_vec((n, d), values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_matrix_csv(m: &Array2<f64>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((0..m.ncols()).map(|j| format!("f{j}")))?;
    for row in m.outer_iter() {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn decode_matrix_csv(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_reader(bytes);
    let d = r.headers()?.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != d {
            return Err(Error::format(path, format!("row {line} has {} fields, expected {d}", rec.len())));
        }
        for field in rec.iter() {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("row {line}: not a number: {field:?}")))?;
            values.push(x);
        }
        n += 1;
    }
    Array2::from_shape_vec((n, d), values).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads a raw matrix in either feature format.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MFV1_MAGIC) {
        decode_mfv1(&bytes, path)
    } else {
        decode_matrix_csv(&bytes, path)
    }
}

/// Reads and L2-normalizes features.
pub fn read_features(path: &Path, modality: Modality) -> Result<FeatureMatrix> {
    FeatureMatrix::new(read_matrix(path)?, modality)
}

/// Writes MFV1 when the extension is `mfv`, CSV otherwise.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let is_mfv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mfv"));
    let bytes = if is_mfv { encode_mfv1(m) } else { encode_matrix_csv(m)? };
    write_atomic(path, &bytes)
}

pub fn encode_labels(labels: &ModalityLabels) -> Result<Vec<u8>> {
    let k = labels.space_size();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index".to_string(), "hard_label".to_string()];
    header.extend((0..k).map(|j| format!("p{j}")));
    w.write_record(&header)?;
    let mut next = labels.rows.iter().enumerate().peekable();
    for i in 0..labels.total {
        let mut rec = vec![i.to_string()];
        match next.peek() {
            Some(&(r, &idx)) if idx == i => {
                let row = labels.soft.row(r);
                rec.push(argmax(row).to_string());
                rec.extend(row.iter().map(|x| x.to_string()));
                next.next();
            }
            _ => {
                rec.push("-1".into());
                rec.extend(std::iter::repeat_n(String::new(), k));
            }
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_labels(path: &Path, labels: &ModalityLabels) -> Result<()> {
    write_atomic(path, &encode_labels(labels)?)
}

pub fn read_labels(path: &Path, modality: Modality, space: Modality) -> Result<ModalityLabels> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "index" || &header[1] != "hard_label" {
        return Err(Error::format(path, "expected header index,hard_label,p0,..."));
    }
    let k = header.len() - 2;
    let mut rows = Vec::new();
    let mut probs = Vec::new();
    let mut total = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let index: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("row {line}: bad index")))?;
        if index != line {
            return Err(Error::format(path, format!("row {line} has index {index}")));
        }
        total += 1;
        if rec[1].trim() == "-1" {
            continue;
        }
        for field in rec.iter().skip(2) {
            let p: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("row {line}: bad probability {field:?}")))?;
            probs.push(p);
        }
        rows.push(index);
    }
    let n = rows.len();
    let m = Array2::from_shape_vec((n, k), probs).map_err(|e| Error::format(path, e.to_string()))?;
    ModalityLabels::new(modality, space, SoftLabelMatrix::new(m)?, rows, total)
}

/// The four label files of a quartet, named by role.
pub fn write_quartet(dir: &Path, q: &LabelQuartet) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, labels) in q.named() {
        write_labels(&dir.join(format!("{name}.csv")), labels)?;
    }
    Ok(())
}

pub fn read_quartet(dir: &Path) -> Result<LabelQuartet> {
    use Modality::{Infrared, Visible};
    Ok(LabelQuartet {
        intra_v: read_labels(&dir.join("intra_v.csv"), Visible, Visible)?,
        cross_r: read_labels(&dir.join("cross_r.csv"), Infrared, Visible)?,
        intra_r: read_labels(&dir.join("intra_r.csv"), Infrared, Infrared)?,
        cross_v: read_labels(&dir.join("cross_v.csv"), Visible, Infrared)?,
    })
}

pub fn encode_ground_truth(gt: &GroundTruth) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["modality", "index", "identity"])?;
    for m in [Modality::Visible, Modality::Infrared] {
        for (i, id) in gt.ids(m).iter().enumerate() {
            w.write_record([m.short().to_string(), i.to_string(), id.to_string()])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_ground_truth(path: &Path, gt: &GroundTruth) -> Result<()> {
    write_atomic(path, &encode_ground_truth(gt)?)
}

fn parse_ids(path: &Path, entries: Vec<(usize, i64)>) -> Result<Vec<i64>> {
    let mut ids = vec![None; entries.len()];
    for (i, id) in entries {
        match ids.get_mut(i) {
            Some(slot @ None) => *slot = Some(id),
            Some(Some(_)) => return Err(Error::format(path, format!("index {i} listed twice"))),
            None => return Err(Error::format(path, format!("index {i} out of range"))),
        }
    }
    Ok(ids.into_iter().map(|x| x.expect("every slot filled")).collect())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("row {line}: cannot parse {s:?}")))
}

/// Identities for both modalities from `modality,index,identity` rows, where
/// modality is `v` or `r`.
pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["modality", "index", "identity"] {
        return Err(Error::format(path, "expected header modality,index,identity"));
    }
    let (mut v, mut ir) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let entry = (field(path, line, &rec[1])?, field(path, line, &rec[2])?);
        match rec[0].trim() {
            "v" | "visible" => v.push(entry),
            "r" | "infrared" => ir.push(entry),
            other => return Err(Error::format(path, format!("row {line}: unknown modality {other:?}"))),
        }
    }
    Ok(GroundTruth::new(parse_ids(path, v)?, parse_ids(path, ir)?))
}

/// Identities of one modality from `index,identity` rows.
pub fn read_identities(path: &Path) -> Result<Vec<i64>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["index", "identity"] {
        return Err(Error::format(path, "expected header index,identity"));
    }
    let mut entries = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        entries.push((field(path, line, &rec[0])?, field(path, line, &rec[1])?));
    }
    parse_ids(path, entries)
}
