//! Feature, attribute and split files.
//!
//! * features: CSV `id,f0,f1,...` (header optional) or binary
//!   `b"SABRFEAT" u32(1) u64 rows u64 cols f32*rows*cols` (little-endian;
//!   instance ids are the row indices).
//! * attributes: CSV `label,a0,a1,...` (header optional).
//! * split: CSV with header `instance_id,label,role`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Dataset, LabelId, LabelSpace, Role};
use crate::error::{Result, SabrError};
use crate::math::Matrix;

pub const FEATURES_MAGIC: &[u8; 8] = b"SABRFEAT";
const FEATURES_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub features: PathBuf,
    pub attributes: PathBuf,
    pub split: PathBuf,
}

fn csv_records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| SabrError::format(path, e.to_string()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| SabrError::format(path, e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push(rec);
    }
    Ok(out)
}

/// Parses `key,v0,v1,...` rows; a first row whose second cell is not a
/// number is treated as a header.
fn keyed_numeric_rows(path: &Path, what: &str) -> Result<(Vec<String>, Matrix)> {
    let mut records = csv_records(path)?;
    if let Some(first) = records.first() {
        if first.get(1).is_some_and(|c| c.parse::<f64>().is_err()) {
            records.remove(0);
        }
    }
    if records.is_empty() {
        return Err(SabrError::format(path, format!("no {what} rows")));
    }
    let width = records[0].len();
    if width < 2 {
        return Err(SabrError::format(
            path,
            format!("{what} rows need a key and at least one value"),
        ));
    }
    let mut keys = Vec::with_capacity(records.len());
    let mut data = Vec::with_capacity(records.len() * (width - 1));
    for (line, rec) in records.iter().enumerate() {
        let key = rec.get(0).unwrap_or_default().to_string();
        if rec.len() != width {
            return Err(SabrError::format(
                path,
                format!(
                    "{what} `{key}` has dimension {} but expected {} (row {})",
                    rec.len() - 1,
                    width - 1,
                    line + 1
                ),
            ));
        }
        for (col, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                SabrError::format(
                    path,
                    format!("{what} `{key}` column {col}: `{cell}` is not a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(SabrError::format(
                    path,
                    format!(
                        "{what} `{key}` (row {}) has non-finite value `{cell}`",
                        line + 1
                    ),
                ));
            }
            data.push(v);
        }
        keys.push(key);
    }
    let m = Matrix::from_vec(keys.len(), width - 1, data)?;
    Ok((keys, m))
}

/// Loads instance ids and the feature matrix (CSV or `SABRFEAT` binary).
pub fn load_features(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut head = [0u8; 8];
    let is_binary = File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| SabrError::io(path, e))?
        == 8
        && &head == FEATURES_MAGIC;
    if !is_binary {
        return keyed_numeric_rows(path, "instance");
    }
    let bytes = std::fs::read(path).map_err(|e| SabrError::io(path, e))?;
    let fail = |m: &str| SabrError::format(path, m.to_string());
    if bytes.len() < 28 {
        return Err(fail("truncated SABRFEAT header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FEATURES_VERSION {
        return Err(fail(&format!("unsupported SABRFEAT version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let body = &bytes[28..];
    if body.len() != rows * cols * 4 {
        return Err(fail(&format!(
            "expected {} payload bytes for {rows}x{cols}, found {}",
            rows * cols * 4,
            body.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, c) in body.chunks_exact(4).enumerate() {
        let v = f64::from(f32::from_le_bytes(c.try_into().unwrap()));
        if !v.is_finite() {
            return Err(fail(&format!(
                "non-finite feature value in row {}",
                i / cols.max(1)
            )));
        }
        data.push(v);
    }
    let ids = (0..rows).map(|i| i.to_string()).collect();
    Ok((ids, Matrix::from_vec(rows, cols, data)?))
}

/// Loads label names and attribute vectors.
pub fn load_attributes(path: &Path) -> Result<(Vec<String>, Matrix)> {
    keyed_numeric_rows(path, "label")
}

/// Loads `(instance_id, label, role)` triples.
pub fn load_split(path: &Path) -> Result<Vec<(String, Option<String>, Role)>> {
    let records = csv_records(path)?;
    let Some((header, rows)) = records.split_first() else {
        return Err(SabrError::format(path, "empty split file"));
    };
    let cols: Vec<&str> = header.iter().collect();
    if cols != ["instance_id", "label", "role"] {
        return Err(SabrError::format(
            path,
            format!(
                "split header must be `instance_id,label,role`, got `{}`",
                cols.join(",")
            ),
        ));
    }
    rows.iter()
        .enumerate()
        .map(|(i, rec)| {
            if rec.len() != 3 {
                return Err(SabrError::format(
                    path,
                    format!("row {} has {} fields", i + 2, rec.len()),
                ));
            }
            let role = Role::parse(&rec[2]).ok_or_else(|| {
                SabrError::format(path, format!("row {}: unknown role `{}`", i + 2, &rec[2]))
            })?;
            let label = (!rec[1].is_empty()).then(|| rec[1].to_string());
            Ok((rec[0].to_string(), label, role))
        })
        .collect()
}

/// Loads and validates a dataset. Label order follows the attributes file;
/// labels used by `seen_train`/`test_seen` rows form `S`, the rest form `U`.
pub fn load_dataset(
    features_path: &Path,
    attributes_path: &Path,
    split_path: &Path,
) -> Result<Dataset> {
    let (ids, features) = load_features(features_path)?;
    let (names, attrs) = load_attributes(attributes_path)?;
    let split = load_split(split_path)?;

    let name_to_id: HashMap<&str, LabelId> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), LabelId(i)))
        .collect();
    if name_to_id.len() != names.len() {
        return Err(SabrError::format(attributes_path, "duplicate label names"));
    }
    let mut by_id: HashMap<&str, (Option<LabelId>, Role)> = HashMap::with_capacity(split.len());
    for (inst, label, role) in &split {
        let lid = match label {
            Some(l) => Some(*name_to_id.get(l.as_str()).ok_or_else(|| {
                SabrError::format(split_path, format!("label `{l}` has no attribute vector"))
            })?),
            None => None,
        };
        if by_id.insert(inst.as_str(), (lid, *role)).is_some() {
            return Err(SabrError::format(
                split_path,
                format!("instance `{inst}` listed twice"),
            ));
        }
    }
    if by_id.len() != ids.len() {
        return Err(SabrError::format(
            split_path,
            format!(
                "split lists {} instances but the feature file has {}",
                by_id.len(),
                ids.len()
            ),
        ));
    }
    let mut labels = Vec::with_capacity(ids.len());
    let mut roles = Vec::with_capacity(ids.len());
    let mut is_seen = vec![false; names.len()];
    for id in &ids {
        let (l, r) = by_id.get(id.as_str()).ok_or_else(|| {
            SabrError::format(split_path, format!("instance `{id}` missing from split"))
        })?;
        if let (Some(l), Role::SeenTrain | Role::TestSeen) = (l, r) {
            is_seen[l.0] = true;
        }
        labels.push(*l);
        roles.push(*r);
    }
    let seen = (0..names.len())
        .filter(|&i| is_seen[i])
        .map(LabelId)
        .collect();
    let unseen = (0..names.len())
        .filter(|&i| !is_seen[i])
        .map(LabelId)
        .collect();
    let space = LabelSpace::new(names, attrs, seen, unseen)?;
    Dataset::new(features, ids, labels, roles, space)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| SabrError::io(path, e))
}

fn write_keyed_csv(
    path: &Path,
    key: &str,
    prefix: &str,
    keys: &[String],
    m: &Matrix,
) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| SabrError::io(path, e);
    let mut header = key.to_string();
    for c in 0..m.cols() {
        header.push_str(&format!(",{prefix}{c}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for (k, r) in keys.iter().zip(0..m.rows()) {
        let mut line = k.clone();
        for v in m.row(r) {
            // `{}` on f64 prints the shortest string that parses back exactly
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_features_csv(path: &Path, ids: &[String], features: &Matrix) -> Result<()> {
    write_keyed_csv(path, "id", "f", ids, features)
}

/// Binary features; values are narrowed to `f32`.
pub fn write_features_bin(path: &Path, features: &Matrix) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| SabrError::io(path, e);
    w.write_all(FEATURES_MAGIC).map_err(io)?;
    w.write_all(&FEATURES_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(features.rows() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&(features.cols() as u64).to_le_bytes())
        .map_err(io)?;
    for &v in features.data() {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_attributes_csv(path: &Path, space: &LabelSpace) -> Result<()> {
    write_keyed_csv(path, "label", "a", space.names(), space.attributes())
}

pub fn write_split_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| SabrError::io(path, e);
    writeln!(w, "instance_id,label,role").map_err(io)?;
    for i in 0..ds.len() {
        let label = ds.labels()[i].map_or("", |l| ds.label_space().name(l));
        writeln!(w, "{},{},{}", ds.ids()[i], label, ds.roles()[i].as_str()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes `features.csv`, `attributes.csv` and `split.csv` into `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetPaths> {
    std::fs::create_dir_all(dir).map_err(|e| SabrError::io(dir, e))?;
    let paths = DatasetPaths {
        features: dir.join("features.csv"),
        attributes: dir.join("attributes.csv"),
        split: dir.join("split.csv"),
    };
    write_features_csv(&paths.features, ds.ids(), ds.features())?;
    write_attributes_csv(&paths.attributes, ds.label_space())?;
    write_split_csv(&paths.split, ds)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_small_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(
            dir.path(),
            "f.csv",
            "i0,1.0,2.0\ni1,1.5,2.5\ni2,-1,0\ni3,0,0\n",
        );
        let a = write(dir.path(), "a.csv", "label,a0\ncat,1\ndog,0.5\n");
        let s = write(
            dir.path(),
            "s.csv",
            "instance_id,label,role\ni0,cat,seen_train\ni1,cat,test_seen\ni2,,unseen_unlabeled\ni3,dog,test_unseen\n",
        );
        let ds = load_dataset(&f, &a, &s).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.label_space().seen().len(), 1);
        assert_eq!(ds.label_space().unseen(), &[LabelId(1)]);
        assert_eq!(ds.ids()[2], "i2");
        assert_eq!(ds.labels()[2], None);
    }

    #[test]
    fn attribute_dimension_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("cat");
        body.push_str(&",1".repeat(85));
        body.push_str("\ndog");
        body.push_str(&",1".repeat(84));
        let a = write(dir.path(), "a.csv", &body);
        let err = load_attributes(&a).unwrap_err();
        assert!(matches!(err, SabrError::Format { .. }), "{err}");
        assert!(err.to_string().contains("84"));
    }

    #[test]
    fn missing_attributes_for_split_label() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "f.csv", "i0,1.0\n");
        let a = write(dir.path(), "a.csv", "cat,1\n");
        let s = write(
            dir.path(),
            "s.csv",
            "instance_id,label,role\ni0,bird,seen_train\n",
        );
        let err = load_dataset(&f, &a, &s).unwrap_err();
        assert!(matches!(err, SabrError::Format { .. }));
        assert!(err.to_string().contains("bird"));
    }

    #[test]
    fn non_finite_feature_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "f.csv", "i0,1.0\ni1,NaN\n");
        let err = load_features(&f).unwrap_err();
        assert!(err.to_string().contains("i1"), "{err}");
    }

    #[test]
    fn binary_features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let m =
            Matrix::from_rows(&[vec![0.5, -2.25, 1e-3f32 as f64], vec![3.0, 0.0, -0.125]]).unwrap();
        write_features_bin(&p, &m).unwrap();
        let (ids, back) = load_features(&p).unwrap();
        assert_eq!(ids, vec!["0", "1"]);
        assert_eq!(back, m);
    }
}
