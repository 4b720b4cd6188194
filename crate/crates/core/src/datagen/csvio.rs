use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::paramspace::DenseMatrix;

/// Reads `label,feat_0,…,feat_{m−1}` rows. A first row whose leading field is
/// not numeric is treated as a header. Labels are remapped to `0..C` in order
/// of first appearance.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_err)?;

    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    let mut remap: HashMap<i64, usize> = HashMap::new();

    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(csv_err)?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let first = &rec[0];
        if i == 0 && first.parse::<f64>().is_err() {
            continue;
        }
        let label: i64 = first.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("label `{first}` is not an integer"),
        })?;
        let feats = rec.len() - 1;
        match width {
            None if feats == 0 => {
                return Err(Error::Parse {
                    line,
                    msg: "row has no features".into(),
                })
            }
            None => width = Some(feats),
            Some(w) if w != feats => {
                return Err(Error::Parse {
                    line,
                    msg: format!("ragged row: expected {w} features, found {feats}"),
                })
            }
            Some(_) => {}
        }
        for (k, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("feature {k} `{field}` is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("feature {k} is not finite"),
                });
            }
            data.push(v);
        }
        let next = remap.len();
        labels.push(*remap.entry(label).or_insert(next));
    }

    let Some(cols) = width else {
        return Err(Error::Parse {
            line: 1,
            msg: "file contains no data rows".into(),
        });
    };
    let n_classes = remap.len();
    Dataset::new(DenseMatrix::new(labels.len(), cols, data)?, labels, n_classes)
}

/// Writes a dataset in the format accepted by [`load_csv`], with a header row.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path.as_ref())?);
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..ds.input_dim()).map(|k| format!("feat_{k}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (i, y) in ds.labels().iter().enumerate() {
        write!(w, "{y}")?;
        for v in ds.features().row(i) {
            // `{}` prints the shortest representation that parses back exactly
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(1, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_blobs;
    use crate::paramspace::SeededStream;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("d.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn labels_are_remapped_by_first_appearance() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_csv(write(&dir, "5,1.0,2.0\n5,0.5,0.1\n9,3.0,1.0\n")).unwrap();
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.labels(), &[0, 0, 1]);
    }

    #[test]
    fn header_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_csv(write(&dir, "label,a\n3,1\n4,2\n")).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.features().get(1, 0), 2.0);
    }

    #[test]
    fn ragged_row_names_its_line() {
        let dir = tempfile::tempdir().unwrap();
        match load_csv(write(&dir, "0,1,2\n1,1\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_empty_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_csv(write(&dir, "0,1\n1,abc\n")), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(load_csv(write(&dir, "")), Err(Error::Parse { .. })));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_blobs(3, 6, 4, 2.5, &SeededStream::new(12)).unwrap();
        let p = dir.path().join("blobs.csv");
        save_csv(&ds, &p).unwrap();
        let back = load_csv(&p).unwrap();
        assert_eq!(back.labels(), ds.labels());
        for (a, b) in back.features().as_slice().iter().zip(ds.features().as_slice()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}
