//! UTF-8 CSV manifest: header `path,e_r,e_g,e_b,fold`, image paths relative
//! to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::{read_image, Sample};
use crate::error::{Error, Result};
use crate::metrics::Illuminant;

pub const MANIFEST_HEADER: [&str; 5] = ["path", "e_r", "e_g", "e_b", "fold"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// As written in the manifest.
    pub path: PathBuf,
    pub gt: Illuminant,
    pub fold: usize,
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Parses and validates every row without touching the referenced images.
/// Row numbers in errors count data rows from 1.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
        return Err(Error::Malformed {
            kind: "manifest",
            detail: format!("header must be {}, got {:?}", MANIFEST_HEADER.join(","), header),
        });
    }
    let mut entries = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::ManifestRow { row, detail: e.to_string() })?;
        if record.len() != 5 {
            return Err(Error::ManifestRow {
                row,
                detail: format!("expected 5 fields, got {}", record.len()),
            });
        }
        let num = |col: usize| -> Result<f64> {
            record[col].trim().parse::<f64>().map_err(|e| Error::ManifestRow {
                row,
                detail: format!("{} = {:?}: {e}", MANIFEST_HEADER[col], &record[col]),
            })
        };
        let gt = Illuminant::new(num(1)?, num(2)?, num(3)?).map_err(|e| Error::ManifestRow {
            row,
            detail: e.to_string(),
        })?;
        let fold = record[4].trim().parse::<usize>().map_err(|e| Error::ManifestRow {
            row,
            detail: format!("fold = {:?}: {e}", &record[4]),
        })?;
        let rel = record[0].trim();
        if rel.is_empty() {
            return Err(Error::ManifestRow {
                row,
                detail: "empty path".into(),
            });
        }
        entries.push(ManifestEntry {
            path: PathBuf::from(rel),
            gt,
            fold,
        });
    }
    Ok(entries)
}

/// [`read_manifest`] plus a check that every referenced image exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let entries = read_manifest(path)?;
    let dir = manifest_dir(path);
    for (i, e) in entries.iter().enumerate() {
        let full = dir.join(&e.path);
        if !full.is_file() {
            return Err(Error::ManifestRow {
                row: i + 1,
                detail: format!("image file {} not found", full.display()),
            });
        }
    }
    Ok(entries)
}

/// Loads the manifest and every image it references.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let dir = manifest_dir(path);
    load_manifest(path)?
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let image = read_image(dir.join(&e.path)).map_err(|err| Error::ManifestRow {
                row: i + 1,
                detail: err.to_string(),
            })?;
            Ok(Sample {
                image,
                gt: e.gt,
                fold: e.fold,
            })
        })
        .collect()
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(MANIFEST_HEADER)?;
    for e in entries {
        let [r, g, b] = e.gt.rgb();
        let p = e.path.to_str().ok_or_else(|| Error::invalid(format!("non-UTF-8 path {:?}", e.path)))?;
        writer.write_record([p.to_string(), r.to_string(), g.to_string(), b.to_string(), e.fold.to_string()])?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(i: usize) -> ManifestEntry {
        ManifestEntry {
            path: PathBuf::from(format!("img_{i:04}.rif")),
            gt: Illuminant::new(0.1 + i as f64 * 0.013, 0.5, 1.0 / (i as f64 + 1.5)).unwrap(),
            fold: i % 10,
        }
    }

    #[test]
    fn round_trip_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let entries: Vec<_> = (0..50).map(entry).collect();
        write_manifest(&entries, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), entries);
    }

    #[test]
    fn rejects_non_positive_gt_with_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "path,e_r,e_g,e_b,fold\na.rif,0.3,0.3,0.3,0\nb.rif,0,0.5,0.5,1\n").unwrap();
        match read_manifest(&path) {
            Err(Error::ManifestRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_rows_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "path,e_r,e_g,e_b,fold\na.rif,0.3,x,0.3,0\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::ManifestRow { row: 1, .. })));
        fs::write(&path, "file,r,g,b,fold\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Malformed { .. })));
        fs::write(&path, "path,e_r,e_g,e_b,fold\na.rif,0.3,0.3,0.3,-1\n").unwrap();
        assert!(read_manifest(&path).is_err());
    }

    #[test]
    fn load_reports_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_manifest(&[entry(0)], &path).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::ManifestRow { row: 1, .. }), "{err}");
        assert!(err.to_string().contains("not found"));
    }
}
