//! Directory corpora: `manifest.csv` (`filename,label`) plus P5/P6 images.

use std::fs;
use std::path::Path;

use super::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::pnm;

pub const MANIFEST_FILE: &str = "manifest.csv";
const HEADER: &str = "filename,label";

fn read_rows(dir: &Path) -> Result<Vec<(String, String)>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.display().to_string())
        } else {
            Error::io(&path, e)
        }
    })?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim_start_matches('\u{feff}').trim() != HEADER {
        return Err(Error::MalformedHeader(header.to_string()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let row = i + 1;
            match line.split(',').collect::<Vec<_>>().as_slice() {
                [file, label] if !file.trim().is_empty() && !label.trim().is_empty() => {
                    Ok((file.trim().to_string(), label.trim().to_string()))
                }
                _ => Err(Error::LabelMismatch {
                    row,
                    detail: format!("expected 2 non-empty fields, got {line:?}"),
                }),
            }
        })
        .collect()
}

fn load_rows(dir: &Path, rows: Vec<(String, String)>, classes: Vec<String>) -> Result<Dataset> {
    let mut images = Vec::with_capacity(rows.len());
    for (i, (file, label)) in rows.into_iter().enumerate() {
        let row = i + 1;
        let path = dir.join(&file);
        if !path.is_file() {
            return Err(Error::MissingFile { row, path });
        }
        let label_index = classes
            .iter()
            .position(|c| *c == label)
            .ok_or_else(|| Error::LabelMismatch {
                row,
                detail: format!("label {label:?} is not one of {classes:?}"),
            })?;
        images.push(LabeledImage {
            image: pnm::read(&path)?,
            label: label_index,
            id: file,
        });
    }
    Dataset::new(images, classes)
}

/// Loads a corpus in manifest order; class indices follow the sorted unique
/// label names.
pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let rows = read_rows(dir)?;
    let mut classes: Vec<String> = rows.iter().map(|(_, l)| l.clone()).collect();
    classes.sort();
    classes.dedup();
    load_rows(dir, rows, classes)
}

/// Loads a corpus against a fixed class list (e.g. a net's classes); labels
/// outside the list are errors.
pub fn load_manifest_with_classes(dir: impl AsRef<Path>, classes: &[String]) -> Result<Dataset> {
    let dir = dir.as_ref();
    let rows = read_rows(dir)?;
    load_rows(dir, rows, classes.to_vec())
}

/// Writes every image plus `manifest.csv` into `dir`; returns the file names.
pub fn write_manifest(dir: impl AsRef<Path>, data: &Dataset) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = format!("{HEADER}\n");
    let mut names = Vec::with_capacity(data.len());
    for (i, im) in data.images.iter().enumerate() {
        let name = format!("{i:05}.{}", pnm::extension(im.image.shape()[0]));
        pnm::write(dir.join(&name), &im.image)?;
        csv.push_str(&format!("{name},{}\n", data.classes[im.label]));
        names.push(name);
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn write_img(dir: &Path, name: &str, v: f32) {
        pnm::write(dir.join(name), &Tensor::full(&[3, 2, 2], v)).unwrap();
    }

    #[test]
    fn loads_rows_in_order_with_sorted_labels() {
        let dir = tempfile::tempdir().unwrap();
        write_img(dir.path(), "a.ppm", 1.0);
        write_img(dir.path(), "b.ppm", 0.0);
        fs::write(
            dir.path().join(MANIFEST_FILE),
            "filename,label\na.ppm,zebra\nb.ppm,horse\n",
        )
        .unwrap();
        let d = load_manifest(dir.path()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.classes, vec!["horse", "zebra"]);
        assert_eq!(d.images[0].id, "a.ppm");
        assert_eq!(d.images[0].label, 1);
        assert_eq!(d.images[1].label, 0);
        assert!(d.images[0].image.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_img(dir.path(), "a.ppm", 0.5);
        let m = dir.path().join(MANIFEST_FILE);

        fs::write(&m, "file,label\na.ppm,x\n").unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::MalformedHeader(_))));

        fs::write(&m, "filename,label\na.ppm,x\ngone.ppm,y\n").unwrap();
        match load_manifest(dir.path()) {
            Err(Error::MissingFile { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }

        fs::write(&m, "filename,label\na.ppm,x\n").unwrap();
        assert!(matches!(
            load_manifest_with_classes(dir.path(), &["y".to_string()]),
            Err(Error::LabelMismatch { row: 1, .. })
        ));

        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_manifest(empty.path()), Err(Error::MissingInput(_))));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = crate::data::ShapesSpec::default();
        let d = crate::data::generate_shapes(&spec, 2, 1).unwrap();
        write_manifest(dir.path(), &d).unwrap();
        let back = load_manifest_with_classes(dir.path(), &d.classes).unwrap();
        assert_eq!(back.labels(), d.labels());
        for (a, b) in back.images.iter().zip(&d.images) {
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }
}
