//! Dataset manifests: UTF-8 lines of `path<TAB>label`, paths relative to the
//! manifest's directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn manifest_name(self) -> &'static str {
        match self {
            Split::Train => "train.manifest",
            Split::Test => "test.manifest",
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub records: Vec<(PathBuf, usize)>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn new(records: Vec<(PathBuf, usize)>, split: Split) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut max_label = 0usize;
        for (path, label) in &records {
            if !seen.insert(path.clone()) {
                return Err(Error::invalid(
                    "manifest",
                    format!("duplicate path {}", path.display()),
                ));
            }
            max_label = max_label.max(*label);
        }
        let class_names = (0..=max_label).map(|i| format!("class_{i}")).collect();
        Ok(DatasetManifest {
            class_names,
            records,
            split,
        })
    }
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut out = String::new();
    for (rel, label) in &manifest.records {
        out.push_str(&format!("{}\t{}\n", rel.display(), label));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path, split: Split) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let Some((rel, label)) = line.split_once('\t') else {
            return Err(Error::invalid(
                "manifest",
                format!("{}:{}: expected 'path<TAB>label'", path.display(), lineno + 1),
            ));
        };
        let label: usize = label.parse().map_err(|_| {
            Error::invalid(
                "manifest",
                format!("{}:{}: bad label '{}'", path.display(), lineno + 1, label),
            )
        })?;
        records.push((PathBuf::from(rel), label));
    }
    DatasetManifest::new(records, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.manifest");
        let manifest = DatasetManifest::new(
            vec![
                (PathBuf::from("train/a.cvsl"), 0),
                (PathBuf::from("train/b.cvsl"), 2),
            ],
            Split::Train,
        )
        .unwrap();
        write_manifest(&path, &manifest).unwrap();
        let back = read_manifest(&path, Split::Train).unwrap();
        assert_eq!(back.records, manifest.records);
        assert_eq!(back.class_names.len(), 3);
    }

    #[test]
    fn duplicate_paths_rejected() {
        let records = vec![
            (PathBuf::from("x.cvsl"), 0),
            (PathBuf::from("x.cvsl"), 1),
        ];
        assert!(DatasetManifest::new(records, Split::Test).is_err());
    }
}
