use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub path: String,
    #[serde(rename = "class")]
    pub class_label: String,
    pub split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    classes: Vec<String>,
    master_seed: u64,
}

/// Labelled image list. Record paths are relative to `root`, the directory
/// holding the manifest file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub master_seed: u64,
    pub records: Vec<Record>,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.path.as_str()) {
                return Err(Error::Config(format!("duplicate manifest path {}", r.path)));
            }
            if !self.class_names.contains(&r.class_label) {
                return Err(Error::UnknownLabel(r.class_label.clone()));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.class_names.iter().position(|c| c == label).ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.records_in(split).count()
    }

    pub fn resolve(&self, record: &Record) -> PathBuf {
        self.root.join(&record.path)
    }

    /// Decode the given records, returning images with class indices.
    pub fn load<'a>(&self, records: impl IntoIterator<Item = &'a Record>) -> Result<Vec<(Image, usize)>> {
        let recs: Vec<&Record> = records.into_iter().collect();
        crate::par::try_map(&recs, |_, r| Ok((Image::load(&self.resolve(r))?, self.class_index(&r.class_label)?)))
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header { classes: self.class_names.clone(), master_seed: self.master_seed };
        let mut out = serde_json::to_string(&header).expect("serializable");
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("serializable"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = lines
            .next()
            .ok_or_else(|| Error::Config(format!("{} is empty", path.display())))
            .and_then(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))?;
        let records = lines.map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e))).collect::<Result<_>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self { class_names: header.classes, master_seed: header.master_seed, records, root };
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            class_names: vec!["a".into(), "b".into()],
            master_seed: 7,
            records: vec![
                Record { path: "x/0.png".into(), class_label: "a".into(), split: Split::Train },
                Record { path: "x/1.png".into(), class_label: "b".into(), split: Split::Val },
            ],
            root: dir.path().to_path_buf(),
        };
        let text = m.to_jsonl();
        assert!(text.starts_with("{\"classes\":[\"a\",\"b\"],\"master_seed\":7}\n"));
        assert!(text.contains("{\"path\":\"x/0.png\",\"class\":\"a\",\"split\":\"train\"}"));
        let p = dir.path().join(MANIFEST_FILE);
        m.write(&p).unwrap();
        assert_eq!(DatasetManifest::read(&p).unwrap(), m);
    }

    #[test]
    fn unknown_labels_are_rejected() {
        let m = DatasetManifest {
            class_names: vec!["a".into()],
            master_seed: 0,
            records: vec![Record { path: "p".into(), class_label: "z".into(), split: Split::Train }],
            root: PathBuf::new(),
        };
        assert!(matches!(m.validate(), Err(Error::UnknownLabel(_))));
    }
}
