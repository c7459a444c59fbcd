use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    /// Relative to the manifest root.
    pub path: String,
    pub labels: Vec<String>,
    pub split: Option<Split>,
    pub fold: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRow {
    path: String,
    labels: String,
    split: String,
    fold: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Result<Self> {
        let m = Self { root: root.into(), rows };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let uses_split = self.rows.iter().any(|r| r.split.is_some());
        let uses_fold = self.rows.iter().any(|r| r.fold.is_some());
        if uses_split && uses_fold {
            return Err(Error::Data("manifest mixes split and fold columns".into()));
        }
        for r in &self.rows {
            if r.path.is_empty() {
                return Err(Error::Data("manifest row with empty path".into()));
            }
            if Path::new(&r.path).is_absolute() {
                return Err(Error::Data(format!("manifest path `{}` must be relative", r.path)));
            }
            if r.labels.iter().any(|l| l.is_empty() || l.contains(';')) {
                return Err(Error::Data(format!("malformed labels in row `{}`", r.path)));
            }
            if (uses_split && r.split.is_none()) || (uses_fold && r.fold.is_none()) {
                return Err(Error::Data(format!("row `{}` has no split or fold", r.path)));
            }
        }
        Ok(())
    }

    /// Parses CSV with header `path,labels,split,fold`.
    pub fn parse<R: Read>(reader: R, root: impl Into<PathBuf>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "labels", "split", "fold"] {
            return Err(Error::Data(format!(
                "manifest header must be `path,labels,split,fold`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<RawRow>() {
            let raw = rec?;
            let labels = if raw.labels.is_empty() {
                Vec::new()
            } else {
                raw.labels.split(';').map(str::to_string).collect()
            };
            let split = if raw.split.is_empty() { None } else { Some(raw.split.parse()?) };
            let fold = if raw.fold.is_empty() {
                None
            } else {
                Some(
                    raw.fold
                        .parse()
                        .map_err(|_| Error::Data(format!("bad fold `{}`", raw.fold)))?,
                )
            };
            rows.push(ManifestRow {
                path: raw.path,
                labels,
                split,
                fold,
            });
        }
        Self::new(root, rows)
    }

    /// Loads a manifest file; relative paths resolve against `root`, or the
    /// manifest's own directory when `root` is `None`.
    pub fn load(path: &Path, root: Option<&Path>) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let root = match root {
            Some(r) => r.to_path_buf(),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        Self::parse(f, root)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(RawRow {
                path: r.path.clone(),
                labels: r.labels.join(";"),
                split: r.split.map(|s| s.to_string()).unwrap_or_default(),
                fold: r.fold.map(|f| f.to_string()).unwrap_or_default(),
            })?;
        }
        if self.rows.is_empty() {
            w.write_record(["path", "labels", "split", "fold"])?;
        }
        w.flush().map_err(|e| Error::io("<manifest>", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.path)
    }

    /// Sorted label vocabulary.
    pub fn classes(&self) -> Vec<String> {
        self.rows
            .iter()
            .flat_map(|r| r.labels.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn uses_folds(&self) -> bool {
        self.rows.iter().any(|r| r.fold.is_some())
    }
}
