//! Fixation dataset layout.
//!
//! Without a manifest, a dataset root is expected to look like
//!
//! ```text
//! root/images/<id>.{png,jpg,jpeg,ppm,pgm,pnm}
//! root/fixations/<id>.csv          # "x,y" integer pixel rows, optional header
//! root/density/<id>.{png,...}      # optional ground-truth density map
//! ```
//!
//! A manifest is a JSON array of `{"id", "image", "fixations", "density"?}`
//! with paths relative to the root; it replaces filename pairing entirely.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::FixationRecord;

pub const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "ppm", "pgm", "pnm"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub image: PathBuf,
    pub fixations: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    /// Sorted by id.
    pub entries: Vec<DatasetEntry>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn find_by_stem(dir: &Path, stem: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .flat_map(|e| [e.to_string(), e.to_ascii_uppercase()])
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
}

pub fn build_index(root: impl AsRef<Path>, manifest: Option<&Path>) -> Result<DatasetIndex> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let mut entries = match manifest {
        Some(m) => from_manifest(root, m)?,
        None => by_convention(root)?,
    };
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let mut seen = BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::Indexing {
                id: e.id.clone(),
                message: "duplicate id".into(),
            });
        }
        for (what, p) in [("image", Some(&e.image)), ("fixations", Some(&e.fixations)), ("density", e.density.as_ref())] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Indexing {
                        id: e.id.clone(),
                        message: format!("{what} file {} does not exist", p.display()),
                    });
                }
            }
        }
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
    })
}

fn from_manifest(root: &Path, manifest: &Path) -> Result<Vec<DatasetEntry>> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let raw: Vec<DatasetEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("manifest {}: {e}", manifest.display())))?;
    Ok(raw
        .into_iter()
        .map(|e| DatasetEntry {
            image: root.join(e.image),
            fixations: root.join(e.fixations),
            density: e.density.map(|d| root.join(d)),
            id: e.id,
        })
        .collect())
}

fn by_convention(root: &Path) -> Result<Vec<DatasetEntry>> {
    let images = root.join("images");
    let listing = fs::read_dir(&images).map_err(|e| Error::io(&images, e))?;
    let mut entries = Vec::new();
    for item in listing {
        let path = item.map_err(|e| Error::io(&images, e))?.path();
        if !path.is_file() || !has_image_extension(&path) {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
            continue;
        };
        let fixations = root.join("fixations").join(format!("{id}.csv"));
        if !fixations.is_file() {
            return Err(Error::Indexing {
                id,
                message: format!("missing fixation file {}", fixations.display()),
            });
        }
        let density = find_by_stem(&root.join("density"), &id);
        entries.push(DatasetEntry {
            id,
            image: path,
            fixations,
            density,
        });
    }
    Ok(entries)
}

/// Reads `x,y` rows (an optional non-numeric first row is a header) and
/// checks every point against `dims`. Rows are numbered from 1, counting the header.
pub fn load_fixations(path: impl AsRef<Path>, dims: (usize, usize)) -> Result<FixationRecord> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(file);
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let (w, h) = dims;
    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() < 2 {
            return Err(parse_err(row, "expected two columns x,y".into()));
        }
        let (xs, ys) = (&rec[0], &rec[1]);
        let parsed = (xs.parse::<i64>(), ys.parse::<i64>());
        let (x, y) = match parsed {
            (Ok(x), Ok(y)) => (x, y),
            _ if row == 1 && points.is_empty() => continue,
            _ => return Err(parse_err(row, format!("not an integer pair: `{xs},{ys}`"))),
        };
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            return Err(parse_err(row, format!("point ({x}, {y}) outside {w}x{h}")));
        }
        points.push((x as usize, y as usize));
    }
    if points.is_empty() {
        return Err(parse_err(0, "no fixations".into()));
    }
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_owned();
    FixationRecord::new(id, w, h, points)
}
