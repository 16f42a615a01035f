//! Objects, poses and views with their feature vectors.
//!
//! A [`DatasetModel`] is a flat list of [`ViewRecord`]s, each identified by a
//! `(category, object, pose, view)` tuple. Every pose carries exactly one
//! explicitly flagged top view. Models are validated on construction and are
//! immutable afterwards, so they can be shared freely between threads.
//!
//! Two on-disk encodings are supported: the binary feature store (`SVSF`),
//! which is what the scoring and evaluation code reads, and a line-oriented
//! text format for exchanging features with external extractors.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds::stream_rng;
use crate::Digest;

const STORE_MAGIC: &[u8; 4] = b"SVSF";
const STORE_VERSION: u32 = 1;
/// Optional trailer carrying the digest of the configuration that produced a file.
pub(crate) const DIGEST_TRAILER_MAGIC: &[u8; 4] = b"SVSD";

/// Errors raised while building, reading or writing a [`DatasetModel`].
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a feature store (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported feature store version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("file truncated")]
    Truncated,
    #[error("feature dimension mismatch{}: expected {expected}, found {found}", record.map(|r| format!(" at record {r}")).unwrap_or_default())]
    DimensionMismatch {
        record: Option<usize>,
        expected: usize,
        found: usize,
    },
    #[error("duplicate view id {0}")]
    DuplicateViewId(ViewId),
    #[error("pose {category}/{object}/{pose} has no top view")]
    MissingTopView {
        category: String,
        object: u16,
        pose: u16,
    },
    #[error("pose {category}/{object}/{pose} has {count} top views")]
    MultipleTopViews {
        category: String,
        object: u16,
        pose: u16,
        count: usize,
    },
    #[error("pose {category}/{object}/{pose} has a single view")]
    TooFewViews {
        category: String,
        object: u16,
        pose: u16,
    },
    #[error("record {record} references unknown category {category:?}")]
    UnknownCategory { record: usize, category: String },
    #[error("invalid category name {0:?}")]
    InvalidCategoryName(String),
    #[error("record {record}: {message}")]
    InvalidRecord { record: usize, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("n_test = {n_test} is out of range for {n_categories} categories")]
    SplitOutOfRange { n_test: usize, n_categories: usize },
}

/// Identity of one view: category label plus object, pose and view indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewId {
    pub category: String,
    pub object_index: u16,
    pub pose_index: u16,
    pub view_index: u16,
}

impl ViewId {
    pub fn new(
        category: impl Into<String>,
        object_index: u16,
        pose_index: u16,
        view_index: u16,
    ) -> Self {
        Self {
            category: category.into(),
            object_index,
            pose_index,
            view_index,
        }
    }

    /// Key of the pose this view belongs to.
    pub fn pose_key(&self) -> PoseKey {
        PoseKey {
            category: self.category.clone(),
            object_index: self.object_index,
            pose_index: self.pose_index,
        }
    }
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.category, self.object_index, self.pose_index, self.view_index
        )
    }
}

/// Identity of one (category, object, pose) triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PoseKey {
    pub category: String,
    pub object_index: u16,
    pub pose_index: u16,
}

/// A single view: identity, camera angles in degrees and its feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub id: ViewId,
    pub theta: f64,
    pub phi: f64,
    pub features: Vec<f32>,
    pub is_top: bool,
}

/// A validated, immutable set of views.
#[derive(Debug, Clone)]
pub struct DatasetModel {
    records: Vec<ViewRecord>,
    feature_dim: usize,
    category_list: Vec<String>,
    category_of: Vec<u16>,
    by_id: HashMap<ViewId, usize>,
    index: DatasetIndex,
}

impl PartialEq for DatasetModel {
    fn eq(&self, other: &Self) -> bool {
        self.feature_dim == other.feature_dim
            && self.category_list == other.category_list
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.id == b.id
                    && a.theta.to_bits() == b.theta.to_bits()
                    && a.phi.to_bits() == b.phi.to_bits()
                    && a.is_top == b.is_top
                    && a.features.len() == b.features.len()
                    && a.features
                        .iter()
                        .zip(&b.features)
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

impl DatasetModel {
    /// Builds a model and checks every invariant.
    pub fn new(
        records: Vec<ViewRecord>,
        feature_dim: usize,
        category_list: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if records.is_empty() {
            return Err(DatasetError::Empty);
        }
        if feature_dim == 0 {
            return Err(DatasetError::MalformedHeader(
                "feature_dim must be positive".into(),
            ));
        }
        if category_list.len() > u16::MAX as usize {
            return Err(DatasetError::MalformedHeader("too many categories".into()));
        }
        let mut cat_pos = HashMap::with_capacity(category_list.len());
        for (i, c) in category_list.iter().enumerate() {
            if c.is_empty() || c.chars().any(char::is_whitespace) {
                return Err(DatasetError::InvalidCategoryName(c.clone()));
            }
            if cat_pos.insert(c.as_str(), i as u16).is_some() {
                return Err(DatasetError::InvalidCategoryName(c.clone()));
            }
        }

        let mut category_of = Vec::with_capacity(records.len());
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != feature_dim {
                return Err(DatasetError::DimensionMismatch {
                    record: Some(i),
                    expected: feature_dim,
                    found: r.features.len(),
                });
            }
            let Some(&ci) = cat_pos.get(r.id.category.as_str()) else {
                return Err(DatasetError::UnknownCategory {
                    record: i,
                    category: r.id.category.clone(),
                });
            };
            if !(r.theta.is_finite() && (0.0..360.0).contains(&r.theta)) {
                return Err(DatasetError::InvalidRecord {
                    record: i,
                    message: format!("theta {} outside [0, 360)", r.theta),
                });
            }
            if !(r.phi.is_finite() && r.phi > 0.0 && r.phi <= 90.0) {
                return Err(DatasetError::InvalidRecord {
                    record: i,
                    message: format!("phi {} outside (0, 90]", r.phi),
                });
            }
            if r.features.iter().any(|x| !x.is_finite()) {
                return Err(DatasetError::InvalidRecord {
                    record: i,
                    message: "non-finite feature value".into(),
                });
            }
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateViewId(r.id.clone()));
            }
            category_of.push(ci);
        }

        let index = DatasetIndex::build(&records, &category_of, category_list.len())?;
        Ok(Self {
            records,
            feature_dim,
            category_list,
            category_of,
            by_id,
            index,
        })
    }

    pub fn records(&self) -> &[ViewRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &ViewRecord {
        &self.records[i]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn category_list(&self) -> &[String] {
        &self.category_list
    }

    /// Position of record `i`'s category in [`Self::category_list`].
    pub fn category_index(&self, i: usize) -> usize {
        self.category_of[i] as usize
    }

    pub fn category_position(&self, name: &str) -> Option<usize> {
        self.category_list.iter().position(|c| c == name)
    }

    pub fn find(&self, id: &ViewId) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Hierarchical category → object → pose → view index.
    pub fn index(&self) -> &DatasetIndex {
        &self.index
    }
}

/// Views of one pose, as record indices into the owning [`DatasetModel`].
#[derive(Debug, Clone)]
pub struct PoseNode {
    pub pose_index: u16,
    /// Record indices ordered by view index.
    pub views: Vec<usize>,
    pub top: usize,
}

#[derive(Debug, Clone)]
pub struct ObjectNode {
    pub object_index: u16,
    pub poses: Vec<PoseNode>,
}

#[derive(Debug, Clone, Default)]
pub struct CategoryNode {
    pub objects: Vec<ObjectNode>,
}

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    categories: Vec<CategoryNode>,
}

impl DatasetIndex {
    fn build(
        records: &[ViewRecord],
        category_of: &[u16],
        n_categories: usize,
    ) -> Result<Self, DatasetError> {
        let mut tree: BTreeMap<(u16, u16, u16), Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            tree.entry((category_of[i], r.id.object_index, r.id.pose_index))
                .or_default()
                .push(i);
        }
        let mut categories = vec![CategoryNode::default(); n_categories];
        for ((c, o, p), mut views) in tree {
            views.sort_by_key(|&i| records[i].id.view_index);
            let cat_name = &records[views[0]].id.category;
            let tops: Vec<usize> = views
                .iter()
                .copied()
                .filter(|&i| records[i].is_top)
                .collect();
            match tops.len() {
                0 => {
                    return Err(DatasetError::MissingTopView {
                        category: cat_name.clone(),
                        object: o,
                        pose: p,
                    })
                }
                1 => {}
                count => {
                    return Err(DatasetError::MultipleTopViews {
                        category: cat_name.clone(),
                        object: o,
                        pose: p,
                        count,
                    })
                }
            }
            if views.len() < 2 {
                return Err(DatasetError::TooFewViews {
                    category: cat_name.clone(),
                    object: o,
                    pose: p,
                });
            }
            let node = PoseNode {
                pose_index: p,
                top: tops[0],
                views,
            };
            let objects = &mut categories[c as usize].objects;
            match objects.last_mut() {
                Some(obj) if obj.object_index == o => obj.poses.push(node),
                _ => objects.push(ObjectNode {
                    object_index: o,
                    poses: vec![node],
                }),
            }
        }
        Ok(Self { categories })
    }

    /// Per-category nodes, aligned with the model's category list.
    pub fn categories(&self) -> &[CategoryNode] {
        &self.categories
    }

    pub fn category(&self, c: usize) -> &CategoryNode {
        &self.categories[c]
    }

    /// Iterates every pose as `(category_index, object_position, pose_node)`.
    pub fn poses(&self) -> impl Iterator<Item = (usize, usize, &PoseNode)> {
        self.categories.iter().enumerate().flat_map(|(c, cat)| {
            cat.objects
                .iter()
                .enumerate()
                .flat_map(move |(o, obj)| obj.poses.iter().map(move |p| (c, o, p)))
        })
    }
}

/// Disjoint train/test category sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySplit {
    pub train_categories: BTreeSet<String>,
    pub test_categories: BTreeSet<String>,
}

impl CategorySplit {
    /// A split that trains on every category of `model`, with an empty test set.
    pub fn all_train(model: &DatasetModel) -> Self {
        Self {
            train_categories: model.category_list().iter().cloned().collect(),
            test_categories: BTreeSet::new(),
        }
    }
}

/// Holds out `n_test` categories chosen uniformly at random.
pub fn split_categories(
    model: &DatasetModel,
    n_test: usize,
    seed: u64,
) -> Result<CategorySplit, DatasetError> {
    let n = model.category_list().len();
    if n_test == 0 || n_test >= n {
        return Err(DatasetError::SplitOutOfRange {
            n_test,
            n_categories: n,
        });
    }
    let mut order: Vec<&String> = model.category_list().iter().collect();
    order.shuffle(&mut stream_rng(seed, 0));
    Ok(CategorySplit {
        test_categories: order[..n_test].iter().map(|s| (*s).clone()).collect(),
        train_categories: order[n_test..].iter().map(|s| (*s).clone()).collect(),
    })
}

/// Writes the binary feature store.
pub fn save_feature_store(
    model: &DatasetModel,
    path: impl AsRef<Path>,
) -> Result<(), DatasetError> {
    save_feature_store_with_digest(model, path, None)
}

/// Writes the binary feature store, appending a provenance digest trailer when given.
pub fn save_feature_store_with_digest(
    model: &DatasetModel,
    path: impl AsRef<Path>,
    digest: Option<&Digest>,
) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_feature_store(model, &mut w, digest)?;
    w.flush()?;
    Ok(())
}

pub fn write_feature_store<W: Write>(
    model: &DatasetModel,
    w: &mut W,
    digest: Option<&Digest>,
) -> Result<(), DatasetError> {
    if model.is_empty() {
        return Err(DatasetError::Empty);
    }
    w.write_all(STORE_MAGIC)?;
    w.write_u32::<LittleEndian>(STORE_VERSION)?;
    w.write_u32::<LittleEndian>(model.feature_dim as u32)?;
    w.write_u64::<LittleEndian>(model.records.len() as u64)?;
    let table = model.category_list.join("\n");
    w.write_u32::<LittleEndian>(table.len() as u32)?;
    w.write_all(table.as_bytes())?;
    for (i, r) in model.records.iter().enumerate() {
        w.write_u16::<LittleEndian>(model.category_of[i])?;
        w.write_u16::<LittleEndian>(r.id.object_index)?;
        w.write_u16::<LittleEndian>(r.id.pose_index)?;
        w.write_u16::<LittleEndian>(r.id.view_index)?;
        w.write_f32::<LittleEndian>(r.theta as f32)?;
        w.write_f32::<LittleEndian>(r.phi as f32)?;
        w.write_u8(r.is_top as u8)?;
        for &x in &r.features {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    if let Some(d) = digest {
        w.write_all(DIGEST_TRAILER_MAGIC)?;
        w.write_all(d.as_bytes())?;
    }
    Ok(())
}

/// Reads and validates a binary feature store.
pub fn load_feature_store(path: impl AsRef<Path>) -> Result<DatasetModel, DatasetError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(read_feature_store(&bytes)?.0)
}

/// Parses a feature store from memory, returning the provenance digest if present.
pub fn read_feature_store(bytes: &[u8]) -> Result<(DatasetModel, Option<Digest>), DatasetError> {
    let mut cur = bytes;
    let eof = |e: io::Error| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            DatasetError::Truncated
        } else {
            DatasetError::Io(e)
        }
    };
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(eof)?;
    if &magic != STORE_MAGIC {
        return Err(DatasetError::BadMagic(magic));
    }
    let version = cur.read_u32::<LittleEndian>().map_err(eof)?;
    if version != STORE_VERSION {
        return Err(DatasetError::UnsupportedVersion(version));
    }
    let feature_dim = cur.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let n_records = cur.read_u64::<LittleEndian>().map_err(eof)?;
    let table_len = cur.read_u32::<LittleEndian>().map_err(eof)? as usize;
    if feature_dim == 0 {
        return Err(DatasetError::MalformedHeader("feature_dim is zero".into()));
    }
    if table_len > cur.len() {
        return Err(DatasetError::Truncated);
    }
    let table = std::str::from_utf8(&cur[..table_len])
        .map_err(|_| DatasetError::MalformedHeader("category table is not UTF-8".into()))?;
    let category_list: Vec<String> = if table.is_empty() {
        Vec::new()
    } else {
        table.split('\n').map(str::to_owned).collect()
    };
    cur = &cur[table_len..];

    let record_size = 8 + 4 + 4 + 1 + 4 * feature_dim;
    let expected = (n_records as usize)
        .checked_mul(record_size)
        .ok_or_else(|| DatasetError::MalformedHeader("record count overflows".into()))?;
    let trailer_len = DIGEST_TRAILER_MAGIC.len() + Digest::LEN;
    let digest = if cur.len() == expected {
        None
    } else if cur.len() == expected + trailer_len
        && &cur[expected..expected + 4] == DIGEST_TRAILER_MAGIC
    {
        let mut d = [0u8; Digest::LEN];
        d.copy_from_slice(&cur[expected + 4..]);
        Some(Digest(d))
    } else if cur.len() < expected
        && (expected - cur.len()) % 4 == 0
        && expected - cur.len() < 4 * feature_dim
    {
        // One record lost some feature values.
        return Err(DatasetError::DimensionMismatch {
            record: None,
            expected: feature_dim,
            found: feature_dim - (expected - cur.len()) / 4,
        });
    } else if cur.len() < expected {
        return Err(DatasetError::Truncated);
    } else {
        return Err(DatasetError::MalformedHeader(format!(
            "{} trailing bytes after {n_records} records",
            cur.len() - expected
        )));
    };

    let mut records = Vec::with_capacity(n_records as usize);
    for i in 0..n_records as usize {
        let ci = cur.read_u16::<LittleEndian>().map_err(eof)? as usize;
        let object_index = cur.read_u16::<LittleEndian>().map_err(eof)?;
        let pose_index = cur.read_u16::<LittleEndian>().map_err(eof)?;
        let view_index = cur.read_u16::<LittleEndian>().map_err(eof)?;
        let theta = cur.read_f32::<LittleEndian>().map_err(eof)? as f64;
        let phi = cur.read_f32::<LittleEndian>().map_err(eof)? as f64;
        let is_top = match cur.read_u8().map_err(eof)? {
            0 => false,
            1 => true,
            b => {
                return Err(DatasetError::InvalidRecord {
                    record: i,
                    message: format!("is_top byte {b}"),
                })
            }
        };
        let mut features = vec![0f32; feature_dim];
        cur.read_f32_into::<LittleEndian>(&mut features)
            .map_err(eof)?;
        let category = category_list
            .get(ci)
            .ok_or_else(|| DatasetError::UnknownCategory {
                record: i,
                category: format!("#{ci}"),
            })?
            .clone();
        records.push(ViewRecord {
            id: ViewId {
                category,
                object_index,
                pose_index,
                view_index,
            },
            theta,
            phi,
            features,
            is_top,
        });
    }
    Ok((
        DatasetModel::new(records, feature_dim, category_list)?,
        digest,
    ))
}

/// Parses the text interchange format.
///
/// One record per line, whitespace separated:
/// `category object pose view theta phi is_top f1,f2,...,fd`.
/// Blank lines and lines starting with `#` are ignored. The category list is
/// ordered by first appearance.
pub fn import_text<R: BufRead>(reader: R) -> Result<DatasetModel, DatasetError> {
    let mut records = Vec::new();
    let mut categories: Vec<String> = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let perr = |message: String| DatasetError::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(perr(format!("expected 8 fields, found {}", fields.len())));
        }
        let int = |s: &str, what: &str| s.parse::<u16>().map_err(|e| perr(format!("{what}: {e}")));
        let real = |s: &str, what: &str| s.parse::<f64>().map_err(|e| perr(format!("{what}: {e}")));
        let is_top = match fields[6] {
            "0" | "false" => false,
            "1" | "true" => true,
            other => return Err(perr(format!("is_top: {other:?}"))),
        };
        let features = fields[7]
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f32>()
                    .map_err(|e| perr(format!("feature: {e}")))
            })
            .collect::<Result<Vec<f32>, _>>()?;
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(DatasetError::DimensionMismatch {
                    record: Some(records.len()),
                    expected: d,
                    found: features.len(),
                })
            }
            _ => {}
        }
        let category = fields[0].to_owned();
        if !categories.contains(&category) {
            categories.push(category.clone());
        }
        records.push(ViewRecord {
            id: ViewId {
                category,
                object_index: int(fields[1], "object")?,
                pose_index: int(fields[2], "pose")?,
                view_index: int(fields[3], "view")?,
            },
            theta: real(fields[4], "theta")?,
            phi: real(fields[5], "phi")?,
            features,
            is_top,
        });
    }
    let dim = dim.ok_or(DatasetError::Empty)?;
    DatasetModel::new(records, dim, categories)
}

pub fn import_text_file(path: impl AsRef<Path>) -> Result<DatasetModel, DatasetError> {
    import_text(BufReader::new(File::open(path)?))
}

/// Writes the text interchange format read by [`import_text`].
pub fn export_text<W: Write>(model: &DatasetModel, w: &mut W) -> Result<(), DatasetError> {
    writeln!(w, "# category object pose view theta phi is_top features")?;
    for r in model.records() {
        let feats: Vec<String> = r.features.iter().map(|x| x.to_string()).collect();
        writeln!(
            w,
            "{} {} {} {} {} {} {} {}",
            r.id.category,
            r.id.object_index,
            r.id.pose_index,
            r.id.view_index,
            r.theta,
            r.phi,
            r.is_top as u8,
            feats.join(",")
        )?;
    }
    Ok(())
}
