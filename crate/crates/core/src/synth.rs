//! Synthetic feature worlds with known per-view quality.
//!
//! Each category gets a center; each object and pose adds a Gaussian offset,
//! giving a pose anchor. A view of quality `q ∈ [0, 1]` is placed at
//!
//! ```text
//! q · anchor + (1 − q) · confounder + noise
//! ```
//!
//! where the confounder is a single vector shared by every category. Good
//! views sit near their category; bad views drift towards the same point
//! whatever their category, so they become confusable rather than merely
//! noisy. The per-view quality is returned alongside the dataset and serves
//! as ground truth for the scoring and selection code.
//!
//! Cluster these worlds with L2-normalized features
//! ([`PipelineConfig::normalize`](crate::clustering::PipelineConfig)). After
//! normalization the position along the anchor–confounder line drops out and
//! quality acts as a signal-to-noise ratio, so the expected score of a view
//! grows with its quality.
//!
//! All dispersions (`object_spread`, `pose_spread`, `noise_scale`,
//! `confounder_norm`) are RMS vector norms, so they mean the same thing for
//! any `feature_dim`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, DatasetModel, ViewId, ViewRecord};
use crate::geometry::{pose_grid, DEFAULT_EXCLUDED_THETA, DEFAULT_PHI_VALUES, DEFAULT_THETA_STEP};
use crate::seeds::stream_rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid world configuration: {0}")]
    InvalidConfig(String),
    #[error("could not place {n} category centers {separation} apart in {dim} dimensions")]
    SeparationInfeasible {
        n: usize,
        separation: f64,
        dim: usize,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("quality sidecar line {line}: {message}")]
    Sidecar { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// How per-view quality is assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityModel {
    /// Every view has the same quality.
    Constant { value: f64 },
    /// Independent `U[0, 1]` per view.
    RandomUniform,
    /// `Σ_k weights[k]·(φ/90)^k` plus uniform jitter in `[-jitter, jitter]`,
    /// clamped to `[0, 1]`.
    PhiDependent { weights: Vec<f64>, jitter: f64 },
}

impl QualityModel {
    /// Default elevation profile: best at 45°, worst looking straight down.
    pub fn default_phi() -> Self {
        QualityModel::PhiDependent {
            weights: vec![1.6, -1.4],
            jitter: 0.15,
        }
    }

    /// Jitter-free quality at elevation `phi`, for models that have one.
    pub fn base_quality(&self, phi: f64) -> Option<f64> {
        match self {
            QualityModel::Constant { value } => Some(*value),
            QualityModel::RandomUniform => None,
            QualityModel::PhiDependent { weights, .. } => {
                let t = phi / 90.0;
                let v = weights.iter().rev().fold(0.0, |acc, w| acc * t + w);
                Some(v.clamp(0.0, 1.0))
            }
        }
    }

    fn draw(&self, phi: f64, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            QualityModel::Constant { value } => *value,
            QualityModel::RandomUniform => rng.random::<f64>(),
            QualityModel::PhiDependent { jitter, .. } => {
                let base = self.base_quality(phi).expect("phi model has a base");
                let u: f64 = rng.random_range(-1.0..=1.0);
                (base + jitter * u).clamp(0.0, 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_categories: usize,
    /// Inclusive range of objects per category.
    pub objects_per_category: (usize, usize),
    pub poses_per_object: usize,
    pub theta_step: f64,
    pub phi_values: Vec<f64>,
    pub excluded_theta: Vec<f64>,
    /// Probability that a grid view is missing (unreachable) for a pose.
    pub unreachable_fraction: f64,
    /// Lower bound on grid views kept per pose.
    pub min_grid_views: usize,
    pub feature_dim: usize,
    /// Minimum pairwise distance between category centers.
    pub category_separation: f64,
    pub object_spread: f64,
    pub pose_spread: f64,
    pub noise_scale: f64,
    pub confounder_norm: f64,
    pub quality_model: QualityModel,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_categories: 8,
            objects_per_category: (3, 4),
            poses_per_object: 3,
            theta_step: DEFAULT_THETA_STEP,
            phi_values: DEFAULT_PHI_VALUES.to_vec(),
            excluded_theta: DEFAULT_EXCLUDED_THETA.to_vec(),
            unreachable_fraction: 0.0,
            min_grid_views: 16,
            feature_dim: 128,
            category_separation: 10.0,
            object_spread: 2.0,
            pose_spread: 1.0,
            noise_scale: 12.0,
            confounder_norm: 2.5,
            quality_model: QualityModel::default_phi(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    /// 29 categories, 4–6 objects each, 3 poses, the default 21-view grid plus
    /// a top view, with a few unreachable grid views per pose.
    pub fn tabletop(seed: u64) -> Self {
        Self {
            n_categories: 29,
            objects_per_category: (4, 6),
            poses_per_object: 3,
            unreachable_fraction: 0.045,
            min_grid_views: 16,
            seed,
            ..Self::default()
        }
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut bad = |m: &str| out.push(m.to_string());
        if self.n_categories < 1 {
            bad("n_categories must be >= 1");
        }
        let (lo, hi) = self.objects_per_category;
        if lo < 1 || hi < lo {
            bad("objects_per_category must satisfy 1 <= lo <= hi");
        }
        if self.poses_per_object < 1 {
            bad("poses_per_object must be >= 1");
        }
        if self.feature_dim < 1 {
            bad("feature_dim must be >= 1");
        }
        if !(self.category_separation > 0.0 && self.category_separation.is_finite()) {
            bad("category_separation must be > 0");
        }
        for (v, n) in [
            (self.object_spread, "object_spread must be >= 0"),
            (self.pose_spread, "pose_spread must be >= 0"),
            (self.noise_scale, "noise_scale must be >= 0"),
            (self.confounder_norm, "confounder_norm must be >= 0"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bad(n);
            }
        }
        if !(0.0..1.0).contains(&self.unreachable_fraction) {
            bad("unreachable_fraction must be in [0, 1)");
        }
        if self.grid().is_empty() {
            bad("pose grid is empty");
        }
        match &self.quality_model {
            QualityModel::Constant { value } if !(0.0..=1.0).contains(value) => {
                bad("constant quality must be in [0, 1]")
            }
            QualityModel::PhiDependent { jitter, .. } if jitter.is_nan() || *jitter < 0.0 => {
                bad("jitter must be >= 0")
            }
            _ => {}
        }
        out
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SynthError::InvalidConfig(v.join("; ")))
        }
    }

    pub fn grid(&self) -> Vec<(f64, f64)> {
        pose_grid(self.theta_step, &self.phi_values, &self.excluded_theta)
    }
}

/// Generative quality of every view.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QualityMap {
    values: BTreeMap<ViewId, f64>,
}

impl QualityMap {
    pub fn get(&self, id: &ViewId) -> Option<f64> {
        self.values.get(id).copied()
    }

    pub fn insert(&mut self, id: ViewId, q: f64) {
        self.values.insert(id, q);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ViewId, f64)> {
        self.values.iter().map(|(k, &v)| (k, v))
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, rms_norm: f64) -> Vec<f64> {
    let s = rms_norm / (dim as f64).sqrt();
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * s
        })
        .collect()
}

fn category_centers(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>, SynthError> {
    const BUDGET: usize = 10_000;
    let dim = cfg.feature_dim;
    // Random points on a sphere of this radius are typically √2·radius apart.
    let radius = cfg.category_separation;
    let min_d2 = cfg.category_separation * cfg.category_separation;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_categories);
    while centers.len() < cfg.n_categories {
        let mut placed = false;
        for _ in 0..BUDGET {
            let mut v = gaussian(rng, dim, 1.0);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x *= radius / norm);
            let ok = centers.iter().all(|c| {
                c.iter()
                    .zip(&v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    >= min_d2
            });
            if ok {
                centers.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::SeparationInfeasible {
                n: cfg.n_categories,
                separation: cfg.category_separation,
                dim,
            });
        }
    }
    Ok(centers)
}

/// Generates a world. Deterministic in `cfg.seed`.
///
/// Grid view `i` of a pose gets view index `i`; the top view (θ = φ = 90)
/// gets index `grid.len()`.
pub fn generate_world(cfg: &WorldConfig) -> Result<(DatasetModel, QualityMap), SynthError> {
    cfg.validate()?;
    // Structure, quality and noise use separate streams so that changing the
    // quality model leaves anchors and noise untouched.
    let mut rng = stream_rng(cfg.seed, 0);
    let mut q_rng = stream_rng(cfg.seed, 1);
    let mut noise_rng = stream_rng(cfg.seed, 2);
    let dim = cfg.feature_dim;
    let grid = cfg.grid();
    let centers = category_centers(cfg, &mut rng)?;
    let confounder = gaussian(&mut rng, dim, cfg.confounder_norm);
    let names: Vec<String> = (0..cfg.n_categories)
        .map(|c| format!("cat{c:02}"))
        .collect();

    let mut records = Vec::new();
    let mut quality = QualityMap::default();
    let (olo, ohi) = cfg.objects_per_category;
    for (c, center) in centers.iter().enumerate() {
        let n_objects = rng.random_range(olo..=ohi);
        for o in 0..n_objects {
            let obj_offset = gaussian(&mut rng, dim, cfg.object_spread);
            for p in 0..cfg.poses_per_object {
                let pose_offset = gaussian(&mut rng, dim, cfg.pose_spread);
                let anchor: Vec<f64> = (0..dim)
                    .map(|j| center[j] + obj_offset[j] + pose_offset[j])
                    .collect();

                let max_drop = grid.len().saturating_sub(cfg.min_grid_views);
                let n_drop = (0..grid.len())
                    .filter(|_| rng.random::<f64>() < cfg.unreachable_fraction)
                    .count()
                    .min(max_drop);
                let mut keep = vec![true; grid.len()];
                for i in sample(&mut rng, grid.len(), n_drop) {
                    keep[i] = false;
                }

                let views = grid
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| keep[*i])
                    .map(|(i, &(t, f))| (i, t, f, false))
                    .chain(std::iter::once((grid.len(), 90.0, 90.0, true)));
                for (vi, theta, phi, is_top) in views {
                    let q = cfg.quality_model.draw(phi, &mut q_rng);
                    let noise = gaussian(&mut noise_rng, dim, cfg.noise_scale);
                    let features = (0..dim)
                        .map(|j| (q * anchor[j] + (1.0 - q) * confounder[j] + noise[j]) as f32)
                        .collect();
                    let id = ViewId::new(names[c].clone(), o as u16, p as u16, vi as u16);
                    quality.insert(id.clone(), q);
                    records.push(ViewRecord {
                        id,
                        theta,
                        phi,
                        features,
                        is_top,
                    });
                }
            }
        }
    }
    Ok((DatasetModel::new(records, dim, names)?, quality))
}

/// World shaped like a 29-category tabletop collection.
pub fn emit_tabletop_world(seed: u64) -> Result<(DatasetModel, QualityMap), SynthError> {
    generate_world(&WorldConfig::tabletop(seed))
}

/// Simulates a second feature extractor over the same views: a random linear
/// map followed by extra isotropic noise (RMS norm `noise_scale`).
pub fn derive_features(
    model: &DatasetModel,
    seed: u64,
    noise_scale: f64,
) -> Result<DatasetModel, SynthError> {
    let dim = model.feature_dim();
    let mut rng = stream_rng(seed, 0);
    let m: Vec<f64> = gaussian(&mut rng, dim * dim, dim as f64);
    // Each entry ~ N(0, 1/dim): the map roughly preserves norms.
    let records = model
        .records()
        .iter()
        .map(|r| {
            let noise = gaussian(&mut rng, dim, noise_scale);
            let features = (0..dim)
                .map(|i| {
                    let row = &m[i * dim..(i + 1) * dim];
                    let v: f64 = row
                        .iter()
                        .zip(&r.features)
                        .map(|(a, &x)| a * x as f64)
                        .sum();
                    (v + noise[i]) as f32
                })
                .collect();
            ViewRecord {
                features,
                ..r.clone()
            }
        })
        .collect();
    Ok(DatasetModel::new(
        records,
        dim,
        model.category_list().to_vec(),
    )?)
}

/// Writes the quality sidecar: one `category object pose view q` line per view.
pub fn write_quality<W: Write>(q: &QualityMap, w: &mut W) -> io::Result<()> {
    writeln!(w, "# category object pose view quality")?;
    for (id, v) in q.iter() {
        writeln!(
            w,
            "{} {} {} {} {v:?}",
            id.category, id.object_index, id.pose_index, id.view_index
        )?;
    }
    Ok(())
}

pub fn save_quality(
    q: &QualityMap,
    path: impl AsRef<Path>,
    header: Option<&str>,
) -> Result<(), SynthError> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        writeln!(w, "# {h}")?;
    }
    write_quality(q, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_quality<R: BufRead>(r: R) -> Result<QualityMap, SynthError> {
    let mut out = QualityMap::default();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let err = |message: String| SynthError::Sidecar {
            line: i + 1,
            message,
        };
        let f: Vec<&str> = t.split_whitespace().collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let idx = |s: &str| s.parse::<u16>().map_err(|e| err(e.to_string()));
        let q: f64 = f[4]
            .parse()
            .map_err(|e: std::num::ParseFloatError| err(e.to_string()))?;
        out.insert(ViewId::new(f[0], idx(f[1])?, idx(f[2])?, idx(f[3])?), q);
    }
    Ok(out)
}

pub fn load_quality(path: impl AsRef<Path>) -> Result<QualityMap, SynthError> {
    read_quality(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(quality_model: QualityModel, noise: f64) -> WorldConfig {
        WorldConfig {
            n_categories: 4,
            objects_per_category: (2, 3),
            poses_per_object: 2,
            noise_scale: noise,
            quality_model,
            seed: 3,
            ..WorldConfig::default()
        }
    }

    fn dist(a: &[f32], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (*x as f64 - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = small(QualityModel::RandomUniform, 1.0);
        let (a, qa) = generate_world(&cfg).unwrap();
        let (b, qb) = generate_world(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(qa, qb);
        let (c, _) = generate_world(&WorldConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_pose_has_top_and_grid_views() {
        let (m, q) = generate_world(&small(QualityModel::default_phi(), 1.0)).unwrap();
        assert_eq!(q.len(), m.len());
        for (_, _, pose) in m.index().poses() {
            assert_eq!(pose.views.len(), 22);
            let top = m.record(pose.top);
            assert_eq!((top.theta, top.phi), (90.0, 90.0));
            assert_eq!(top.id.view_index, 21);
        }
        for (id, v) in q.iter() {
            assert!((0.0..=1.0).contains(&v), "{id}: {v}");
        }
    }

    #[test]
    fn tabletop_shape() {
        let (m, _) = emit_tabletop_world(1).unwrap();
        assert_eq!(m.category_list().len(), 29);
        let objects: usize = m.index().categories().iter().map(|c| c.objects.len()).sum();
        assert!((116..=174).contains(&objects), "{objects}");
        for cat in m.index().categories() {
            assert!((4..=6).contains(&cat.objects.len()));
            for o in &cat.objects {
                assert_eq!(o.poses.len(), 3);
            }
        }
        for (_, _, pose) in m.index().poses() {
            let grid_views = pose.views.len() - 1;
            assert!((16..=21).contains(&grid_views));
        }
        assert!((29 * 4 * 3 * 17..=29 * 6 * 3 * 22).contains(&m.len()));
    }

    #[test]
    fn quality_orders_distance_to_center_without_noise() {
        // With zero spreads and noise, a view of quality q sits exactly at
        // q·center + (1 − q)·confounder.
        let cfg = WorldConfig {
            object_spread: 0.0,
            pose_spread: 0.0,
            ..small(QualityModel::RandomUniform, 0.0)
        };
        let (m, q) = generate_world(&cfg).unwrap();
        let (m1, _) = generate_world(&WorldConfig {
            quality_model: QualityModel::Constant { value: 1.0 },
            ..cfg.clone()
        })
        .unwrap();
        for (_, _, pose) in m.index().poses() {
            // Anchor = any view of the same pose in the quality-1 world.
            let anchor: Vec<f64> = m1
                .record(pose.top)
                .features
                .iter()
                .map(|&x| x as f64)
                .collect();
            let mut pairs: Vec<(f64, f64)> = pose
                .views
                .iter()
                .map(|&i| {
                    let r = m.record(i);
                    (q.get(&r.id).unwrap(), dist(&r.features, &anchor))
                })
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                if w[1].0 > w[0].0 + 1e-6 {
                    assert!(w[1].1 < w[0].1, "{w:?}");
                }
            }
        }
    }

    #[test]
    fn infeasible_separation() {
        let cfg = WorldConfig {
            n_categories: 6,
            feature_dim: 1,
            ..WorldConfig::default()
        };
        assert!(matches!(
            generate_world(&cfg),
            Err(SynthError::SeparationInfeasible { .. })
        ));
    }

    #[test]
    fn mean_inter_category_distance_grows_with_quality() {
        let mut last = 0.0;
        for qv in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let (m, _) = generate_world(&small(QualityModel::Constant { value: qv }, 0.5)).unwrap();
            let recs = m.records();
            let (mut s, mut n) = (0.0, 0usize);
            for (i, a) in recs.iter().enumerate().step_by(7) {
                for b in recs.iter().skip(i + 1).step_by(5) {
                    if a.id.category != b.id.category {
                        let bf: Vec<f64> = b.features.iter().map(|&x| x as f64).collect();
                        s += dist(&a.features, &bf);
                        n += 1;
                    }
                }
            }
            let mean = s / n as f64;
            assert!(mean > last, "q={qv}: {mean} <= {last}");
            last = mean;
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let (_, q) = generate_world(&small(QualityModel::RandomUniform, 1.0)).unwrap();
        let mut buf = Vec::new();
        write_quality(&q, &mut buf).unwrap();
        assert_eq!(read_quality(&buf[..]).unwrap(), q);
        assert!(read_quality("a 1 2".as_bytes()).is_err());
    }

    #[test]
    fn derived_features_keep_ids() {
        let (m, _) = generate_world(&small(QualityModel::RandomUniform, 1.0)).unwrap();
        let d = derive_features(&m, 9, 1.0).unwrap();
        assert_eq!(d.len(), m.len());
        for (a, b) in m.records().iter().zip(d.records()) {
            assert_eq!(a.id, b.id);
            assert_ne!(a.features, b.features);
        }
    }

    #[test]
    fn phi_profile() {
        let qm = QualityModel::default_phi();
        let at = |phi| qm.base_quality(phi).unwrap();
        assert!(at(45.0) > at(60.0) && at(60.0) > at(75.0) && at(75.0) > at(90.0));
        assert!((at(45.0) - 0.9).abs() < 1e-12);
    }
}
