//! View selectors and the paired evaluation harness.
//!
//! A selector picks one view per pose. An evaluation samples clustering
//! problems at pose granularity, lets every selector choose a view for each
//! sampled pose, clusters the chosen views with every pipeline and averages
//! FM, NMI and purity. All selectors see the same problem sequence.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{cluster_views, ClusterError, PipelineConfig};
use crate::dataset::{DatasetModel, PoseKey, ViewId, ViewRecord};
use crate::metrics::{self, MetricError, MetricId};
use crate::regressor::{RegressorError, RegressorState};
use crate::scoring::{
    CountRange, PoseSlot, ProblemSampler, SamplerConfig, ScoreTable, ScoringError,
};
use crate::seeds::stream_rng;
use crate::Digest;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("invalid evaluation configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("pose has no views")]
    EmptyPose,
    #[error("views of several poses passed as one pose")]
    MixedPose,
    #[error("pose {0:?} has no top view")]
    MissingTopView(PoseKey),
    #[error("no score table for {0}")]
    MissingScores(SelectorId),
    #[error("score table has no entry for view {0}")]
    UnscoredView(ViewId),
    #[error("the MODEL selector needs a regressor")]
    MissingModel,
    #[error("pipeline {pipeline:?} has no features for view {id}")]
    MissingView { pipeline: String, id: ViewId },
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report format error: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SelectorId {
    #[serde(rename = "TOP")]
    Top,
    #[serde(rename = "RAND")]
    Rand,
    #[serde(rename = "OPT_IND")]
    OptInd,
    #[serde(rename = "OPT_GLOB")]
    OptGlob,
    #[serde(rename = "MODEL")]
    Model,
}

impl SelectorId {
    pub const ALL: [SelectorId; 5] = [
        SelectorId::Top,
        SelectorId::Rand,
        SelectorId::OptInd,
        SelectorId::OptGlob,
        SelectorId::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectorId::Top => "TOP",
            SelectorId::Rand => "RAND",
            SelectorId::OptInd => "OPT_IND",
            SelectorId::OptGlob => "OPT_GLOB",
            SelectorId::Model => "MODEL",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for SelectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What the score- and model-based selectors need.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelectionContext<'a> {
    pub scores: Option<&'a ScoreTable>,
    pub model: Option<&'a RegressorState>,
}

/// Index of the maximum of `value` over `views`; ties go to the smallest
/// `(θ, φ)`.
fn argmax(views: &[&ViewRecord], value: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    let mut best_v = value(0);
    for i in 1..views.len() {
        let v = value(i);
        let better = match v.total_cmp(&best_v) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => {
                (views[i].theta, views[i].phi) < (views[best].theta, views[best].phi)
            }
        };
        if better {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Position in `pose_views` of the view `selector` picks.
///
/// `pose_views` are the available views of one pose. The MODEL selector
/// scores every one of them with the regressor, feeding it the pose's top
/// view features, so views missing from the slice are never proposed.
pub fn select_index(
    selector: SelectorId,
    pose_views: &[&ViewRecord],
    ctx: &SelectionContext,
    rng: &mut impl Rng,
) -> Result<usize, SelectorError> {
    let first = pose_views.first().ok_or(SelectorError::EmptyPose)?;
    let key = first.id.pose_key();
    if pose_views.iter().any(|v| {
        v.id.category != key.category
            || v.id.object_index != key.object_index
            || v.id.pose_index != key.pose_index
    }) {
        return Err(SelectorError::MixedPose);
    }
    let top = || {
        pose_views
            .iter()
            .position(|v| v.is_top)
            .ok_or_else(|| SelectorError::MissingTopView(key.clone()))
    };
    match selector {
        SelectorId::Top => top(),
        SelectorId::Rand => Ok(rng.random_range(0..pose_views.len())),
        SelectorId::OptInd | SelectorId::OptGlob => {
            let table = ctx.scores.ok_or(SelectorError::MissingScores(selector))?;
            let mut values = Vec::with_capacity(pose_views.len());
            for v in pose_views {
                let e = table
                    .get(&v.id)
                    .ok_or_else(|| SelectorError::UnscoredView(v.id.clone()))?;
                values.push(match selector {
                    SelectorId::OptInd => e.s_hat(),
                    _ => e.big_s_hat(),
                });
            }
            Ok(argmax(pose_views, |i| values[i]))
        }
        SelectorId::Model => {
            let net = ctx.model.ok_or(SelectorError::MissingModel)?;
            let embedding: Vec<f64> = pose_views[top()?]
                .features
                .iter()
                .map(|&x| x as f64)
                .collect();
            let inputs: Vec<(&[f64], f64, f64)> = pose_views
                .iter()
                .map(|v| (embedding.as_slice(), v.theta, v.phi))
                .collect();
            let pred = net.predict_batch(&inputs)?;
            Ok(argmax(pose_views, |i| pred[i]))
        }
    }
}

/// The view `selector` picks among `pose_views`.
pub fn select_view<'v>(
    selector: SelectorId,
    pose_views: &[&'v ViewRecord],
    ctx: &SelectionContext,
    rng: &mut impl Rng,
) -> Result<&'v ViewRecord, SelectorError> {
    select_index(selector, pose_views, ctx, rng).map(|i| pose_views[i])
}

/// A named clustering pipeline over one feature store.
///
/// Every store must contain the views of the evaluation's reference model
/// under the same ids; the reference model drives sampling and selection.
#[derive(Debug, Clone)]
pub struct EvalPipeline<'a> {
    pub name: String,
    pub store: &'a DatasetModel,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_problems: u64,
    pub categories_range: CountRange,
    pub objects_per_category_range: CountRange,
    pub selectors: Vec<SelectorId>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            n_problems: 1000,
            categories_range: s.categories_range,
            objects_per_category_range: s.objects_per_category_range,
            selectors: vec![SelectorId::Top, SelectorId::Rand],
            seed: 0,
        }
    }
}

impl EvalConfig {
    fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            n_problems: self.n_problems,
            min_coverage: 0,
            categories_range: self.categories_range,
            objects_per_category_range: self.objects_per_category_range,
            seed: self.seed,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .sampler()
            .violations()
            .into_iter()
            .filter(|m| !m.starts_with("min_coverage"))
            .collect();
        if self.n_problems == 0 {
            v.push("n_problems must be >= 1".into());
        }
        if self.selectors.is_empty() {
            v.push("selectors must not be empty".into());
        }
        let mut seen = HashSet::new();
        for s in &self.selectors {
            if !seen.insert(s) {
                v.push(format!("selectors lists {s} twice"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), SelectorError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SelectorError::InvalidConfig(v))
        }
    }
}

/// Outcome of one sampled problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemOutcome {
    pub slots: Vec<PoseSlot>,
    /// Record index (in the reference model) of the chosen view, per
    /// selector and slot.
    pub chosen: Vec<Vec<usize>>,
    /// `[FM, NMI, PUR]` per pipeline (outer) and selector (inner).
    pub values: Vec<Vec<[f64; 3]>>,
}

const BATCH: usize = 256;

/// Runs every selector on the same `cfg.n_problems` problems and returns
/// the per-problem results in problem order.
pub fn evaluate_detailed(
    model: &DatasetModel,
    categories: &BTreeSet<String>,
    pipelines: &[EvalPipeline],
    ctx: &SelectionContext,
    cfg: &EvalConfig,
) -> Result<Vec<ProblemOutcome>, SelectorError> {
    cfg.validate()?;
    if pipelines.is_empty() {
        return Err(SelectorError::InvalidConfig(vec![
            "pipelines must not be empty".into(),
        ]));
    }
    for s in &cfg.selectors {
        match s {
            SelectorId::OptInd | SelectorId::OptGlob if ctx.scores.is_none() => {
                return Err(SelectorError::MissingScores(*s))
            }
            SelectorId::Model if ctx.model.is_none() => return Err(SelectorError::MissingModel),
            _ => {}
        }
    }
    for p in pipelines {
        p.config.validate()?;
    }
    let sampler = ProblemSampler::new(model, categories, &cfg.sampler())?;
    let maps = pipelines
        .iter()
        .map(|p| store_map(model, &sampler, p))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = Vec::with_capacity(cfg.n_problems as usize);
    let mut start = 0u64;
    while start < cfg.n_problems {
        let end = (start + BATCH as u64).min(cfg.n_problems);
        let batch = (start..end)
            .into_par_iter()
            .map(|i| solve(&sampler, pipelines, &maps, ctx, cfg, i))
            .collect::<Result<Vec<_>, _>>()?;
        out.extend(batch);
        start = end;
    }
    Ok(out)
}

/// Reference record index → record index in the pipeline's store, for every
/// view the sampler can reach. `None` when the store is the reference.
fn store_map(
    model: &DatasetModel,
    sampler: &ProblemSampler,
    p: &EvalPipeline,
) -> Result<Option<Vec<usize>>, SelectorError> {
    if std::ptr::eq(model, p.store) {
        return Ok(None);
    }
    let mut map = vec![usize::MAX; model.len()];
    for v in sampler.reachable_views() {
        let id = &model.record(v).id;
        map[v] = p.store.find(id).ok_or_else(|| SelectorError::MissingView {
            pipeline: p.name.clone(),
            id: id.clone(),
        })?;
    }
    Ok(Some(map))
}

fn solve(
    sampler: &ProblemSampler,
    pipelines: &[EvalPipeline],
    maps: &[Option<Vec<usize>>],
    ctx: &SelectionContext,
    cfg: &EvalConfig,
    index: u64,
) -> Result<ProblemOutcome, SelectorError> {
    let model = sampler.model();
    let mut rng = stream_rng(cfg.seed, index);
    let slots = sampler.sample_poses(&mut rng);
    let truth: Vec<usize> = slots.iter().map(|s| s.category).collect();
    let k = truth.iter().collect::<BTreeSet<_>>().len();

    let mut chosen = Vec::with_capacity(cfg.selectors.len());
    for &sel in &cfg.selectors {
        let mut picks = Vec::with_capacity(slots.len());
        for &slot in &slots {
            let ids = sampler.views_of(slot);
            let views: Vec<&ViewRecord> = ids.iter().map(|&i| model.record(i)).collect();
            picks.push(ids[select_index(sel, &views, ctx, &mut rng)?]);
        }
        chosen.push(picks);
    }

    let mut values = Vec::with_capacity(pipelines.len());
    for (p, map) in pipelines.iter().zip(maps) {
        let mut row = Vec::with_capacity(chosen.len());
        for picks in &chosen {
            let views: Vec<&ViewRecord> = picks
                .iter()
                .map(|&r| match map {
                    None => model.record(r),
                    Some(m) => p.store.record(m[r]),
                })
                .collect();
            let labels = cluster_views(&views, k, &p.config)?.labels;
            let mut m = [0.0; 3];
            for (slot, metric) in m.iter_mut().zip(MetricId::ALL) {
                *slot = metrics::score(metric, &labels, &truth)?;
            }
            row.push(m);
        }
        values.push(row);
    }
    Ok(ProblemOutcome {
        slots,
        chosen,
        values,
    })
}

/// Mean metrics of one (pipeline, selector) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub pipeline: String,
    pub selector: SelectorId,
    pub fm: f64,
    pub nmi: f64,
    pub pur: f64,
    pub n_problems: u64,
}

impl EvalRow {
    pub fn metric(&self, m: MetricId) -> f64 {
        match m {
            MetricId::Fm => self.fm,
            MetricId::Nmi => self.nmi,
            MetricId::Pur => self.pur,
        }
    }
}

/// The configuration a report was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEcho {
    pub seed: u64,
    pub n_problems: u64,
    pub categories_range: CountRange,
    pub objects_per_category_range: CountRange,
    pub categories: Vec<String>,
    pub pipelines: Vec<String>,
    pub selectors: Vec<SelectorId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config: EvalEcho,
    /// Hex digest of the configuration that produced the report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    /// Pipeline-major, in configured order.
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Averages `outcomes` into one row per (pipeline, selector).
    pub fn from_outcomes(
        outcomes: &[ProblemOutcome],
        categories: &BTreeSet<String>,
        pipelines: &[EvalPipeline],
        cfg: &EvalConfig,
    ) -> Self {
        let n = outcomes.len();
        let mut rows = Vec::with_capacity(pipelines.len() * cfg.selectors.len());
        for (pi, p) in pipelines.iter().enumerate() {
            for (si, &selector) in cfg.selectors.iter().enumerate() {
                let mut sum = [0.0; 3];
                for o in outcomes {
                    for (s, v) in sum.iter_mut().zip(o.values[pi][si]) {
                        *s += v;
                    }
                }
                let mean = sum.map(|s| if n == 0 { 0.0 } else { s / n as f64 });
                rows.push(EvalRow {
                    pipeline: p.name.clone(),
                    selector,
                    fm: mean[0],
                    nmi: mean[1],
                    pur: mean[2],
                    n_problems: n as u64,
                });
            }
        }
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            config: EvalEcho {
                seed: cfg.seed,
                n_problems: cfg.n_problems,
                categories_range: cfg.categories_range,
                objects_per_category_range: cfg.objects_per_category_range,
                categories: categories.iter().cloned().collect(),
                pipelines: pipelines.iter().map(|p| p.name.clone()).collect(),
                selectors: cfg.selectors.clone(),
            },
            config_digest: None,
            rows,
        }
    }

    pub fn with_digest(mut self, digest: &Digest) -> Self {
        self.config_digest = Some(digest.to_hex());
        self
    }

    pub fn row(&self, pipeline: &str, selector: SelectorId) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.pipeline == pipeline && r.selector == selector)
    }

    /// Every violated report invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.config.selectors.is_empty() {
            v.push("report has no selectors".into());
        }
        if self.rows.len() != self.config.pipelines.len() * self.config.selectors.len() {
            v.push(format!(
                "{} rows for {} pipelines × {} selectors",
                self.rows.len(),
                self.config.pipelines.len(),
                self.config.selectors.len()
            ));
        }
        for r in &self.rows {
            if r.n_problems != self.config.n_problems {
                v.push(format!(
                    "row {}/{} covers {} problems, expected {}",
                    r.pipeline, r.selector, r.n_problems, self.config.n_problems
                ));
            }
            for m in MetricId::ALL {
                if !(0.0..=1.0).contains(&r.metric(m)) {
                    v.push(format!(
                        "row {}/{} has {} = {}",
                        r.pipeline,
                        r.selector,
                        m.name(),
                        r.metric(m)
                    ));
                }
            }
        }
        v
    }

    pub fn to_json(&self) -> Result<String, SelectorError> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(SelectorError::InvalidConfig(v));
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SelectorError> {
        let r: Self = serde_json::from_str(text)?;
        let v = r.violations();
        if !v.is_empty() {
            return Err(SelectorError::InvalidConfig(v));
        }
        Ok(r)
    }

    /// Aligned plain-text table, rows in report order.
    pub fn to_table(&self) -> String {
        let pw = self
            .rows
            .iter()
            .map(|r| r.pipeline.len())
            .max()
            .unwrap_or(0)
            .max("pipeline".len());
        let sw = self
            .rows
            .iter()
            .map(|r| r.selector.name().len())
            .max()
            .unwrap_or(0)
            .max("selector".len());
        let mut s = format!(
            "{:<pw$}  {:<sw$}  {:>6}  {:>6}  {:>6}\n",
            "pipeline", "selector", "FM", "NMI", "PUR"
        );
        for r in &self.rows {
            s += &format!(
                "{:<pw$}  {:<sw$}  {:>6.4}  {:>6.4}  {:>6.4}\n",
                r.pipeline,
                r.selector.name(),
                r.fm,
                r.nmi,
                r.pur
            );
        }
        s += &format!(
            "problems: {}  seed: {}\n",
            self.config.n_problems, self.config.seed
        );
        if let Some(d) = &self.config_digest {
            s += &format!("config digest: {d}\n");
        }
        s
    }
}

/// Runs [`evaluate_detailed`] and averages the results.
pub fn evaluate(
    model: &DatasetModel,
    categories: &BTreeSet<String>,
    pipelines: &[EvalPipeline],
    ctx: &SelectionContext,
    cfg: &EvalConfig,
) -> Result<EvalReport, SelectorError> {
    let outcomes = evaluate_detailed(model, categories, pipelines, ctx, cfg)?;
    Ok(EvalReport::from_outcomes(
        &outcomes, categories, pipelines, cfg,
    ))
}

/// Writes the JSON report to `path` and the text table next to it with a
/// `.txt` extension.
pub fn report_render(report: &EvalReport, path: impl AsRef<Path>) -> Result<(), SelectorError> {
    let path = path.as_ref();
    let json = report.to_json()?;
    fs::write(path, json + "\n")?;
    fs::write(path.with_extension("txt"), report.to_table())?;
    Ok(())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<EvalReport, SelectorError> {
    EvalReport::from_json(&fs::read_to_string(path)?)
}
