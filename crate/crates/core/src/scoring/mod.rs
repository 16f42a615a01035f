//! Monte-Carlo semantic view scores.
//!
//! Random clustering problems are drawn from the training categories, each
//! problem is clustered with `k` = number of sampled categories, and every
//! view in it is credited with its individual Fowlkes–Mallows index and with
//! the problem's global index. The averages over all problems containing a
//! view are its individual (`s_hat`) and global (`big_s_hat`) scores.
//!
//! Problem `i` always draws from RNG stream `i` of the sampler seed and
//! results are added in problem order, so a table depends only on the
//! configuration, not on the number of worker threads.

mod io;
mod sampler;

pub use io::{load_scores, read_scores, save_scores, write_scores};
pub use sampler::{
    sample_problem, ClusteringProblem, CountRange, PoseSlot, ProblemSampler, SamplerConfig,
};

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{cluster_views, ClusterError, PipelineConfig};
use crate::dataset::{CategorySplit, DatasetModel, ViewId, ViewRecord};
use crate::metrics::{fm_global, fm_individual_all, pair_confusion, MetricError};
use crate::seeds::stream_rng;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("only {available} usable categories, sampler needs at least {required}")]
    InsufficientCategories { available: usize, required: usize },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("coverage unreachable for view {0}")]
    CoverageUnreachable(ViewId),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a score file")]
    BadMagic,
    #[error("unsupported score file version {0}")]
    UnsupportedVersion(u32),
    #[error("score file truncated")]
    Truncated,
    #[error("malformed score file: {0}")]
    Malformed(String),
}

/// Accumulated scores of one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub id: ViewId,
    pub sum_individual: f64,
    pub sum_global: f64,
    pub n_problems: u64,
    /// `s_hat` min-max rescaled within the view's pose.
    pub scaled: f64,
}

impl ScoreEntry {
    pub fn new(id: ViewId) -> Self {
        Self {
            id,
            sum_individual: 0.0,
            sum_global: 0.0,
            n_problems: 0,
            scaled: 0.0,
        }
    }

    /// Individual score; 0 for a view that was never sampled.
    pub fn s_hat(&self) -> f64 {
        if self.n_problems == 0 {
            0.0
        } else {
            self.sum_individual / self.n_problems as f64
        }
    }

    /// Global score; 0 for a view that was never sampled.
    pub fn big_s_hat(&self) -> f64 {
        if self.n_problems == 0 {
            0.0
        } else {
            self.sum_global / self.n_problems as f64
        }
    }
}

/// Per-view score accumulators, ordered by [`ViewId`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    entries: Vec<ScoreEntry>,
    /// Number of problems solved to build the table.
    pub problems: u64,
}

impl ScoreTable {
    /// Builds a table from entries in any order. Duplicate ids are rejected.
    pub fn from_entries(mut entries: Vec<ScoreEntry>, problems: u64) -> Result<Self, ScoringError> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(ScoringError::Malformed(format!(
                "duplicate view {}",
                w[0].id
            )));
        }
        Ok(Self { entries, problems })
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &ViewId) -> Option<&ScoreEntry> {
        self.entries
            .binary_search_by(|e| e.id.cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn min_coverage(&self) -> u64 {
        self.entries.iter().map(|e| e.n_problems).min().unwrap_or(0)
    }

    /// Adds the accumulators of `other` view by view and re-applies the
    /// per-pose rescaling.
    pub fn merge(&self, other: &ScoreTable) -> ScoreTable {
        let mut out = Vec::with_capacity(self.len().max(other.len()));
        let (mut a, mut b) = (
            self.entries.iter().peekable(),
            other.entries.iter().peekable(),
        );
        loop {
            let next = match (a.peek(), b.peek()) {
                (Some(x), Some(y)) if x.id == y.id => {
                    let mut e = (*x).clone();
                    e.sum_individual += y.sum_individual;
                    e.sum_global += y.sum_global;
                    e.n_problems += y.n_problems;
                    a.next();
                    b.next();
                    e
                }
                (Some(x), Some(y)) if x.id < y.id => a.next().cloned().unwrap(),
                (Some(_), Some(_)) | (None, Some(_)) => b.next().cloned().unwrap(),
                (Some(_), None) => a.next().cloned().unwrap(),
                (None, None) => break,
            };
            out.push(next);
        }
        rescale_per_pose(ScoreTable {
            entries: out,
            problems: self.problems + other.problems,
        })
    }

    /// Applies `f` to every accumulated sum, keeping counts. Handy for
    /// checking that selections only depend on score order.
    pub fn map_sums(&self, f: impl Fn(f64) -> f64) -> ScoreTable {
        let mut t = self.clone();
        for e in &mut t.entries {
            let n = e.n_problems.max(1) as f64;
            e.sum_individual = f(e.s_hat()) * n;
            e.sum_global = f(e.big_s_hat()) * n;
        }
        rescale_per_pose(t)
    }
}

/// Min-max rescaling to `[0, 1]`; a constant input maps to 0.5 everywhere.
pub fn rescale_values(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.is_nan() || hi <= lo {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Rescales `s_hat` within every `(category, object, pose)` into `scaled`.
pub fn rescale_per_pose(mut table: ScoreTable) -> ScoreTable {
    let mut start = 0;
    while start < table.entries.len() {
        let key = table.entries[start].id.pose_key();
        let end = start
            + table.entries[start..]
                .iter()
                .take_while(|e| e.id.pose_key() == key)
                .count();
        let s: Vec<f64> = table.entries[start..end]
            .iter()
            .map(ScoreEntry::s_hat)
            .collect();
        for (e, v) in table.entries[start..end].iter_mut().zip(rescale_values(&s)) {
            e.scaled = v;
        }
        start = end;
    }
    table
}

/// Coverage snapshot reported while scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageAudit {
    pub problems: u64,
    pub min: u64,
    pub max: u64,
    pub mean: f64,
    /// `(lo, hi, views)` bins of equal width over `[min, max]`, inclusive.
    pub histogram: Vec<(u64, u64, usize)>,
}

impl CoverageAudit {
    fn of(counts: &[u64], problems: u64) -> Self {
        const BINS: u64 = 10;
        let min = counts.iter().copied().min().unwrap_or(0);
        let max = counts.iter().copied().max().unwrap_or(0);
        let mean = counts.iter().sum::<u64>() as f64 / counts.len().max(1) as f64;
        let width = ((max - min) / BINS + 1).max(1);
        let mut histogram: Vec<(u64, u64, usize)> = (0..BINS)
            .map(|b| (min + b * width, min + (b + 1) * width - 1, 0))
            .take_while(|(lo, _, _)| *lo <= max)
            .collect();
        for &c in counts {
            histogram[((c - min) / width) as usize].2 += 1;
        }
        Self {
            problems,
            min,
            max,
            mean,
            histogram,
        }
    }
}

/// Clusters one problem and scores it against its truth labels.
/// Returns the per-view individual FM and the global FM.
pub fn solve_problem(
    model: &DatasetModel,
    problem: &ClusteringProblem,
    pipeline: &PipelineConfig,
) -> Result<(Vec<f64>, f64), ScoringError> {
    let views: Vec<&ViewRecord> = problem.view_refs.iter().map(|&i| model.record(i)).collect();
    let labels = cluster_views(&views, problem.n_classes(), pipeline)?.labels;
    let conf = pair_confusion(&labels, &problem.truth)?;
    Ok((fm_individual_all(&conf), fm_global(&conf)))
}

#[derive(Clone, Copy)]
enum Job {
    Iid,
    Forced(usize),
}

struct Accumulator<'a> {
    model: &'a DatasetModel,
    views: Vec<usize>,
    /// Record index → position in `views`.
    slot: Vec<Option<usize>>,
    sum_ind: Vec<f64>,
    sum_glob: Vec<f64>,
    count: Vec<u64>,
    problems: u64,
}

impl<'a> Accumulator<'a> {
    fn new(sampler: &ProblemSampler<'a>) -> Self {
        let model = sampler.model();
        let views = sampler.reachable_views();
        let mut slot = vec![None; model.len()];
        for (k, &v) in views.iter().enumerate() {
            slot[v] = Some(k);
        }
        let n = views.len();
        Self {
            model,
            views,
            slot,
            sum_ind: vec![0.0; n],
            sum_glob: vec![0.0; n],
            count: vec![0; n],
            problems: 0,
        }
    }

    fn add(&mut self, refs: &[usize], fmi: &[f64], fm: f64) {
        for (&v, &s) in refs.iter().zip(fmi) {
            let k = self.slot[v].expect("sampled view is tracked");
            self.sum_ind[k] += s;
            self.sum_glob[k] += fm;
            self.count[k] += 1;
        }
        self.problems += 1;
    }

    fn into_table(self) -> ScoreTable {
        let entries = self
            .views
            .iter()
            .enumerate()
            .map(|(k, &v)| ScoreEntry {
                id: self.model.record(v).id.clone(),
                sum_individual: self.sum_ind[k],
                sum_global: self.sum_glob[k],
                n_problems: self.count[k],
                scaled: 0.0,
            })
            .collect();
        let table = ScoreTable::from_entries(entries, self.problems).expect("model ids are unique");
        rescale_per_pose(table)
    }
}

const BATCH: usize = 512;

/// Solves `jobs` (problem `first + i` for job `i`) in parallel batches and
/// adds the results in job order.
fn run_jobs(
    sampler: &ProblemSampler,
    pipeline: &PipelineConfig,
    seed: u64,
    first: u64,
    jobs: &[Job],
    acc: &mut Accumulator,
    progress: &mut Progress,
) -> Result<(), ScoringError> {
    let model = sampler.model();
    for (b, chunk) in jobs.chunks(BATCH).enumerate() {
        let base = first + (b * BATCH) as u64;
        let results: Vec<(ClusteringProblem, Vec<f64>, f64)> = chunk
            .par_iter()
            .enumerate()
            .map(|(i, job)| {
                let mut rng = stream_rng(seed, base + i as u64);
                let p = match *job {
                    Job::Iid => sampler.sample(&mut rng),
                    Job::Forced(v) => sampler.sample_with(v, &mut rng),
                };
                let (fmi, fm) = solve_problem(model, &p, pipeline)?;
                Ok((p, fmi, fm))
            })
            .collect::<Result<_, ScoringError>>()?;
        for (p, fmi, fm) in &results {
            acc.add(&p.view_refs, fmi, *fm);
        }
        progress.tick(acc);
    }
    Ok(())
}

struct Progress<'f> {
    every: u64,
    next: u64,
    sink: &'f mut dyn FnMut(&CoverageAudit),
}

impl Progress<'_> {
    fn tick(&mut self, acc: &Accumulator) {
        if self.every > 0 && acc.problems >= self.next {
            (self.sink)(&CoverageAudit::of(&acc.count, acc.problems));
            self.next = (acc.problems / self.every + 1) * self.every;
        }
    }
}

/// Number of i.i.d. problems used when `n_problems` is 0: enough for the
/// average view to reach `min_coverage` in expectation.
pub fn auto_problem_count(sampler: &ProblemSampler, min_coverage: u64) -> u64 {
    let views = sampler.reachable_views();
    if views.is_empty() {
        return 0;
    }
    let mean_p = views
        .iter()
        .map(|&v| sampler.inclusion_probability(v))
        .sum::<f64>()
        / views.len() as f64;
    (min_coverage as f64 / mean_p).ceil() as u64
}

/// Scores every view of the training categories.
pub fn accumulate_scores(
    model: &DatasetModel,
    split: &CategorySplit,
    pipeline: &PipelineConfig,
    cfg: &SamplerConfig,
) -> Result<ScoreTable, ScoringError> {
    accumulate_scores_with_progress(model, split, pipeline, cfg, 0, &mut |_| {})
}

/// [`accumulate_scores`] that reports a [`CoverageAudit`] to `sink` roughly
/// every `every` problems (never when `every` is 0).
pub fn accumulate_scores_with_progress(
    model: &DatasetModel,
    split: &CategorySplit,
    pipeline: &PipelineConfig,
    cfg: &SamplerConfig,
    every: u64,
    sink: &mut dyn FnMut(&CoverageAudit),
) -> Result<ScoreTable, ScoringError> {
    const MAX_REPAIR_ROUNDS: usize = 64;
    pipeline.validate()?;
    let sampler = ProblemSampler::new(model, &split.train_categories, cfg)?;
    let mut acc = Accumulator::new(&sampler);
    let mut progress = Progress {
        every,
        next: every,
        sink,
    };

    let n_iid = match cfg.n_problems {
        0 => auto_problem_count(&sampler, cfg.min_coverage),
        n => n,
    };
    run_jobs(
        &sampler,
        pipeline,
        cfg.seed,
        0,
        &vec![Job::Iid; n_iid as usize],
        &mut acc,
        &mut progress,
    )?;

    for _ in 0..MAX_REPAIR_ROUNDS {
        let mut jobs = Vec::new();
        for (k, &c) in acc.count.iter().enumerate() {
            if c < cfg.min_coverage {
                let reps = (cfg.min_coverage - c).div_ceil(2).max(1);
                jobs.extend(std::iter::repeat_n(
                    Job::Forced(acc.views[k]),
                    reps as usize,
                ));
            }
        }
        if jobs.is_empty() {
            break;
        }
        let first = acc.problems;
        run_jobs(
            &sampler,
            pipeline,
            cfg.seed,
            first,
            &jobs,
            &mut acc,
            &mut progress,
        )?;
    }
    if let Some(k) = acc.count.iter().position(|&c| c < cfg.min_coverage) {
        return Err(ScoringError::CoverageUnreachable(
            model.record(acc.views[k]).id.clone(),
        ));
    }
    if every > 0 {
        (progress.sink)(&CoverageAudit::of(&acc.count, acc.problems));
    }
    Ok(acc.into_table())
}

/// Accumulates exactly the i.i.d. problems with indices in `range`, without
/// coverage repair. Tables for disjoint ranges can be combined with
/// [`ScoreTable::merge`].
pub fn accumulate_problem_range(
    model: &DatasetModel,
    split: &CategorySplit,
    pipeline: &PipelineConfig,
    cfg: &SamplerConfig,
    range: Range<u64>,
) -> Result<ScoreTable, ScoringError> {
    pipeline.validate()?;
    let sampler = ProblemSampler::new(model, &split.train_categories, cfg)?;
    let mut acc = Accumulator::new(&sampler);
    let mut progress = Progress {
        every: 0,
        next: 0,
        sink: &mut |_| {},
    };
    let jobs = vec![Job::Iid; (range.end - range.start) as usize];
    run_jobs(
        &sampler,
        pipeline,
        cfg.seed,
        range.start,
        &jobs,
        &mut acc,
        &mut progress,
    )?;
    Ok(acc.into_table())
}
