use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ScoringError;
use crate::dataset::DatasetModel;

/// Inclusive count range; `hi = None` means "everything available".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub lo: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<usize>,
}

impl CountRange {
    pub fn new(lo: usize, hi: usize) -> Self {
        Self { lo, hi: Some(hi) }
    }

    pub fn at_least(lo: usize) -> Self {
        Self { lo, hi: None }
    }

    /// Effective `(lo, hi)` given `available` items; `lo` is lowered to fit.
    pub fn clamp(&self, available: usize) -> (usize, usize) {
        let hi = self.hi.unwrap_or(available).min(available);
        (self.lo.min(hi), hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Problems drawn i.i.d. before coverage repair; 0 picks a count that
    /// covers an average view `min_coverage` times.
    pub n_problems: u64,
    pub min_coverage: u64,
    pub categories_range: CountRange,
    pub objects_per_category_range: CountRange,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_problems: 0,
            min_coverage: 100,
            categories_range: CountRange::new(2, 10),
            objects_per_category_range: CountRange::at_least(1),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let c = self.categories_range;
        if c.lo < 2 {
            out.push("categories_range.lo must be >= 2".to_string());
        }
        if c.hi.is_some_and(|h| h < c.lo) {
            out.push("categories_range.hi must be >= categories_range.lo".to_string());
        }
        let o = self.objects_per_category_range;
        if o.lo < 1 {
            out.push("objects_per_category_range.lo must be >= 1".to_string());
        }
        if o.hi.is_some_and(|h| h < o.lo) {
            out.push(
                "objects_per_category_range.hi must be >= objects_per_category_range.lo"
                    .to_string(),
            );
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScoringError::InvalidConfig(v.join("; ")))
        }
    }
}

/// A sampled problem: record indices and their category labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusteringProblem {
    pub view_refs: Vec<usize>,
    pub truth: Vec<usize>,
}

impl ClusteringProblem {
    pub fn n_classes(&self) -> usize {
        self.truth.iter().collect::<BTreeSet<_>>().len()
    }
}

/// One `(category, object, pose)` of a problem, as positions in the
/// model's [`DatasetIndex`](crate::dataset::DatasetIndex).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoseSlot {
    pub category: usize,
    pub object: usize,
    pub pose: usize,
}

/// Draws clustering problems over a fixed set of allowed categories.
#[derive(Debug, Clone)]
pub struct ProblemSampler<'a> {
    model: &'a DatasetModel,
    allowed: Vec<usize>,
    categories: (usize, usize),
    objects: CountRange,
    slot_of: Vec<Option<PoseSlot>>,
}

impl<'a> ProblemSampler<'a> {
    pub fn new(
        model: &'a DatasetModel,
        allowed: &BTreeSet<String>,
        cfg: &SamplerConfig,
    ) -> Result<Self, ScoringError> {
        cfg.validate()?;
        let mut positions = Vec::with_capacity(allowed.len());
        for name in allowed {
            let c = model
                .category_position(name)
                .ok_or_else(|| ScoringError::UnknownCategory(name.clone()))?;
            if !model.index().category(c).objects.is_empty() {
                positions.push(c);
            }
        }
        positions.sort_unstable();
        if positions.len() < cfg.categories_range.lo {
            return Err(ScoringError::InsufficientCategories {
                available: positions.len(),
                required: cfg.categories_range.lo,
            });
        }
        let mut slot_of = vec![None; model.len()];
        for (category, object, pose_node) in model.index().poses() {
            let obj = &model.index().category(category).objects[object];
            let pose = obj
                .poses
                .iter()
                .position(|p| p.pose_index == pose_node.pose_index)
                .expect("pose belongs to its object");
            for &v in &pose_node.views {
                slot_of[v] = Some(PoseSlot {
                    category,
                    object,
                    pose,
                });
            }
        }
        Ok(Self {
            model,
            categories: cfg.categories_range.clamp(positions.len()),
            allowed: positions,
            objects: cfg.objects_per_category_range,
            slot_of,
        })
    }

    pub fn model(&self) -> &'a DatasetModel {
        self.model
    }

    /// Allowed category positions, ascending.
    pub fn allowed(&self) -> &[usize] {
        &self.allowed
    }

    pub fn slot_of(&self, record: usize) -> Option<PoseSlot> {
        self.slot_of[record]
    }

    /// Record indices of every view in an allowed category, ascending.
    pub fn reachable_views(&self) -> Vec<usize> {
        (0..self.model.len())
            .filter(|&i| {
                self.allowed
                    .binary_search(&self.model.category_index(i))
                    .is_ok()
            })
            .collect()
    }

    /// Probability that one i.i.d. problem contains `record`.
    pub fn inclusion_probability(&self, record: usize) -> f64 {
        let Some(slot) = self.slot_of[record] else {
            return 0.0;
        };
        if self.allowed.binary_search(&slot.category).is_err() {
            return 0.0;
        }
        let (lo, hi) = self.categories;
        let p_cat = (lo + hi) as f64 / 2.0 / self.allowed.len() as f64;
        let cat = self.model.index().category(slot.category);
        let (olo, ohi) = self.objects.clamp(cat.objects.len());
        let p_obj = (olo + ohi) as f64 / 2.0 / cat.objects.len() as f64;
        let obj = &cat.objects[slot.object];
        let p_pose = 1.0 / obj.poses.len() as f64;
        let p_view = 1.0 / obj.poses[slot.pose].views.len() as f64;
        p_cat * p_obj * p_pose * p_view
    }

    /// Samples categories, objects and one pose per object.
    pub fn sample_poses(&self, rng: &mut impl Rng) -> Vec<PoseSlot> {
        let (lo, hi) = self.categories;
        let c = rng.random_range(lo..=hi);
        let mut slots = Vec::new();
        for pick in sample(rng, self.allowed.len(), c) {
            self.push_objects(self.allowed[pick], None, rng, &mut slots);
        }
        slots
    }

    /// Samples a problem containing `record`, completing the rest uniformly.
    pub fn sample_poses_with(&self, record: usize, rng: &mut impl Rng) -> Vec<PoseSlot> {
        let fixed = self.slot_of[record].expect("record has a slot");
        let own = self
            .allowed
            .binary_search(&fixed.category)
            .expect("forced view is in an allowed category");
        let (lo, hi) = self.categories;
        let c = rng.random_range(lo..=hi);
        let mut slots = Vec::new();
        self.push_objects(fixed.category, Some(fixed), rng, &mut slots);
        for pick in sample(rng, self.allowed.len() - 1, c - 1) {
            let pos = if pick >= own { pick + 1 } else { pick };
            self.push_objects(self.allowed[pos], None, rng, &mut slots);
        }
        slots
    }

    fn push_objects(
        &self,
        category: usize,
        fixed: Option<PoseSlot>,
        rng: &mut impl Rng,
        out: &mut Vec<PoseSlot>,
    ) {
        let objects = &self.model.index().category(category).objects;
        let (lo, hi) = self.objects.clamp(objects.len());
        let m = rng.random_range(lo.max(1)..=hi);
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        match fixed {
            Some(f) => {
                out.push(f);
                chosen.extend(sample(rng, objects.len() - 1, m - 1).into_iter().map(|o| {
                    if o >= f.object {
                        o + 1
                    } else {
                        o
                    }
                }));
            }
            None => chosen.extend(sample(rng, objects.len(), m)),
        }
        for object in chosen {
            let pose = rng.random_range(0..objects[object].poses.len());
            out.push(PoseSlot {
                category,
                object,
                pose,
            });
        }
    }

    /// Record indices of the views of `slot`.
    pub fn views_of(&self, slot: PoseSlot) -> &'a [usize] {
        &self.model.index().category(slot.category).objects[slot.object].poses[slot.pose].views
    }

    /// Picks one view per slot uniformly at random.
    pub fn fill(&self, slots: &[PoseSlot], rng: &mut impl Rng) -> ClusteringProblem {
        let view_refs = slots
            .iter()
            .map(|&s| {
                let views = self.views_of(s);
                views[rng.random_range(0..views.len())]
            })
            .collect();
        ClusteringProblem {
            view_refs,
            truth: slots.iter().map(|s| s.category).collect(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> ClusteringProblem {
        let slots = self.sample_poses(rng);
        self.fill(&slots, rng)
    }

    /// Like [`sample`](Self::sample) but always contains `record` (as the first view).
    pub fn sample_with(&self, record: usize, rng: &mut impl Rng) -> ClusteringProblem {
        let slots = self.sample_poses_with(record, rng);
        let mut p = self.fill(&slots[1..], rng);
        p.view_refs.insert(0, record);
        p.truth.insert(0, slots[0].category);
        p
    }
}

/// Samples one problem from the categories in `allowed`.
pub fn sample_problem(
    model: &DatasetModel,
    allowed: &BTreeSet<String>,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<ClusteringProblem, ScoringError> {
    Ok(ProblemSampler::new(model, allowed, cfg)?.sample(rng))
}
