//! Run configuration: a TOML file plus command-line overrides.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semview::clustering::PipelineConfig;
use semview::geometry::{
    CameraIntrinsics, ObjectGeometry, DEFAULT_EXCLUDED_THETA, DEFAULT_FILL, DEFAULT_PHI_VALUES,
    DEFAULT_THETA_STEP,
};
use semview::regressor::RegressorConfig;
use semview::scoring::{CountRange, SamplerConfig};
use semview::selectors::{EvalConfig, SelectorId};
use semview::synth::WorldConfig;
use semview::Digest;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every component seed is derived from it.
    pub seed: Option<u64>,
    /// Worker threads; does not change any output.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    pub world: WorldConfig,
    pub gen: GenSection,
    pub split: SplitSection,
    pub score: ScoreSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub grid: GridSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub out_dir: PathBuf,
    /// Extra feature stores over the same views, written as `<name>.svsf`.
    pub derived: Vec<DerivedStore>,
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            out_dir: "out".into(),
            derived: vec![DerivedStore {
                name: "vgg".into(),
                noise: 0.5,
            }],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivedStore {
    pub name: String,
    pub noise: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Categories held out from scoring and training; 0 keeps all.
    pub n_test: usize,
}

fn normalized(config: PipelineConfig) -> PipelineConfig {
    PipelineConfig {
        normalize: true,
        ..config
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub features: PathBuf,
    pub out: PathBuf,
    pub pipeline: PipelineConfig,
    pub sampler: SamplerConfig,
    /// Print a coverage audit to stderr every this many problems; 0 disables.
    pub progress_every: u64,
}

impl Default for ScoreSection {
    fn default() -> Self {
        Self {
            features: "out/features.svsf".into(),
            out: "out/scores.svss".into(),
            pipeline: normalized(PipelineConfig::default()),
            sampler: SamplerConfig::default(),
            progress_every: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub features: PathBuf,
    pub scores: PathBuf,
    pub out: PathBuf,
    /// `embed_dim` is taken from the feature store.
    pub regressor: RegressorConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            features: "out/features.svsf".into(),
            scores: "out/scores.svss".into(),
            out: "out/model.svsm".into(),
            regressor: RegressorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategorySet {
    All,
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub name: String,
    /// Feature store; defaults to `eval.features`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Reference store: drives sampling and selection.
    pub features: PathBuf,
    pub scores: PathBuf,
    pub model: PathBuf,
    pub categories: CategorySet,
    pub selectors: Vec<String>,
    pub n_problems: u64,
    pub categories_range: CountRange,
    pub objects_per_category_range: CountRange,
    pub pipelines: Vec<PipelineSpec>,
    pub out: PathBuf,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            features: "out/features.svsf".into(),
            scores: "out/scores.svss".into(),
            model: "out/model.svsm".into(),
            categories: CategorySet::All,
            selectors: SelectorId::ALL
                .iter()
                .map(|s| s.name().to_string())
                .collect(),
            n_problems: e.n_problems,
            categories_range: e.categories_range,
            objects_per_category_range: e.objects_per_category_range,
            pipelines: vec![
                PipelineSpec {
                    name: "xce_agg".into(),
                    features: None,
                    config: normalized(PipelineConfig::default()),
                },
                PipelineSpec {
                    name: "xce_km".into(),
                    features: None,
                    config: normalized(PipelineConfig::kmeans(0)),
                },
                PipelineSpec {
                    name: "vgg_agg".into(),
                    features: Some("out/vgg.svsf".into()),
                    config: normalized(PipelineConfig::default()),
                },
            ],
            out: "out/report.json".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub theta_step: f64,
    pub phi_values: Vec<f64>,
    pub excluded_theta: Vec<f64>,
    /// Append the straight-down view (θ = φ = 90).
    pub include_top: bool,
    pub object: ObjectGeometry,
    pub intrinsics: CameraIntrinsics,
    pub fill: f64,
    /// Write the grid here instead of stdout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            theta_step: DEFAULT_THETA_STEP,
            phi_values: DEFAULT_PHI_VALUES.to_vec(),
            excluded_theta: DEFAULT_EXCLUDED_THETA.to_vec(),
            include_top: false,
            object: ObjectGeometry {
                gc: [0.0, 0.0, 0.1],
                length: 0.2,
                width: 0.15,
                height: 0.2,
            },
            intrinsics: CameraIntrinsics {
                focal_px: 615.0,
                image_width: 640.0,
                image_height: 480.0,
            },
            fill: DEFAULT_FILL,
            out: None,
        }
    }
}

/// Keys that are derived from the master seed or from data and may not be
/// set in a config file.
const DERIVED_KEYS: &[&[&str]] = &[
    &["world", "seed"],
    &["score", "sampler", "seed"],
    &["score", "pipeline", "seed"],
    &["train", "regressor", "seed"],
    &["train", "regressor", "embed_dim"],
];

fn lookup<'a>(table: &'a toml::Table, path: &[&str]) -> Option<&'a toml::Value> {
    let (last, parents) = path.split_last()?;
    let mut t = table;
    for p in parents {
        t = t.get(*p)?.as_table()?;
    }
    t.get(*last)
}

/// Parses `key.path=value`, where value is a TOML value or a bare string.
fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("--set {assignment}: expected KEY=VALUE"))?;
    let key = key.trim();
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("--set {assignment}: empty key segment"));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut t = table;
    for p in parents {
        t = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("--set {assignment}: {p} is not a table"))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// Flag values that override the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub set: Vec<String>,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies overrides and rejects
    /// derived keys.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(vec![format!("config {}: {e}", p.display())]))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(vec![format!("config {}: {e}", p.display())]))?
            }
            None => toml::Table::new(),
        };
        let mut problems = Vec::new();
        for s in &overrides.set {
            if let Err(e) = apply_set(&mut table, s) {
                problems.push(e);
            }
        }
        for key in DERIVED_KEYS {
            if lookup(&table, key).is_some() {
                let name = key.join(".");
                problems.push(if key.last() == Some(&"seed") {
                    format!("{name}: derived from the top-level seed; remove it")
                } else {
                    format!("{name}: taken from the feature store; remove it")
                });
            }
        }
        if let Some(pipes) = lookup(&table, &["eval", "pipelines"]).and_then(|v| v.as_array()) {
            for (i, p) in pipes.iter().enumerate() {
                if p.get("config").and_then(|c| c.get("seed")).is_some() {
                    problems.push(format!("eval.pipelines[{i}].config.seed: derived from the top-level seed; remove it"));
                }
            }
        }
        if !problems.is_empty() {
            return Err(CliError::Config(problems));
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(vec![e.message().trim().to_string()]))?;
        if overrides.seed.is_some() {
            cfg.seed = overrides.seed;
        }
        if overrides.threads.is_some() {
            cfg.threads = overrides.threads;
        }
        Ok(cfg)
    }

    /// Points the output of `command` at `path`.
    pub fn set_out(&mut self, command: &str, path: PathBuf) {
        match command {
            "gen" => self.gen.out_dir = path,
            "score" => self.score.out = path,
            "train" => self.train.out = path,
            "eval" => self.eval.out = path,
            "grid" => self.grid.out = Some(path),
            _ => {}
        }
    }

    /// SHA-256 of the resolved configuration (thread count excluded).
    pub fn digest(&self) -> Digest {
        Digest::of_bytes(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn require_seed(&self, command: &str) -> Result<u64, String> {
        self.seed.ok_or_else(|| {
            format!("seed: required by `{command}`; set it in the config file or pass --seed")
        })
    }

    pub fn selectors(&self) -> Result<Vec<SelectorId>, Vec<String>> {
        let mut out = Vec::new();
        let mut bad = Vec::new();
        for s in &self.eval.selectors {
            match SelectorId::parse(s) {
                Some(id) => out.push(id),
                None => bad.push(format!(
                    "eval.selectors: unknown selector {s:?} (expected one of TOP, RAND, OPT_IND, OPT_GLOB, MODEL)"
                )),
            }
        }
        if bad.is_empty() {
            Ok(out)
        } else {
            Err(bad)
        }
    }

    /// Every violated constraint relevant to `command`.
    pub fn violations(&self, command: &str) -> Vec<String> {
        let mut v = Vec::new();
        let prefixed = |section: &str, msgs: Vec<String>| -> Vec<String> {
            msgs.into_iter()
                .map(|m| format!("{section}: {m}"))
                .collect()
        };
        if command != "grid" {
            if let Err(e) = self.require_seed(command) {
                v.push(e);
            }
        }
        if self.threads == Some(0) {
            v.push("threads: must be >= 1".into());
        }
        match command {
            "gen" => {
                v.extend(prefixed("world", self.world.violations()));
                let mut names = BTreeSet::new();
                for (i, d) in self.gen.derived.iter().enumerate() {
                    let ok = !d.name.is_empty()
                        && d.name
                            .chars()
                            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
                    if !ok {
                        v.push(format!(
                            "gen.derived[{i}].name: {:?} must be a nonempty [A-Za-z0-9_-] word",
                            d.name
                        ));
                    }
                    if d.name == "features" || !names.insert(d.name.as_str()) {
                        v.push(format!(
                            "gen.derived[{i}].name: {:?} collides with another output",
                            d.name
                        ));
                    }
                    if !(d.noise >= 0.0 && d.noise.is_finite()) {
                        v.push(format!("gen.derived[{i}].noise: must be >= 0"));
                    }
                }
            }
            "score" => {
                v.extend(prefixed("score.pipeline", self.score.pipeline.violations()));
                v.extend(prefixed("score.sampler", self.score.sampler.violations()));
                v.extend(distinct(
                    &[("score.features", &self.score.features)],
                    &[("score.out", &self.score.out)],
                ));
            }
            "train" => {
                let reg = RegressorConfig {
                    embed_dim: 1,
                    ..self.train.regressor.clone()
                };
                v.extend(prefixed("train.regressor", reg.violations()));
                if self.train.regressor.epochs == 0 {
                    v.push("train.regressor: epochs must be >= 1".into());
                }
                v.extend(distinct(
                    &[
                        ("train.features", &self.train.features),
                        ("train.scores", &self.train.scores),
                    ],
                    &[("train.out", &self.train.out)],
                ));
            }
            "eval" => {
                let selectors = match self.selectors() {
                    Ok(s) => s,
                    Err(e) => {
                        v.extend(e);
                        Vec::new()
                    }
                };
                let ec = EvalConfig {
                    n_problems: self.eval.n_problems,
                    categories_range: self.eval.categories_range,
                    objects_per_category_range: self.eval.objects_per_category_range,
                    selectors,
                    seed: 0,
                };
                if !self.eval.selectors.is_empty() {
                    v.extend(prefixed("eval", ec.violations()));
                } else {
                    v.push("eval.selectors: must not be empty".into());
                    v.extend(
                        prefixed("eval", ec.violations())
                            .into_iter()
                            .filter(|m| !m.contains("selectors")),
                    );
                }
                if self.eval.pipelines.is_empty() {
                    v.push("eval.pipelines: must not be empty".into());
                }
                let mut names = BTreeSet::new();
                for (i, p) in self.eval.pipelines.iter().enumerate() {
                    if !names.insert(p.name.as_str()) {
                        v.push(format!(
                            "eval.pipelines[{i}].name: duplicate name {:?}",
                            p.name
                        ));
                    }
                    v.extend(prefixed(
                        &format!("eval.pipelines[{i}].config"),
                        p.config.violations(),
                    ));
                }
                if self.eval.categories != CategorySet::All && self.split.n_test == 0 {
                    v.push("eval.categories: a train/test choice needs split.n_test >= 1".into());
                }
                let mut inputs = vec![("eval.features", &self.eval.features)];
                if ec
                    .selectors
                    .iter()
                    .any(|s| matches!(s, SelectorId::OptInd | SelectorId::OptGlob))
                {
                    inputs.push(("eval.scores", &self.eval.scores));
                }
                if ec.selectors.contains(&SelectorId::Model) {
                    inputs.push(("eval.model", &self.eval.model));
                }
                let out_txt = self.eval.out.with_extension("txt");
                v.extend(distinct(
                    &inputs,
                    &[
                        ("eval.out", &self.eval.out),
                        ("eval.out (text table)", &out_txt),
                    ],
                ));
            }
            "grid" => {
                let g = &self.grid;
                if !(g.theta_step > 0.0 && g.theta_step.is_finite()) {
                    v.push("grid.theta_step: must be > 0".into());
                }
                if g.phi_values.iter().any(|&p| !(p > 0.0 && p <= 90.0)) {
                    v.push("grid.phi_values: every value must be in (0, 90]".into());
                }
                if !(g.fill > 0.0 && g.fill <= 1.0) {
                    v.push("grid.fill: must be in (0, 1]".into());
                }
            }
            _ => {}
        }
        v
    }

    pub fn validate(&self, command: &str) -> Result<(), CliError> {
        let v = self.violations(command);
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(v))
        }
    }
}

/// Outputs must differ from every input and from each other.
fn distinct(inputs: &[(&str, &PathBuf)], outputs: &[(&str, &PathBuf)]) -> Vec<String> {
    let mut v = Vec::new();
    for (i, (oname, o)) in outputs.iter().enumerate() {
        for (iname, input) in inputs {
            if o == input {
                v.push(format!("{oname}: same path as {iname} ({})", o.display()));
            }
        }
        for (pname, p) in &outputs[..i] {
            if o == p {
                v.push(format!("{oname}: same path as {pname} ({})", o.display()));
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_with_a_seed() {
        let cfg = RunConfig {
            seed: Some(1),
            ..RunConfig::default()
        };
        for cmd in ["gen", "score", "train", "eval", "grid"] {
            assert!(
                cfg.violations(cmd).is_empty(),
                "{cmd}: {:?}",
                cfg.violations(cmd)
            );
        }
    }

    #[test]
    fn missing_seed_is_named() {
        let cfg = RunConfig::default();
        for cmd in ["gen", "score", "train", "eval"] {
            let v = cfg.violations(cmd);
            assert!(v.iter().any(|m| m.starts_with("seed:")), "{v:?}");
        }
        assert!(cfg.violations("grid").is_empty());
    }

    #[test]
    fn set_overrides_nested_keys() {
        let o = Overrides {
            set: vec![
                "world.n_categories=12".into(),
                "eval.out=report2.json".into(),
                "eval.selectors=[\"TOP\"]".into(),
            ],
            seed: Some(3),
            ..Overrides::default()
        };
        let cfg = RunConfig::load(None, &o).unwrap();
        assert_eq!(cfg.world.n_categories, 12);
        assert_eq!(cfg.eval.out, PathBuf::from("report2.json"));
        assert_eq!(cfg.eval.selectors, vec!["TOP".to_string()]);
        assert_eq!(cfg.seed, Some(3));
    }

    #[test]
    fn derived_keys_are_rejected() {
        let o = Overrides {
            set: vec!["world.seed=4".into(), "train.regressor.embed_dim=8".into()],
            ..Overrides::default()
        };
        match RunConfig::load(None, &o) {
            Err(CliError::Config(v)) => assert_eq!(v.len(), 2, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_are_listed() {
        let mut cfg = RunConfig::default();
        cfg.world.n_categories = 0;
        cfg.world.noise_scale = -1.0;
        cfg.world.feature_dim = 0;
        let v = cfg.violations("gen");
        assert_eq!(v.len(), 4, "{v:?}");
    }

    #[test]
    fn colliding_paths_are_rejected() {
        let mut cfg = RunConfig {
            seed: Some(1),
            ..RunConfig::default()
        };
        cfg.score.out = cfg.score.features.clone();
        assert_eq!(cfg.violations("score").len(), 1);
    }

    #[test]
    fn digest_ignores_threads() {
        let a = RunConfig {
            seed: Some(1),
            threads: Some(1),
            ..RunConfig::default()
        };
        let b = RunConfig {
            threads: Some(8),
            ..a.clone()
        };
        assert_eq!(a.digest(), b.digest());
        let c = RunConfig {
            seed: Some(2),
            ..a.clone()
        };
        assert_ne!(a.digest(), c.digest());
    }
}
