use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use semview::dataset::{
    load_feature_store, save_feature_store_with_digest, split_categories, CategorySplit,
    DatasetModel,
};
use semview::geometry::{compute_radius, pose_grid, pose_to_transform};
use semview::regressor::{build_examples, load_model_for, save_model, train, RegressorConfig};
use semview::scoring::{
    accumulate_scores_with_progress, load_scores, save_scores, CoverageAudit, ScoringError,
};
use semview::seeds::substream;
use semview::selectors::{
    evaluate, report_render, EvalConfig, EvalPipeline, SelectionContext, SelectorError, SelectorId,
};
use semview::synth::{derive_features, generate_world, save_quality, WorldConfig};

use crate::config::{CategorySet, RunConfig};
use crate::error::CliError;

fn load_store(path: &Path) -> Result<DatasetModel, CliError> {
    load_feature_store(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
        }
        _ => Ok(()),
    }
}

fn split(cfg: &RunConfig, seed: u64, model: &DatasetModel) -> Result<CategorySplit, CliError> {
    if cfg.split.n_test == 0 {
        return Ok(CategorySplit::all_train(model));
    }
    split_categories(model, cfg.split.n_test, substream(seed, "split")).map_err(CliError::data)
}

pub fn gen(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg
        .require_seed("gen")
        .map_err(|e| CliError::Config(vec![e]))?;
    let digest = cfg.digest();
    let world = WorldConfig {
        seed: substream(seed, "world"),
        ..cfg.world.clone()
    };
    let (model, quality) = generate_world(&world).map_err(CliError::runtime)?;
    let dir = &cfg.gen.out_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;

    let features = dir.join("features.svsf");
    save_feature_store_with_digest(&model, &features, Some(&digest)).map_err(CliError::runtime)?;
    let header = format!("config digest {}", digest.to_hex());
    save_quality(&quality, dir.join("quality.txt"), Some(&header)).map_err(CliError::runtime)?;
    for d in &cfg.gen.derived {
        let store = derive_features(
            &model,
            substream(seed, &format!("world/{}", d.name)),
            d.noise,
        )
        .map_err(CliError::runtime)?;
        save_feature_store_with_digest(&store, dir.join(format!("{}.svsf", d.name)), Some(&digest))
            .map_err(CliError::runtime)?;
    }
    println!(
        "wrote {} views of {} categories to {} (config digest {})",
        model.len(),
        model.category_list().len(),
        dir.display(),
        digest.to_hex()
    );
    Ok(())
}

fn scoring_error(e: ScoringError) -> CliError {
    match e {
        ScoringError::InvalidConfig(m) => CliError::Config(vec![m]),
        ScoringError::InsufficientCategories { .. }
        | ScoringError::UnknownCategory(_)
        | ScoringError::CoverageUnreachable(_) => CliError::data(e),
        e => CliError::runtime(e),
    }
}

pub fn score(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg
        .require_seed("score")
        .map_err(|e| CliError::Config(vec![e]))?;
    let out = &cfg.score.out;
    let model = load_store(&cfg.score.features)?;
    let split = split(cfg, seed, &model)?;
    let sampler = semview::scoring::SamplerConfig {
        seed: substream(seed, "sampler"),
        ..cfg.score.sampler.clone()
    };
    let pipeline = semview::clustering::PipelineConfig {
        seed: substream(seed, "pipeline"),
        ..cfg.score.pipeline.clone()
    };
    let mut report = |a: &CoverageAudit| {
        eprintln!(
            "coverage: {} problems, min {}, mean {:.1}, max {}",
            a.problems, a.min, a.mean, a.max
        );
    };
    let table = accumulate_scores_with_progress(
        &model,
        &split,
        &pipeline,
        &sampler,
        cfg.score.progress_every,
        &mut report,
    )
    .map_err(scoring_error)?;
    ensure_parent(out)?;
    save_scores(&table, out, Some(&cfg.digest())).map_err(CliError::runtime)?;
    println!(
        "wrote scores of {} views from {} problems (min coverage {}) to {}",
        table.len(),
        table.problems,
        table.min_coverage(),
        out.display()
    );
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg
        .require_seed("train")
        .map_err(|e| CliError::Config(vec![e]))?;
    let out = &cfg.train.out;
    let model = load_store(&cfg.train.features)?;
    let (table, _) = load_scores(&cfg.train.scores)
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.train.scores.display())))?;
    let examples = build_examples(&model, &table);
    if examples.is_empty() {
        return Err(CliError::Data(format!(
            "no view of {} has a score in {}",
            cfg.train.features.display(),
            cfg.train.scores.display()
        )));
    }
    let rc = RegressorConfig {
        embed_dim: model.feature_dim(),
        seed: substream(seed, "regressor"),
        ..cfg.train.regressor.clone()
    };
    let (state, history) = train(&examples, &rc).map_err(CliError::runtime)?;
    ensure_parent(out)?;
    save_model(&state, out, Some(&cfg.digest())).map_err(CliError::runtime)?;
    println!(
        "trained on {} examples for {} epochs, final loss {:.6}; wrote {}",
        examples.len(),
        history.len(),
        history.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn selector_error(e: SelectorError) -> CliError {
    match e {
        SelectorError::InvalidConfig(v) => CliError::Config(v),
        SelectorError::Scoring(s) => scoring_error(s),
        SelectorError::MissingTopView(_)
        | SelectorError::UnscoredView(_)
        | SelectorError::MissingView { .. }
        | SelectorError::MixedPose
        | SelectorError::EmptyPose => CliError::data(e),
        e => CliError::runtime(e),
    }
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg
        .require_seed("eval")
        .map_err(|e| CliError::Config(vec![e]))?;
    let selectors = cfg.selectors().map_err(CliError::Config)?;
    let out = &cfg.eval.out;
    let e = &cfg.eval;
    let model = load_store(&e.features)?;

    let scores = if selectors
        .iter()
        .any(|s| matches!(s, SelectorId::OptInd | SelectorId::OptGlob))
    {
        Some(
            load_scores(&e.scores)
                .map_err(|err| CliError::Data(format!("{}: {err}", e.scores.display())))?
                .0,
        )
    } else {
        None
    };
    let net = if selectors.contains(&SelectorId::Model) {
        Some(
            load_model_for(&e.model, model.feature_dim())
                .map_err(|err| CliError::Data(format!("{}: {err}", e.model.display())))?
                .0,
        )
    } else {
        None
    };

    let categories: BTreeSet<String> = match e.categories {
        CategorySet::All => model.category_list().iter().cloned().collect(),
        CategorySet::Train => split(cfg, seed, &model)?.train_categories,
        CategorySet::Test => split(cfg, seed, &model)?.test_categories,
    };

    let mut stores: Vec<(PathBuf, DatasetModel)> = Vec::new();
    for p in &e.pipelines {
        if let Some(path) = &p.features {
            if path != &e.features && !stores.iter().any(|(q, _)| q == path) {
                stores.push((path.clone(), load_store(path)?));
            }
        }
    }
    let pipeline_seed = substream(seed, "pipeline");
    let pipelines: Vec<EvalPipeline> = e
        .pipelines
        .iter()
        .map(|p| EvalPipeline {
            name: p.name.clone(),
            store: match &p.features {
                Some(path) if path != &e.features => {
                    &stores
                        .iter()
                        .find(|(q, _)| q == path)
                        .expect("store loaded")
                        .1
                }
                _ => &model,
            },
            config: semview::clustering::PipelineConfig {
                seed: pipeline_seed,
                ..p.config.clone()
            },
        })
        .collect();

    let ec = EvalConfig {
        n_problems: e.n_problems,
        categories_range: e.categories_range,
        objects_per_category_range: e.objects_per_category_range,
        selectors,
        seed: substream(seed, "eval"),
    };
    let ctx = SelectionContext {
        scores: scores.as_ref(),
        model: net.as_ref(),
    };
    let report = evaluate(&model, &categories, &pipelines, &ctx, &ec)
        .map_err(selector_error)?
        .with_digest(&cfg.digest());
    ensure_parent(out)?;
    report_render(&report, out).map_err(selector_error)?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn grid(cfg: &RunConfig) -> Result<(), CliError> {
    let g = &cfg.grid;
    let radius = compute_radius(&g.object, &g.intrinsics, g.fill)
        .map_err(|e| CliError::Config(vec![format!("grid: {e}")]))?;
    let mut poses = pose_grid(g.theta_step, &g.phi_values, &g.excluded_theta);
    if g.include_top {
        poses.push((90.0, 90.0));
    }
    let mut text = String::new();
    for (theta, phi) in poses {
        let p = pose_to_transform(&g.object, theta, phi, radius)
            .map_err(|e| CliError::Config(vec![format!("grid: {e}")]))?;
        let t = p.position();
        let q = p.quaternion();
        text += &format!(
            "{theta} {phi} {:.6} {:.6} {:.6} {:.9} {:.9} {:.9} {:.9}\n",
            t.x, t.y, t.z, q.w, q.i, q.j, q.k
        );
    }
    match &g.out {
        Some(path) => {
            ensure_parent(path)?;
            fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(CliError::runtime),
    }
}
