//! End-to-end runs driven by a [`RunConfig`], with a manifest recording
//! output hashes, seeds, durations and per-stage statistics.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vln_core::env_synth::Split;
use vln_core::il_pipeline::{load_dataset, save_dataset, Policy, PolicyShape, RandomPolicy, StartMode};
use vln_core::io::{read_json, read_jsonl, write_json_pretty, write_jsonl};
use vln_core::metrics::AggregateMetrics;
use vln_core::seed::derive_seed;
use vln_core::traj_sampler::Trajectory;

use crate::config::{RunConfig, Stage};
use crate::error::CliError;
use crate::report::render_report;
use crate::stages::{self, EpisodeSplits, FittedParams, LoadedEnv};

pub const MANIFEST: &str = "manifest.json";

/// File locations inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn envs(&self) -> PathBuf {
        self.root.join("envs")
    }

    pub fn graphs(&self) -> PathBuf {
        self.root.join("graphs")
    }

    pub fn built_graphs(&self) -> PathBuf {
        self.graphs().join("built")
    }

    pub fn trajectories(&self) -> PathBuf {
        self.root.join("trajectories")
    }

    pub fn episodes(&self) -> PathBuf {
        self.root.join("episodes")
    }

    pub fn dataset(&self, name: &str) -> PathBuf {
        self.root.join("datasets").join(name)
    }

    pub fn policy(&self, name: &str) -> PathBuf {
        self.root.join("policies").join(format!("{name}.json"))
    }

    pub fn rollouts(&self) -> PathBuf {
        self.root.join("rollouts")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    /// Paths (relative to the root) each stage writes.
    pub fn outputs(stage: Stage) -> &'static [&'static str] {
        match stage {
            Stage::Generate => &["envs"],
            Stage::Graphs => &["graphs"],
            Stage::Sample => &["trajectories"],
            Stage::Instructions => &["episodes"],
            Stage::Emit => &["datasets/bc"],
            Stage::Train => &["policies/bc.json"],
            Stage::Dagger => &["datasets/dagger", "policies/dagger.json"],
            Stage::Evaluate => &["rollouts", "eval"],
            Stage::Report => &["report.md"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub seed: u64,
    pub duration_ms: u64,
    /// SHA-256 of every output file, keyed by path relative to the root.
    pub outputs: BTreeMap<String, String>,
    pub stats: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    /// Output hashes of all stages, the part of the manifest that must be
    /// identical between reruns.
    pub fn output_hashes(&self) -> BTreeMap<String, String> {
        self.stages.iter().flat_map(|r| r.outputs.clone()).collect()
    }

    fn upsert(&mut self, record: StageRecord) {
        self.stages.retain(|r| r.stage != record.stage);
        self.stages.push(record);
        self.stages.sort_by_key(|r| r.stage);
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path).with_context(|| format!("reading manifest {}", path.display()))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        for entry in fs::read_dir(path)? {
            collect_files(&entry?.path(), out)?;
        }
    } else if path.is_file() {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Hashes every file under the given root-relative paths.
pub fn hash_outputs(root: &Path, rels: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    for rel in rels {
        collect_files(&root.join(rel), &mut files)?;
    }
    files
        .iter()
        .map(|f| {
            let rel = f.strip_prefix(root).expect("collected under root");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok((key, sha256_file(f)?))
        })
        .collect()
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} not found at {}; run the producing stage first", path.display());
    }
    Ok(())
}

fn clean(path: &Path) -> Result<()> {
    if path.is_dir() {
        fs::remove_dir_all(path)?;
    } else if path.is_file() {
        fs::remove_file(path)?;
    }
    Ok(())
}

/// Runs the configured stages in dependency order and returns the updated
/// manifest. An existing manifest in the output directory is extended.
pub fn run_pipeline(config: &RunConfig) -> Result<Manifest, CliError> {
    config.validate()?;
    let layout = Layout::new(&config.out_dir);
    fs::create_dir_all(&layout.root)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", layout.root.display())))?;
    fs::write(layout.root.join("config.toml"), config.canonical())
        .map_err(|e| CliError::Config(format!("cannot write config: {e}")))?;

    let previous = if layout.manifest().is_file() {
        Manifest::load(&layout.manifest()).map_err(CliError::stage("manifest"))?.stages
    } else {
        Vec::new()
    };
    let mut manifest = Manifest { seed: config.seed, config: config.clone(), stages: previous };
    for stage in config.ordered_stages() {
        let started = Instant::now();
        let seed = derive_seed(config.seed, &[stage.name()]);
        for rel in Layout::outputs(stage) {
            clean(&layout.root.join(rel)).map_err(CliError::stage(stage.name()))?;
        }
        let stats = run_stage(stage, config, &layout, seed, &manifest).map_err(CliError::stage(stage.name()))?;
        let outputs = hash_outputs(&layout.root, Layout::outputs(stage)).map_err(CliError::stage(stage.name()))?;
        manifest.upsert(StageRecord {
            stage,
            seed,
            duration_ms: started.elapsed().as_millis() as u64,
            outputs,
            stats,
        });
        write_json_pretty(&layout.manifest(), &manifest).map_err(|e| CliError::stage(stage.name())(e.into()))?;
    }
    write_json_pretty(&layout.manifest(), &manifest).map_err(|e| CliError::stage("manifest")(e.into()))?;
    Ok(manifest)
}

fn to_value<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(value)?)
}

fn load_run_envs(layout: &Layout) -> Result<Vec<LoadedEnv>> {
    require(&layout.envs(), "environments")?;
    stages::load_envs(&layout.envs())
}

fn working_graphs(config: &RunConfig, layout: &Layout, envs: &[LoadedEnv]) -> Result<BTreeMap<String, vln_core::NavGraph>> {
    let built = layout.built_graphs();
    stages::working_graphs(envs, built.is_dir().then_some(built.as_path()), config.graphs.train_on_built)
}

fn policy_shape(config: &RunConfig, envs: &[LoadedEnv]) -> PolicyShape {
    PolicyShape {
        feature_dim: envs[0].features.dim(),
        embed_dim: config.train.embed_dim,
        vocab_size: config.instructions.vocab_size as usize,
    }
}

fn run_stage(stage: Stage, config: &RunConfig, layout: &Layout, seed: u64, manifest: &Manifest) -> Result<serde_json::Value> {
    match stage {
        Stage::Generate => to_value(&stages::generate(&layout.envs(), &config.generate, seed)?),
        Stage::Graphs => {
            let envs = load_run_envs(layout)?;
            let all: Vec<_> = envs.iter().map(|l| &l.env).collect();
            let train: Vec<_> = all.iter().copied().filter(|e| e.split() == Split::Train).collect();
            let fitted = match config.graphs.fixed_params() {
                Some(p) => {
                    let q = fit_quality(&train, &p, config.graphs.sigma, seed)?;
                    FittedParams { lambda_d: p.lambda_d, lambda_p: p.lambda_p, f1: q.f1, precision: q.precision, recall: q.recall }
                }
                None => stages::fit_lambdas(&train, config.graphs.sigma, seed)?,
            };
            let built = stages::build_graphs(&all, &fitted.params(), config.graphs.sigma, seed)?;
            fs::create_dir_all(layout.built_graphs())?;
            for (env, b) in all.iter().zip(&built) {
                stages::write_graph(&layout.built_graphs().join(format!("{}.json", env.id)), &b.graph)?;
            }
            write_json_pretty(&layout.graphs().join("params.json"), &fitted)?;
            let summary = stages::summarize_graphs(fitted, &all, &built);
            write_json_pretty(&layout.graphs().join("summary.json"), &summary)?;
            to_value(&summary)
        }
        Stage::Sample => {
            let envs = load_run_envs(layout)?;
            let graphs = working_graphs(config, layout, &envs)?;
            let s = &config.sample;
            let (train, eval, summary) = stages::sample(
                &envs,
                &graphs,
                &s.to_core(s.per_env_cap, seed),
                &s.to_core(s.eval_per_env_cap, seed),
            )?;
            fs::create_dir_all(layout.trajectories())?;
            write_jsonl(&layout.trajectories().join("train.jsonl"), &train)?;
            write_jsonl(&layout.trajectories().join("eval.jsonl"), &eval)?;
            to_value(&summary)
        }
        Stage::Instructions => {
            let envs = load_run_envs(layout)?;
            let graphs = working_graphs(config, layout, &envs)?;
            require(&layout.trajectories(), "trajectories")?;
            let mut trajs: Vec<Trajectory> = read_jsonl(&layout.trajectories().join("train.jsonl"))?;
            trajs.extend(read_jsonl::<Trajectory>(&layout.trajectories().join("eval.jsonl"))?);
            for t in &trajs {
                t.validate(&graphs[&t.env_id])?;
            }
            let episodes = stages::instruct(&graphs, &trajs, &config.instructions, seed)?;
            let splits = stages::split_episodes(&envs, episodes, config.instructions.val_seen_per_env)?;
            splits.save(&layout.episodes())?;
            to_value(&splits.counts())
        }
        Stage::Emit => {
            let envs = load_run_envs(layout)?;
            let graphs = working_graphs(config, layout, &envs)?;
            require(&layout.episodes(), "episodes")?;
            let splits = EpisodeSplits::load(&layout.episodes())?;
            let sims = stages::simulators(&envs, &graphs);
            let examples = stages::emit(&sims, &splits.train, seed)?;
            save_dataset(&layout.dataset("bc"), &examples)?;
            to_value(&serde_json::json!({ "examples": examples.len(), "episodes": splits.train.len() }))
        }
        Stage::Train => {
            let envs = load_run_envs(layout)?;
            require(&layout.dataset("bc"), "behavioral-cloning dataset")?;
            let dataset = load_dataset(&layout.dataset("bc"))?;
            let train_config = config.train.to_core(config.train.epochs, derive_seed(seed, &["train"]));
            let (policy, report) = stages::train_bc(&dataset, policy_shape(config, &envs), &train_config, seed)?;
            stages::save_policy(&layout.policy("bc"), &policy)?;
            to_value(&report)
        }
        Stage::Dagger => {
            let envs = load_run_envs(layout)?;
            let graphs = working_graphs(config, layout, &envs)?;
            require(&layout.policy("bc"), "behavioral-cloning policy")?;
            let policy = stages::load_policy(&layout.policy("bc"))?;
            let dataset = load_dataset(&layout.dataset("bc"))?;
            let splits = EpisodeSplits::load(&layout.episodes())?;
            let sims = stages::simulators(&envs, &graphs);
            let train_config = config.train.to_core(config.dagger.epochs, 0);
            let (policy, dataset, summary) = stages::dagger(
                policy,
                &sims,
                &splits.train,
                dataset,
                config.dagger.iterations,
                config.dagger.perturbed_starts,
                &train_config,
                seed,
            )?;
            save_dataset(&layout.dataset("dagger"), &dataset)?;
            stages::save_policy(&layout.policy("dagger"), &policy)?;
            to_value(&summary)
        }
        Stage::Evaluate => {
            let envs = load_run_envs(layout)?;
            let graphs = working_graphs(config, layout, &envs)?;
            require(&layout.episodes(), "episodes")?;
            let splits = EpisodeSplits::load(&layout.episodes())?;
            let sims = stages::simulators(&envs, &graphs);
            let mut policies: Vec<(&str, Box<dyn Policy>)> =
                vec![("random", Box::new(RandomPolicy { seed: derive_seed(seed, &["random-policy"]) }))];
            for name in ["bc", "dagger"] {
                if layout.policy(name).is_file() {
                    policies.push((name, Box::new(stages::load_policy(&layout.policy(name))?)));
                }
            }
            fs::create_dir_all(layout.rollouts())?;
            fs::create_dir_all(layout.eval())?;
            let mut results: BTreeMap<String, AggregateMetrics> = BTreeMap::new();
            for split in ["val_seen", "val_unseen", "test"] {
                let episodes = splits.get(split);
                if episodes.is_empty() {
                    continue;
                }
                let mut modes = vec![("", StartMode::Reference)];
                if config.evaluate.perturbed_starts {
                    modes.push(("_perturbed", StartMode::Perturbed { seed: derive_seed(seed, &["start", split]) }));
                }
                for (suffix, mode) in modes {
                    for (name, policy) in &policies {
                        let key = format!("{name}_{split}{suffix}");
                        let evaluation = stages::evaluate(policy.as_ref(), &sims, episodes, mode)?;
                        write_jsonl(&layout.rollouts().join(format!("{key}.jsonl")), &evaluation.records)?;
                        write_json_pretty(&layout.eval().join(format!("{key}.json")), &evaluation)?;
                        results.insert(key, evaluation.aggregate);
                    }
                }
            }
            to_value(&results)
        }
        Stage::Report => {
            let text = render_report(manifest);
            fs::write(layout.report(), text)?;
            Ok(serde_json::Value::Null)
        }
    }
}

fn fit_quality(
    envs: &[&vln_core::env_synth::Environment],
    params: &vln_core::graph_builder::EdgeRuleParams,
    sigma: f64,
    seed: u64,
) -> Result<vln_core::graph_builder::GraphQuality> {
    let tables = envs
        .iter()
        .map(|e| vln_core::graph_builder::LabeledTable::from_env(e, &stages::provider(e, sigma, seed)?))
        .collect::<vln_core::Result<Vec<_>>>()?;
    Ok(vln_core::graph_builder::pooled_quality(&tables, params)?)
}
