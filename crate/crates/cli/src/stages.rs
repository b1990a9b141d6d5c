//! Stage implementations shared by the individual subcommands and the
//! end-to-end pipeline. Every function takes explicit paths and seeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vln_core::env_synth::{
    generate_environment, generate_features, load_environment, oracle_edge_probability, save_environment,
    EdgeProbabilityProvider, Environment, EnvironmentMeta, FeatureStore, Split,
};
use vln_core::episode_sim::{EpisodeRecord, Simulator};
use vln_core::graph_builder::{
    build_graph, default_lambda_grid, graph_stats, grid_search, quality_from_sets, BuiltGraph, EdgeRuleParams,
    GraphQuality, GraphStats, LabeledTable,
};
use vln_core::il_pipeline::{
    dagger_iteration, emit_dataset, evaluate_policy, make_episodes, train, Episode, LinearPolicy, Policy,
    PolicyDocument, PolicyEvaluation, PolicyShape, StartMode, StepExample, TrainConfig, TrainReport,
};
use vln_core::io::{read_json, read_jsonl, write_json_pretty, write_jsonl};
use vln_core::metrics::{aggregate, evaluate_episode, AggregateMetrics, EvalResult};
use vln_core::seed::derive_seed;
use vln_core::traj_sampler::{dataset_stats, sample_dataset, EnvGraph, SampleConfig, SampleStats, Trajectory};
use vln_core::NavGraph;

use crate::config::{GenerateConfig, InstructionStageConfig};

pub struct LoadedEnv {
    pub env: Environment,
    pub features: FeatureStore,
    pub meta: EnvironmentMeta,
}

/// Environments are numbered train first, then val-unseen, then test.
pub fn split_for(index: usize, config: &GenerateConfig) -> Split {
    if index < config.train_envs {
        Split::Train
    } else if index < config.train_envs + config.val_unseen_envs {
        Split::ValUnseen
    } else {
        Split::Test
    }
}

pub fn env_id(index: usize) -> String {
    format!("env_{index:03}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateStats {
    pub envs: usize,
    pub panos: usize,
    pub reference_edges: usize,
    pub splits: BTreeMap<String, usize>,
}

pub fn generate(dir: &Path, config: &GenerateConfig, seed: u64) -> Result<GenerateStats> {
    let envs: Vec<(Environment, FeatureStore)> = (0..config.total())
        .into_par_iter()
        .map(|i| {
            let id = env_id(i);
            let params = vln_core::env_synth::EnvParams { split: split_for(i, config), ..config.env.clone() };
            let env = generate_environment(&id, derive_seed(seed, &["env", &id]), &params)?;
            let feature_seed = derive_seed(seed, &["features", &id]);
            let features = generate_features(&env, feature_seed, config.feature_dim)?;
            save_environment(&dir.join(&id), &env, &features, feature_seed)?;
            Ok((env, features))
        })
        .collect::<vln_core::Result<_>>()?;
    let mut splits = BTreeMap::new();
    for (env, _) in &envs {
        *splits.entry(env.split().to_string()).or_insert(0) += 1;
    }
    Ok(GenerateStats {
        envs: envs.len(),
        panos: envs.iter().map(|(e, _)| e.reference_graph.node_count()).sum(),
        reference_edges: envs.iter().map(|(e, _)| e.reference_graph.edge_count()).sum(),
        splits,
    })
}

/// Every environment bundle directly below `dir`, in id order.
pub fn load_envs(dir: &Path) -> Result<Vec<LoadedEnv>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list environments in {}", dir.display()))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    dirs.retain(|p| p.join("meta.json").is_file());
    dirs.sort();
    if dirs.is_empty() {
        bail!("no environment bundles in {}", dir.display());
    }
    dirs.par_iter()
        .map(|d| {
            let (env, features, meta) =
                load_environment(d).with_context(|| format!("loading environment {}", d.display()))?;
            Ok(LoadedEnv { env, features, meta })
        })
        .collect()
}

pub fn load_env_dirs(dirs: &[PathBuf]) -> Result<Vec<LoadedEnv>> {
    let mut out = Vec::new();
    for d in dirs {
        if d.join("meta.json").is_file() {
            let (env, features, meta) = load_environment(d).with_context(|| format!("loading {}", d.display()))?;
            out.push(LoadedEnv { env, features, meta });
        } else {
            out.extend(load_envs(d)?);
        }
    }
    out.sort_by(|a, b| a.env.id.cmp(&b.env.id));
    Ok(out)
}

pub fn provider(env: &Environment, sigma: f64, seed: u64) -> vln_core::Result<EdgeProbabilityProvider> {
    oracle_edge_probability(env, sigma, derive_seed(seed, &["provider", &env.id]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedParams {
    pub lambda_d: f64,
    pub lambda_p: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl FittedParams {
    pub fn params(&self) -> EdgeRuleParams {
        EdgeRuleParams::new(self.lambda_d, self.lambda_p)
    }
}

/// Grid search over the default λ grid, pooled over `envs`.
pub fn fit_lambdas(envs: &[&Environment], sigma: f64, seed: u64) -> Result<FittedParams> {
    let tables = envs
        .par_iter()
        .map(|e| LabeledTable::from_env(e, &provider(e, sigma, seed)?))
        .collect::<vln_core::Result<Vec<_>>>()?;
    let grid = default_lambda_grid();
    let (params, q) = grid_search(&tables, &grid, &grid)?;
    Ok(FittedParams {
        lambda_d: params.lambda_d,
        lambda_p: params.lambda_p,
        f1: q.f1,
        precision: q.precision,
        recall: q.recall,
    })
}

pub fn build_graphs(envs: &[&Environment], params: &EdgeRuleParams, sigma: f64, seed: u64) -> Result<Vec<BuiltGraph>> {
    Ok(envs
        .par_iter()
        .map(|e| build_graph(e, &provider(e, sigma, seed)?, params))
        .collect::<vln_core::Result<_>>()?)
}

pub fn write_graph(path: &Path, graph: &NavGraph) -> Result<()> {
    Ok(write_json_pretty(path, &graph.to_document())?)
}

pub fn read_graph(path: &Path) -> Result<NavGraph> {
    let doc = read_json(path)?;
    NavGraph::from_document(&doc).with_context(|| format!("invalid graph {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub fitted: FittedParams,
    /// Final built graphs against the reference graphs, pooled.
    pub quality: GraphQuality,
    pub built: GraphStats,
    pub reference: GraphStats,
}

pub fn summarize_graphs(fitted: FittedParams, envs: &[&Environment], built: &[BuiltGraph]) -> GraphSummary {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (e, b) in envs.iter().zip(built) {
        let q = quality_from_sets(&b.graph.edge_set(), &e.reference_graph.edge_set());
        tp += q.tp;
        fp += q.fp;
        fn_ += q.fn_;
    }
    GraphSummary {
        fitted,
        quality: GraphQuality::from_counts(tp, fp, fn_),
        built: graph_stats(built.iter().map(|b| &b.graph)),
        reference: graph_stats(envs.iter().map(|e| &e.reference_graph)),
    }
}

/// Graph each environment is navigated on: the built graph for training
/// environments when one exists and `train_on_built` is set, otherwise the
/// reference graph.
pub fn working_graphs(envs: &[LoadedEnv], graphs_dir: Option<&Path>, train_on_built: bool) -> Result<BTreeMap<String, NavGraph>> {
    envs.iter()
        .map(|l| {
            let built = graphs_dir.map(|d| d.join(format!("{}.json", l.env.id)));
            let graph = match built {
                Some(path) if train_on_built && l.env.split() == Split::Train && path.is_file() => read_graph(&path)?,
                _ => l.env.reference_graph.clone(),
            };
            Ok((l.env.id.clone(), graph))
        })
        .collect()
}

pub fn simulators<'a>(envs: &'a [LoadedEnv], graphs: &'a BTreeMap<String, NavGraph>) -> BTreeMap<String, Simulator<'a>> {
    envs.iter()
        .map(|l| (l.env.id.clone(), Simulator::new(&l.env.id, &graphs[&l.env.id], &l.features)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub train: SampleStats,
    pub eval: SampleStats,
    pub attempts: usize,
}

/// Samples training environments with `train_config` and evaluation
/// environments with `eval_config`.
pub fn sample(
    envs: &[LoadedEnv],
    graphs: &BTreeMap<String, NavGraph>,
    train_config: &SampleConfig,
    eval_config: &SampleConfig,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>, SampleSummary)> {
    let pick = |train: bool| -> Vec<EnvGraph<'_>> {
        envs.iter()
            .filter(|l| (l.env.split() == Split::Train) == train)
            .map(|l| EnvGraph { env_id: &l.env.id, split: l.env.split(), graph: &graphs[&l.env.id] })
            .collect()
    };
    let mut attempts = 0;
    let mut run = |subset: Vec<EnvGraph<'_>>, config: &SampleConfig| -> Result<Vec<Trajectory>> {
        if subset.is_empty() {
            return Ok(Vec::new());
        }
        let samples = sample_dataset(&subset, config)?;
        attempts += samples.iter().map(|s| s.attempts).sum::<usize>();
        Ok(samples.into_iter().flat_map(|s| s.trajectories).collect())
    };
    let train = run(pick(true), train_config)?;
    let eval = run(pick(false), eval_config)?;
    let summary = SampleSummary { train: dataset_stats(&train), eval: dataset_stats(&eval), attempts };
    Ok((train, eval, summary))
}

/// Episode sets by evaluation split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeSplits {
    pub train: Vec<Episode>,
    pub val_seen: Vec<Episode>,
    pub val_unseen: Vec<Episode>,
    pub test: Vec<Episode>,
}

pub const EPISODE_SPLITS: [&str; 4] = ["train", "val_seen", "val_unseen", "test"];

impl EpisodeSplits {
    pub fn get(&self, name: &str) -> &[Episode] {
        match name {
            "train" => &self.train,
            "val_seen" => &self.val_seen,
            "val_unseen" => &self.val_unseen,
            "test" => &self.test,
            _ => &[],
        }
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        EPISODE_SPLITS.iter().map(|s| (s.to_string(), self.get(s).len())).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for name in EPISODE_SPLITS {
            write_jsonl(&dir.join(format!("{name}.jsonl")), self.get(name))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<Episode>> {
            let path = dir.join(format!("{name}.jsonl"));
            read_jsonl(&path).with_context(|| format!("reading {}", path.display()))
        };
        Ok(Self { train: read("train")?, val_seen: read("val_seen")?, val_unseen: read("val_unseen")?, test: read("test")? })
    }
}

/// Pairs trajectories with synthetic instructions, one environment at a
/// time, in environment order.
pub fn instruct(graphs: &BTreeMap<String, NavGraph>, trajectories: &[Trajectory], config: &InstructionStageConfig, seed: u64) -> Result<Vec<Episode>> {
    let mut by_env: BTreeMap<&str, Vec<Trajectory>> = BTreeMap::new();
    for t in trajectories {
        by_env.entry(&t.env_id).or_default().push(t.clone());
    }
    let per_env = by_env
        .par_iter()
        .map(|(env, trajs)| {
            let graph = graphs.get(*env).with_context(|| format!("no graph for environment {env}"))?;
            Ok(make_episodes(graph, trajs, &config.to_core(), seed)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_env.into_iter().flatten().collect())
}

/// Splits episodes: the last `val_seen_per_env` of each training
/// environment become val-seen; evaluation environments go by split.
pub fn split_episodes(envs: &[LoadedEnv], episodes: Vec<Episode>, val_seen_per_env: usize) -> Result<EpisodeSplits> {
    let split_of: BTreeMap<&str, Split> = envs.iter().map(|l| (l.env.id.as_str(), l.env.split())).collect();
    let mut per_train_env: BTreeMap<String, Vec<Episode>> = BTreeMap::new();
    let mut out = EpisodeSplits::default();
    for e in episodes {
        match split_of.get(e.env_id()) {
            Some(Split::Train) => per_train_env.entry(e.env_id().to_string()).or_default().push(e),
            Some(Split::ValSeen) => out.val_seen.push(e),
            Some(Split::ValUnseen) => out.val_unseen.push(e),
            Some(Split::Test) => out.test.push(e),
            None => bail!("episode {} refers to unknown environment {}", e.id(), e.env_id()),
        }
    }
    for (_, mut list) in per_train_env {
        let keep = list.len().saturating_sub(val_seen_per_env);
        out.val_seen.extend(list.split_off(keep));
        out.train.extend(list);
    }
    Ok(out)
}

pub fn emit(sims: &BTreeMap<String, Simulator<'_>>, episodes: &[Episode], seed: u64) -> Result<Vec<StepExample>> {
    Ok(emit_dataset(sims, episodes, seed)?)
}

pub fn save_policy(path: &Path, policy: &LinearPolicy) -> Result<()> {
    Ok(write_json_pretty(path, &policy.to_document())?)
}

pub fn load_policy(path: &Path) -> Result<LinearPolicy> {
    let doc: PolicyDocument = read_json(path).with_context(|| format!("reading policy {}", path.display()))?;
    Ok(LinearPolicy::from_document(&doc)?)
}

pub fn train_bc(dataset: &[StepExample], shape: PolicyShape, config: &TrainConfig, seed: u64) -> Result<(LinearPolicy, TrainReport)> {
    if dataset.is_empty() {
        bail!("training dataset is empty");
    }
    let init = LinearPolicy::init(shape, derive_seed(seed, &["policy-init"]));
    Ok(train(init, dataset, config)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaggerSummary {
    pub iterations: usize,
    pub added: Vec<usize>,
    pub examples: usize,
    pub reports: Vec<TrainReport>,
}

/// Rolls out, relabels with the expert, aggregates and continues training
/// from the current policy, `iterations` times.
#[allow(clippy::too_many_arguments)]
pub fn dagger(
    policy: LinearPolicy,
    sims: &BTreeMap<String, Simulator<'_>>,
    episodes: &[Episode],
    dataset: Vec<StepExample>,
    iterations: usize,
    perturbed: bool,
    config: &TrainConfig,
    seed: u64,
) -> Result<(LinearPolicy, Vec<StepExample>, DaggerSummary)> {
    let mut policy = policy;
    let mut dataset = dataset;
    let mut summary = DaggerSummary { iterations, added: Vec::new(), examples: 0, reports: Vec::new() };
    for i in 0..iterations {
        let it = i.to_string();
        let mode = if perturbed {
            StartMode::Perturbed { seed: derive_seed(seed, &["start", &it]) }
        } else {
            StartMode::Reference
        };
        let (all, added) = dagger_iteration(&policy, sims, episodes, dataset, mode, derive_seed(seed, &["mask", &it]))?;
        dataset = all;
        let round = TrainConfig { seed: derive_seed(seed, &["train", &it]), ..config.clone() };
        let (next, report) = train(policy, &dataset, &round)?;
        policy = next;
        summary.added.push(added);
        summary.reports.push(report);
    }
    summary.examples = dataset.len();
    Ok((policy, dataset, summary))
}

/// Evaluation on one episode set with one start mode.
pub fn evaluate(
    policy: &dyn Policy,
    sims: &BTreeMap<String, Simulator<'_>>,
    episodes: &[Episode],
    mode: StartMode,
) -> Result<PolicyEvaluation> {
    Ok(evaluate_policy(policy, sims, episodes, mode)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub episodes: Vec<(String, EvalResult)>,
    pub aggregate: AggregateMetrics,
}

/// Scores rollout records against reference episodes using only graphs.
pub fn score(graphs: &BTreeMap<String, NavGraph>, episodes: &[Episode], records: &[EpisodeRecord]) -> Result<ScoreReport> {
    let by_id: BTreeMap<&str, &Episode> = episodes.iter().map(|e| (e.id(), e)).collect();
    let scored = records
        .par_iter()
        .map(|r| {
            let e = by_id
                .get(r.instruction_id.as_str())
                .with_context(|| format!("no reference episode for {}", r.instruction_id))?;
            let graph = graphs.get(e.env_id()).with_context(|| format!("no graph for environment {}", e.env_id()))?;
            Ok((r.instruction_id.clone(), evaluate_episode(graph, &r.trace, &e.trajectory.nodes)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<EvalResult> = scored.iter().map(|(_, r)| r.clone()).collect();
    Ok(ScoreReport { aggregate: aggregate(&results)?, episodes: scored })
}

/// Loads graphs from a directory holding either `<env>.json` graph files
/// or environment bundles with a `graph.json` each.
pub fn load_graph_dir(dir: &Path) -> Result<BTreeMap<String, NavGraph>> {
    let mut out = BTreeMap::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if path.is_dir() && path.join("graph.json").is_file() {
            out.insert(stem, read_graph(&path.join("graph.json"))?);
        } else if path.extension().is_some_and(|x| x == "json") {
            out.insert(stem, read_graph(&path)?);
        }
    }
    if out.is_empty() {
        bail!("no graphs found in {}", dir.display());
    }
    Ok(out)
}
