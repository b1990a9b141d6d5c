use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use vln_cli::config::{GenerateConfig, InstructionStageConfig, RunConfig, TrainStageConfig};
use vln_cli::error::CliError;
use vln_cli::pipeline::{run_pipeline, Manifest};
use vln_cli::report::{render_report, reference, REFERENCE_LABEL};
use vln_cli::stages::{self, LoadedEnv};
use vln_core::episode_sim::EpisodeRecord;
use vln_core::graph_builder::EdgeRuleParams;
use vln_core::il_pipeline::{load_dataset, save_dataset, Episode, PolicyShape, StartMode};
use vln_core::io::{read_jsonl, write_json_pretty, write_jsonl};
use vln_core::traj_sampler::{
    dataset_stats, flatten, load_trajectories, pre_exploration_sample, sample_dataset, EnvGraph, SampleConfig,
    Trajectory,
};
use vln_core::NavGraph;

#[derive(Parser)]
#[command(name = "vln", version, about = "Synthetic navigation environments, graph construction and imitation learning")]
struct Cli {
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainMode {
    Bc,
    Dagger,
}

#[derive(Subcommand)]
enum Command {
    /// Generate environment bundles.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        envs: usize,
        #[arg(long, default_value_t = 2)]
        val_unseen: usize,
        #[arg(long, default_value_t = 2)]
        test: usize,
        #[arg(long, default_value_t = 64)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build one navigation graph with fixed rule weights.
    BuildGraph {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        lambda_d: f64,
        #[arg(long)]
        lambda_p: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search the rule weights against reference graphs.
    FitLambdas {
        #[arg(long, num_args = 1.., required = true)]
        envs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample trajectories.
    Sample {
        #[arg(long, num_args = 1.., required = true)]
        envs: Vec<PathBuf>,
        /// Directory of `<env>.json` graphs used instead of reference graphs.
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long, default_value_t = 3000)]
        cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Only evaluation environments, tagged as pre-exploration data.
        #[arg(long)]
        pre_explore: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print trajectory statistics.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Pair trajectories with instructions and emit step examples.
    Emit {
        #[arg(long)]
        trajs: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        envs: Vec<PathBuf>,
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy on an emitted dataset.
    Train {
        #[arg(long)]
        ds: PathBuf,
        #[arg(long, value_enum, default_value = "bc")]
        mode: TrainMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        embed_dim: Option<usize>,
        /// Starting policy for DAGGER.
        #[arg(long, required_if_eq("mode", "dagger"))]
        init: Option<PathBuf>,
        /// Environments for DAGGER rollouts.
        #[arg(long, num_args = 1.., required_if_eq("mode", "dagger"))]
        envs: Vec<PathBuf>,
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out a policy on episodes.
    Rollout {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        envs: Vec<PathBuf>,
        #[arg(long)]
        graphs: Option<PathBuf>,
        /// Start one random step off the reference start.
        #[arg(long)]
        perturbed_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score rollouts against the episodes they were run on.
    Evaluate {
        /// Episode JSONL holding the reference trajectories.
        #[arg(long)]
        trajs: PathBuf,
        #[arg(long)]
        rollouts: PathBuf,
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured stages end to end.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a manifest as markdown.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the canonical form of a configuration file.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::BuildGraph { .. } => "build-graph",
            Command::FitLambdas { .. } => "fit-lambdas",
            Command::Sample { .. } => "sample",
            Command::Stats { .. } => "stats",
            Command::Emit { .. } => "emit",
            Command::Train { .. } => "train",
            Command::Rollout { .. } => "rollout",
            Command::Evaluate { .. } => "evaluate",
            Command::Pipeline { .. } => "pipeline",
            Command::Report { .. } => "report",
            Command::Config { .. } => "config",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let name = command.name();
    match command {
        Command::Pipeline { config } => {
            let config = RunConfig::load(&config)?.with_env_overrides();
            let manifest = run_pipeline(&config)?;
            for r in &manifest.stages {
                println!("{:<13} {:>8} ms  {} files", r.stage.name(), r.duration_ms, r.outputs.len());
            }
            println!("manifest: {}", config.out_dir.join(vln_cli::pipeline::MANIFEST).display());
            Ok(())
        }
        Command::Config { config } => {
            let config = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            print!("{}", config.canonical());
            Ok(())
        }
        other => run_stage_command(other).map_err(CliError::stage(name)),
    }
}

fn graphs_for(envs: &[LoadedEnv], dir: Option<&Path>) -> Result<BTreeMap<String, NavGraph>> {
    let mut graphs: BTreeMap<String, NavGraph> =
        envs.iter().map(|l| (l.env.id.clone(), l.env.reference_graph.clone())).collect();
    if let Some(dir) = dir {
        for (id, g) in stages::load_graph_dir(dir)? {
            if graphs.contains_key(&id) {
                graphs.insert(id, g);
            }
        }
    }
    Ok(graphs)
}

fn env_graphs<'a>(envs: &'a [LoadedEnv], graphs: &'a BTreeMap<String, NavGraph>) -> Vec<EnvGraph<'a>> {
    envs.iter()
        .map(|l| EnvGraph { env_id: &l.env.id, split: l.env.split(), graph: &graphs[&l.env.id] })
        .collect()
}

fn run_stage_command(command: Command) -> Result<()> {
    match command {
        Command::Generate { out, envs, val_unseen, test, feature_dim, seed } => {
            let config =
                GenerateConfig { train_envs: envs, val_unseen_envs: val_unseen, test_envs: test, feature_dim, ..Default::default() };
            let stats = stages::generate(&out, &config, seed)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::BuildGraph { env, lambda_d, lambda_p, sigma, seed, out } => {
            let loaded = stages::load_env_dirs(&[env])?;
            let params = EdgeRuleParams::new(lambda_d, lambda_p);
            params.validate()?;
            let env = &loaded[0].env;
            let built = stages::build_graphs(&[env], &params, sigma, seed)?.remove(0);
            stages::write_graph(&out, &built.graph)?;
            let q = vln_core::graph_builder::graph_quality(&built.graph, &env.reference_graph)?;
            println!(
                "{}: {} edges ({} from the rule, {} added by the spanning tree), F1 {:.3}",
                env.id,
                built.graph.edge_count(),
                built.rule_edges.len(),
                built.mst_edges.difference(&built.rule_edges).count(),
                q.f1
            );
        }
        Command::FitLambdas { envs, sigma, seed, out } => {
            let loaded = stages::load_env_dirs(&envs)?;
            let refs: Vec<_> = loaded.iter().map(|l| &l.env).collect();
            let fitted = stages::fit_lambdas(&refs, sigma, seed)?;
            write_json_pretty(&out, &fitted)?;
            println!("{}", serde_json::to_string_pretty(&fitted)?);
        }
        Command::Sample { envs, graphs, cap, seed, pre_explore, out } => {
            let loaded = stages::load_env_dirs(&envs)?;
            let graphs = graphs_for(&loaded, graphs.as_deref())?;
            let config = SampleConfig { per_env_cap: cap, seed, ..SampleConfig::default() };
            let list = env_graphs(&loaded, &graphs);
            let samples =
                if pre_explore { pre_exploration_sample(&list, &config)? } else { sample_dataset(&list, &config)? };
            let trajectories = flatten(samples);
            write_jsonl(&out, &trajectories)?;
            print_stats(&trajectories);
        }
        Command::Stats { input } => {
            let trajectories: Vec<Trajectory> = read_jsonl(&input)?;
            print_stats(&trajectories);
        }
        Command::Emit { trajs, envs, graphs, seed, out } => {
            let loaded = stages::load_env_dirs(&envs)?;
            let graphs = graphs_for(&loaded, graphs.as_deref())?;
            let lookup = |id: &str| graphs.get(id);
            let trajectories = load_trajectories(&trajs, lookup)?;
            let episodes = stages::instruct(&graphs, &trajectories, &InstructionStageConfig::default(), seed)?;
            let sims = stages::simulators(&loaded, &graphs);
            let examples = stages::emit(&sims, &episodes, seed)?;
            save_dataset(&out, &examples)?;
            write_jsonl(&out.join("episodes.jsonl"), &episodes)?;
            println!("{} episodes, {} step examples", episodes.len(), examples.len());
        }
        Command::Train { ds, mode, seed, epochs, embed_dim, init, envs, graphs, iterations, out } => {
            let dataset = load_dataset(&ds)?;
            let defaults = TrainStageConfig::default();
            let config = defaults.to_core(epochs.unwrap_or(defaults.epochs), seed);
            let report = match mode {
                TrainMode::Bc => {
                    let first = dataset.first().context("dataset is empty")?;
                    let shape = PolicyShape {
                        feature_dim: first.input.pooled_obs.len(),
                        embed_dim: embed_dim.unwrap_or(defaults.embed_dim),
                        vocab_size: InstructionStageConfig::default().vocab_size as usize,
                    };
                    let (policy, report) = stages::train_bc(&dataset, shape, &config, seed)?;
                    stages::save_policy(&out, &policy)?;
                    serde_json::to_value(report)?
                }
                TrainMode::Dagger => {
                    let init = init.context("--mode dagger needs --init with a starting policy")?;
                    anyhow::ensure!(!envs.is_empty(), "--mode dagger needs --envs for rollouts");
                    let policy = stages::load_policy(&init)?;
                    let loaded = stages::load_env_dirs(&envs)?;
                    let graphs = graphs_for(&loaded, graphs.as_deref())?;
                    let episodes: Vec<Episode> = read_jsonl(&ds.join("episodes.jsonl"))?;
                    let sims = stages::simulators(&loaded, &graphs);
                    let (policy, aggregated, summary) =
                        stages::dagger(policy, &sims, &episodes, dataset, iterations, true, &config, seed)?;
                    stages::save_policy(&out, &policy)?;
                    let ds_out = out.with_extension("dataset");
                    save_dataset(&ds_out, &aggregated)?;
                    write_jsonl(&ds_out.join("episodes.jsonl"), &episodes)?;
                    serde_json::to_value(summary)?
                }
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Rollout { policy, episodes, envs, graphs, perturbed_seed, out } => {
            let policy = stages::load_policy(&policy)?;
            let episodes: Vec<Episode> = read_jsonl(&episodes)?;
            let loaded = stages::load_env_dirs(&envs)?;
            let graphs = graphs_for(&loaded, graphs.as_deref())?;
            let sims = stages::simulators(&loaded, &graphs);
            let mode = perturbed_seed.map_or(StartMode::Reference, |seed| StartMode::Perturbed { seed });
            let evaluation = stages::evaluate(&policy, &sims, &episodes, mode)?;
            write_jsonl(&out, &evaluation.records)?;
            println!("{} episodes rolled out", evaluation.records.len());
        }
        Command::Evaluate { trajs, rollouts, graphs, out } => {
            let episodes: Vec<Episode> = read_jsonl(&trajs)?;
            let records: Vec<EpisodeRecord> = read_jsonl(&rollouts)?;
            let graphs = stages::load_graph_dir(&graphs)?;
            let report = stages::score(&graphs, &episodes, &records)?;
            write_json_pretty(&out, &report)?;
            let a = &report.aggregate;
            println!(
                "episodes {}  NE {:.2} m  SR {:.1}%  SPL {:.3}  NDTW {:.3}  SDTW {:.3}",
                a.episodes, a.ne_m, a.sr, a.spl, a.ndtw, a.sdtw
            );
        }
        Command::Report { manifest, out } => {
            let text = render_report(&Manifest::load(&manifest)?);
            match out {
                Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Pipeline { .. } | Command::Config { .. } => unreachable!("handled before dispatch"),
    }
    Ok(())
}

fn print_stats(trajectories: &[Trajectory]) {
    let s = dataset_stats(trajectories);
    println!("{:<10} {:>12} {:>12}", "", "this run", "reference");
    println!("{:<10} {:>12} {:>12}", "paths", s.count, reference::PATHS);
    println!("{:<10} {:>12.2} {:>12}", "steps", s.mean_steps, reference::MEAN_STEPS);
    println!("{:<10} {:>12.2} {:>12}", "length m", s.mean_length_m, reference::MEAN_LENGTH_M);
    println!("reference column: {REFERENCE_LABEL}");
}
