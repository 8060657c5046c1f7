//! Command-line front end for the tracker-detection laboratory. Subcommands
//! compose through on-disk artifacts: `gen` emits a synthetic corpus, `build`
//! turns traces into page graphs, `features`/`label` produce per-node
//! matrices and ground truth, `train`/`eval` fit and score the classifier,
//! `attack-content`/`attack-structure` probe it, and `report` merges attack
//! outputs into a plot-ready CSV.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use webgraph_lab_core::attack::parse_policy;
use webgraph_lab_core::corpus::CorpusSpec;
use webgraph_lab_core::features::FeatureSetId;
use webgraph_lab_core::graph::GraphConfig;
use webgraph_lab_core::model::Hyperparams;
use webgraph_lab_core::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "webgraph-lab", version, about = "Page-graph tracker detection laboratory")]
struct Cli {
    /// JSON config file providing subcommand options; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-page work (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArg {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace corpus with ground truth and filter rules.
    Gen {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pages: Option<usize>,
    },
    /// Build page graphs from a corpus of traces.
    Build {
        #[command(flatten)]
        out: OutArg,
        /// Corpus directory (or any directory of page_<i>.jsonl traces).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Minimum stored-value length for shared-value matching.
        #[arg(long)]
        min_value_len: Option<usize>,
    },
    /// Extract feature matrices from page graphs.
    Features {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long, value_parser = parse_feature_set)]
        feature_set: Option<FeatureSetId>,
        /// Filter rules used to fill the label column.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Label network nodes with filter rules.
    Label {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Train a tree-ensemble classifier.
    Train {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_parser = parse_feature_set)]
        feature_set: Option<FeatureSetId>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_trees: Option<usize>,
        #[arg(long)]
        max_depth: Option<usize>,
    },
    /// Page-disjoint k-fold evaluation with feature importances.
    Eval {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_parser = parse_feature_set)]
        feature_set: Option<FeatureSetId>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_trees: Option<usize>,
        #[arg(long)]
        max_depth: Option<usize>,
    },
    /// Content-mutation attack against a trained model.
    AttackContent {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated mutation kinds
        /// (domain,subdomain,both,query_count,query_names,query_values).
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        collusion: bool,
        #[arg(long)]
        careless: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Greedy structure-mutation attack against a trained model.
    AttackStructure {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Content mutations applied before the structure search.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        growth_cap: Option<f64>,
        #[arg(long)]
        l_t: Option<usize>,
        #[arg(long)]
        collusion: bool,
        #[arg(long)]
        careless: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        sample_per_bin: Option<usize>,
        #[arg(long)]
        max_nodes: Option<usize>,
    },
    /// Merge per-page attack reports into one CSV.
    Report {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        attacks: Option<PathBuf>,
    },
}

fn parse_feature_set(s: &str) -> Result<FeatureSetId, String> {
    FeatureSetId::parse(s).ok_or_else(|| {
        format!(
            "unknown feature set `{s}` (expected one of {})",
            FeatureSetId::ALL.map(|f| f.as_str()).join(", ")
        )
    })
}

/// Loads the stage section from the config file, if any. The file either
/// holds the stage config directly or an object keyed by subcommand name.
fn config_section<T: DeserializeOwned>(
    path: Option<&PathBuf>,
    key: &str,
) -> Result<Option<T>, PipelineError> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Usage(format!("reading --config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Usage(format!("parsing --config {}: {e}", path.display())))?;
    let section = value.get(key).cloned().unwrap_or(value);
    serde_json::from_value(section)
        .map(Some)
        .map_err(|e| PipelineError::Usage(format!("config section `{key}`: {e}")))
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, PipelineError> {
    value.ok_or_else(|| PipelineError::Usage(format!("missing --{flag} (or config entry)")))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Gen { out, seed, pages } => {
            let base: Option<pipeline::GenCfg> = config_section(cli.config.as_ref(), "gen")?;
            let mut spec = base.map(|c| c.spec).unwrap_or_else(|| CorpusSpec::small(100, 0));
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if let Some(pages) = pages {
                spec.n_pages = pages;
            }
            pipeline::run_gen(&pipeline::GenCfg { spec }, &out.out)
        }
        Command::Build { out, corpus, min_value_len } => {
            let base: Option<pipeline::BuildCfg> = config_section(cli.config.as_ref(), "build")?;
            let mut cfg = match base {
                Some(cfg) => cfg,
                None => pipeline::BuildCfg {
                    corpus: required(corpus.clone(), "corpus")?,
                    graph: GraphConfig::default(),
                },
            };
            if let Some(corpus) = corpus {
                cfg.corpus = corpus;
            }
            if let Some(min) = min_value_len {
                cfg.graph.min_value_len = min;
            }
            pipeline::run_build(&cfg, &out.out)
        }
        Command::Features { out, graphs, feature_set, rules } => {
            let base: Option<pipeline::FeaturesCfg> =
                config_section(cli.config.as_ref(), "features")?;
            let mut cfg = match base {
                Some(cfg) => cfg,
                None => pipeline::FeaturesCfg {
                    graphs: required(graphs.clone(), "graphs")?,
                    feature_set: required(feature_set, "feature-set")?,
                    rules: None,
                    keywords: None,
                    suffixes: None,
                },
            };
            if let Some(graphs) = graphs {
                cfg.graphs = graphs;
            }
            if let Some(set) = feature_set {
                cfg.feature_set = set;
            }
            if let Some(rules) = rules {
                cfg.rules = Some(rules);
            }
            pipeline::run_features(&cfg, &out.out)
        }
        Command::Label { out, graphs, rules } => {
            let base: Option<pipeline::LabelCfg> = config_section(cli.config.as_ref(), "label")?;
            let mut cfg = match base {
                Some(cfg) => cfg,
                None => pipeline::LabelCfg {
                    graphs: required(graphs.clone(), "graphs")?,
                    rules: required(rules.clone(), "rules")?,
                    suffixes: None,
                },
            };
            if let Some(graphs) = graphs {
                cfg.graphs = graphs;
            }
            if let Some(rules) = rules {
                cfg.rules = rules;
            }
            pipeline::run_label(&cfg, &out.out)
        }
        Command::Train { out, features, labels, feature_set, seed, n_trees, max_depth } => {
            let base: Option<pipeline::TrainCfg> = config_section(cli.config.as_ref(), "train")?;
            let mut cfg = match base {
                Some(cfg) => cfg,
                None => pipeline::TrainCfg {
                    features: required(features.clone(), "features")?,
                    labels: None,
                    feature_set: required(feature_set, "feature-set")?,
                    hyperparams: Hyperparams::default(),
                    seed: required(seed, "seed")?,
                },
            };
            if let Some(features) = features {
                cfg.features = features;
            }
            if let Some(labels) = labels {
                cfg.labels = Some(labels);
            }
            if let Some(set) = feature_set {
                cfg.feature_set = set;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(n) = n_trees {
                cfg.hyperparams.n_trees = n;
            }
            if let Some(d) = max_depth {
                cfg.hyperparams.max_depth = d;
            }
            pipeline::run_train(&cfg, &out.out)
        }
        Command::Eval { out, features, labels, feature_set, k, seed, n_trees, max_depth } => {
            let base: Option<pipeline::EvalCfg> = config_section(cli.config.as_ref(), "eval")?;
            let mut cfg = match base {
                Some(cfg) => cfg,
                None => pipeline::EvalCfg {
                    features: required(features.clone(), "features")?,
                    labels: None,
                    feature_set: required(feature_set, "feature-set")?,
                    hyperparams: Hyperparams::default(),
                    k: 10,
                    seed: required(seed, "seed")?,
                },
            };
            if let Some(features) = features {
                cfg.features = features;
            }
            if let Some(labels) = labels {
                cfg.labels = Some(labels);
            }
            if let Some(set) = feature_set {
                cfg.feature_set = set;
            }
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(n) = n_trees {
                cfg.hyperparams.n_trees = n;
            }
            if let Some(d) = max_depth {
                cfg.hyperparams.max_depth = d;
            }
            pipeline::run_eval(&cfg, &out.out)
        }
        Command::AttackContent { out, graphs, model, policy, collusion, careless, seed } => {
            let base: Option<pipeline::AttackContentCfg> =
                config_section(cli.config.as_ref(), "attack_content")?;
            let mut cfg = match base {
                Some(cfg) => cfg,
                None => pipeline::AttackContentCfg {
                    graphs: required(graphs.clone(), "graphs")?,
                    model: required(model.clone(), "model")?,
                    policy: parse_policy(policy.as_deref().unwrap_or("domain,subdomain"))
                        .map_err(PipelineError::Usage)?,
                    collusion: false,
                    careless: false,
                    seed: required(seed, "seed")?,
                    suffixes: None,
                    keywords: None,
                },
            };
            if let Some(graphs) = graphs {
                cfg.graphs = graphs;
            }
            if let Some(model) = model {
                cfg.model = model;
            }
            if let Some(policy) = policy {
                cfg.policy = parse_policy(&policy).map_err(PipelineError::Usage)?;
            }
            if collusion {
                cfg.collusion = true;
            }
            if careless {
                cfg.careless = true;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            pipeline::run_attack_content(&cfg, &out.out)
        }
        Command::AttackStructure {
            out,
            graphs,
            model,
            policy,
            max_iter,
            growth_cap,
            l_t,
            collusion,
            careless,
            seed,
            bins,
            sample_per_bin,
            max_nodes,
        } => {
            let base: Option<pipeline::AttackStructureCfg> =
                config_section(cli.config.as_ref(), "attack_structure")?;
            let mut cfg = match base {
                Some(cfg) => cfg,
                None => pipeline::AttackStructureCfg {
                    graphs: required(graphs.clone(), "graphs")?,
                    model: required(model.clone(), "model")?,
                    policy: Default::default(),
                    max_iter: 20,
                    growth_cap: 0.2,
                    l_t: None,
                    collusion: false,
                    careless: false,
                    seed: required(seed, "seed")?,
                    bins: 5,
                    sample_per_bin: 20,
                    max_nodes: 250,
                    suffixes: None,
                    keywords: None,
                },
            };
            if let Some(graphs) = graphs {
                cfg.graphs = graphs;
            }
            if let Some(model) = model {
                cfg.model = model;
            }
            if let Some(policy) = policy {
                cfg.policy = parse_policy(&policy).map_err(PipelineError::Usage)?;
            }
            if let Some(v) = max_iter {
                cfg.max_iter = v;
            }
            if let Some(v) = growth_cap {
                cfg.growth_cap = v;
            }
            if let Some(v) = l_t {
                cfg.l_t = Some(v);
            }
            if collusion {
                cfg.collusion = true;
            }
            if careless {
                cfg.careless = true;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(v) = bins {
                cfg.bins = v;
            }
            if let Some(v) = sample_per_bin {
                cfg.sample_per_bin = v;
            }
            if let Some(v) = max_nodes {
                cfg.max_nodes = v;
            }
            pipeline::run_attack_structure(&cfg, &out.out)
        }
        Command::Report { out, attacks } => {
            let base: Option<pipeline::ReportCfg> = config_section(cli.config.as_ref(), "report")?;
            let mut cfg = match base {
                Some(cfg) => cfg,
                None => pipeline::ReportCfg { attacks: required(attacks.clone(), "attacks")? },
            };
            if let Some(attacks) = attacks {
                cfg.attacks = attacks;
            }
            pipeline::run_report(&cfg, &out.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("WEBGRAPH_LAB_LOG", "warn"),
    )
    .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not usage errors.
            if err.use_stderr() {
                eprintln!("{err}");
                return ExitCode::from(1);
            }
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };
    if cli.jobs > 0 {
        if let Err(err) =
            rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global()
        {
            eprintln!("failed to size worker pool: {err}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
