//! Pipeline stages behind the CLI subcommands. Every stage reads artifacts
//! from disk, works per page (in parallel when a rayon pool is configured),
//! and writes its outputs atomically together with an echo of the resolved
//! configuration. Outputs contain no timestamps and are byte-identical across
//! reruns with the same configuration.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    greedy_attack, metrics_from_counts, pick_adversary, run_content_attack, AdversaryScope,
    AttackMetrics, ContentAttackConfig, ContentAttackReport, GreedyAttackConfig,
    GreedyAttackReport, MutationPolicy, SwitchCounts, SynthUrlMode,
};
use crate::corpus::{generate_corpus, CorpusSpec};
use crate::domains::SuffixList;
use crate::eventlog::{parse_trace_str, validate_trace, write_jsonl};
use crate::features::{
    extract_matrix, matrix_from_csv, matrix_to_csv, FeatureConfig, FeatureSetId,
};
use crate::graph::{build_graph, from_json as graph_from_json, to_json as graph_to_json, GraphConfig, PageGraph};
use crate::labels::{label_graph, labels_from_csv, labels_to_csv, parse_rules};
use crate::model::{
    cross_validate, feature_importance, model_from_json, model_to_json, train, DataRow, Dataset,
    Hyperparams, TreeEnsembleModel,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad invocation: missing paths, unknown names. Exit code 1.
    #[error("usage error: {0}")]
    Usage(String),
    /// Malformed or inconsistent input data. Exit code 2.
    #[error("data error: {0}")]
    Data(String),
    /// A broken internal invariant. Exit code 3.
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Internal(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(context: &str, err: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(format!("{context}: {err}"))
}

/// Writes through a temp file in the target directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| PipelineError::Internal(format!("no parent for {}", path.display())))?;
    fs::create_dir_all(dir).map_err(|e| io_err("creating output directory", e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| io_err("creating temp file", e))?;
    tmp.write_all(bytes).map_err(|e| io_err("writing temp file", e))?;
    tmp.persist(path).map_err(|e| io_err("renaming temp file", e))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Internal(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(&format!("reading {}", path.display()), e))
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn echo_config<T: Serialize>(out: &Path, cfg: &T) -> Result<()> {
    write_json(&out.join("resolved_config.json"), cfg)
}

/// Page index extracted from a `page_<i>.<ext>` file name.
fn page_index(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    stem.strip_prefix("page_")?.parse().ok()
}

fn numbered_files(dir: &Path, ext: &str) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| io_err(&format!("listing {}", dir.display()), e))?;
    for entry in entries {
        let path = entry.map_err(|e| io_err("reading directory entry", e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(idx) = page_index(&path) {
                out.push((idx, path));
            }
        }
    }
    out.sort_by_key(|(idx, _)| *idx);
    Ok(out)
}

fn load_suffixes(path: Option<&Path>) -> Result<SuffixList> {
    match path {
        None => Ok(SuffixList::default()),
        Some(p) => {
            require_exists(p, "suffix list")?;
            Ok(SuffixList::parse(&read_to_string(p)?))
        }
    }
}

fn feature_config(keywords: Option<&Path>, suffixes: Option<&Path>) -> Result<FeatureConfig> {
    let mut cfg = FeatureConfig { psl: load_suffixes(suffixes)?, ..FeatureConfig::default() };
    if let Some(path) = keywords {
        require_exists(path, "keyword list")?;
        cfg.ad_keywords = read_to_string(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// gen

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenCfg {
    #[serde(flatten)]
    pub spec: CorpusSpec,
}

/// Generates `manifest.json`, `pages/page_<i>.jsonl`, `labels.csv`, and
/// `rules.txt` under `out`.
pub fn run_gen(cfg: &GenCfg, out: &Path) -> Result<()> {
    let corpus = generate_corpus(&cfg.spec);
    echo_config(out, cfg)?;
    for (page, (trace, _)) in corpus.manifest.pages.iter().zip(&corpus.pages) {
        atomic_write(&out.join(&page.file), write_jsonl(trace).as_bytes())?;
    }
    let mut labels = csv::Writer::from_writer(Vec::new());
    labels
        .write_record(["page", "request_id", "label"])
        .map_err(|e| PipelineError::Internal(e.to_string()))?;
    for (page, (_, truth)) in corpus.manifest.pages.iter().zip(&corpus.pages) {
        for (request_id, ats) in &truth.labels {
            labels
                .write_record([
                    format!("page_{}", page.index),
                    request_id.clone(),
                    if *ats { "1".to_string() } else { "0".to_string() },
                ])
                .map_err(|e| PipelineError::Internal(e.to_string()))?;
        }
    }
    let labels_bytes =
        labels.into_inner().map_err(|e| PipelineError::Internal(e.to_string()))?;
    atomic_write(&out.join("labels.csv"), &labels_bytes)?;
    atomic_write(&out.join("rules.txt"), corpus.rules_text.as_bytes())?;
    write_json(&out.join("manifest.json"), &corpus.manifest)?;
    log::info!("generated {} pages under {}", corpus.pages.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// build

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildCfg {
    pub corpus: PathBuf,
    #[serde(default)]
    pub graph: GraphConfig,
}

/// Builds one graph per trace into `graphs/page_<i>.json`. Traces with
/// validation diagnostics abort the stage.
pub fn run_build(cfg: &BuildCfg, out: &Path) -> Result<()> {
    require_exists(&cfg.corpus, "corpus directory")?;
    let pages_dir = cfg.corpus.join("pages");
    let files = if pages_dir.exists() {
        numbered_files(&pages_dir, "jsonl")?
    } else {
        numbered_files(&cfg.corpus, "jsonl")?
    };
    if files.is_empty() {
        return Err(PipelineError::Usage(format!(
            "no page_<i>.jsonl traces under {}",
            cfg.corpus.display()
        )));
    }
    echo_config(out, cfg)?;
    let results: Vec<Result<(usize, String)>> = files
        .par_iter()
        .map(|(idx, path)| {
            let text = read_to_string(path)?;
            let trace = parse_trace_str(&text)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
            let diagnostics = validate_trace(&trace);
            if !diagnostics.is_empty() {
                return Err(PipelineError::Data(format!(
                    "{}: {} diagnostics, first: {}",
                    path.display(),
                    diagnostics.len(),
                    diagnostics[0]
                )));
            }
            if let Err(msg) =
                crate::eventlog::check_first_party(&trace, &SuffixList::default())
            {
                log::warn!("{}: {msg}", path.display());
            }
            let graph = build_graph(&trace, &cfg.graph);
            graph
                .check_edge_domains()
                .map_err(PipelineError::Internal)?;
            Ok((*idx, graph_to_json(&graph)))
        })
        .collect();
    for result in results {
        let (idx, json) = result?;
        atomic_write(&out.join(format!("graphs/page_{idx}.json")), json.as_bytes())?;
    }
    log::info!("built {} graphs under {}", files.len(), out.display());
    Ok(())
}

fn load_graphs(dir: &Path) -> Result<Vec<(usize, PageGraph)>> {
    let graphs_dir = if dir.join("graphs").exists() { dir.join("graphs") } else { dir.to_path_buf() };
    let files = numbered_files(&graphs_dir, "json")?;
    if files.is_empty() {
        return Err(PipelineError::Usage(format!(
            "no page_<i>.json graphs under {}",
            dir.display()
        )));
    }
    files
        .into_iter()
        .map(|(idx, path)| {
            let graph = graph_from_json(&read_to_string(&path)?)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
            Ok((idx, graph))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// features

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturesCfg {
    pub graphs: PathBuf,
    pub feature_set: FeatureSetId,
    /// When set, the label column is filled by rule matching; otherwise -1.
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default)]
    pub keywords: Option<PathBuf>,
    #[serde(default)]
    pub suffixes: Option<PathBuf>,
}

/// Extracts one matrix CSV per page into `features/page_<i>.csv`.
pub fn run_features(cfg: &FeaturesCfg, out: &Path) -> Result<()> {
    let graphs = load_graphs(&cfg.graphs)?;
    let fcfg = feature_config(cfg.keywords.as_deref(), cfg.suffixes.as_deref())?;
    let rules = match &cfg.rules {
        None => None,
        Some(path) => {
            require_exists(path, "rule file")?;
            Some(
                parse_rules(&read_to_string(path)?)
                    .map_err(|e| PipelineError::Data(e.to_string()))?,
            )
        }
    };
    echo_config(out, cfg)?;
    let results: Vec<Result<(usize, String)>> = graphs
        .par_iter()
        .map(|(idx, graph)| {
            let matrix = extract_matrix(graph, cfg.feature_set, &fcfg);
            let labels = rules.as_ref().map(|rules| {
                let (labeled, _) = label_graph(graph, rules, &fcfg.psl);
                labeled.into_iter().map(|l| (l.node_id, l.ats)).collect()
            });
            Ok((*idx, matrix_to_csv(&matrix, labels.as_ref())))
        })
        .collect();
    for result in results {
        let (idx, csv) = result?;
        atomic_write(&out.join(format!("features/page_{idx}.csv")), csv.as_bytes())?;
    }
    log::info!("extracted {} feature matrices under {}", graphs.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// label

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelCfg {
    pub graphs: PathBuf,
    pub rules: PathBuf,
    #[serde(default)]
    pub suffixes: Option<PathBuf>,
}

/// Labels every graph's network nodes into `labels/page_<i>.csv`.
pub fn run_label(cfg: &LabelCfg, out: &Path) -> Result<()> {
    let graphs = load_graphs(&cfg.graphs)?;
    require_exists(&cfg.rules, "rule file")?;
    let rules = parse_rules(&read_to_string(&cfg.rules)?)
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    let psl = load_suffixes(cfg.suffixes.as_deref())?;
    echo_config(out, cfg)?;
    for (idx, graph) in &graphs {
        let (labeled, diagnostics) = label_graph(graph, &rules, &psl);
        for d in diagnostics {
            log::warn!("page_{idx}: {d}");
        }
        atomic_write(
            &out.join(format!("labels/page_{idx}.csv")),
            labels_to_csv(&labeled).as_bytes(),
        )?;
    }
    log::info!("labeled {} graphs under {}", graphs.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train / eval

fn load_dataset(
    features_dir: &Path,
    labels_dir: Option<&Path>,
    set: FeatureSetId,
) -> Result<Dataset> {
    let fdir = if features_dir.join("features").exists() {
        features_dir.join("features")
    } else {
        features_dir.to_path_buf()
    };
    let files = numbered_files(&fdir, "csv")?;
    if files.is_empty() {
        return Err(PipelineError::Usage(format!(
            "no page_<i>.csv matrices under {}",
            features_dir.display()
        )));
    }
    let mut rows = Vec::new();
    let mut names: Option<Vec<String>> = None;
    for (idx, path) in files {
        let (matrix, inline_labels) = matrix_from_csv(&read_to_string(&path)?, set)
            .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
        if names.is_none() {
            names = Some(matrix.names.clone());
        }
        let page_id = format!("page_{idx}");
        let label_map: std::collections::BTreeMap<usize, bool> = match labels_dir {
            Some(dir) => {
                let ldir = if dir.join("labels").exists() { dir.join("labels") } else { dir.to_path_buf() };
                let lpath = ldir.join(format!("page_{idx}.csv"));
                require_exists(&lpath, "label file")?;
                labels_from_csv(&read_to_string(&lpath)?)
                    .map_err(PipelineError::Data)?
                    .into_iter()
                    .map(|l| (l.node_id, l.ats))
                    .collect()
            }
            None => inline_labels
                .iter()
                .filter_map(|(&id, l)| l.map(|l| (id, l)))
                .collect(),
        };
        for row in matrix.rows {
            let ats = label_map.get(&row.node_id).copied().ok_or_else(|| {
                PipelineError::Data(format!(
                    "{page_id}: node {} has no label; run `label` or pass --rules to `features`",
                    row.node_id
                ))
            })?;
            rows.push(DataRow { page_id: page_id.clone(), node_id: row.node_id, values: row.values, ats });
        }
    }
    Ok(Dataset {
        feature_set: set,
        feature_names: names.unwrap_or_default(),
        rows,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainCfg {
    pub features: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    pub feature_set: FeatureSetId,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainSummary {
    feature_set: FeatureSetId,
    rows: usize,
    class_counts: [usize; 2],
    seed: u64,
}

/// Trains a model on every labeled row and writes `model.json`.
pub fn run_train(cfg: &TrainCfg, out: &Path) -> Result<()> {
    let dataset = load_dataset(&cfg.features, cfg.labels.as_deref(), cfg.feature_set)?;
    let model = train(&dataset, &cfg.hyperparams, cfg.seed)
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    echo_config(out, cfg)?;
    atomic_write(&out.join("model.json"), model_to_json(&model).as_bytes())?;
    write_json(
        &out.join("train_summary.json"),
        &TrainSummary {
            feature_set: cfg.feature_set,
            rows: dataset.rows.len(),
            class_counts: model.class_counts,
            seed: cfg.seed,
        },
    )?;
    log::info!("trained on {} rows", dataset.rows.len());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCfg {
    pub features: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    pub feature_set: FeatureSetId,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default = "default_k")]
    pub k: usize,
    pub seed: u64,
}

fn default_k() -> usize {
    10
}

/// Page-disjoint k-fold evaluation plus fold-averaged feature importances.
/// Writes `eval_report.json/.csv` and `importance.json/.csv`.
pub fn run_eval(cfg: &EvalCfg, out: &Path) -> Result<()> {
    let dataset = load_dataset(&cfg.features, cfg.labels.as_deref(), cfg.feature_set)?;
    let (report, models) = cross_validate(&dataset, &cfg.hyperparams, cfg.k, cfg.seed)
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    let importance = feature_importance(&models);
    echo_config(out, cfg)?;
    write_json(&out.join("eval_report.json"), &report)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fold", "accuracy_pct", "precision_pct", "recall_pct", "tp", "fp", "tn", "fn"])
        .map_err(|e| PipelineError::Internal(e.to_string()))?;
    for fold in &report.folds {
        w.write_record([
            fold.fold.to_string(),
            format!("{:.4}", fold.accuracy_pct),
            format!("{:.4}", fold.precision_pct),
            format!("{:.4}", fold.recall_pct),
            fold.confusion.tp.to_string(),
            fold.confusion.fp.to_string(),
            fold.confusion.tn.to_string(),
            fold.confusion.fn_.to_string(),
        ])
        .map_err(|e| PipelineError::Internal(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Internal(e.to_string()))?;
    atomic_write(&out.join("eval_report.csv"), &bytes)?;
    write_json(&out.join("importance.json"), &importance)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["feature", "category", "information_gain_mean_pct", "information_gain_std_pct"])
        .map_err(|e| PipelineError::Internal(e.to_string()))?;
    for entry in &importance.entries {
        w.write_record([
            entry.feature.clone(),
            entry.category.clone(),
            format!("{:.6}", entry.mean_pct),
            format!("{:.6}", entry.std_pct),
        ])
        .map_err(|e| PipelineError::Internal(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Internal(e.to_string()))?;
    atomic_write(&out.join("importance.csv"), &bytes)?;
    log::info!(
        "eval: accuracy {:.2} +- {:.2}%, precision {:.2} +- {:.2}%, recall {:.2} +- {:.2}%",
        report.accuracy_mean_pct,
        report.accuracy_std_pct,
        report.precision_mean_pct,
        report.precision_std_pct,
        report.recall_mean_pct,
        report.recall_std_pct
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<TreeEnsembleModel> {
    require_exists(path, "model file")?;
    model_from_json(&read_to_string(path)?)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// attacks

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackContentCfg {
    pub graphs: PathBuf,
    pub model: PathBuf,
    pub policy: MutationPolicy,
    #[serde(default)]
    pub collusion: bool,
    #[serde(default)]
    pub careless: bool,
    pub seed: u64,
    #[serde(default)]
    pub suffixes: Option<PathBuf>,
    #[serde(default)]
    pub keywords: Option<PathBuf>,
}

/// Pooled switch counts over all attacked pages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSummary {
    pub pages: usize,
    pub pages_without_adversary_ats: usize,
    pub counts: SwitchCounts,
    pub metrics: AttackMetrics,
}

fn pool_metrics(
    all: impl Iterator<Item = AttackMetrics>,
    careless: bool,
) -> (SwitchCounts, AttackMetrics) {
    let mut total = SwitchCounts::default();
    for m in all {
        total.ats_adv += m.counts.ats_adv;
        total.non_ats_adv += m.counts.non_ats_adv;
        total.ats_web += m.counts.ats_web;
        total.non_ats_web += m.counts.non_ats_web;
        total.desired += m.counts.desired;
        total.undesired += m.counts.undesired;
        total.neutral += m.counts.neutral;
    }
    (total, metrics_from_counts(total, careless))
}

/// Runs the content-mutation attack on every page, each against the third
/// party with the most ATS-classified resources.
pub fn run_attack_content(cfg: &AttackContentCfg, out: &Path) -> Result<()> {
    let graphs = load_graphs(&cfg.graphs)?;
    let model = load_model(&cfg.model)?;
    let fcfg = feature_config(cfg.keywords.as_deref(), cfg.suffixes.as_deref())?;
    echo_config(out, cfg)?;
    let reports: Vec<Result<(usize, Option<ContentAttackReport>)>> = graphs
        .par_iter()
        .map(|(idx, graph)| {
            let report = attack_content_page(graph, &model, cfg, &fcfg)
                .map_err(|e| PipelineError::Data(format!("page_{idx}: {e}")))?;
            Ok((*idx, report))
        })
        .collect();
    let mut collected = Vec::new();
    for r in reports {
        let (idx, report) = r?;
        if let Some(report) = &report {
            write_json(&out.join(format!("attacks/page_{idx}.json")), report)?;
        }
        collected.push((idx, report));
    }
    let attacked: Vec<&ContentAttackReport> =
        collected.iter().filter_map(|(_, r)| r.as_ref()).collect();
    let (counts, metrics) =
        pool_metrics(attacked.iter().map(|r| r.metrics), cfg.careless);
    let summary = AttackSummary {
        pages: attacked.len(),
        pages_without_adversary_ats: attacked.iter().filter(|r| r.no_adversary_ats).count(),
        counts,
        metrics,
    };
    write_json(&out.join("summary.json"), &summary)?;
    log::info!(
        "content attack over {} pages: success {:?}",
        summary.pages,
        summary.metrics.success_rate_pct
    );
    Ok(())
}

fn attack_content_page(
    graph: &PageGraph,
    model: &TreeEnsembleModel,
    cfg: &AttackContentCfg,
    fcfg: &FeatureConfig,
) -> std::result::Result<Option<ContentAttackReport>, crate::attack::AttackError> {
    let pre = crate::attack::predict_graph(graph, model, fcfg)?;
    let Some(domain) = pick_adversary(graph, &pre, &fcfg.psl) else {
        return Ok(None);
    };
    let scope = AdversaryScope::for_domain(graph, &domain, &fcfg.psl);
    let attack_cfg = ContentAttackConfig {
        policy: cfg.policy.clone(),
        collusion: cfg.collusion,
        careless: cfg.careless,
        seed: cfg.seed,
    };
    run_content_attack(graph, model, &scope, &attack_cfg, fcfg).map(Some)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackStructureCfg {
    pub graphs: PathBuf,
    pub model: PathBuf,
    /// Content mutations applied to adversary URLs before the structure
    /// search; empty means structure mutations only.
    #[serde(default)]
    pub policy: MutationPolicy,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_growth_cap")]
    pub growth_cap: f64,
    #[serde(default, rename = "l_T")]
    pub l_t: Option<usize>,
    #[serde(default)]
    pub collusion: bool,
    #[serde(default)]
    pub careless: bool,
    pub seed: u64,
    /// Size bins for the page-selection harness.
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_sample_per_bin")]
    pub sample_per_bin: usize,
    /// Pages larger than this are excluded.
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
    #[serde(default)]
    pub suffixes: Option<PathBuf>,
    #[serde(default)]
    pub keywords: Option<PathBuf>,
}

fn default_max_iter() -> usize {
    20
}
fn default_growth_cap() -> f64 {
    0.2
}
fn default_bins() -> usize {
    5
}
fn default_sample_per_bin() -> usize {
    20
}
fn default_max_nodes() -> usize {
    250
}

/// Sorts eligible pages by size, cuts them into `bins` equal slices, and
/// samples the same number from each slice.
fn select_pages(
    graphs: &[(usize, PageGraph)],
    cfg: &AttackStructureCfg,
) -> Vec<usize> {
    let mut eligible: Vec<(usize, usize)> = graphs
        .iter()
        .filter(|(_, g)| g.node_count() <= cfg.max_nodes && g.node_count() > 0)
        .map(|(idx, g)| (*idx, g.node_count()))
        .collect();
    eligible.sort_by_key(|&(idx, nodes)| (nodes, idx));
    if eligible.is_empty() {
        return Vec::new();
    }
    let bins = cfg.bins.max(1);
    let chunk = eligible.len().div_ceil(bins);
    let mut chosen = Vec::new();
    for (b, slice) in eligible.chunks(chunk).enumerate() {
        let mut rng = crate::seed::stream(cfg.seed, "bin", b as u64);
        let mut items: Vec<usize> = slice.iter().map(|&(idx, _)| idx).collect();
        let take = cfg.sample_per_bin.min(items.len());
        for i in 0..take {
            let j = rand::Rng::gen_range(&mut rng, i..items.len());
            items.swap(i, j);
        }
        chosen.extend(items.into_iter().take(take));
    }
    chosen.sort_unstable();
    chosen
}

/// Runs the greedy structure-mutation attack over the sampled pages and
/// writes per-page reports, per-iteration trajectories, and a pooled summary.
pub fn run_attack_structure(cfg: &AttackStructureCfg, out: &Path) -> Result<()> {
    let graphs = load_graphs(&cfg.graphs)?;
    let model = load_model(&cfg.model)?;
    let fcfg = feature_config(cfg.keywords.as_deref(), cfg.suffixes.as_deref())?;
    echo_config(out, cfg)?;
    let selected = select_pages(&graphs, cfg);
    let by_index: std::collections::BTreeMap<usize, &PageGraph> =
        graphs.iter().map(|(idx, g)| (*idx, g)).collect();
    let reports: Vec<Result<(usize, Option<GreedyAttackReport>)>> = selected
        .par_iter()
        .map(|idx| {
            let graph = by_index[idx];
            let report = attack_structure_page(graph, &model, cfg, &fcfg)
                .map_err(|e| PipelineError::Data(format!("page_{idx}: {e}")))?;
            Ok((*idx, report))
        })
        .collect();
    let mut collected = Vec::new();
    for r in reports {
        let (idx, report) = r?;
        if let Some(report) = &report {
            write_json(&out.join(format!("attacks/page_{idx}.json")), report)?;
            atomic_write(
                &out.join(format!("attacks/page_{idx}_trajectory.csv")),
                trajectory_csv(report)?.as_bytes(),
            )?;
        }
        collected.push((idx, report));
    }
    let attacked: Vec<&GreedyAttackReport> =
        collected.iter().filter_map(|(_, r)| r.as_ref()).collect();
    let (counts, metrics) =
        pool_metrics(attacked.iter().map(|r| r.metrics), cfg.careless);
    let summary = AttackSummary {
        pages: attacked.len(),
        pages_without_adversary_ats: attacked.iter().filter(|r| r.no_adversary_ats).count(),
        counts,
        metrics,
    };
    write_json(&out.join("summary.json"), &summary)?;
    log::info!(
        "structure attack over {} pages: success {:?}",
        summary.pages,
        summary.metrics.success_rate_pct
    );
    Ok(())
}

fn attack_structure_page(
    graph: &PageGraph,
    model: &TreeEnsembleModel,
    cfg: &AttackStructureCfg,
    fcfg: &FeatureConfig,
) -> std::result::Result<Option<GreedyAttackReport>, crate::attack::AttackError> {
    let pre = crate::attack::predict_graph(graph, model, fcfg)?;
    let Some(domain) = pick_adversary(graph, &pre, &fcfg.psl) else {
        return Ok(None);
    };
    let scope = AdversaryScope::for_domain(graph, &domain, &fcfg.psl);
    // The structure search starts from a content-mutated graph when a policy
    // is in force, so obfuscatable flows may already be severed.
    let (start, content_mutated_nodes) = if cfg.policy.is_empty() && !cfg.collusion {
        (graph.clone(), 0)
    } else {
        let content_cfg = ContentAttackConfig {
            policy: cfg.policy.clone(),
            collusion: cfg.collusion,
            careless: cfg.careless,
            seed: cfg.seed,
        };
        crate::attack::content_mutate_urls(graph, &pre, &scope, &content_cfg, &fcfg.psl)?
    };
    let uses_random_domains = cfg
        .policy
        .iter()
        .any(|k| matches!(k, crate::attack::UrlMutationKind::Domain | crate::attack::UrlMutationKind::Both));
    let attack_cfg = GreedyAttackConfig {
        max_iter: cfg.max_iter,
        growth_cap: cfg.growth_cap,
        l_t: cfg.l_t,
        collusion: cfg.collusion,
        careless: cfg.careless,
        synth_mode: if cfg.collusion {
            SynthUrlMode::FirstPartySubdomain
        } else if uses_random_domains {
            SynthUrlMode::RandomDomain
        } else {
            SynthUrlMode::AdversaryDomain
        },
        seed: cfg.seed,
    };
    let mut report = greedy_attack(&start, model, &scope, &attack_cfg, fcfg)?;
    report.content_mutated_nodes = content_mutated_nodes;
    Ok(Some(report))
}

fn trajectory_csv(report: &GreedyAttackReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "iteration",
        "candidates",
        "committed",
        "delta",
        "desired",
        "undesired",
        "node_count",
        "success_rate_pct",
        "collateral_damage_pct",
        "other_changes_pct",
    ])
    .map_err(|e| PipelineError::Internal(e.to_string()))?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for r in &report.trajectory {
        w.write_record([
            r.iteration.to_string(),
            r.candidates.to_string(),
            r.committed.clone(),
            r.delta.to_string(),
            r.desired.to_string(),
            r.undesired.to_string(),
            r.node_count.to_string(),
            fmt(r.success_rate_pct),
            fmt(r.collateral_damage_pct),
            fmt(r.other_changes_pct),
        ])
        .map_err(|e| PipelineError::Internal(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| PipelineError::Internal(e.to_string()))
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportCfg {
    pub attacks: PathBuf,
}

/// Merges per-page attack reports into one success-vs-collateral CSV.
pub fn run_report(cfg: &ReportCfg, out: &Path) -> Result<()> {
    let dir = if cfg.attacks.join("attacks").exists() {
        cfg.attacks.join("attacks")
    } else {
        cfg.attacks.clone()
    };
    let files = numbered_files(&dir, "json")?;
    if files.is_empty() {
        return Err(PipelineError::Usage(format!(
            "no page_<i>.json attack reports under {}",
            cfg.attacks.display()
        )));
    }
    echo_config(out, cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "page",
        "adversary",
        "feature_set",
        "ats_adv",
        "non_ats_adv",
        "ats_web",
        "non_ats_web",
        "desired",
        "undesired",
        "neutral",
        "success_rate_pct",
        "collateral_damage_pct",
        "other_changes_pct",
        "growth_used_pct",
    ])
    .map_err(|e| PipelineError::Internal(e.to_string()))?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for (idx, path) in files {
        let value: serde_json::Value = serde_json::from_str(&read_to_string(&path)?)
            .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
        let metrics: AttackMetrics =
            serde_json::from_value(value.get("metrics").cloned().unwrap_or_default())
                .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
        let growth = value.get("growth_used_pct").and_then(|v| v.as_f64());
        w.write_record([
            format!("page_{idx}"),
            value
                .get("adversary_domain")
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_string(),
            value
                .get("feature_set")
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_string(),
            metrics.counts.ats_adv.to_string(),
            metrics.counts.non_ats_adv.to_string(),
            metrics.counts.ats_web.to_string(),
            metrics.counts.non_ats_web.to_string(),
            metrics.counts.desired.to_string(),
            metrics.counts.undesired.to_string(),
            metrics.counts.neutral.to_string(),
            fmt(metrics.success_rate_pct),
            fmt(metrics.collateral_damage_pct),
            fmt(metrics.other_changes_pct),
            growth.map(|g| format!("{g:.4}")).unwrap_or_default(),
        ])
        .map_err(|e| PipelineError::Internal(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Internal(e.to_string()))?;
    atomic_write(&out.join("report.csv"), &bytes)?;
    Ok(())
}
