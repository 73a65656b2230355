//! Self-refinement: induce rules from successful matches, experiences from
//! failed ones, and search the parameter space for the best configuration.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest};
use crate::entity::{Decision, EntityPair};
use crate::harness::{self, DatasetSpec, MetricsReport, Mode, Objective, SourceFormat};
use crate::kernel::params::{self, ParamError, ParamValue, ParameterTree};
use crate::kernel::TraceScope;
use crate::knowledge::{KnowledgeEntry, KnowledgeKind};
use crate::matcher::{MatchPrediction, Matcher};
use crate::prepare::{prepare_pair, PrepareOptions};

/// Pairs sent to the model per rule/experience induction call.
pub const LEARN_BATCH: usize = 20;

pub const RULES_INSTRUCTION: &str = "You review entity matching decisions. The pairs below were all decided \
correctly. Write general matching rules that explain these decisions and would help on other pairs of the same \
kind. Write one rule per line, with no numbering and no other text.";

pub const EXPERIENCES_INSTRUCTION: &str = "You review entity matching decisions. The pairs below were decided \
incorrectly. Write general mistakes to avoid so that similar pairs are decided correctly. Write one mistake to \
avoid per line, with no numbering and no other text.";

/// First line of the user message in rule and experience requests.
pub const RULES_HEADER: &str = "Pairs decided correctly:";
pub const EXPERIENCES_HEADER: &str = "Pairs decided incorrectly:";

pub type Overrides = BTreeMap<String, ParamValue>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuneError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training pair `{0}` has no label")]
    Unlabeled(String),
    #[error("budget must be at least 1")]
    InvalidBudget,
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("nothing to learn from")]
    EmptyInput,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchAxis {
    pub path: String,
    pub values: Vec<ParamValue>,
}

/// Axes of a parameter grid, read from `{"axes": [{"path": .., "values": [..]}]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub axes: Vec<SearchAxis>,
}

impl SearchSpace {
    pub fn new(axes: impl IntoIterator<Item = (String, Vec<ParamValue>)>) -> Self {
        Self {
            axes: axes.into_iter().map(|(path, values)| SearchAxis { path, values }).collect(),
        }
    }

    /// Checks every axis against `tree`: the path exists, the list is
    /// non-empty, each value is accepted by the declared kind, and no path
    /// repeats. Returns the values as the tree would store them.
    pub fn validate(&self, tree: &ParameterTree) -> Result<Self, TuneError> {
        let mut seen = BTreeSet::new();
        let mut axes = Vec::with_capacity(self.axes.len());
        for axis in &self.axes {
            if !seen.insert(axis.path.as_str()) {
                return Err(TuneError::InvalidSpace(format!("`{}` appears twice", axis.path)));
            }
            if axis.values.is_empty() {
                return Err(TuneError::InvalidSpace(format!("`{}` has no candidate values", axis.path)));
            }
            let mut values = Vec::with_capacity(axis.values.len());
            for v in &axis.values {
                let stored = tree
                    .set(&axis.path, v.clone())
                    .map_err(|e| TuneError::InvalidSpace(e.to_string()))?;
                values.push(stored.get(&axis.path)?.clone());
            }
            axes.push(SearchAxis {
                path: axis.path.clone(),
                values,
            });
        }
        let space = Self { axes };
        space.grid_size()?;
        Ok(space)
    }

    /// Product of the candidate list lengths (1 for no axes).
    pub fn grid_size(&self) -> Result<usize, TuneError> {
        self.axes.iter().try_fold(1usize, |acc, a| {
            acc.checked_mul(a.values.len())
                .ok_or_else(|| TuneError::InvalidSpace("grid too large".into()))
        })
    }

    /// Grid point `index` in mixed-radix order, the last axis varying fastest.
    pub fn point(&self, mut index: usize) -> Overrides {
        let mut out = Overrides::new();
        for axis in self.axes.iter().rev() {
            let n = axis.values.len();
            out.insert(axis.path.clone(), axis.values[index % n].clone());
            index /= n;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub overrides: Overrides,
    pub metrics: MetricsReport,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best_overrides: Overrides,
    pub best_score: f64,
    pub trials: Vec<Trial>,
    pub rules: Vec<KnowledgeEntry>,
    pub experiences: Vec<KnowledgeEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Rules,
    Experiences,
    Search,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "rules" => Ok(Strategy::Rules),
            "experiences" => Ok(Strategy::Experiences),
            "search" => Ok(Strategy::Search),
            other => Err(format!("unknown strategy {other:?} (expected rules, experiences or search)")),
        }
    }
}

/// Scores one parameter configuration.
pub trait Evaluator {
    /// Metrics for `tree`, or an error note when the trial failed.
    fn evaluate(&self, tree: &ParameterTree) -> Result<MetricsReport, String>;
}

/// Evaluates configurations by running the matcher over a labelled set.
/// A trial fails when any pair hits a backend error. Reported metrics carry
/// no latency figures.
pub struct MatcherEvaluator<'a> {
    pub matcher: &'a Matcher,
    pub train: &'a DatasetSpec,
    pub knowledge: &'a [KnowledgeEntry],
    pub parallelism: usize,
}

impl Evaluator for MatcherEvaluator<'_> {
    fn evaluate(&self, tree: &ParameterTree) -> Result<MetricsReport, String> {
        let result = harness::run_benchmark(
            self.train,
            self.matcher,
            tree,
            self.knowledge,
            Mode::Compound,
            self.parallelism,
        )
        .map_err(|e| e.to_string())?;
        let failed: Vec<_> = result.per_pair.iter().filter(|p| p.backend_failed()).collect();
        match failed.first() {
            // Wall-clock latency would make otherwise identical searches differ.
            None => Ok(MetricsReport {
                latency_ms_p50: 0.0,
                latency_ms_p95: 0.0,
                ..result.metrics
            }),
            Some(first) => Err(format!(
                "{} of {} pairs failed; first: {}",
                failed.len(),
                result.per_pair.len(),
                first.error.as_deref().unwrap_or_default()
            )),
        }
    }
}

fn rendered(overrides: &Overrides) -> Vec<(&str, String)> {
    overrides.iter().map(|(k, v)| (k.as_str(), v.render())).collect()
}

/// Index of the best trial: highest score, then fewest tokens, then the
/// lexicographically smallest overrides.
pub fn best_trial(trials: &[Trial]) -> Option<usize> {
    (0..trials.len()).reduce(|best, i| {
        let (a, b) = (&trials[best], &trials[i]);
        let better = b
            .score
            .total_cmp(&a.score)
            .then(a.metrics.tokens_total.cmp(&b.metrics.tokens_total))
            .then_with(|| rendered(&a.overrides).cmp(&rendered(&b.overrides)));
        if better.is_gt() {
            i
        } else {
            best
        }
    })
}

/// Evaluates the whole grid when it has at most `budget` points, otherwise
/// `budget` distinct points drawn uniformly with `seed`. Trials run one after
/// another in grid order, so results never depend on scheduling.
pub fn search_params(
    base: &ParameterTree,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    objective: Objective,
    evaluator: &dyn Evaluator,
) -> Result<(Overrides, Vec<Trial>), TuneError> {
    if budget == 0 {
        return Err(TuneError::InvalidBudget);
    }
    let space = space.validate(base)?;
    let grid = space.grid_size()?;
    let indices: Vec<usize> = if grid <= budget {
        (0..grid).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, grid, budget).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut trials = Vec::with_capacity(indices.len());
    for index in indices {
        let overrides = space.point(index);
        let tree = base.with_overrides(&overrides)?;
        let trial = match evaluator.evaluate(&tree) {
            Ok(metrics) => Trial {
                score: metrics.score(objective),
                overrides,
                metrics,
                error: None,
            },
            Err(note) => Trial {
                overrides,
                metrics: MetricsReport::default(),
                score: 0.0,
                error: Some(note),
            },
        };
        trials.push(trial);
    }
    let best = best_trial(&trials).expect("at least one trial");
    Ok((trials[best].overrides.clone(), trials))
}

fn describe_pair(pair: &EntityPair) -> String {
    prepare_pair(pair, &PrepareOptions::default()).render("\n")
}

fn strip_bullet(line: &str) -> &str {
    let line = line.trim();
    let line = line.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        if let Some(rest) = line[digits..].strip_prefix(['.', ')']) {
            return rest.trim_start();
        }
    }
    line
}

fn learn(
    kind: KnowledgeKind,
    items: &[(EntityPair, MatchPrediction)],
    backend: &dyn ChatBackend,
    tree: &ParameterTree,
    trace: &TraceScope,
) -> Result<Vec<KnowledgeEntry>, TuneError> {
    if items.is_empty() {
        return Err(TuneError::EmptyInput);
    }
    let (instruction, header) = match kind {
        KnowledgeKind::Rule => (RULES_INSTRUCTION, RULES_HEADER),
        KnowledgeKind::Experience => (EXPERIENCES_INSTRUCTION, EXPERIENCES_HEADER),
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for batch in items.chunks(LEARN_BATCH) {
        let blocks: Vec<String> = batch
            .iter()
            .map(|(pair, prediction)| {
                let mut block = format!("Pair {}:\n{}\nPredicted: {}", pair.id, describe_pair(pair), prediction.decision);
                if let Some(label) = pair.label {
                    block.push_str(&format!("\nCorrect: {label}"));
                }
                block
            })
            .collect();
        let request = ChatRequest {
            model: tree.text(params::MATCH_MODEL)?.to_string(),
            messages: vec![ChatMessage::system(instruction), ChatMessage::user(format!("{header}\n\n{}", blocks.join("\n\n")))],
            tools: Vec::new(),
            temperature: tree.number(params::MATCH_TEMPERATURE)?,
        };
        let reply = backend.complete(&request, trace)?;
        let source = batch.iter().map(|(p, _)| p.id.as_str()).collect::<Vec<_>>().join(",");
        for line in reply.message.content.lines() {
            let Some(entry) = KnowledgeEntry::new(kind, strip_bullet(line), source.clone()) else {
                continue;
            };
            if seen.insert(entry.text.to_lowercase()) {
                out.push(entry);
            }
        }
    }
    Ok(out)
}

/// Asks the model for general matching rules, one call per batch of at most
/// [`LEARN_BATCH`] correctly decided pairs. Each reply line becomes a rule;
/// case-insensitive duplicates are dropped.
pub fn learn_rules(
    successes: &[(EntityPair, MatchPrediction)],
    backend: &dyn ChatBackend,
    tree: &ParameterTree,
    trace: &TraceScope,
) -> Result<Vec<KnowledgeEntry>, TuneError> {
    learn(KnowledgeKind::Rule, successes, backend, tree, trace)
}

/// Like [`learn_rules`] over wrongly decided pairs, asking for mistakes to
/// avoid. False positives and false negatives go into the same prompt.
pub fn learn_experiences(
    failures: &[(EntityPair, MatchPrediction)],
    backend: &dyn ChatBackend,
    tree: &ParameterTree,
    trace: &TraceScope,
) -> Result<Vec<KnowledgeEntry>, TuneError> {
    learn(KnowledgeKind::Experience, failures, backend, tree, trace)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TuneConfig {
    pub strategies: BTreeSet<Strategy>,
    pub budget: usize,
    pub seed: u64,
    pub parallelism: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            strategies: BTreeSet::new(),
            budget: 16,
            seed: 0,
            parallelism: 1,
        }
    }
}

/// Split of a baseline run into correct and incorrect decisions. Pairs whose
/// match errored count as failures but carry no prediction.
#[derive(Debug, Clone, Default)]
pub struct Partition {
    pub successes: Vec<(EntityPair, MatchPrediction)>,
    pub failures: Vec<(EntityPair, MatchPrediction)>,
    pub errored: Vec<EntityPair>,
}

pub fn partition(
    train: &[EntityPair],
    results: Vec<Result<MatchPrediction, crate::matcher::MatchError>>,
) -> Partition {
    let mut out = Partition::default();
    for (pair, result) in train.iter().zip(results) {
        match result {
            Ok(p) if Some(p.decision) == pair.label => out.successes.push((pair.clone(), p)),
            Ok(p) => out.failures.push((pair.clone(), p)),
            Err(_) => out.errored.push(pair.clone()),
        }
    }
    out
}

/// Runs the matcher over `train` with the current parameters, learns from
/// the outcome with the selected strategies and, with `search`, evaluates
/// the space (together with any knowledge learned here). Without `search`
/// the single trial is the baseline run.
pub fn tune(
    matcher: &Matcher,
    tree: &ParameterTree,
    knowledge: &[KnowledgeEntry],
    train: &[EntityPair],
    space: &SearchSpace,
    config: &TuneConfig,
) -> Result<TuneOutcome, TuneError> {
    if train.is_empty() {
        return Err(TuneError::EmptyTrainingSet);
    }
    if let Some(p) = train.iter().find(|p| p.label.is_none()) {
        return Err(TuneError::Unlabeled(p.id.clone()));
    }
    if config.budget == 0 {
        return Err(TuneError::InvalidBudget);
    }
    let searching = config.strategies.contains(&Strategy::Search);
    if searching {
        space.validate(tree)?;
    }
    let objective = Objective::from_params(tree)?;
    let dataset = DatasetSpec::new("train", train.to_vec(), SourceFormat::Jsonl)
        .map_err(|e| TuneError::InvalidSpace(format!("training set: {e}")))?;

    let baseline = matcher.match_batch(train, tree, knowledge, config.parallelism);
    let baseline_error = baseline.iter().find_map(|r| match r {
        Err(crate::matcher::MatchError::Backend(e)) => Some(e.to_string()),
        _ => None,
    });
    let predictions: Vec<(String, Option<Decision>)> = train
        .iter()
        .zip(&baseline)
        .map(|(p, r)| (p.id.clone(), r.as_ref().ok().map(|m| m.decision)))
        .collect();
    let mut baseline_metrics = harness::evaluate(&predictions, &dataset.labels()).expect("ids come from train");
    baseline_metrics.tokens_total = baseline.iter().flatten().map(|m| m.tokens_total).sum();
    let parts = partition(train, baseline);

    let scope = TraceScope::new(matcher.trace().clone(), format!("tune-{}", uuid::Uuid::new_v4()));
    let backend = matcher.backend().as_ref();
    let mut rules = Vec::new();
    let mut experiences = Vec::new();
    if config.strategies.contains(&Strategy::Rules) && !parts.successes.is_empty() {
        rules = learn_rules(&parts.successes, backend, tree, &scope)?;
    }
    if config.strategies.contains(&Strategy::Experiences) && !parts.failures.is_empty() {
        experiences = learn_experiences(&parts.failures, backend, tree, &scope)?;
    }

    let trials = if searching {
        let learned: Vec<KnowledgeEntry> = knowledge.iter().chain(&rules).chain(&experiences).cloned().collect();
        let evaluator = MatcherEvaluator {
            matcher,
            train: &dataset,
            knowledge: &learned,
            parallelism: config.parallelism,
        };
        search_params(tree, space, config.budget, config.seed, objective, &evaluator)?.1
    } else {
        let (score, error) = match baseline_error {
            Some(e) => (0.0, Some(e)),
            None => (baseline_metrics.score(objective), None),
        };
        vec![Trial {
            overrides: Overrides::new(),
            metrics: baseline_metrics,
            score,
            error,
        }]
    };
    let best = best_trial(&trials).expect("at least one trial");
    Ok(TuneOutcome {
        best_overrides: trials[best].overrides.clone(),
        best_score: trials[best].score,
        trials,
        rules,
        experiences,
    })
}
