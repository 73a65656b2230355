//! Dataset loading, benchmark execution and precision/recall/F1.
//!
//! Metrics are percentages in `[0, 100]` with `match` as the positive class.
//! Errored pairs stay out of the confusion matrix and are counted separately.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::entity::{Decision, EntityPair, EntityRecord};
use crate::exec;
use crate::kernel::params::{self, ParamError, ParamValue, ParameterTree};
use crate::knowledge::KnowledgeEntry;
use crate::matcher::Matcher;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    Jsonl,
    PrefixedCsv,
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(SourceFormat::Jsonl),
            "csv" | "prefixed_csv" => Ok(SourceFormat::PrefixedCsv),
            other => Err(format!("unknown dataset format {other:?} (expected jsonl or csv)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HarnessError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("duplicate pair id `{0}`")]
    DuplicateId(String),
    #[error("prediction for unknown pair id `{0}`")]
    UnknownId(String),
    #[error("more than one prediction for pair id `{0}`")]
    DuplicatePrediction(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub pairs: Vec<EntityPair>,
    pub source_format: SourceFormat,
}

impl DatasetSpec {
    /// Checks that the dataset is non-empty, fully labelled and has unique ids.
    pub fn new(name: impl Into<String>, pairs: Vec<EntityPair>, source_format: SourceFormat) -> Result<Self, HarnessError> {
        if pairs.is_empty() {
            return Err(HarnessError::Format {
                line: 0,
                message: "dataset contains no pairs".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for (i, p) in pairs.iter().enumerate() {
            if p.label.is_none() {
                return Err(HarnessError::Format {
                    line: i + 1,
                    message: format!("pair `{}` has no label", p.id),
                });
            }
            if !seen.insert(p.id.as_str()) {
                return Err(HarnessError::DuplicateId(p.id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            pairs,
            source_format,
        })
    }

    pub fn labels(&self) -> BTreeMap<String, Decision> {
        self.pairs
            .iter()
            .filter_map(|p| Some((p.id.clone(), p.label?)))
            .collect()
    }

    /// Sorted attribute names over every record of the dataset.
    pub fn attribute_signature(&self) -> BTreeSet<String> {
        self.pairs.iter().flat_map(EntityPair::attribute_signature).collect()
    }
}

fn parse_label(v: &Value) -> Option<Decision> {
    match v {
        Value::Number(n) => match n.as_u64() {
            Some(0) => Some(Decision::NoMatch),
            Some(1) => Some(Decision::Match),
            _ => None,
        },
        Value::Bool(b) => Some(Decision::from_bool(*b)),
        Value::String(s) => parse_label_text(s),
        _ => None,
    }
}

fn parse_label_text(s: &str) -> Option<Decision> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "match" => Some(Decision::Match),
        "0" | "false" | "no_match" => Some(Decision::NoMatch),
        _ => None,
    }
}

/// Parses JSON lines of `{"id", "left": {...}, "right": {...}, "label": 0|1}`.
pub fn parse_jsonl(name: &str, text: &str) -> Result<DatasetSpec, HarnessError> {
    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| HarnessError::Format { line: i + 1, message };
        let v: Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let id = match &v["id"] {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            _ => return Err(err("missing string or integer `id`".into())),
        };
        let left = EntityRecord::from_json(&v["left"]).map_err(|e| err(format!("left: {e}")))?;
        let right = EntityRecord::from_json(&v["right"]).map_err(|e| err(format!("right: {e}")))?;
        let label = parse_label(&v["label"]).ok_or_else(|| err("`label` must be 0 or 1".into()))?;
        if !seen.insert(id.clone()) {
            return Err(HarnessError::DuplicateId(id));
        }
        pairs.push(EntityPair::new(id, left, right).labeled(label));
    }
    DatasetSpec::new(name, pairs, SourceFormat::Jsonl)
}

/// Parses a CSV whose `ltable_<attr>` / `rtable_<attr>` columns become the
/// left and right attributes (in column order) and whose `label` column holds
/// 0/1. An `id` column is used when present, otherwise the row number.
pub fn parse_prefixed_csv(name: &str, reader: impl std::io::Read) -> Result<DatasetSpec, HarnessError> {
    let mut csv = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let header_err = |message: String| HarnessError::Format { line: 1, message };
    let headers = csv.headers().map_err(|e| header_err(e.to_string()))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let label_col = column("label").ok_or_else(|| header_err("missing `label` column".into()))?;
    let id_col = column("id");
    let side = |prefix: &str| -> Vec<(usize, String)> {
        headers
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.trim().strip_prefix(prefix).map(|a| (i, a.to_string())))
            .filter(|(_, a)| !a.is_empty())
            .collect()
    };
    let (left_cols, right_cols) = (side("ltable_"), side("rtable_"));
    if left_cols.is_empty() || right_cols.is_empty() {
        return Err(header_err("expected ltable_<attr> and rtable_<attr> columns".into()));
    }

    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for (row, record) in csv.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| HarnessError::Format {
            line: e.position().map_or(line, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let err = |message: String| HarnessError::Format { line, message };
        let build = |cols: &[(usize, String)]| {
            EntityRecord::new(cols.iter().map(|(i, a)| (a.clone(), record.get(*i).unwrap_or_default().to_string())))
                .map_err(|e| err(e.to_string()))
        };
        let id = id_col
            .and_then(|c| record.get(c))
            .map(str::to_string)
            .unwrap_or_else(|| row.to_string());
        let label = parse_label_text(record.get(label_col).unwrap_or_default())
            .ok_or_else(|| err("`label` must be 0 or 1".into()))?;
        if !seen.insert(id.clone()) {
            return Err(HarnessError::DuplicateId(id));
        }
        pairs.push(EntityPair::new(id, build(&left_cols)?, build(&right_cols)?).labeled(label));
    }
    DatasetSpec::new(name, pairs, SourceFormat::PrefixedCsv)
}

pub fn load_dataset(path: impl AsRef<Path>, format: SourceFormat) -> Result<DatasetSpec, HarnessError> {
    let path = path.as_ref();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    let io = |e: std::io::Error| HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    match format {
        SourceFormat::Jsonl => parse_jsonl(&name, &std::fs::read_to_string(path).map_err(io)?),
        SourceFormat::PrefixedCsv => parse_prefixed_csv(&name, std::fs::File::open(path).map_err(io)?),
    }
}

pub fn precision(tp: u64, fp: u64) -> f64 {
    ratio_pct(tp, tp + fp)
}

pub fn recall(tp: u64, fn_: u64) -> f64 {
    ratio_pct(tp, tp + fn_)
}

fn ratio_pct(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall (both in percent); 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn ser_round2<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round2(*x))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    #[serde(serialize_with = "ser_round2")]
    pub precision: f64,
    #[serde(serialize_with = "ser_round2")]
    pub recall: f64,
    #[serde(serialize_with = "ser_round2")]
    pub f1: f64,
    pub errored: u64,
    #[serde(serialize_with = "ser_round2")]
    pub latency_ms_p50: f64,
    #[serde(serialize_with = "ser_round2")]
    pub latency_ms_p95: f64,
    pub tokens_total: u64,
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64, errored: u64) -> Self {
        let p = precision(tp, fp);
        let r = recall(tp, fn_);
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision: p,
            recall: r,
            f1: f1_score(p, r),
            errored,
            ..Self::default()
        }
    }

    pub fn pair_count(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn + self.errored
    }

    pub fn counts(&self) -> (u64, u64, u64, u64, u64) {
        (self.tp, self.fp, self.fn_, self.tn, self.errored)
    }

    /// Score under the objective named by `libem.tune.objective`.
    pub fn score(&self, objective: Objective) -> f64 {
        match objective {
            Objective::F1 => self.f1,
            Objective::Precision => self.precision,
            Objective::Recall => self.recall,
        }
    }
}

/// Metric a parameter search maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    F1,
    Precision,
    Recall,
}

impl Objective {
    pub fn from_params(tree: &ParameterTree) -> Result<Self, ParamError> {
        match tree.text(params::TUNE_OBJECTIVE)? {
            "precision" => Ok(Objective::Precision),
            "recall" => Ok(Objective::Recall),
            _ => Ok(Objective::F1),
        }
    }
}

/// Confusion counts of `predictions` against `labels`. `None` marks an
/// errored prediction; labelled ids without a prediction count as errored.
pub fn evaluate(
    predictions: &[(String, Option<Decision>)],
    labels: &BTreeMap<String, Decision>,
) -> Result<MetricsReport, HarnessError> {
    let mut seen = BTreeSet::new();
    let (mut tp, mut fp, mut fn_, mut tn, mut errored) = (0, 0, 0, 0, 0);
    for (id, decision) in predictions {
        let label = labels.get(id).ok_or_else(|| HarnessError::UnknownId(id.clone()))?;
        if !seen.insert(id.as_str()) {
            return Err(HarnessError::DuplicatePrediction(id.clone()));
        }
        match (decision, label) {
            (None, _) => errored += 1,
            (Some(Decision::Match), Decision::Match) => tp += 1,
            (Some(Decision::Match), Decision::NoMatch) => fp += 1,
            (Some(Decision::NoMatch), Decision::Match) => fn_ += 1,
            (Some(Decision::NoMatch), Decision::NoMatch) => tn += 1,
        }
    }
    errored += (labels.len() - seen.len()) as u64;
    Ok(MetricsReport::from_counts(tp, fp, fn_, tn, errored))
}

/// Nearest-rank percentile of `values` (`pct` in (0, 100]); 0 for no values.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub id: String,
    pub label: Decision,
    pub decision: Option<Decision>,
    pub error: Option<String>,
    pub error_code: Option<String>,
    pub run_id: Option<String>,
    pub latency_ms: f64,
    pub tokens: u64,
    pub tool_rounds: u32,
}

impl PairOutcome {
    /// Whether the pair failed because the model backend did.
    pub fn backend_failed(&self) -> bool {
        matches!(
            self.error_code.as_deref(),
            Some("backend_unavailable" | "bad_request" | "response_malformed" | "invalid_request")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub dataset: String,
    pub mode: Mode,
    pub metrics: MetricsReport,
    pub per_pair: Vec<PairOutcome>,
    pub config_digest: String,
}

impl BenchmarkResult {
    /// Recomputes the confusion counts from `per_pair`.
    pub fn recount(&self) -> MetricsReport {
        let preds: Vec<(String, Option<Decision>)> = self.per_pair.iter().map(|p| (p.id.clone(), p.decision)).collect();
        let labels: BTreeMap<String, Decision> = self.per_pair.iter().map(|p| (p.id.clone(), p.label)).collect();
        evaluate(&preds, &labels).expect("per-pair ids are unique and labelled")
    }

    /// Per-pair decisions and errors, i.e. the result without timings or run ids.
    pub fn outcomes(&self) -> Vec<(&str, Option<Decision>, Option<&str>)> {
        self.per_pair
            .iter()
            .map(|p| (p.id.as_str(), p.decision, p.error.as_deref()))
            .collect()
    }
}

/// Solo runs one plain model call per pair; compound exposes tools and
/// learned knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Solo,
    #[default]
    Compound,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "solo" => Ok(Mode::Solo),
            "compound" => Ok(Mode::Compound),
            other => Err(format!("unknown mode {other:?} (expected solo or compound)")),
        }
    }
}

impl Mode {
    /// Parameters and knowledge for this mode: solo turns off every tool and
    /// drops all knowledge, compound leaves both untouched.
    pub fn configure(
        self,
        tree: &ParameterTree,
        knowledge: &[KnowledgeEntry],
    ) -> Result<(ParameterTree, Vec<KnowledgeEntry>), ParamError> {
        match self {
            Mode::Compound => Ok((tree.clone(), knowledge.to_vec())),
            Mode::Solo => {
                let tree = tree
                    .set(params::MATCH_BROWSE, false.into())?
                    .set(params::MATCH_PREPARE_TOOL, false.into())?
                    .set(params::MATCH_RULES, ParamValue::Knowledge(Vec::new()))?
                    .set(params::MATCH_EXPERIENCES, ParamValue::Knowledge(Vec::new()))?;
                Ok((tree, Vec::new()))
            }
        }
    }
}

pub fn config_digest(tree: &ParameterTree, knowledge: &[KnowledgeEntry]) -> String {
    let mut h = Sha256::new();
    h.update(tree.digest().as_bytes());
    h.update(serde_json::to_vec(knowledge).expect("knowledge serializes"));
    hex::encode(h.finalize())
}

/// Matches every pair of `dataset` and scores the predictions. Per-pair
/// failures are recorded, never raised.
pub fn run_benchmark(
    dataset: &DatasetSpec,
    matcher: &Matcher,
    tree: &ParameterTree,
    knowledge: &[KnowledgeEntry],
    mode: Mode,
    parallelism: usize,
) -> Result<BenchmarkResult, ParamError> {
    let (tree, knowledge) = mode.configure(tree, knowledge)?;
    let per_pair: Vec<PairOutcome> = exec::bounded_map(&dataset.pairs, parallelism, |pair| {
        let started = Instant::now();
        let result = matcher.match_pair(pair, &tree, &knowledge);
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        let label = pair.label.expect("dataset pairs are labelled");
        match result {
            Ok(p) => PairOutcome {
                id: pair.id.clone(),
                label,
                decision: Some(p.decision),
                error: None,
                error_code: None,
                run_id: Some(p.run_id),
                latency_ms,
                tokens: p.tokens_total,
                tool_rounds: p.tool_rounds_used,
            },
            Err(e) => PairOutcome {
                id: pair.id.clone(),
                label,
                decision: None,
                error: Some(e.to_string()),
                error_code: Some(e.code().to_string()),
                run_id: None,
                latency_ms,
                tokens: 0,
                tool_rounds: 0,
            },
        }
    });
    let preds: Vec<(String, Option<Decision>)> = per_pair.iter().map(|p| (p.id.clone(), p.decision)).collect();
    let mut metrics = evaluate(&preds, &dataset.labels()).expect("predictions cover exactly the dataset ids");
    let latencies: Vec<f64> = per_pair.iter().map(|p| p.latency_ms).collect();
    metrics.latency_ms_p50 = percentile(&latencies, 50.0);
    metrics.latency_ms_p95 = percentile(&latencies, 95.0);
    metrics.tokens_total = per_pair.iter().map(|p| p.tokens).sum();
    Ok(BenchmarkResult {
        dataset: dataset.name.clone(),
        mode,
        metrics,
        per_pair,
        config_digest: config_digest(&tree, &knowledge),
    })
}

/// Plain-text table with Precision, Recall and F1 columns, two decimals.
pub fn render_table(rows: &[(&str, &MetricsReport)]) -> String {
    struct Row<'a>(&'a str, &'a MetricsReport);
    impl fmt::Display for Row<'_> {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            let m = self.1;
            write!(
                f,
                "{:<20} {:>9.2} {:>9.2} {:>9.2} {:>7} {:>7} {:>7} {:>7} {:>7} {:>10}",
                self.0, m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_, m.tn, m.errored, m.tokens_total
            )
        }
    }
    let mut out = format!(
        "{:<20} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7} {:>7} {:>7} {:>10}\n",
        "Dataset", "Precision", "Recall", "F1", "TP", "FP", "FN", "TN", "Errored", "Tokens"
    );
    for (name, m) in rows {
        out.push_str(&Row(name, m).to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_PAIRS: &str = r#"{"id":"a","left":{"title":"x"},"right":{"title":"x"},"label":1}
{"id":"b","left":{"title":"x"},"right":{"title":"y"},"label":0}
"#;

    #[test]
    fn jsonl_parse() {
        let d = parse_jsonl("t", TWO_PAIRS).unwrap();
        assert_eq!(d.pairs.len(), 2);
        assert_eq!(d.pairs[0].label, Some(Decision::Match));
        assert_eq!(d.pairs[1].label, Some(Decision::NoMatch));
    }

    #[test]
    fn jsonl_errors() {
        let dup = format!("{TWO_PAIRS}{}", r#"{"id":"a","left":{"t":"1"},"right":{"t":"2"},"label":0}"#);
        assert_eq!(parse_jsonl("t", &dup).unwrap_err(), HarnessError::DuplicateId("a".into()));
        let bad = "{\"id\":\"a\",\"left\":{},\"right\":{},\"label\":2}";
        assert!(matches!(parse_jsonl("t", bad), Err(HarnessError::Format { line: 1, .. })));
        assert!(matches!(parse_jsonl("t", "\n\n"), Err(HarnessError::Format { .. })));
        assert!(matches!(
            parse_jsonl("t", &format!("{TWO_PAIRS}not json")),
            Err(HarnessError::Format { line: 3, .. })
        ));
    }

    #[test]
    fn csv_prefix_mapping() {
        let csv = "ltable_title,rtable_title,label\nSony A7,Sony Alpha 7,1\nCanon R8,Nikon Z6,0\n";
        let d = parse_prefixed_csv("t", csv.as_bytes()).unwrap();
        assert_eq!(d.pairs.len(), 2);
        assert_eq!(d.pairs[0].left.attributes(), &[("title".to_string(), "Sony A7".to_string())]);
        assert_eq!(d.pairs[0].right.get("title"), Some("Sony Alpha 7"));
        assert_eq!(d.pairs[1].id, "1");
        assert_eq!(d.source_format, SourceFormat::PrefixedCsv);
    }

    #[test]
    fn csv_keeps_column_order_and_ids() {
        let csv = "id,ltable_title,ltable_price,rtable_price,rtable_title,label\np1,a,1,2,b,0\n";
        let d = parse_prefixed_csv("t", csv.as_bytes()).unwrap();
        let p = &d.pairs[0];
        assert_eq!(p.id, "p1");
        assert_eq!(p.left.names().collect::<Vec<_>>(), ["title", "price"]);
        assert_eq!(p.right.names().collect::<Vec<_>>(), ["price", "title"]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            parse_prefixed_csv("t", "ltable_a,rtable_a\n1,2\n".as_bytes()),
            Err(HarnessError::Format { line: 1, .. })
        ));
        assert!(matches!(
            parse_prefixed_csv("t", "ltable_a,rtable_a,label\n1,2,0\n1,2,x\n".as_bytes()),
            Err(HarnessError::Format { line: 3, .. })
        ));
        assert_eq!(
            parse_prefixed_csv("t", "id,ltable_a,rtable_a,label\nq,1,2,0\nq,1,2,1\n".as_bytes()).unwrap_err(),
            HarnessError::DuplicateId("q".into())
        );
    }

    #[test]
    fn hand_enumerated_confusion() {
        // tp=3, fp=1, fn=1, tn=5
        let m = MetricsReport::from_counts(3, 1, 1, 5, 0);
        assert_eq!((m.precision, m.recall, m.f1), (75.0, 75.0, 75.0));
    }

    #[test]
    fn zero_denominators() {
        let labels: BTreeMap<String, Decision> = [("a".to_string(), Decision::NoMatch)].into();
        let m = evaluate(&[("a".into(), Some(Decision::NoMatch))], &labels).unwrap();
        assert_eq!((m.tn, m.precision, m.recall, m.f1), (1, 0.0, 0.0, 0.0));
    }

    #[test]
    fn unknown_and_missing_ids() {
        let labels: BTreeMap<String, Decision> =
            [("a".to_string(), Decision::Match), ("b".to_string(), Decision::Match)].into();
        assert_eq!(
            evaluate(&[("z".into(), None)], &labels).unwrap_err(),
            HarnessError::UnknownId("z".into())
        );
        let m = evaluate(&[("a".into(), Some(Decision::Match))], &labels).unwrap();
        assert_eq!((m.tp, m.errored, m.pair_count()), (1, 1, 2));
        assert!(matches!(
            evaluate(&[("a".into(), None), ("a".into(), None)], &labels),
            Err(HarnessError::DuplicatePrediction(_))
        ));
    }

    #[test]
    fn reported_values_round_to_two_decimals() {
        let m = MetricsReport::from_counts(2, 1, 0, 0, 0);
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["precision"], 66.67);
        assert_eq!(v["fn"], 0);
    }

    #[test]
    fn nearest_rank_percentile() {
        let v = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 95.0), 5.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn solo_mode_strips_tools_and_knowledge() {
        let tree = ParameterTree::defaults().set(params::MATCH_BROWSE, true.into()).unwrap();
        let k = vec![KnowledgeEntry::rule("r", "p").unwrap()];
        let (solo, knowledge) = Mode::Solo.configure(&tree, &k).unwrap();
        assert!(!solo.toggle(params::MATCH_BROWSE).unwrap());
        assert!(!solo.toggle(params::MATCH_PREPARE_TOOL).unwrap());
        assert!(knowledge.is_empty());
        let (compound, knowledge) = Mode::Compound.configure(&tree, &k).unwrap();
        assert_eq!(compound, tree);
        assert_eq!(knowledge, k);
    }

    #[test]
    fn table_has_metric_columns() {
        let m = MetricsReport::from_counts(4, 1, 1, 4, 0);
        let t = render_table(&[("fixture", &m)]);
        assert!(t.lines().next().unwrap().contains("Precision"));
        assert!(t.contains("80.00"));
    }
}
