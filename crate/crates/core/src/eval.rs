//! Retrieval metrics, qrels handling, and the batch benchmark runner.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::{modality_set, Decomposer, ModalityLabel};
use crate::embed::{EmbedRequest, Embedder, Instruction};
use crate::error::{Error, Result};
use crate::graph::LayeredComponentGraph;
use crate::retrieval::{self, QueryTimings, RetrievalMode, TraversalParams};

/// Fraction of the gold set found in the top k.
pub fn recall_at_k(ranked: &[String], gold: &BTreeSet<String>, k: usize) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    if k == 0 {
        return Err(Error::InvalidParam("k must be at least 1".into()));
    }
    let hits = ranked.iter().take(k).filter(|id| gold.contains(*id)).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Reciprocal rank of the first gold item within the top k; 0 when absent.
pub fn mrr_at_k(ranked: &[String], gold: &BTreeSet<String>, k: usize) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    if k == 0 {
        return Err(Error::InvalidParam("k must be at least 1".into()));
    }
    Ok(ranked
        .iter()
        .take(k)
        .position(|id| gold.contains(id))
        .map(|pos| 1.0 / (pos + 1) as f64)
        .unwrap_or(0.0))
}

/// 1 when any gold item appears in the top k, else 0. The hit-rate reading
/// of Recall@K, exposed alongside coverage for comparison.
pub fn hit_rate_at_k(ranked: &[String], gold: &BTreeSet<String>, k: usize) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    if k == 0 {
        return Err(Error::InvalidParam("k must be at least 1".into()));
    }
    let hit = ranked.iter().take(k).any(|id| gold.contains(id));
    Ok(if hit { 1.0 } else { 0.0 })
}

/// Jaccard overlap between predicted and gold modality sets.
pub fn modality_jaccard(
    predicted: &BTreeSet<ModalityLabel>,
    gold: &BTreeSet<ModalityLabel>,
) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    let intersection = predicted.intersection(gold).count();
    let union = predicted.union(gold).count();
    Ok(intersection as f64 / union as f64)
}

/// One record of the queries/qrels file format. A single combined file can
/// serve as both: the queries side reads `qid` + `text`, the qrels side
/// reads `qid` + `gold` (+ optional `gold_modalities`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub qid: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_modalities: Option<Vec<ModalityLabel>>,
}

pub fn read_query_records<R: BufRead>(reader: R) -> Result<Vec<QueryRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QueryRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, Default)]
pub struct QrelEntry {
    pub gold: BTreeSet<String>,
    pub gold_modalities: Option<BTreeSet<ModalityLabel>>,
}

/// Query-relevance judgments keyed by query id.
#[derive(Debug, Clone, Default)]
pub struct Qrels {
    entries: BTreeMap<String, QrelEntry>,
}

impl Qrels {
    pub fn from_records(records: &[QueryRecord]) -> Self {
        let mut entries = BTreeMap::new();
        for record in records {
            if record.gold.is_empty() {
                continue;
            }
            entries.insert(
                record.qid.clone(),
                QrelEntry {
                    gold: record.gold.iter().cloned().collect(),
                    gold_modalities: record
                        .gold_modalities
                        .as_ref()
                        .map(|m| m.iter().copied().collect()),
                },
            );
        }
        Self { entries }
    }

    pub fn get(&self, qid: &str) -> Option<&QrelEntry> {
        self.entries.get(qid)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gold ids that are not coarse nodes of the graph (warning list).
    pub fn missing_gold_ids(&self, graph: &LayeredComponentGraph) -> Vec<String> {
        let mut missing: Vec<String> = self
            .entries
            .values()
            .flat_map(|e| e.gold.iter())
            .filter(|id| {
                graph
                    .idx(id)
                    .map(|i| graph.node(i).layer != 0)
                    .unwrap_or(true)
            })
            .cloned()
            .collect();
        missing.sort();
        missing.dedup();
        missing
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalParams {
    pub recall_k: usize,
    pub mrr_k: usize,
    /// Additionally report the hit-rate reading of Recall@K.
    pub hit_rate: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            recall_k: 3,
            mrr_k: 10,
            hit_rate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerQueryResult {
    pub qid: String,
    pub recall: f64,
    pub mrr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hit_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jaccard: Option<f64>,
}

/// Aggregated benchmark results. Wall-clock timings stay out of the
/// serialized form so consecutive runs over the same inputs are
/// byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: RetrievalMode,
    pub params: TraversalParams,
    pub recall_k: usize,
    pub mrr_k: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub mean_recall: f64,
    pub mean_mrr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_hit_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_jaccard: Option<f64>,
    pub fallback_count: usize,
    pub missing_gold_ids: Vec<String>,
    pub per_query: Vec<PerQueryResult>,
    #[serde(skip)]
    pub mean_timings: QueryTimings,
}

impl EvalReport {
    /// Deterministic JSON emission (timings excluded).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned summary table, one row per query plus the means.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let header = format!(
            "{:<12} {:>10} {:>10} {:>10} {:>10}\n",
            "qid",
            format!("R@{}", self.recall_k),
            format!("MRR@{}", self.mrr_k),
            "hit",
            "jaccard"
        );
        out.push_str(&header);
        out.push_str(&"-".repeat(header.len() - 1));
        out.push('\n');
        let fmt_opt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.4}"),
            None => "-".to_string(),
        };
        for q in &self.per_query {
            out.push_str(&format!(
                "{:<12} {:>10.4} {:>10.4} {:>10} {:>10}\n",
                q.qid,
                q.recall,
                q.mrr,
                fmt_opt(q.hit_rate),
                fmt_opt(q.jaccard)
            ));
        }
        out.push_str(&format!(
            "{:<12} {:>10.4} {:>10.4} {:>10} {:>10}\n",
            "mean",
            self.mean_recall,
            self.mean_mrr,
            fmt_opt(self.mean_hit_rate),
            fmt_opt(self.mean_jaccard)
        ));
        out.push_str(&format!(
            "mode={} b={} n_i={} n_ret={} evaluated={} skipped={} fallbacks={}\n",
            self.mode,
            self.params.beam_width,
            self.params.iterations,
            self.params.n_ret,
            self.evaluated,
            self.skipped,
            self.fallback_count
        ));
        if !self.missing_gold_ids.is_empty() {
            out.push_str(&format!(
                "warning: {} gold ids missing from index\n",
                self.missing_gold_ids.len()
            ));
        }
        out
    }

    pub fn timings_summary(&self) -> String {
        format!(
            "mean timings: seed {:.3} ms, traversal {:.3} ms, total {:.3} ms",
            self.mean_timings.seed_ms, self.mean_timings.traversal_ms, self.mean_timings.total_ms
        )
    }
}

/// Run every query through the configured retrieval mode and aggregate the
/// metrics. Queries without a qrels entry are skipped and counted.
/// Deterministic with the rule decomposer and hash embedder.
pub fn run_benchmark(
    graph: &LayeredComponentGraph,
    queries: &[QueryRecord],
    qrels: &Qrels,
    params: &TraversalParams,
    eval: &EvalParams,
    decomposer: &Decomposer,
    embedder: &dyn Embedder,
) -> Result<EvalReport> {
    if eval.recall_k == 0 || eval.mrr_k == 0 {
        return Err(Error::InvalidParam("metric cutoffs must be at least 1".into()));
    }
    let missing_gold_ids = qrels.missing_gold_ids(graph);

    struct QueryOutcome {
        result: PerQueryResult,
        fallback: bool,
        timings: QueryTimings,
    }

    let evaluable: Vec<(&QueryRecord, &QrelEntry)> = queries
        .iter()
        .filter(|q| !q.text.trim().is_empty())
        .filter_map(|q| qrels.get(&q.qid).map(|entry| (q, entry)))
        .collect();
    let skipped = queries.len() - evaluable.len();

    let outcomes: Result<Vec<QueryOutcome>> = evaluable
        .par_iter()
        .map(|(query, entry)| {
            let (result, predicted) = match params.mode {
                RetrievalMode::Full => {
                    let dq = decomposer.decompose(&query.text, embedder)?;
                    let predicted = modality_set(&dq);
                    (retrieval::retrieve(graph, &dq, params)?, Some(predicted))
                }
                _ => {
                    let coarse =
                        embedder.embed(&EmbedRequest::new(query.text.clone(), Instruction::None))?;
                    let result = match params.mode {
                        RetrievalMode::NoQd => retrieval::retrieve_rerank(
                            graph,
                            &coarse,
                            params.beam_width,
                            params.n_ret,
                        )?,
                        _ => retrieval::retrieve_knn(graph, &coarse, params.n_ret)?,
                    };
                    (result, None)
                }
            };
            let ranked: Vec<String> = result.entries.iter().map(|e| e.comp_id.clone()).collect();
            let recall = recall_at_k(&ranked, &entry.gold, eval.recall_k)?;
            let mrr = mrr_at_k(&ranked, &entry.gold, eval.mrr_k)?;
            let hit = if eval.hit_rate {
                Some(hit_rate_at_k(&ranked, &entry.gold, eval.recall_k)?)
            } else {
                None
            };
            let jaccard = match (&predicted, &entry.gold_modalities) {
                (Some(predicted), Some(gold)) if !gold.is_empty() => {
                    Some(modality_jaccard(predicted, gold)?)
                }
                _ => None,
            };
            Ok(QueryOutcome {
                result: PerQueryResult {
                    qid: query.qid.clone(),
                    recall,
                    mrr,
                    hit_rate: hit,
                    jaccard,
                },
                fallback: result.fallback,
                timings: result.timings,
            })
        })
        .collect();
    let outcomes = outcomes?;

    let evaluated = outcomes.len();
    let mean = |values: &mut dyn Iterator<Item = f64>| -> f64 {
        let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    };
    let mean_recall = mean(&mut outcomes.iter().map(|o| o.result.recall));
    let mean_mrr = mean(&mut outcomes.iter().map(|o| o.result.mrr));
    let mean_hit_rate = eval
        .hit_rate
        .then(|| mean(&mut outcomes.iter().filter_map(|o| o.result.hit_rate)));
    let jaccards: Vec<f64> = outcomes.iter().filter_map(|o| o.result.jaccard).collect();
    let mean_jaccard = (!jaccards.is_empty()).then(|| jaccards.iter().sum::<f64>() / jaccards.len() as f64);
    let fallback_count = outcomes.iter().filter(|o| o.fallback).count();
    let mean_timings = QueryTimings {
        seed_ms: mean(&mut outcomes.iter().map(|o| o.timings.seed_ms)),
        traversal_ms: mean(&mut outcomes.iter().map(|o| o.timings.traversal_ms)),
        total_ms: mean(&mut outcomes.iter().map(|o| o.timings.total_ms)),
    };

    Ok(EvalReport {
        mode: params.mode,
        params: *params,
        recall_k: eval.recall_k,
        mrr_k: eval.mrr_k,
        evaluated,
        skipped,
        mean_recall,
        mean_mrr,
        mean_hit_rate,
        mean_jaccard,
        fallback_count,
        missing_gold_ids,
        per_query: outcomes.into_iter().map(|o| o.result).collect(),
        mean_timings,
    })
}
