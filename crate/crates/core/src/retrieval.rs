//! Late-interaction-guided retrieval over the layered graph.
//!
//! An edge is scored by matching every subquery against the union of the two
//! endpoints' subcomponents and summing the per-subquery maxima. Traversal
//! seeds on coarse similarity, expands one hop per iteration scoring the
//! incident edges, keeps the global top-b scored edges, and finally ranks
//! the surviving endpoints. The `no_qd` and `knn` modes are the two ablated
//! retrieval paths.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::decompose::DecomposedQuery;
use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::graph::LayeredComponentGraph;

/// Equality slack for the one-sided test and score recomputation.
pub const SCORE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    #[default]
    Full,
    NoQd,
    Knn,
}

impl std::fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RetrievalMode::Full => "full",
            RetrievalMode::NoQd => "no_qd",
            RetrievalMode::Knn => "knn",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraversalParams {
    pub beam_width: usize,
    pub iterations: usize,
    pub n_ret: usize,
    pub mode: RetrievalMode,
}

impl Default for TraversalParams {
    fn default() -> Self {
        Self {
            beam_width: 30,
            iterations: 1,
            n_ret: 10,
            mode: RetrievalMode::Full,
        }
    }
}

/// Coarse edge identity: a canonical pair (smaller id first) or a dummy
/// edge standing in for an isolated node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKey {
    Pair(String, String),
    Dummy(String),
}

impl std::fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EdgeKey::Pair(u, v) => write!(f, "({u}, {v})"),
            EdgeKey::Dummy(c) => write!(f, "({c}, \u{03b5})"),
        }
    }
}

/// Which subcomponent answered each subquery on a scored edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubMatch {
    pub subquery: usize,
    pub sub_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEdge {
    pub edge: EdgeKey,
    pub score: f64,
    /// Per-subquery argmax subcomponents, in subquery order.
    pub matches: Vec<SubMatch>,
    /// Endpoint that alone explains the score, if any.
    pub one_sided: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct QueryTimings {
    pub seed_ms: f64,
    pub traversal_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedEntry {
    pub comp_id: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub matches: Vec<SubMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedResult {
    pub entries: Vec<RankedEntry>,
    pub params: TraversalParams,
    /// Query decomposition fell back from llm to rules.
    pub fallback: bool,
    pub timings: QueryTimings,
}

/// Retained beam scores after each iteration; exposed for diagnostics and
/// the pool-monotonicity property.
#[derive(Debug, Clone, Default)]
pub struct TraversalTrace {
    pub retained_scores: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// internal edge scoring
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum ERef {
    Pair(u32, u32),
    Dummy(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Survivor {
    Both,
    Only(u32),
}

struct EdgeScore {
    eref: ERef,
    score: f64,
    matches: Vec<(usize, u32, f64)>,
    survivor: Survivor,
}

fn sort_key(graph: &LayeredComponentGraph, eref: ERef) -> (&str, &str) {
    match eref {
        ERef::Pair(a, b) => (graph.node(a).id.as_str(), graph.node(b).id.as_str()),
        ERef::Dummy(c) => (graph.node(c).id.as_str(), ""),
    }
}

fn canonical_pair(graph: &LayeredComponentGraph, a: u32, b: u32) -> ERef {
    if graph.node(a).id <= graph.node(b).id {
        ERef::Pair(a, b)
    } else {
        ERef::Pair(b, a)
    }
}

/// Late-interaction score of one edge: for every subquery take the best
/// subcomponent on either side, and sum. Also reports which side alone
/// reaches the total.
fn score_eref(
    graph: &LayeredComponentGraph,
    eref: ERef,
    subqueries: &[&Embedding],
    coarse: &Embedding,
) -> EdgeScore {
    let (a, b) = match eref {
        ERef::Pair(a, b) => (a, Some(b)),
        ERef::Dummy(c) => (c, None),
    };
    let mut score = 0.0;
    let mut score_a = 0.0;
    let mut score_b = 0.0;
    let mut matches = Vec::with_capacity(subqueries.len());
    for (qi, q) in subqueries.iter().enumerate() {
        let best_of = |node: u32| -> (f64, u32) {
            let mut best = f64::NEG_INFINITY;
            let mut arg = node;
            for &child in graph.child_indices(node) {
                let sim = graph.node(child).embedding.sim(q);
                if sim > best {
                    best = sim;
                    arg = child;
                }
            }
            (best, arg)
        };
        let (max_a, arg_a) = best_of(a);
        let (max_b, arg_b) = match b {
            Some(b) => best_of(b),
            None => (f64::NEG_INFINITY, a),
        };
        let (max, arg) = if max_b > max_a { (max_b, arg_b) } else { (max_a, arg_a) };
        score += max;
        score_a += max_a;
        score_b += max_b;
        matches.push((qi, arg, max));
    }
    let survivor = match b {
        None => Survivor::Only(a),
        Some(b) => {
            let a_alone = score - score_a <= SCORE_EPS;
            let b_alone = score - score_b <= SCORE_EPS;
            match (a_alone, b_alone) {
                (true, true) => {
                    let sim_a = graph.node(a).embedding.sim(coarse);
                    let sim_b = graph.node(b).embedding.sim(coarse);
                    if sim_a > sim_b {
                        Survivor::Only(a)
                    } else if sim_b > sim_a {
                        Survivor::Only(b)
                    } else if graph.node(a).id <= graph.node(b).id {
                        Survivor::Only(a)
                    } else {
                        Survivor::Only(b)
                    }
                }
                (true, false) => Survivor::Only(a),
                (false, true) => Survivor::Only(b),
                (false, false) => Survivor::Both,
            }
        }
    };
    EdgeScore {
        eref,
        score,
        matches,
        survivor,
    }
}

fn check_dimensions(graph: &LayeredComponentGraph, embeddings: &[&Embedding]) -> Result<()> {
    let d = graph.manifest().dimension;
    for e in embeddings {
        if e.dim() != d {
            return Err(Error::DimensionMismatch {
                left: e.dim(),
                right: d,
            });
        }
    }
    Ok(())
}

fn resolve_coarse(graph: &LayeredComponentGraph, id: &str) -> Result<u32> {
    let idx = graph
        .idx(id)
        .ok_or_else(|| Error::UnknownNode(id.to_string()))?;
    if graph.node(idx).layer != 0 {
        return Err(Error::NotCoarse(id.to_string()));
    }
    Ok(idx)
}

/// Score one edge against a set of subquery embeddings; the
/// coarse query embedding only breaks ties when both endpoints qualify as
/// one-sided.
pub fn score_edge(
    graph: &LayeredComponentGraph,
    edge: &EdgeKey,
    subqueries: &[Embedding],
    coarse: &Embedding,
) -> Result<ScoredEdge> {
    if subqueries.is_empty() {
        return Err(Error::InvalidParam("score_edge requires at least one subquery".into()));
    }
    let refs: Vec<&Embedding> = subqueries.iter().collect();
    check_dimensions(graph, &refs)?;
    check_dimensions(graph, &[coarse])?;
    let eref = match edge {
        EdgeKey::Pair(u, v) => {
            if u == v {
                return Err(Error::InvalidParam(format!("self-pair edge on {u}")));
            }
            ERef::Pair(resolve_coarse(graph, u)?, resolve_coarse(graph, v)?)
        }
        EdgeKey::Dummy(c) => ERef::Dummy(resolve_coarse(graph, c)?),
    };
    let scored = score_eref(graph, eref, &refs, coarse);
    Ok(externalize(graph, &scored))
}

fn externalize(graph: &LayeredComponentGraph, scored: &EdgeScore) -> ScoredEdge {
    let edge = match scored.eref {
        ERef::Pair(a, b) => EdgeKey::Pair(graph.node(a).id.clone(), graph.node(b).id.clone()),
        ERef::Dummy(c) => EdgeKey::Dummy(graph.node(c).id.clone()),
    };
    ScoredEdge {
        edge,
        score: scored.score,
        matches: scored
            .matches
            .iter()
            .map(|(qi, arg, sim)| SubMatch {
                subquery: *qi,
                sub_id: graph.node(*arg).id.clone(),
                similarity: *sim,
            })
            .collect(),
        one_sided: match scored.survivor {
            Survivor::Only(n) => Some(graph.node(n).id.clone()),
            Survivor::Both => None,
        },
    }
}

// ---------------------------------------------------------------------------
// seeding and the three retrieval modes
// ---------------------------------------------------------------------------

fn seed_indices(
    graph: &LayeredComponentGraph,
    coarse: &Embedding,
    b: usize,
) -> Result<Vec<(u32, f64)>> {
    if b == 0 {
        return Err(Error::InvalidParam("beam width must be at least 1".into()));
    }
    if graph.coarse_indices().is_empty() {
        return Err(Error::EmptyGraph);
    }
    check_dimensions(graph, &[coarse])?;
    let mut scored: Vec<(u32, f64)> = graph
        .coarse_indices()
        .iter()
        .map(|&i| (i, graph.node(i).embedding.sim(coarse)))
        .collect();
    scored.sort_by(|(i, si), (j, sj)| {
        sj.partial_cmp(si)
            .expect("similarity is finite")
            .then_with(|| graph.node(*i).id.cmp(&graph.node(*j).id))
    });
    scored.truncate(b);
    Ok(scored)
}

/// Top-b coarse nodes by coarse query similarity, ties broken by ascending
/// id; all of them when the graph has fewer than b.
pub fn seed_candidates(
    graph: &LayeredComponentGraph,
    coarse: &Embedding,
    b: usize,
) -> Result<Vec<(String, f64)>> {
    Ok(seed_indices(graph, coarse, b)?
        .into_iter()
        .map(|(i, s)| (graph.node(i).id.clone(), s))
        .collect())
}

fn entries_from_seeds(
    graph: &LayeredComponentGraph,
    seeds: &[(u32, f64)],
    n_ret: usize,
) -> Vec<RankedEntry> {
    seeds
        .iter()
        .take(n_ret)
        .map(|(i, s)| RankedEntry {
            comp_id: graph.node(*i).id.clone(),
            score: *s,
            matches: Vec::new(),
        })
        .collect()
}

/// Coarse-only nearest-neighbor ranking (the "w/o LCG & QD" ablation).
pub fn retrieve_knn(
    graph: &LayeredComponentGraph,
    coarse: &Embedding,
    n_ret: usize,
) -> Result<RankedResult> {
    let start = Instant::now();
    let seeds = seed_indices(graph, coarse, n_ret.max(1))?;
    let seed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(RankedResult {
        entries: entries_from_seeds(graph, &seeds, n_ret),
        params: TraversalParams {
            n_ret,
            mode: RetrievalMode::Knn,
            ..TraversalParams::default()
        },
        fallback: false,
        timings: QueryTimings {
            seed_ms,
            traversal_ms: 0.0,
            total_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Coarse top-b then subcomponent rerank against the coarse query embedding
/// (the "w/o QD" ablation).
pub fn retrieve_rerank(
    graph: &LayeredComponentGraph,
    coarse: &Embedding,
    b: usize,
    n_ret: usize,
) -> Result<RankedResult> {
    if b < n_ret {
        return Err(Error::InvalidParam(format!(
            "rerank needs beam width >= n_ret ({b} < {n_ret})"
        )));
    }
    let start = Instant::now();
    let seeds = seed_indices(graph, coarse, b)?;
    let seed_ms = start.elapsed().as_secs_f64() * 1e3;
    let rerank_start = Instant::now();
    let mut rescored: Vec<(u32, f64, f64)> = seeds
        .into_iter()
        .map(|(i, coarse_sim)| {
            let best_sub = graph
                .child_indices(i)
                .iter()
                .map(|&c| graph.node(c).embedding.sim(coarse))
                .fold(f64::NEG_INFINITY, f64::max);
            (i, best_sub, coarse_sim)
        })
        .collect();
    rescored.sort_by(|(i, sub_i, coarse_i), (j, sub_j, coarse_j)| {
        sub_j
            .partial_cmp(sub_i)
            .expect("similarity is finite")
            .then_with(|| coarse_j.partial_cmp(coarse_i).expect("similarity is finite"))
            .then_with(|| graph.node(*i).id.cmp(&graph.node(*j).id))
    });
    rescored.truncate(n_ret);
    let entries = rescored
        .into_iter()
        .map(|(i, sub_score, _)| RankedEntry {
            comp_id: graph.node(i).id.clone(),
            score: sub_score,
            matches: Vec::new(),
        })
        .collect();
    Ok(RankedResult {
        entries,
        params: TraversalParams {
            beam_width: b,
            n_ret,
            mode: RetrievalMode::NoQd,
            ..TraversalParams::default()
        },
        fallback: false,
        timings: QueryTimings {
            seed_ms,
            traversal_ms: rerank_start.elapsed().as_secs_f64() * 1e3,
            total_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Full traversal. See [`traverse_with_trace`] for the beam snapshots.
pub fn traverse(
    graph: &LayeredComponentGraph,
    dq: &DecomposedQuery,
    params: &TraversalParams,
) -> Result<RankedResult> {
    traverse_with_trace(graph, dq, params).map(|(result, _)| result)
}

pub fn traverse_with_trace(
    graph: &LayeredComponentGraph,
    dq: &DecomposedQuery,
    params: &TraversalParams,
) -> Result<(RankedResult, TraversalTrace)> {
    if params.n_ret == 0 {
        return Err(Error::InvalidParam("n_ret must be at least 1".into()));
    }
    let subqueries: Vec<&Embedding> = dq.subqueries.iter().map(|s| &s.embedding).collect();
    if subqueries.is_empty() {
        return Err(Error::InvalidParam("decomposed query has no subqueries".into()));
    }
    check_dimensions(graph, &subqueries)?;
    check_dimensions(graph, &[&dq.coarse_embedding])?;

    let total_start = Instant::now();
    let seeds = seed_indices(graph, &dq.coarse_embedding, params.beam_width)?;
    let seed_ms = total_start.elapsed().as_secs_f64() * 1e3;
    let traversal_start = Instant::now();
    let mut trace = TraversalTrace::default();

    let result_params = TraversalParams {
        mode: RetrievalMode::Full,
        ..*params
    };
    if params.iterations == 0 {
        let result = RankedResult {
            entries: entries_from_seeds(graph, &seeds, params.n_ret),
            params: result_params,
            fallback: dq.fallback,
            timings: QueryTimings {
                seed_ms,
                traversal_ms: traversal_start.elapsed().as_secs_f64() * 1e3,
                total_ms: total_start.elapsed().as_secs_f64() * 1e3,
            },
        };
        return Ok((result, trace));
    }

    // Global pool: edges are scored once and never re-scored; retention is
    // the top-b of the whole pool.
    let mut pool: Vec<EdgeScore> = Vec::new();
    let mut scored: HashSet<ERef> = HashSet::new();
    let mut retained: Vec<usize> = Vec::new();

    for iteration in 0..params.iterations {
        let frontier: BTreeSet<u32> = if iteration == 0 {
            seeds.iter().map(|(i, _)| *i).collect()
        } else {
            let mut nodes = BTreeSet::new();
            for &pi in &retained {
                match pool[pi].eref {
                    ERef::Pair(a, b) => {
                        nodes.insert(a);
                        nodes.insert(b);
                    }
                    ERef::Dummy(c) => {
                        nodes.insert(c);
                    }
                }
            }
            nodes
        };
        for &node in &frontier {
            let neighbors = graph.neighbor_indices(node);
            if neighbors.is_empty() {
                let eref = ERef::Dummy(node);
                if scored.insert(eref) {
                    pool.push(score_eref(graph, eref, &subqueries, &dq.coarse_embedding));
                }
                continue;
            }
            for &neighbor in neighbors {
                let eref = canonical_pair(graph, node, neighbor);
                if scored.insert(eref) {
                    pool.push(score_eref(graph, eref, &subqueries, &dq.coarse_embedding));
                }
            }
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&x, &y| {
            pool[y]
                .score
                .partial_cmp(&pool[x].score)
                .expect("score is finite")
                .then_with(|| sort_key(graph, pool[x].eref).cmp(&sort_key(graph, pool[y].eref)))
        });
        order.truncate(params.beam_width);
        retained = order;
        trace
            .retained_scores
            .push(retained.iter().map(|&pi| pool[pi].score).collect());
    }

    // One-sided rule per retained edge, then rank surviving nodes by their
    // best incident retained edge.
    let mut node_best: HashMap<u32, (f64, usize)> = HashMap::new();
    for &pi in &retained {
        let edge = &pool[pi];
        let survivors: &[u32] = match (&edge.eref, edge.survivor) {
            (_, Survivor::Only(n)) => &[n],
            (ERef::Pair(a, b), Survivor::Both) => &[*a, *b],
            (ERef::Dummy(c), Survivor::Both) => &[*c],
        };
        for &node in survivors {
            match node_best.get(&node) {
                Some((best, _)) if *best >= edge.score => {}
                _ => {
                    node_best.insert(node, (edge.score, pi));
                }
            }
        }
    }
    let mut ranked: Vec<(u32, f64, f64, usize)> = node_best
        .into_iter()
        .map(|(node, (score, pi))| {
            let coarse_sim = graph.node(node).embedding.sim(&dq.coarse_embedding);
            (node, score, coarse_sim, pi)
        })
        .collect();
    ranked.sort_by(|(i, si, ci, _), (j, sj, cj, _)| {
        sj.partial_cmp(si)
            .expect("score is finite")
            .then_with(|| cj.partial_cmp(ci).expect("similarity is finite"))
            .then_with(|| graph.node(*i).id.cmp(&graph.node(*j).id))
    });
    ranked.truncate(params.n_ret);

    let entries = ranked
        .into_iter()
        .map(|(node, score, _, pi)| RankedEntry {
            comp_id: graph.node(node).id.clone(),
            score,
            matches: externalize(graph, &pool[pi]).matches,
        })
        .collect();

    let result = RankedResult {
        entries,
        params: result_params,
        fallback: dq.fallback,
        timings: QueryTimings {
            seed_ms,
            traversal_ms: traversal_start.elapsed().as_secs_f64() * 1e3,
            total_ms: total_start.elapsed().as_secs_f64() * 1e3,
        },
    };
    Ok((result, trace))
}

/// Dispatch on the configured retrieval mode.
pub fn retrieve(
    graph: &LayeredComponentGraph,
    dq: &DecomposedQuery,
    params: &TraversalParams,
) -> Result<RankedResult> {
    match params.mode {
        RetrievalMode::Full => traverse(graph, dq, params),
        RetrievalMode::NoQd => {
            let mut result =
                retrieve_rerank(graph, &dq.coarse_embedding, params.beam_width, params.n_ret)?;
            result.fallback = dq.fallback;
            Ok(result)
        }
        RetrievalMode::Knn => {
            let mut result = retrieve_knn(graph, &dq.coarse_embedding, params.n_ret)?;
            result.fallback = dq.fallback;
            Ok(result)
        }
    }
}
