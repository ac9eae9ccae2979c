//! Shared test support: fixture loading, random corpus generation, and an
//! exhaustive edge-scoring oracle written independently of the traversal
//! implementation.
#![allow(dead_code)] // each test binary uses a different subset

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use layergraph::corpus::{Component, Corpus, Document, Modality, ObjectAnnotation};
use layergraph::decompose::{DecomposedQuery, ModalityLabel, Subquery};
use layergraph::embed::Embedding;
use layergraph::graph::LayeredComponentGraph;

pub fn fixture_corpus() -> Corpus {
    let raw = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/data/fixture_two_docs.jsonl"
    ))
    .unwrap();
    layergraph::parse_corpus(std::io::Cursor::new(raw.as_str())).unwrap()
}

/// Random small corpus. Bounded by construction: at most `max_docs` docs of
/// at most `max_comps` components, at most two link declarations overall.
pub fn random_corpus(rng: &mut ChaCha8Rng, max_docs: usize, max_comps: usize) -> Corpus {
    let docs = rng.gen_range(1..=max_docs);
    random_corpus_docs(rng, docs, max_comps, 2)
}

/// Random corpus with an exact document count and a link budget.
pub fn random_corpus_docs(
    rng: &mut ChaCha8Rng,
    docs: usize,
    max_comps: usize,
    links: usize,
) -> Corpus {
    let mut corpus = Vec::new();
    let mut link_budget = links;
    for d in 0..docs {
        let comps = rng.gen_range(1..=max_comps);
        let mut components = Vec::new();
        for c in 0..comps {
            let mut links = Vec::new();
            if link_budget > 0 && docs > 1 && rng.gen_bool(0.4) {
                let target = rng.gen_range(0..docs);
                links.push(format!("doc{target}"));
                link_budget -= 1;
            }
            if link_budget > 0 && rng.gen_bool(0.1) {
                links.push("ghost".to_string()); // dangling on purpose
                link_budget -= 1;
            }
            let comp = match rng.gen_range(0..3) {
                0 => Component {
                    comp_id: format!("doc{d}/{c}"),
                    modality: Modality::Paragraph,
                    text: random_text(rng),
                    rows: None,
                    objects: None,
                    links,
                    image_ref: None,
                },
                1 => Component {
                    comp_id: format!("doc{d}/{c}"),
                    modality: Modality::Table,
                    text: String::new(),
                    rows: Some(random_rows(rng)),
                    objects: None,
                    links,
                    image_ref: None,
                },
                _ => Component {
                    comp_id: format!("doc{d}/{c}"),
                    modality: Modality::Image,
                    text: if rng.gen_bool(0.5) { random_text(rng) } else { String::new() },
                    rows: None,
                    objects: Some(random_objects(rng)),
                    links,
                    image_ref: None,
                },
            };
            components.push(comp);
        }
        corpus.push(Document {
            doc_id: format!("doc{d}"),
            title: format!("Doc {d}"),
            components,
        });
    }
    corpus
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let sentences = rng.gen_range(1..=3);
    (0..sentences)
        .map(|_| {
            let words = rng.gen_range(2..=5);
            let body: Vec<String> = (0..words)
                .map(|_| format!("tok{}", rng.gen_range(0..40)))
                .collect();
            format!("{}.", body.join(" "))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_rows(rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let cols = rng.gen_range(1..=3);
    let data_rows = rng.gen_range(0..=3);
    let mut rows = vec![(0..cols).map(|c| format!("h{c}")).collect::<Vec<_>>()];
    for _ in 0..data_rows {
        rows.push((0..cols).map(|_| format!("v{}", rng.gen_range(0..30))).collect());
    }
    rows
}

fn random_objects(rng: &mut ChaCha8Rng) -> Vec<ObjectAnnotation> {
    (0..rng.gen_range(0..=3))
        .map(|_| ObjectAnnotation {
            label: format!("obj{}", rng.gen_range(0..20)),
            bbox: [0, 0, rng.gen_range(1..50), rng.gen_range(1..50)],
        })
        .collect()
}

pub fn random_unit_embedding(rng: &mut ChaCha8Rng, d: usize) -> Embedding {
    let values: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    Embedding(values.iter().map(|v| (v / norm) as f32).collect())
}

pub fn random_query(rng: &mut ChaCha8Rng, d: usize, max_subqueries: usize) -> DecomposedQuery {
    let k = rng.gen_range(1..=max_subqueries);
    DecomposedQuery {
        query_text: "synthetic".into(),
        coarse_embedding: random_unit_embedding(rng, d),
        subqueries: (0..k)
            .map(|i| Subquery {
                text: format!("sub{i}"),
                label: ModalityLabel::Text,
                embedding: random_unit_embedding(rng, d),
            })
            .collect(),
        fallback: false,
    }
}

// ---------------------------------------------------------------------------
// exhaustive oracle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEntry {
    pub comp_id: String,
    pub score: f64,
}

/// Score of one side of an edge: per-subquery best subcomponent similarity.
fn side_maxima(graph: &LayeredComponentGraph, comp: &str, dq: &DecomposedQuery) -> Vec<f64> {
    let subs = graph.children(comp).unwrap();
    dq.subqueries
        .iter()
        .map(|q| {
            subs.iter()
                .map(|sub| graph.node_by_id(sub).unwrap().embedding.sim(&q.embedding))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Exhaustively score every coarse edge and every dummy edge, apply the
/// one-sided rule, and rank every surviving node. This is the ground truth
/// the beam traversal must reproduce when its beam covers all candidates.
pub fn oracle_ranking(
    graph: &LayeredComponentGraph,
    dq: &DecomposedQuery,
    n_ret: usize,
) -> Vec<OracleEntry> {
    let coarse_ids: Vec<&str> = graph
        .nodes()
        .iter()
        .filter(|n| n.layer == 0)
        .map(|n| n.id.as_str())
        .collect();

    // (score, surviving endpoints)
    let mut scored: Vec<(f64, Vec<&str>)> = Vec::new();
    for edge in &graph.edges().e0 {
        let mu = side_maxima(graph, &edge.u, dq);
        let mv = side_maxima(graph, &edge.v, dq);
        let mut score = 0.0;
        let mut su = 0.0;
        let mut sv = 0.0;
        for (a, b) in mu.iter().zip(&mv) {
            score += a.max(*b);
            su += a;
            sv += b;
        }
        let u_alone = score - su <= 1e-9;
        let v_alone = score - sv <= 1e-9;
        let survivors: Vec<&str> = match (u_alone, v_alone) {
            (true, true) => {
                let cu = graph.node_by_id(&edge.u).unwrap().embedding.sim(&dq.coarse_embedding);
                let cv = graph.node_by_id(&edge.v).unwrap().embedding.sim(&dq.coarse_embedding);
                if cu > cv || (cu == cv && edge.u <= edge.v) {
                    vec![&edge.u]
                } else {
                    vec![&edge.v]
                }
            }
            (true, false) => vec![&edge.u],
            (false, true) => vec![&edge.v],
            (false, false) => vec![&edge.u, &edge.v],
        };
        scored.push((score, survivors));
    }
    for comp in &coarse_ids {
        if graph.neighbors(comp).unwrap().is_empty() {
            let maxima = side_maxima(graph, comp, dq);
            scored.push((maxima.iter().sum(), vec![comp]));
        }
    }

    let mut best: std::collections::BTreeMap<&str, f64> = Default::default();
    for (score, survivors) in &scored {
        for id in survivors {
            let entry = best.entry(id).or_insert(f64::NEG_INFINITY);
            if *score > *entry {
                *entry = *score;
            }
        }
    }
    let mut ranked: Vec<(&str, f64, f64)> = best
        .into_iter()
        .map(|(id, score)| {
            let coarse_sim = graph.node_by_id(id).unwrap().embedding.sim(&dq.coarse_embedding);
            (id, score, coarse_sim)
        })
        .collect();
    ranked.sort_by(|(ai, asc, ac), (bi, bsc, bc)| {
        bsc.partial_cmp(asc)
            .unwrap()
            .then_with(|| bc.partial_cmp(ac).unwrap())
            .then_with(|| ai.cmp(bi))
    });
    ranked.truncate(n_ret);
    ranked
        .into_iter()
        .map(|(id, score, _)| OracleEntry {
            comp_id: id.to_string(),
            score,
        })
        .collect()
}

/// Beam wide enough that traversal degenerates to exhaustive scoring.
pub fn exhaustive_beam(graph: &LayeredComponentGraph) -> usize {
    let coarse = graph.coarse_indices().len();
    let isolated = graph
        .nodes()
        .iter()
        .filter(|n| n.layer == 0 && graph.neighbors(&n.id).unwrap().is_empty())
        .count();
    coarse + graph.edges().e0.len() + isolated
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
