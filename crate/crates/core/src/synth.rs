//! Synthetic multihop benchmark generator.
//!
//! Every query plants a bridge paragraph in an anchor document that links to
//! a target document holding the gold component. The query concatenates an
//! anchor phrase (matched by the bridge) and a gold phrase (matched only by
//! the gold component's subcomponents), joined with "and" so the rule
//! decomposer splits it in two. Distractor components overlap the query
//! vocabulary more strongly than the bridge does at the coarse level, so
//! coarse-only retrieval ranks them first and the gold component stays out
//! of reach without the planted link.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Component, Corpus, Document, Modality, ObjectAnnotation};
use crate::decompose::ModalityLabel;
use crate::eval::QueryRecord;

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub queries: usize,
    pub seed: u64,
    /// Upper bound on distractor components per query; each query draws
    /// 1..=max. The bridge's coarse rank is one past the distractor count,
    /// which is what makes recall climb with beam width.
    pub distractors_max: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            queries: 200,
            seed: 7,
            distractors_max: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    pub corpus: Corpus,
    pub queries: Vec<QueryRecord>,
}

fn paragraph(text: String, links: Vec<String>) -> Component {
    Component {
        comp_id: String::new(), // assigned below
        modality: Modality::Paragraph,
        text,
        rows: None,
        objects: None,
        links,
        image_ref: None,
    }
}

fn assign_ids(mut doc: Document) -> Document {
    for (i, comp) in doc.components.iter_mut().enumerate() {
        comp.comp_id = crate::corpus::comp_id(&doc.doc_id, i);
    }
    doc
}

/// Gold component content per modality; the gold phrase tokens live in one
/// subcomponent, the rest is per-query filler that dilutes the coarse
/// embedding.
fn gold_component(i: usize, modality: ModalityLabel) -> Component {
    match modality {
        ModalityLabel::Text => paragraph(
            format!(
                "gld{i}t0 gld{i}t1 gld{i}t2 gld{i}t3 fil{i}c0. \
                 fil{i}c1 fil{i}c2 fil{i}c3 fil{i}c4. fil{i}c5 fil{i}c6."
            ),
            vec![],
        ),
        ModalityLabel::Table => Component {
            comp_id: String::new(),
            modality: Modality::Table,
            text: String::new(),
            rows: Some(vec![
                vec!["item".into(), "how many".into()],
                vec![format!("gld{i}t0 gld{i}t1"), format!("gld{i}t2")],
                vec![format!("fil{i}c0"), format!("fil{i}c1")],
                vec![format!("fil{i}c2"), format!("fil{i}c3")],
            ]),
            objects: None,
            links: vec![],
            image_ref: None,
        },
        ModalityLabel::Image => Component {
            comp_id: String::new(),
            modality: Modality::Image,
            text: format!("fil{i}c0 fil{i}c1 gld{i}t0"),
            rows: None,
            objects: Some(vec![
                ObjectAnnotation {
                    label: format!("gld{i}t0 gld{i}t1 logo"),
                    bbox: [0, 0, 32, 32],
                },
                ObjectAnnotation {
                    label: format!("fil{i}c2"),
                    bbox: [40, 0, 64, 32],
                },
            ]),
            links: vec![],
            image_ref: None,
        },
    }
}

fn gold_phrase(i: usize, modality: ModalityLabel) -> String {
    match modality {
        ModalityLabel::Text => format!("gld{i}t0 gld{i}t1 gld{i}t2 gld{i}t3"),
        ModalityLabel::Table => format!("how many gld{i}t0 gld{i}t1 gld{i}t2"),
        ModalityLabel::Image => format!("gld{i}t0 gld{i}t1 logo"),
    }
}

/// Generate the benchmark: corpus plus combined query/qrels records.
pub fn generate(cfg: &SynthConfig) -> SynthBenchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut corpus = Vec::new();
    let mut queries = Vec::new();
    let modalities = [ModalityLabel::Text, ModalityLabel::Table, ModalityLabel::Image];

    for i in 0..cfg.queries {
        let modality = modalities[i % modalities.len()];
        let anchor_phrase = format!("anc{i}t0 anc{i}t1 anc{i}t2 anc{i}t3");

        // Anchor document: the bridge paragraph (links to the target) plus
        // one filler component.
        corpus.push(assign_ids(Document {
            doc_id: format!("anc{i}"),
            title: format!("Anchor {i}"),
            components: vec![
                paragraph(
                    format!("{anchor_phrase} fil{i}a0 fil{i}a1."),
                    vec![format!("tgt{i}")],
                ),
                paragraph(format!("fil{i}b0 fil{i}b1 fil{i}b2."), vec![]),
            ],
        }));

        // Target document: the gold component plus one filler.
        corpus.push(assign_ids(Document {
            doc_id: format!("tgt{i}"),
            title: format!("Target {i}"),
            components: vec![
                gold_component(i, modality),
                paragraph(format!("fil{i}d0 fil{i}d1 fil{i}d2."), vec![]),
            ],
        }));

        // Distractors: three anchor tokens and two gold tokens each, so they
        // outrank the bridge on coarse similarity but never hold the full
        // evidence for either subquery.
        let distractors = 1 + rng.gen_range(0..cfg.distractors_max);
        let mut placed = 0;
        let mut doc_no = 0;
        while placed < distractors {
            let in_doc = (distractors - placed).min(4);
            let comps = (0..in_doc)
                .map(|k| {
                    let j = placed + k;
                    paragraph(
                        format!("anc{i}t0 anc{i}t1 anc{i}t2 gld{i}t0 gld{i}t1 fil{i}n{j}."),
                        vec![],
                    )
                })
                .collect();
            corpus.push(assign_ids(Document {
                doc_id: format!("noise{i}x{doc_no}"),
                title: format!("Noise {i}.{doc_no}"),
                components: comps,
            }));
            placed += in_doc;
            doc_no += 1;
        }

        queries.push(QueryRecord {
            qid: format!("q{i:04}"),
            text: format!("{anchor_phrase} and {}", gold_phrase(i, modality)),
            gold: vec![format!("tgt{i}/0")],
            gold_modalities: Some(vec![modality]),
        });
    }

    SynthBenchmark { corpus, queries }
}

/// Uniform corpus for build-time scaling measurements: every document has
/// the same component mix and content volume, with a link chaining each
/// document to its predecessor.
pub fn scaling_corpus(docs: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(docs);
    for d in 0..docs {
        let mut components = Vec::new();
        for p in 0..5 {
            let sentences: Vec<String> = (0..5)
                .map(|s| {
                    let words: Vec<String> =
                        (0..8).map(|w| format!("w{}x{p}x{s}x{w}", rng.gen_range(0..50_000))).collect();
                    format!("{}.", words.join(" "))
                })
                .collect();
            let links = if p == 0 && d > 0 {
                vec![format!("doc{}", d - 1)]
            } else {
                vec![]
            };
            components.push(paragraph(sentences.join(" "), links));
        }
        components.push(Component {
            comp_id: String::new(),
            modality: Modality::Table,
            text: String::new(),
            rows: Some(vec![
                vec!["name".into(), "value".into()],
                vec![format!("r{d}a"), format!("v{}", rng.gen_range(0..1000))],
                vec![format!("r{d}b"), format!("v{}", rng.gen_range(0..1000))],
                vec![format!("r{d}c"), format!("v{}", rng.gen_range(0..1000))],
            ]),
            objects: None,
            links: vec![],
            image_ref: None,
        });
        components.push(Component {
            comp_id: String::new(),
            modality: Modality::Image,
            text: format!("figure for doc{d}"),
            rows: None,
            objects: Some(vec![
                ObjectAnnotation {
                    label: format!("obj{d}a"),
                    bbox: [0, 0, 10, 10],
                },
                ObjectAnnotation {
                    label: format!("obj{d}b"),
                    bbox: [12, 0, 20, 10],
                },
            ]),
            links: vec![],
            image_ref: None,
        });
        corpus.push(assign_ids(Document {
            doc_id: format!("doc{d}"),
            title: format!("Doc {d}"),
            components,
        }));
    }
    corpus
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, resolve_links, write_corpus};

    #[test]
    fn generated_corpus_parses_and_resolves() {
        let bench = generate(&SynthConfig {
            queries: 6,
            seed: 1,
            distractors_max: 4,
        });
        let mut buf = Vec::new();
        write_corpus(&bench.corpus, &mut buf).unwrap();
        let reparsed = parse_corpus(std::io::Cursor::new(buf.as_slice())).unwrap();
        assert_eq!(reparsed, bench.corpus);
        let links = resolve_links(&reparsed);
        assert_eq!(links.dropped, 0);
        assert_eq!(links.pairs.len(), 6, "one bridge link per query");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SynthConfig {
            queries: 5,
            seed: 42,
            distractors_max: 6,
        };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.queries, b.queries);
    }

    #[test]
    fn queries_split_into_anchor_and_gold_phrases() {
        let bench = generate(&SynthConfig {
            queries: 3,
            seed: 1,
            distractors_max: 2,
        });
        for (i, q) in bench.queries.iter().enumerate() {
            let parts = crate::decompose::rule_split(&q.text);
            assert_eq!(parts.len(), 2, "query {i} must split in two: {:?}", q.text);
            let label = crate::decompose::classify_modality(&parts[1]);
            assert_eq!(Some(vec![label]), q.gold_modalities.clone());
        }
    }

    #[test]
    fn gold_is_reachable_only_via_the_bridge_link() {
        let bench = generate(&SynthConfig {
            queries: 2,
            seed: 3,
            distractors_max: 3,
        });
        for (i, q) in bench.queries.iter().enumerate() {
            let gold = &q.gold[0];
            let (gold_doc, _) = crate::corpus::parse_comp_id(gold).unwrap();
            let marker = format!("gld{i}t");
            // no component outside the target document holds more than the
            // partial overlap distractors are built with
            for doc in &bench.corpus {
                if doc.doc_id == gold_doc {
                    continue;
                }
                for comp in &doc.components {
                    let mut content = comp.text.clone();
                    for row in comp.rows.as_deref().unwrap_or_default() {
                        content.push_str(&row.join(" "));
                    }
                    for obj in comp.objects.as_deref().unwrap_or_default() {
                        content.push_str(&obj.label);
                    }
                    assert!(
                        content.matches(&marker).count() <= 2,
                        "component {} holds too much of query {i}'s gold vocabulary",
                        comp.comp_id
                    );
                }
            }
        }
    }

    #[test]
    fn scaling_corpus_shape() {
        let corpus = scaling_corpus(10, 9);
        assert_eq!(corpus.len(), 10);
        for doc in &corpus {
            assert_eq!(doc.components.len(), 7);
        }
        let links = resolve_links(&corpus);
        assert_eq!(links.pairs.len(), 9);
    }
}
