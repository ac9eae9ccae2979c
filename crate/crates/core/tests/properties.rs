//! Property tests for the library's structural invariants.

use proptest::prelude::*;

use layergraph::corpus::{Component, Corpus, Document, Modality, ObjectAnnotation};
use layergraph::decompose::Decomposer;
use layergraph::embed::{cosine, hash_embed, EmbedRequest, Embedding, HashEmbedder, Instruction};
use layergraph::embed::{DEFAULT_INDEX_SEED, DEFAULT_SIGN_SEED};
use layergraph::segment::split_sentences;
use layergraph::{parse_corpus, write_corpus};

fn sentence() -> impl Strategy<Value = String> {
    "[a-z]{1,6}( [a-z]{1,6}){0,4}\\."
}

fn paragraph_component() -> impl Strategy<Value = Component> {
    proptest::collection::vec(sentence(), 1..3).prop_map(|sentences| Component {
        comp_id: String::new(),
        modality: Modality::Paragraph,
        text: sentences.join(" "),
        rows: None,
        objects: None,
        links: vec![],
        image_ref: None,
    })
}

fn table_component() -> impl Strategy<Value = Component> {
    (1usize..3, 0usize..3, "[a-z]{1,5}").prop_map(|(width, data_rows, stem)| {
        let mut rows = vec![(0..width).map(|c| format!("{stem}h{c}")).collect::<Vec<_>>()];
        for r in 0..data_rows {
            rows.push((0..width).map(|c| format!("{stem}v{r}x{c}")).collect());
        }
        Component {
            comp_id: String::new(),
            modality: Modality::Table,
            text: String::new(),
            rows: Some(rows),
            objects: None,
            links: vec![],
            image_ref: None,
        }
    })
}

fn image_component() -> impl Strategy<Value = Component> {
    (proptest::collection::vec("[a-z]{1,8}", 0..3), proptest::option::of("[a-z ]{1,12}"))
        .prop_map(|(labels, caption)| Component {
            comp_id: String::new(),
            modality: Modality::Image,
            text: caption.unwrap_or_default().trim().to_string(),
            rows: None,
            objects: Some(
                labels
                    .into_iter()
                    .enumerate()
                    .map(|(i, label)| ObjectAnnotation {
                        label,
                        bbox: [i as i64 * 10, 0, i as i64 * 10 + 5, 5],
                    })
                    .collect(),
            ),
            links: vec![],
            image_ref: None,
        })
}

fn component() -> impl Strategy<Value = Component> {
    prop_oneof![paragraph_component(), table_component(), image_component()]
}

fn corpus() -> impl Strategy<Value = Corpus> {
    proptest::collection::vec(
        (proptest::collection::vec(component(), 1..4), proptest::collection::vec(0usize..5, 0..2)),
        1..4,
    )
    .prop_map(|docs| {
        docs.into_iter()
            .enumerate()
            .map(|(d, (mut components, link_targets))| {
                for (c, comp) in components.iter_mut().enumerate() {
                    comp.comp_id = format!("d{d}/{c}");
                }
                if let Some(comp) = components.first_mut() {
                    // some targets exist, some dangle
                    comp.links = link_targets.iter().map(|t| format!("d{t}")).collect();
                }
                Document {
                    doc_id: format!("d{d}"),
                    title: format!("T{d}"),
                    components,
                }
            })
            .collect()
    })
}

proptest! {
    /// parse(serialize(corpus)) is the identity on all fields.
    #[test]
    fn corpus_roundtrip(corpus in corpus()) {
        let mut buf = Vec::new();
        write_corpus(&corpus, &mut buf).unwrap();
        let reparsed = parse_corpus(std::io::Cursor::new(buf.as_slice())).unwrap();
        prop_assert_eq!(reparsed, corpus);
    }

    /// Cosine is symmetric, bounded, and 1 on nonzero self-pairs.
    #[test]
    fn cosine_properties(values in proptest::collection::vec(-1.0f32..1.0, 2..32)) {
        let u = Embedding(values.clone());
        let v = Embedding(values.iter().rev().copied().collect());
        let uv = cosine(&u, &v).unwrap();
        let vu = cosine(&v, &u).unwrap();
        prop_assert_eq!(uv, vu);
        prop_assert!(uv.abs() <= 1.0 + 1e-9);
        if !u.is_zero() {
            prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() <= 1e-9);
        }
    }

    /// The hash embedder is a pure function of content, instruction, and
    /// dimension, and the instruction token always changes non-empty input.
    #[test]
    fn hash_embed_purity(content in "[a-z0-9 ]{1,40}") {
        prop_assume!(content.chars().any(|c| c.is_alphanumeric()));
        let d = 64;
        let text = EmbedRequest::new(content.clone(), Instruction::Text);
        let a = hash_embed(&text, d, DEFAULT_INDEX_SEED, DEFAULT_SIGN_SEED);
        let b = hash_embed(&text, d, DEFAULT_INDEX_SEED, DEFAULT_SIGN_SEED);
        prop_assert_eq!(&a, &b);
        let image = hash_embed(
            &EmbedRequest::new(content, Instruction::Image),
            d,
            DEFAULT_INDEX_SEED,
            DEFAULT_SIGN_SEED,
        );
        prop_assert_ne!(&a, &image);
        prop_assert!((a.norm() - 1.0).abs() <= 1e-6);
    }

    /// Decomposition always yields between one and five embedded subqueries.
    #[test]
    fn decompose_bounds(query in "[a-zA-Z0-9,;() ]{1,80}") {
        prop_assume!(query.chars().any(|c| c.is_alphanumeric()));
        let embedder = HashEmbedder::new(32);
        let dq = Decomposer::rule().decompose(&query, &embedder).unwrap();
        prop_assert!(!dq.subqueries.is_empty());
        prop_assert!(dq.subqueries.len() <= 5);
        for sub in &dq.subqueries {
            prop_assert!(!sub.text.trim().is_empty());
            prop_assert_eq!(sub.embedding.dim(), 32);
        }
        prop_assert_eq!(dq.coarse_embedding.dim(), 32);
    }

    /// Joining the sentences with single spaces reconstructs the input
    /// modulo whitespace.
    #[test]
    fn sentence_split_reconstruction(text in "[A-Za-z0-9 .!?()\"]{1,80}") {
        prop_assume!(!text.trim().is_empty());
        let sentences = split_sentences(&text);
        let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        prop_assert_eq!(norm(&sentences.join(" ")), norm(&text));
        for s in &sentences {
            prop_assert!(!s.is_empty());
        }
    }
}
