//! The layered component graph: coarse component nodes, fine subcomponent
//! nodes, intra-document cliques, inter-document link edges, and containment
//! edges, with a per-node embedding.
//!
//! Construction runs in three instrumented stages (node generation, edge
//! generation, embedding generation); the finalized graph is immutable and
//! safe to share across query threads.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{doc_index, parse_comp_id, Corpus, LinkMapping, Modality};
use crate::embed::{EmbedRequest, Embedder, EmbedderInfo, Embedding, Instruction};
use crate::error::{Error, Result};
use crate::segment::{subcomponents, SubKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Para,
    Tbl,
    Img,
    Sent,
    Row,
    Obj,
}

impl NodeType {
    pub fn layer(self) -> u8 {
        match self {
            NodeType::Para | NodeType::Tbl | NodeType::Img => 0,
            NodeType::Sent | NodeType::Row | NodeType::Obj => 1,
        }
    }

    pub fn instruction(self) -> Instruction {
        match self {
            NodeType::Para | NodeType::Sent => Instruction::Text,
            NodeType::Tbl | NodeType::Row => Instruction::Table,
            NodeType::Img | NodeType::Obj => Instruction::Image,
        }
    }

    fn coarse(modality: Modality) -> Self {
        match modality {
            Modality::Paragraph => NodeType::Para,
            Modality::Table => NodeType::Tbl,
            Modality::Image => NodeType::Img,
        }
    }

    fn fine(kind: SubKind) -> Self {
        match kind {
            SubKind::Sentence => NodeType::Sent,
            SubKind::RowSegment => NodeType::Row,
            SubKind::Object => NodeType::Obj,
        }
    }

    fn pseudo(modality: Modality) -> Self {
        match modality {
            Modality::Paragraph => NodeType::Sent,
            Modality::Table => NodeType::Row,
            Modality::Image => NodeType::Obj,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub layer: u8,
    pub node_type: NodeType,
    pub content: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Intra,
    Inter,
}

/// Undirected coarse edge, stored canonicalized with `u < v`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseEdge {
    pub u: String,
    pub v: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EdgeSet {
    /// Coarse pairs sorted by `(u, v)`.
    pub e0: Vec<CoarseEdge>,
    /// Containment edges `(parent comp_id, child sub_id)` in creation order.
    pub e_down: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphCounts {
    pub docs: usize,
    pub components: usize,
    pub subcomponents: usize,
    pub e0_intra: usize,
    pub e0_inter: usize,
    pub e_down: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub node_generation_ms: f64,
    pub edge_generation_ms: f64,
    pub embedding_generation_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.node_generation_ms + self.edge_generation_ms + self.embedding_generation_ms
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BuildReport {
    pub counts: GraphCounts,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub dimension: usize,
    pub embedder: EmbedderInfo,
    pub corpus_digest: String,
    pub counts: GraphCounts,
    pub doc_titles: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct LayeredComponentGraph {
    nodes: Vec<Node>,
    by_id: HashMap<String, u32>,
    edges: EdgeSet,
    /// Per-node coarse adjacency, sorted by neighbor id; empty for fine nodes.
    adjacency: Vec<Vec<u32>>,
    /// Per-node fine children in containment order; empty for fine nodes.
    sub_of: Vec<Vec<u32>>,
    /// Indices of coarse nodes in insertion order.
    coarse: Vec<u32>,
    manifest: IndexManifest,
}

impl PartialEq for LayeredComponentGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges && self.manifest == other.manifest
    }
}

impl LayeredComponentGraph {
    /// Assemble the immutable graph from parts. Adjacency and containment
    /// maps are derived here; used by the builder and the index loader.
    pub(crate) fn assemble(
        nodes: Vec<Node>,
        edges: EdgeSet,
        manifest: IndexManifest,
    ) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if by_id.insert(node.id.clone(), i as u32).is_some() {
                return Err(Error::Validation(format!("duplicate node id {}", node.id)));
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for edge in &edges.e0 {
            let u = *by_id
                .get(&edge.u)
                .ok_or_else(|| Error::IndexFormat(format!("edge endpoint {} unknown", edge.u)))?;
            let v = *by_id
                .get(&edge.v)
                .ok_or_else(|| Error::IndexFormat(format!("edge endpoint {} unknown", edge.v)))?;
            adjacency[u as usize].push(v);
            adjacency[v as usize].push(u);
        }
        for list in &mut adjacency {
            list.sort_by(|a, b| nodes[*a as usize].id.cmp(&nodes[*b as usize].id));
            list.dedup();
        }
        let mut sub_of = vec![Vec::new(); nodes.len()];
        for (parent, child) in &edges.e_down {
            let p = *by_id
                .get(parent)
                .ok_or_else(|| Error::IndexFormat(format!("containment parent {parent} unknown")))?;
            let c = *by_id
                .get(child)
                .ok_or_else(|| Error::IndexFormat(format!("containment child {child} unknown")))?;
            sub_of[p as usize].push(c);
        }
        let coarse = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.layer == 0)
            .map(|(i, _)| i as u32)
            .collect();
        Ok(Self {
            nodes,
            by_id,
            edges,
            adjacency,
            sub_of,
            coarse,
            manifest,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, idx: u32) -> &Node {
        &self.nodes[idx as usize]
    }

    pub fn idx(&self, id: &str) -> Option<u32> {
        self.by_id.get(id).copied()
    }

    pub fn node_by_id(&self, id: &str) -> Option<&Node> {
        self.idx(id).map(|i| self.node(i))
    }

    /// Indices of coarse (layer-0) nodes in insertion order.
    pub fn coarse_indices(&self) -> &[u32] {
        &self.coarse
    }

    pub fn edges(&self) -> &EdgeSet {
        &self.edges
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn title_of(&self, comp_id: &str) -> Option<&str> {
        let (doc, _) = parse_comp_id(comp_id)?;
        self.manifest.doc_titles.get(doc).map(String::as_str)
    }

    pub(crate) fn neighbor_indices(&self, idx: u32) -> &[u32] {
        &self.adjacency[idx as usize]
    }

    pub(crate) fn child_indices(&self, idx: u32) -> &[u32] {
        &self.sub_of[idx as usize]
    }

    /// Coarse neighbors of a coarse node, ascending by id.
    pub fn neighbors(&self, node_id: &str) -> Result<Vec<&str>> {
        let idx = self
            .idx(node_id)
            .ok_or_else(|| Error::UnknownNode(node_id.to_string()))?;
        if self.node(idx).layer != 0 {
            return Err(Error::NotCoarse(node_id.to_string()));
        }
        Ok(self
            .neighbor_indices(idx)
            .iter()
            .map(|i| self.node(*i).id.as_str())
            .collect())
    }

    /// Fine children ids of a coarse node, in containment order.
    pub fn children(&self, node_id: &str) -> Result<Vec<&str>> {
        let idx = self
            .idx(node_id)
            .ok_or_else(|| Error::UnknownNode(node_id.to_string()))?;
        if self.node(idx).layer != 0 {
            return Err(Error::NotCoarse(node_id.to_string()));
        }
        Ok(self
            .child_indices(idx)
            .iter()
            .map(|i| self.node(*i).id.as_str())
            .collect())
    }
}

/// Content string a coarse node is embedded from.
fn coarse_content(comp: &crate::corpus::Component) -> String {
    match comp.modality {
        Modality::Paragraph => comp.text.clone(),
        Modality::Table => comp
            .rows
            .as_ref()
            .and_then(|r| r.first())
            .map(|h| h.join(" | "))
            .unwrap_or_default(),
        Modality::Image => {
            let mut parts: Vec<&str> = Vec::new();
            if !comp.text.is_empty() {
                parts.push(&comp.text);
            }
            for obj in comp.objects.as_deref().unwrap_or_default() {
                parts.push(&obj.label);
            }
            parts.join(" ")
        }
    }
}

fn corpus_digest(corpus: &Corpus) -> Result<String> {
    let mut buf = Vec::new();
    crate::corpus::write_corpus(corpus, &mut buf)?;
    let mut hasher = Sha256::new();
    hasher.update(&buf);
    Ok(format!("{:x}", hasher.finalize()))
}

const EMBED_CHUNK: usize = 256;

/// Build the layered component graph over a validated corpus and resolved
/// link mapping.
///
/// Coarse nodes are the components, fine nodes the subcomponents (a
/// component with no subcomponents gets one pseudo-subcomponent carrying its
/// own content, so edge scoring always has fine evidence). Coarse edges are
/// the per-document cliques plus, for every resolved link to a different
/// document, one edge from the linking component to each component of the
/// target document.
pub fn build_graph(
    corpus: &Corpus,
    links: &LinkMapping,
    embedder: &dyn Embedder,
) -> Result<(LayeredComponentGraph, BuildReport)> {
    let mut report = BuildReport::default();

    // Stage 1: node generation.
    let stage_start = Instant::now();
    let digest = corpus_digest(corpus)?;
    let mut nodes: Vec<Node> = Vec::new();
    let mut edges = EdgeSet::default();
    let mut doc_titles = BTreeMap::new();
    for doc in corpus {
        doc_titles.insert(doc.doc_id.clone(), doc.title.clone());
        for comp in &doc.components {
            let content = coarse_content(comp);
            nodes.push(Node {
                id: comp.comp_id.clone(),
                layer: 0,
                node_type: NodeType::coarse(comp.modality),
                content: content.clone(),
                embedding: Embedding::zeros(0),
            });
            let mut subs = subcomponents(comp)?;
            if subs.is_empty() {
                subs.push(crate::segment::Subcomponent {
                    sub_id: crate::corpus::comp_id(&comp.comp_id, 0),
                    parent: comp.comp_id.clone(),
                    kind: match NodeType::pseudo(comp.modality) {
                        NodeType::Sent => SubKind::Sentence,
                        NodeType::Row => SubKind::RowSegment,
                        _ => SubKind::Object,
                    },
                    content,
                });
            }
            for sub in subs {
                edges.e_down.push((sub.parent.clone(), sub.sub_id.clone()));
                nodes.push(Node {
                    id: sub.sub_id,
                    layer: 1,
                    node_type: NodeType::fine(sub.kind),
                    content: sub.content,
                    embedding: Embedding::zeros(0),
                });
            }
        }
    }
    report.counts.docs = corpus.len();
    report.counts.components = corpus.iter().map(|d| d.components.len()).sum();
    report.counts.subcomponents = nodes.len() - report.counts.components;
    report.counts.e_down = edges.e_down.len();
    report.timings.node_generation_ms = stage_start.elapsed().as_secs_f64() * 1e3;

    // Stage 2: edge generation.
    let stage_start = Instant::now();
    let docs_by_id = doc_index(corpus);
    let mut e0: BTreeMap<(String, String), Provenance> = BTreeMap::new();
    for doc in corpus {
        for i in 0..doc.components.len() {
            for j in (i + 1)..doc.components.len() {
                let a = &doc.components[i].comp_id;
                let b = &doc.components[j].comp_id;
                let key = if a < b {
                    (a.clone(), b.clone())
                } else {
                    (b.clone(), a.clone())
                };
                e0.insert(key, Provenance::Intra);
            }
        }
    }
    for (comp, target) in &links.pairs {
        let (own_doc, _) = parse_comp_id(comp)
            .ok_or_else(|| Error::Validation(format!("link source {comp} is not a comp_id")))?;
        if own_doc == target {
            continue; // the intra clique already covers the own document
        }
        let Some(doc_pos) = docs_by_id.get(target.as_str()) else {
            continue;
        };
        for other in &corpus[*doc_pos].components {
            let key = if comp < &other.comp_id {
                (comp.clone(), other.comp_id.clone())
            } else {
                (other.comp_id.clone(), comp.clone())
            };
            e0.entry(key).or_insert(Provenance::Inter);
        }
    }
    for ((u, v), provenance) in e0 {
        match provenance {
            Provenance::Intra => report.counts.e0_intra += 1,
            Provenance::Inter => report.counts.e0_inter += 1,
        }
        edges.e0.push(CoarseEdge { u, v, provenance });
    }
    report.timings.edge_generation_ms = stage_start.elapsed().as_secs_f64() * 1e3;

    // Stage 3: embedding generation.
    let stage_start = Instant::now();
    let requests: Vec<EmbedRequest> = nodes
        .iter()
        .map(|n| EmbedRequest::new(n.content.clone(), n.node_type.instruction()))
        .collect();
    let chunks: Vec<&[EmbedRequest]> = requests.chunks(EMBED_CHUNK).collect();
    let embedded: std::result::Result<Vec<Vec<Embedding>>, Error> = {
        use rayon::prelude::*;
        chunks.par_iter().map(|chunk| embedder.embed_batch(chunk)).collect()
    };
    let embedded = match embedded {
        Ok(batches) => batches.into_iter().flatten().collect::<Vec<_>>(),
        Err(e) => {
            report.timings.embedding_generation_ms = stage_start.elapsed().as_secs_f64() * 1e3;
            return Err(Error::BuildAborted {
                report: Box::new(report),
                message: e.to_string(),
            });
        }
    };
    for (node, embedding) in nodes.iter_mut().zip(embedded) {
        node.embedding = embedding;
    }
    let manifest = IndexManifest {
        dimension: embedder.dimension(),
        embedder: embedder.info(),
        corpus_digest: digest,
        counts: report.counts,
        doc_titles,
    };
    let graph = LayeredComponentGraph::assemble(nodes, edges, manifest)?;
    report.timings.embedding_generation_ms = stage_start.elapsed().as_secs_f64() * 1e3;
    Ok((graph, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, resolve_links};
    use crate::embed::HashEmbedder;
    use std::io::Cursor;

    fn build(corpus_text: &str) -> (LayeredComponentGraph, BuildReport) {
        let corpus = parse_corpus(Cursor::new(corpus_text)).unwrap();
        let links = resolve_links(&corpus);
        build_graph(&corpus, &links, &HashEmbedder::new(64)).unwrap()
    }

    #[test]
    fn four_components_make_six_intra_pairs() {
        let doc = r#"{"doc_id":"D","title":"t","components":[
            {"type":"paragraph","text":"a."},{"type":"paragraph","text":"b."},
            {"type":"paragraph","text":"c."},{"type":"paragraph","text":"d."}]}"#
            .replace('\n', " ");
        let (graph, report) = build(&doc);
        assert_eq!(report.counts.e0_intra, 6);
        assert_eq!(report.counts.e0_inter, 0);
        assert_eq!(graph.edges().e0.len(), 6);
    }

    #[test]
    fn isolated_node_has_empty_adjacency() {
        let (graph, _) =
            build(r#"{"doc_id":"D","title":"t","components":[{"type":"paragraph","text":"alone."}]}"#);
        assert!(graph.neighbors("D/0").unwrap().is_empty());
    }

    #[test]
    fn neighbors_rejects_unknown_and_fine_ids() {
        let (graph, _) =
            build(r#"{"doc_id":"D","title":"t","components":[{"type":"paragraph","text":"alone."}]}"#);
        assert!(matches!(graph.neighbors("nope"), Err(Error::UnknownNode(_))));
        assert!(matches!(graph.neighbors("D/0/0"), Err(Error::NotCoarse(_))));
    }

    #[test]
    fn empty_image_gets_pseudo_subcomponent() {
        let (graph, report) = build(
            r#"{"doc_id":"D","title":"t","components":[{"type":"image","caption":"a dome","objects":[]}]}"#,
        );
        assert_eq!(report.counts.subcomponents, 1);
        let children = graph.children("D/0").unwrap();
        assert_eq!(children, vec!["D/0/0"]);
        let pseudo = graph.node_by_id("D/0/0").unwrap();
        assert_eq!(pseudo.node_type, NodeType::Obj);
        assert_eq!(pseudo.content, graph.node_by_id("D/0").unwrap().content);
    }

    #[test]
    fn symmetric_links_collapse_to_one_inter_edge() {
        let text = concat!(
            r#"{"doc_id":"A","title":"t","components":[{"type":"paragraph","text":"a.","links":["B"]}]}"#,
            "\n",
            r#"{"doc_id":"B","title":"t","components":[{"type":"paragraph","text":"b.","links":["A"]}]}"#
        );
        let (graph, report) = build(text);
        assert_eq!(report.counts.e0_inter, 1);
        assert_eq!(graph.edges().e0.len(), 1);
        assert_eq!(graph.edges().e0[0].provenance, Provenance::Inter);
    }

    #[test]
    fn self_document_link_produces_no_edge() {
        let (graph, report) = build(
            r#"{"doc_id":"A","title":"t","components":[{"type":"paragraph","text":"a.","links":["A"]}]}"#,
        );
        assert_eq!(report.counts.e0_inter, 0);
        assert!(graph.edges().e0.is_empty());
    }

    #[test]
    fn adjacency_is_symmetric() {
        let text = concat!(
            r#"{"doc_id":"A","title":"t","components":[{"type":"paragraph","text":"a."},{"type":"paragraph","text":"b."}]}"#,
            "\n",
            r#"{"doc_id":"B","title":"t","components":[{"type":"paragraph","text":"c.","links":["A"]}]}"#
        );
        let (graph, _) = build(text);
        for node in graph.nodes().iter().filter(|n| n.layer == 0) {
            for neighbor in graph.neighbors(&node.id).unwrap() {
                assert!(
                    graph.neighbors(neighbor).unwrap().contains(&node.id.as_str()),
                    "{} -> {neighbor} not mirrored",
                    node.id
                );
            }
        }
    }

    #[test]
    fn embedding_failure_aborts_with_partial_report() {
        struct Failing;
        impl Embedder for Failing {
            fn info(&self) -> crate::embed::EmbedderInfo {
                crate::embed::EmbedderInfo {
                    id: "failing".into(),
                    dimension: 8,
                    index_seed: 0,
                    sign_seed: 0,
                }
            }
            fn embed_batch(&self, _: &[EmbedRequest]) -> Result<Vec<Embedding>> {
                Err(Error::EmbeddingBackend {
                    request_index: Some(0),
                    message: "down".into(),
                })
            }
        }
        let corpus = parse_corpus(Cursor::new(
            r#"{"doc_id":"A","title":"t","components":[{"type":"paragraph","text":"a. b."}]}"#,
        ))
        .unwrap();
        let links = resolve_links(&corpus);
        match build_graph(&corpus, &links, &Failing) {
            Err(Error::BuildAborted { report, .. }) => {
                assert_eq!(report.counts.components, 1);
                assert_eq!(report.counts.subcomponents, 1);
            }
            other => panic!("expected BuildAborted, got {other:?}"),
        }
    }

    #[test]
    fn stage_timings_cover_build() {
        let mut lines = Vec::new();
        for i in 0..100 {
            lines.push(format!(
                r#"{{"doc_id":"D{i}","title":"t","components":[{{"type":"paragraph","text":"alpha beta gamma delta. epsilon zeta eta theta."}},{{"type":"paragraph","text":"iota kappa lambda. mu nu xi."}}]}}"#
            ));
        }
        let text = lines.join("\n");
        let corpus = parse_corpus(Cursor::new(text.as_str())).unwrap();
        let links = resolve_links(&corpus);
        let wall = Instant::now();
        let (_, report) = build_graph(&corpus, &links, &HashEmbedder::new(64)).unwrap();
        let wall_ms = wall.elapsed().as_secs_f64() * 1e3;
        let sum = report.timings.total_ms();
        assert!(sum > 0.0);
        assert!(sum <= wall_ms + 1e-3, "stages {sum} exceed wall {wall_ms}");
    }
}
