//! Index directory persistence.
//!
//! Layout: `manifest` (JSON build config and counts), `nodes` (one JSON
//! record per node with its byte offset into the blob), `edges` (coarse and
//! containment edge records), `embeddings.bin` (little-endian f32, one
//! `dimension`-sized slice per node in record order).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CoarseEdge, EdgeSet, IndexManifest, LayeredComponentGraph, Node, NodeType, Provenance};

const MANIFEST_FILE: &str = "manifest";
const NODES_FILE: &str = "nodes";
const EDGES_FILE: &str = "edges";
const EMBEDDINGS_FILE: &str = "embeddings.bin";

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: String,
    layer: u8,
    #[serde(rename = "type")]
    node_type: NodeType,
    content: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum EdgeRecord {
    E0 {
        u: String,
        v: String,
        provenance: Provenance,
    },
    Down {
        parent: String,
        child: String,
    },
}

/// Whether `path` already holds an index (used by the CLI's overwrite guard).
pub fn index_exists(path: &Path) -> bool {
    path.join(MANIFEST_FILE).is_file()
}

pub fn save_index(graph: &LayeredComponentGraph, path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    let manifest = graph.manifest();
    fs::write(
        path.join(MANIFEST_FILE),
        serde_json::to_string_pretty(manifest)
            .map_err(|e| Error::IndexFormat(format!("manifest: {e}")))?,
    )?;

    let d = manifest.dimension;
    let mut nodes_out = BufWriter::new(fs::File::create(path.join(NODES_FILE))?);
    let mut blob = BufWriter::new(fs::File::create(path.join(EMBEDDINGS_FILE))?);
    for (i, node) in graph.nodes().iter().enumerate() {
        let record = NodeRecord {
            id: node.id.clone(),
            layer: node.layer,
            node_type: node.node_type,
            content: node.content.clone(),
            offset: (i * d * 4) as u64,
        };
        serde_json::to_writer(&mut nodes_out, &record)
            .map_err(|e| Error::IndexFormat(format!("node record: {e}")))?;
        nodes_out.write_all(b"\n")?;
        for value in &node.embedding.0 {
            blob.write_all(&value.to_le_bytes())?;
        }
    }
    nodes_out.flush()?;
    blob.flush()?;

    let mut edges_out = BufWriter::new(fs::File::create(path.join(EDGES_FILE))?);
    for edge in &graph.edges().e0 {
        let record = EdgeRecord::E0 {
            u: edge.u.clone(),
            v: edge.v.clone(),
            provenance: edge.provenance,
        };
        serde_json::to_writer(&mut edges_out, &record)
            .map_err(|e| Error::IndexFormat(format!("edge record: {e}")))?;
        edges_out.write_all(b"\n")?;
    }
    for (parent, child) in &graph.edges().e_down {
        let record = EdgeRecord::Down {
            parent: parent.clone(),
            child: child.clone(),
        };
        serde_json::to_writer(&mut edges_out, &record)
            .map_err(|e| Error::IndexFormat(format!("edge record: {e}")))?;
        edges_out.write_all(b"\n")?;
    }
    edges_out.flush()?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<LayeredComponentGraph> {
    let manifest_raw = fs::read_to_string(path.join(MANIFEST_FILE))
        .map_err(|e| Error::IndexFormat(format!("manifest: {e}")))?;
    let manifest: IndexManifest = serde_json::from_str(&manifest_raw)
        .map_err(|e| Error::IndexFormat(format!("manifest: {e}")))?;
    let d = manifest.dimension;
    if d == 0 {
        return Err(Error::IndexFormat("manifest dimension is zero".into()));
    }

    let blob = fs::read(path.join(EMBEDDINGS_FILE))?;
    let nodes_file = BufReader::new(fs::File::open(path.join(NODES_FILE))?);
    let mut nodes = Vec::new();
    for (lineno, line) in nodes_file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: NodeRecord = serde_json::from_str(&line)
            .map_err(|e| Error::IndexFormat(format!("nodes line {}: {e}", lineno + 1)))?;
        let expected = (nodes.len() * d * 4) as u64;
        if record.offset != expected {
            return Err(Error::IndexFormat(format!(
                "node {} offset {} does not match record order (expected {expected})",
                record.id, record.offset
            )));
        }
        if record.node_type.layer() != record.layer {
            return Err(Error::IndexFormat(format!(
                "node {} layer {} contradicts its type",
                record.id, record.layer
            )));
        }
        let start = record.offset as usize;
        let end = start + d * 4;
        if end > blob.len() {
            return Err(Error::IndexFormat(format!(
                "embedding blob truncated at node {}",
                record.id
            )));
        }
        let values = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        nodes.push(Node {
            id: record.id,
            layer: record.layer,
            node_type: record.node_type,
            content: record.content,
            embedding: crate::embed::Embedding(values),
        });
    }
    if blob.len() != nodes.len() * d * 4 {
        return Err(Error::IndexFormat(format!(
            "embedding blob holds {} bytes, node records require {}",
            blob.len(),
            nodes.len() * d * 4
        )));
    }
    if nodes.len() != manifest.counts.components + manifest.counts.subcomponents {
        return Err(Error::IndexFormat(format!(
            "manifest counts {} nodes, file holds {}",
            manifest.counts.components + manifest.counts.subcomponents,
            nodes.len()
        )));
    }

    let edges_file = BufReader::new(fs::File::open(path.join(EDGES_FILE))?);
    let mut edges = EdgeSet::default();
    for (lineno, line) in edges_file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EdgeRecord = serde_json::from_str(&line)
            .map_err(|e| Error::IndexFormat(format!("edges line {}: {e}", lineno + 1)))?;
        match record {
            EdgeRecord::E0 { u, v, provenance } => edges.e0.push(CoarseEdge { u, v, provenance }),
            EdgeRecord::Down { parent, child } => edges.e_down.push((parent, child)),
        }
    }

    LayeredComponentGraph::assemble(nodes, edges, manifest)
}
