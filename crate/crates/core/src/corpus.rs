//! Corpus parsing, validation, and link resolution.
//!
//! The on-disk corpus is newline-delimited JSON: one document per line with
//! keys `doc_id`, `title`, `components[]`. Each component carries exactly the
//! payload its `type` demands (`text` for paragraphs, `rows` for tables,
//! `objects` plus optional `caption` for images) and an optional `links`
//! list of target document ids.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coarse retrieval unit kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Paragraph,
    Table,
    Image,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Modality::Paragraph => "paragraph",
            Modality::Table => "table",
            Modality::Image => "image",
        };
        f.write_str(s)
    }
}

/// Object annotation on an image component: a label plus a pixel-space
/// bounding box `x1, y1, x2, y2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub label: String,
    pub bbox: [i64; 4],
}

/// One coarse component of a document.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// `<doc_id>/<index>`; globally unique.
    pub comp_id: String,
    pub modality: Modality,
    /// Paragraph body, or image caption/alt-text (possibly empty for images).
    pub text: String,
    /// Table rows; `rows[0]` is the header.
    pub rows: Option<Vec<Vec<String>>>,
    /// Image object annotations.
    pub objects: Option<Vec<ObjectAnnotation>>,
    /// Target document ids this component links to.
    pub links: Vec<String>,
    /// Optional path to the image file; carried through but unused.
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub components: Vec<Component>,
}

pub type Corpus = Vec<Document>;

/// Resolved component-to-document link pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LinkMapping {
    /// `(comp_id, target doc_id)` pairs; every side exists in the corpus.
    pub pairs: BTreeSet<(String, String)>,
    /// Links whose target document did not exist and were dropped.
    pub dropped: usize,
}

/// Wire form of a document record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentRecord {
    doc_id: String,
    title: String,
    components: Vec<ComponentRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentRecord {
    #[serde(rename = "type")]
    kind: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rows: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    objects: Option<Vec<ObjectAnnotation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caption: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    links: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_ref: Option<String>,
}

/// Render a component id from its parts.
pub fn comp_id(doc_id: &str, index: usize) -> String {
    format!("{doc_id}/{index}")
}

/// Split a component id back into `(doc_id, index)`. The index is the
/// numeric segment after the last `/`.
pub fn parse_comp_id(id: &str) -> Option<(&str, usize)> {
    let (doc, idx) = id.rsplit_once('/')?;
    let index = idx.parse().ok()?;
    if doc.is_empty() {
        return None;
    }
    Some((doc, index))
}

impl Component {
    fn from_record(record: ComponentRecord, id: String, line: usize) -> Result<Self> {
        let ComponentRecord {
            kind,
            text,
            rows,
            objects,
            caption,
            links,
            image_ref,
        } = record;
        let fail = |message: String| Error::Validation(format!("line {line}: {message}"));
        match kind {
            Modality::Paragraph => {
                if rows.is_some() || objects.is_some() || caption.is_some() {
                    return Err(fail(format!("component {id}: paragraph with non-text payload")));
                }
                let text = text.unwrap_or_default();
                if text.trim().is_empty() {
                    return Err(fail(format!("component {id}: paragraph with empty text")));
                }
                Ok(Component {
                    comp_id: id,
                    modality: Modality::Paragraph,
                    text,
                    rows: None,
                    objects: None,
                    links,
                    image_ref,
                })
            }
            Modality::Table => {
                if text.is_some() || objects.is_some() || caption.is_some() {
                    return Err(fail(format!("component {id}: table with non-row payload")));
                }
                let rows = rows.unwrap_or_default();
                if rows.is_empty() {
                    return Err(fail(format!("component {id}: table without a header row")));
                }
                if rows[0].is_empty() {
                    return Err(fail(format!("component {id}: table header row is empty")));
                }
                Ok(Component {
                    comp_id: id,
                    modality: Modality::Table,
                    text: String::new(),
                    rows: Some(rows),
                    objects: None,
                    links,
                    image_ref,
                })
            }
            Modality::Image => {
                if text.is_some() || rows.is_some() {
                    return Err(fail(format!("component {id}: image with non-object payload")));
                }
                let objects = objects.unwrap_or_default();
                for (i, obj) in objects.iter().enumerate() {
                    let [x1, y1, x2, y2] = obj.bbox;
                    if obj.label.is_empty() {
                        return Err(fail(format!("component {id}: object {i} has empty label")));
                    }
                    if x1 >= x2 || y1 >= y2 {
                        return Err(fail(format!("component {id}: object {i} has degenerate bbox")));
                    }
                }
                Ok(Component {
                    comp_id: id,
                    modality: Modality::Image,
                    text: caption.unwrap_or_default(),
                    rows: None,
                    objects: Some(objects),
                    links,
                    image_ref,
                })
            }
        }
    }

    fn to_record(&self) -> ComponentRecord {
        let (text, caption) = match self.modality {
            Modality::Paragraph => (Some(self.text.clone()), None),
            Modality::Table => (None, None),
            Modality::Image => (
                None,
                if self.text.is_empty() { None } else { Some(self.text.clone()) },
            ),
        };
        ComponentRecord {
            kind: self.modality,
            text,
            rows: self.rows.clone(),
            objects: self.objects.clone(),
            caption,
            links: self.links.clone(),
            image_ref: self.image_ref.clone(),
        }
    }
}

/// Parse and validate a newline-delimited corpus stream.
///
/// Document and component order is preserved; component ids are assigned
/// as `<doc_id>/<index>` from list position.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut corpus = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocumentRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if record.doc_id.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty doc_id".into(),
            });
        }
        if !seen.insert(record.doc_id.clone()) {
            return Err(Error::Validation(format!("duplicate doc_id {}", record.doc_id)));
        }
        if record.components.is_empty() {
            return Err(Error::Validation(format!(
                "document {} has no components",
                record.doc_id
            )));
        }
        let mut components = Vec::with_capacity(record.components.len());
        for (index, comp) in record.components.into_iter().enumerate() {
            let id = comp_id(&record.doc_id, index);
            components.push(Component::from_record(comp, id, lineno)?);
        }
        corpus.push(Document {
            doc_id: record.doc_id,
            title: record.title,
            components,
        });
    }
    Ok(corpus)
}

/// Serialize a corpus back to the newline-delimited record format.
/// Inverse of [`parse_corpus`] on all fields.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> Result<()> {
    for doc in corpus {
        let record = DocumentRecord {
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            components: doc.components.iter().map(Component::to_record).collect(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Validation(format!("serialize {}: {e}", doc.doc_id)))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Resolve every declared link against the corpus, dropping (and counting)
/// links whose target document does not exist. Self-document links are
/// retained; edge generation skips them later.
pub fn resolve_links(corpus: &Corpus) -> LinkMapping {
    let docs: HashSet<&str> = corpus.iter().map(|d| d.doc_id.as_str()).collect();
    let mut mapping = LinkMapping::default();
    for doc in corpus {
        for comp in &doc.components {
            for target in &comp.links {
                if docs.contains(target.as_str()) {
                    mapping.pairs.insert((comp.comp_id.clone(), target.clone()));
                } else {
                    mapping.dropped += 1;
                }
            }
        }
    }
    mapping
}

/// Map from doc_id to its position in the corpus.
pub fn doc_index(corpus: &Corpus) -> HashMap<&str, usize> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, d)| (d.doc_id.as_str(), i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(s: &str) -> Result<Corpus> {
        parse_corpus(Cursor::new(s))
    }

    #[test]
    fn smallest_legal_corpus() {
        let corpus = parse(r#"{"doc_id":"A","title":"t","components":[{"type":"paragraph","text":"Hello."}]}"#)
            .unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[0].components.len(), 1);
        assert_eq!(corpus[0].components[0].comp_id, "A/0");
    }

    #[test]
    fn three_modalities_in_order() {
        let line = r#"{"doc_id":"A","title":"t","components":[
            {"type":"paragraph","text":"Hi."},
            {"type":"image","objects":[{"label":"a","bbox":[0,0,1,1]},{"label":"b","bbox":[0,0,2,2]}]},
            {"type":"table","rows":[["h1","h2"],["x","y"],["z","w"]]}
        ]}"#
        .replace('\n', " ");
        let corpus = parse(&line).unwrap();
        let mods: Vec<Modality> = corpus[0].components.iter().map(|c| c.modality).collect();
        assert_eq!(mods, vec![Modality::Paragraph, Modality::Image, Modality::Table]);
        assert_eq!(corpus[0].components[2].comp_id, "A/2");
    }

    #[test]
    fn empty_table_rows_rejected() {
        let err = parse(r#"{"doc_id":"A","title":"t","components":[{"type":"table","rows":[]}]}"#)
            .unwrap_err();
        assert!(err.to_string().contains("A/0"), "{err}");
    }

    #[test]
    fn mismatched_payload_rejected() {
        let err = parse(
            r#"{"doc_id":"A","title":"t","components":[{"type":"paragraph","text":"x.","rows":[["h"]]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn duplicate_doc_id_rejected() {
        let two = concat!(
            r#"{"doc_id":"A","title":"t","components":[{"type":"paragraph","text":"x."}]}"#,
            "\n",
            r#"{"doc_id":"A","title":"t","components":[{"type":"paragraph","text":"y."}]}"#
        );
        let err = parse(two).unwrap_err();
        assert!(err.to_string().contains("duplicate doc_id"), "{err}");
    }

    #[test]
    fn malformed_record_carries_line_number() {
        let err = parse(concat!(
            r#"{"doc_id":"A","title":"t","components":[{"type":"paragraph","text":"x."}]}"#,
            "\n",
            "{not json"
        ))
        .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn resolve_links_keeps_existing_targets() {
        let two = concat!(
            r#"{"doc_id":"A","title":"t","components":[{"type":"paragraph","text":"x."}]}"#,
            "\n",
            r#"{"doc_id":"B","title":"t","components":[{"type":"paragraph","text":"y.","links":["A"]}]}"#
        );
        let corpus = parse(two).unwrap();
        let links = resolve_links(&corpus);
        assert_eq!(links.dropped, 0);
        assert!(links.pairs.contains(&("B/0".into(), "A".into())));
    }

    #[test]
    fn resolve_links_drops_dangling() {
        let corpus =
            parse(r#"{"doc_id":"B","title":"t","components":[{"type":"paragraph","text":"y.","links":["Z"]}]}"#)
                .unwrap();
        let links = resolve_links(&corpus);
        assert!(links.pairs.is_empty());
        assert_eq!(links.dropped, 1);
    }

    #[test]
    fn self_link_retained() {
        let corpus =
            parse(r#"{"doc_id":"A","title":"t","components":[{"type":"paragraph","text":"y.","links":["A"]}]}"#)
                .unwrap();
        let links = resolve_links(&corpus);
        assert!(links.pairs.contains(&("A/0".into(), "A".into())));
    }

    #[test]
    fn comp_id_roundtrip() {
        assert_eq!(parse_comp_id("A/0"), Some(("A", 0)));
        assert_eq!(parse_comp_id("a/b/12"), Some(("a/b", 12)));
        assert_eq!(parse_comp_id("nope"), None);
        assert_eq!(parse_comp_id("/3"), None);
    }

    #[test]
    fn degenerate_bbox_rejected() {
        let err = parse(
            r#"{"doc_id":"A","title":"t","components":[{"type":"image","objects":[{"label":"x","bbox":[5,0,5,9]}]}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("bbox"), "{err}");
    }
}
