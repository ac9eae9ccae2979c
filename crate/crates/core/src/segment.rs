//! Modality-specific decomposition of components into subcomponents:
//! sentences for paragraphs, header+row segments for tables, and object
//! labels for images.

use serde::{Deserialize, Serialize};

use crate::corpus::{comp_id, Component, Modality};
use crate::error::{Error, Result};

/// Fine-grained unit owned by exactly one component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subcomponent {
    /// `<comp_id>/<k>`.
    pub sub_id: String,
    pub parent: String,
    pub kind: SubKind,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubKind {
    Sentence,
    RowSegment,
    Object,
}

/// Word abbreviations that do not end a sentence. Dotted forms ("e.g.",
/// "U.S.") and single-letter initials are caught separately.
const ABBREVIATIONS: [&str; 26] = [
    "mr", "mrs", "ms", "dr", "prof", "rev", "gen", "sen", "rep", "hon", "st", "jr", "sr", "vs",
    "etc", "inc", "ltd", "co", "corp", "dept", "univ", "assn", "fig", "no", "vol", "approx",
];

const CLOSERS: [char; 6] = ['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];
const OPENERS: [char; 6] = ['"', '\'', '(', '[', '\u{201c}', '\u{2018}'];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// The word immediately before position `end` (exclusive), scanning back
/// over alphanumerics and internal dots, lowercased.
fn token_before(chars: &[char], end: usize) -> String {
    let mut start = end;
    while start > 0 {
        let c = chars[start - 1];
        if c.is_alphanumeric() || c == '.' {
            start -= 1;
        } else {
            break;
        }
    }
    chars[start..end].iter().collect::<String>().to_lowercase()
}

fn blocks_split(token: &str) -> bool {
    if token.is_empty() {
        return false;
    }
    if ABBREVIATIONS.contains(&token) {
        return true;
    }
    let mut letters = token.chars().filter(|c| c.is_alphabetic());
    if token.chars().count() == 1 && letters.next().is_some() {
        return true; // initials such as "J."
    }
    // Dotted tokens with letters are acronyms/abbreviations ("u.s", "e.g");
    // purely numeric dotted tokens ("3.5") may end a sentence.
    token.contains('.') && token.chars().any(|c| c.is_alphabetic())
}

/// Split a paragraph into sentences.
///
/// A boundary is a run of `.`/`!`/`?` (plus trailing closers) followed by
/// whitespace and an uppercase letter or digit (optionally behind opening
/// quotes/brackets). A lone `.` after an abbreviation never splits.
/// Sentences are trimmed substrings of the input; text with no terminator
/// comes back as a single sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !is_terminator(chars[i]) {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < chars.len() && is_terminator(chars[i]) {
            i += 1;
        }
        let run_len = i - run_start;
        let mut end = i;
        while end < chars.len() && CLOSERS.contains(&chars[end]) {
            end += 1;
        }
        let mut next = end;
        while next < chars.len() && chars[next].is_whitespace() {
            next += 1;
        }
        if next == end || next >= chars.len() {
            continue; // no whitespace after the run, or end of text
        }
        let mut first = next;
        while first < chars.len() && OPENERS.contains(&chars[first]) {
            first += 1;
        }
        let starts_sentence =
            first < chars.len() && (chars[first].is_ascii_uppercase() || chars[first].is_ascii_digit());
        if !starts_sentence {
            continue;
        }
        if run_len == 1 && chars[run_start] == '.' && blocks_split(&token_before(&chars, run_start)) {
            continue;
        }
        let sentence: String = chars[start..end].iter().collect();
        let sentence = sentence.trim().to_string();
        if !sentence.is_empty() {
            sentences.push(sentence);
        }
        start = next;
        i = next;
    }
    let tail: String = chars[start..].iter().collect();
    let tail = tail.trim().to_string();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

/// One subcomponent per data row, rendered as `h1: v1 | h2: v2 | ...` so
/// header tokens travel with every row.
pub fn segment_table(parent: &str, rows: &[Vec<String>]) -> Result<Vec<Subcomponent>> {
    let header = rows.first().ok_or_else(|| {
        Error::Validation(format!("table {parent}: missing header row"))
    })?;
    let mut segments = Vec::new();
    for (row_index, row) in rows.iter().enumerate().skip(1) {
        if row.len() != header.len() {
            return Err(Error::Validation(format!(
                "table {parent}: row {row_index} has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
        let content = header
            .iter()
            .zip(row)
            .map(|(h, v)| format!("{h}: {v}"))
            .collect::<Vec<_>>()
            .join(" | ");
        segments.push(Subcomponent {
            sub_id: comp_id(parent, segments.len()),
            parent: parent.to_string(),
            kind: SubKind::RowSegment,
            content,
        });
    }
    Ok(segments)
}

/// One subcomponent per object annotation, content = label, order kept.
pub fn extract_objects(component: &Component) -> Vec<Subcomponent> {
    component
        .objects
        .as_deref()
        .unwrap_or_default()
        .iter()
        .enumerate()
        .map(|(k, obj)| Subcomponent {
            sub_id: comp_id(&component.comp_id, k),
            parent: component.comp_id.clone(),
            kind: SubKind::Object,
            content: obj.label.clone(),
        })
        .collect()
}

/// Decompose a component into its modality-specific subcomponents.
/// An image with no annotations yields an empty list; the graph layer
/// synthesizes a pseudo-subcomponent in that case.
pub fn subcomponents(component: &Component) -> Result<Vec<Subcomponent>> {
    match component.modality {
        Modality::Paragraph => Ok(split_sentences(&component.text)
            .into_iter()
            .enumerate()
            .map(|(k, content)| Subcomponent {
                sub_id: comp_id(&component.comp_id, k),
                parent: component.comp_id.clone(),
                kind: SubKind::Sentence,
                content,
            })
            .collect()),
        Modality::Table => {
            segment_table(&component.comp_id, component.rows.as_deref().unwrap_or_default())
        }
        Modality::Image => Ok(extract_objects(component)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ObjectAnnotation;

    fn image(comp: &str, labels: &[&str]) -> Component {
        Component {
            comp_id: comp.into(),
            modality: Modality::Image,
            text: String::new(),
            rows: None,
            objects: Some(
                labels
                    .iter()
                    .map(|l| ObjectAnnotation {
                        label: l.to_string(),
                        bbox: [0, 0, 10, 10],
                    })
                    .collect(),
            ),
            links: vec![],
            image_ref: None,
        }
    }

    #[test]
    fn two_terminated_sentences() {
        assert_eq!(
            split_sentences("The Taj Mahal has four minarets. It was commissioned by Shah Jahan."),
            vec![
                "The Taj Mahal has four minarets.".to_string(),
                "It was commissioned by Shah Jahan.".to_string()
            ]
        );
    }

    #[test]
    fn no_terminator_single_sentence() {
        assert_eq!(split_sentences("No terminator here"), vec!["No terminator here"]);
    }

    #[test]
    fn hand_labeled_fixture() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/sentence_fixture.json");
        let raw = std::fs::read_to_string(path).unwrap();
        #[derive(serde::Deserialize)]
        struct Case {
            text: String,
            sentences: Vec<String>,
        }
        let cases: Vec<Case> = serde_json::from_str(&raw).unwrap();
        assert!(cases.len() >= 30, "fixture must stay at 30+ labeled cases");
        for case in cases {
            assert_eq!(
                split_sentences(&case.text),
                case.sentences,
                "input: {:?}",
                case.text
            );
        }
    }

    #[test]
    fn whitespace_reconstruction() {
        // joining the sentences with single spaces matches the input
        // modulo whitespace runs
        let inputs = [
            "One. Two. Three.",
            "First.  Second.",
            "Line one.\nLine two.",
            "  padded start. And end.  ",
        ];
        for input in inputs {
            let joined = split_sentences(input).join(" ");
            let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
            assert_eq!(norm(&joined), norm(input), "input: {input:?}");
        }
    }

    #[test]
    fn table_rendering_rule() {
        let rows = vec![
            vec!["Deployment".to_string(), "Personnel".to_string()],
            vec!["Kosovo".to_string(), "1".to_string()],
            vec!["Afghanistan".to_string(), "29".to_string()],
        ];
        let segs = segment_table("T/0", &rows).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].content, "Deployment: Kosovo | Personnel: 1");
        assert_eq!(segs[0].sub_id, "T/0/0");
        assert_eq!(segs[1].content, "Deployment: Afghanistan | Personnel: 29");
    }

    #[test]
    fn header_only_table_yields_nothing() {
        let rows = vec![vec!["h".to_string()]];
        assert!(segment_table("T/0", &rows).unwrap().is_empty());
    }

    #[test]
    fn nine_row_operations_table() {
        let mut rows = vec![vec![
            "Deployment".to_string(),
            "Organization".to_string(),
            "Operation".to_string(),
            "Personnel".to_string(),
        ]];
        let data = [
            ("Somalia", "EU", "Operation Atalanta", "15"),
            ("Mali", "EU", "EUTM Mali", "2"),
            ("Afghanistan", "NATO", "Operation Resolute Support", "29"),
            ("Libya", "EU", "EU Navfor Med", "3"),
            ("Mali", "UN", "MINUSMA", "39"),
            ("Iraq", "CJTF", "Operation Inherent Resolve", "6"),
            ("Central African Republic", "EU", "EUFOR RCA", "1"),
            ("Kosovo", "NATO", "KFOR", "1"),
            ("Ukraine", "—", "Training mission", "40"),
        ];
        for (a, b, c, d) in data {
            rows.push(vec![a.to_string(), b.to_string(), c.to_string(), d.to_string()]);
        }
        let segs = segment_table("L/0", &rows).unwrap();
        assert_eq!(segs.len(), 9);
        assert_eq!(
            segs[7].content,
            "Deployment: Kosovo | Organization: NATO | Operation: KFOR | Personnel: 1"
        );
    }

    #[test]
    fn arity_mismatch_names_row() {
        let rows = vec![
            vec!["a".to_string(), "b".to_string()],
            vec!["only-one".to_string()],
        ];
        let err = segment_table("T/3", &rows).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("T/3") && msg.contains("row 1"), "{msg}");
    }

    #[test]
    fn objects_in_order() {
        let comp = image("I/0", &["minaret", "dome"]);
        let subs = extract_objects(&comp);
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0].content, "minaret");
        assert_eq!(subs[1].content, "dome");
        assert_eq!(subs[1].sub_id, "I/0/1");
    }

    #[test]
    fn duplicate_labels_kept() {
        let comp = image("I/0", &["dome", "dome"]);
        let subs = extract_objects(&comp);
        assert_eq!(subs.len(), 2);
        assert_ne!(subs[0].sub_id, subs[1].sub_id);
    }

    #[test]
    fn empty_objects_empty_list() {
        let comp = image("I/0", &[]);
        assert!(extract_objects(&comp).is_empty());
    }

    #[test]
    fn dispatch_assigns_ids_and_kinds() {
        let para = Component {
            comp_id: "D/0".into(),
            modality: Modality::Paragraph,
            text: "One. Two.".into(),
            rows: None,
            objects: None,
            links: vec![],
            image_ref: None,
        };
        let subs = subcomponents(&para).unwrap();
        assert_eq!(subs.len(), 2);
        assert!(subs.iter().all(|s| s.kind == SubKind::Sentence));
        assert_eq!(subs[0].sub_id, "D/0/0");
        assert_eq!(subs[1].sub_id, "D/0/1");
        assert!(subs.iter().all(|s| s.parent == "D/0"));
    }
}
