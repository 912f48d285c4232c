//! Label alphabet, BEGIN state and BIO span extraction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

/// Marker for a (token, source) cell the source did not annotate.
pub const MISSING_MARKER: &str = "_";

/// Tagging scheme of a label alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Scheme {
    /// `O`, `B-TYPE`, `I-TYPE` tags; spans are meaningful.
    Bio,
    /// Arbitrary class names; only token-level metrics apply.
    Free,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Bio => "BIO",
            Scheme::Free => "free",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "BIO" | "bio" => Some(Scheme::Bio),
            "free" | "FREE" => Some(Scheme::Free),
            _ => None,
        }
    }
}

/// The `K` task labels.
///
/// Indices `0..K` are real labels. Index `K` is reserved for the BEGIN state,
/// which only ever appears as the source row of a transition. A missing weak
/// annotation is represented as `None` in label grids, so it can never collide
/// with a label or with BEGIN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
    scheme: Scheme,
}

impl LabelSpace {
    pub fn new<S: AsRef<str>>(labels: &[S], scheme: Scheme) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::LabelSpace(format!(
                "need at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut index = BTreeMap::new();
        for (i, name) in labels.iter().enumerate() {
            let name = name.as_ref();
            if name.is_empty() || name == MISSING_MARKER || name == "?" {
                return Err(Error::LabelSpace(format!("invalid label name `{name}`")));
            }
            if name.chars().any(char::is_whitespace) {
                return Err(Error::LabelSpace(format!(
                    "label `{name}` contains whitespace"
                )));
            }
            if scheme == Scheme::Bio && name != "O" && bio_parts(name).is_none() {
                return Err(Error::LabelSpace(format!(
                    "`{name}` is not a BIO tag (expected O, B-TYPE or I-TYPE)"
                )));
            }
            if index.insert(name.to_string(), i).is_some() {
                return Err(Error::LabelSpace(format!("duplicate label `{name}`")));
            }
        }
        Ok(LabelSpace {
            labels: labels.iter().map(|s| s.as_ref().to_string()).collect(),
            index,
            scheme,
        })
    }

    /// Number of real labels `K`.
    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row of the transition matrix holding BEGIN → label scores.
    #[inline]
    pub fn begin_index(&self) -> usize {
        self.labels.len()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Resolves a weak-label cell: a label index, or `None` for the missing marker.
    pub fn parse_label(&self, name: &str, line: usize) -> Result<Option<usize>> {
        if name == MISSING_MARKER {
            return Ok(None);
        }
        self.index_of(name)
            .map(Some)
            .ok_or_else(|| Error::UnknownLabel {
                name: name.to_string(),
                line,
            })
    }

    /// Label assigned to a token nobody annotated: `O` under BIO, else label 0.
    pub fn fallback_label(&self) -> usize {
        match self.scheme {
            Scheme::Bio => self.index_of("O").unwrap_or(0),
            Scheme::Free => 0,
        }
    }

    /// Maximal spans of a BIO tag sequence, sorted by start.
    ///
    /// An `I-X` that does not continue an open `X` span starts a new span.
    pub fn extract_spans(&self, tags: &[usize]) -> Vec<Span> {
        let mut spans = Vec::new();
        let mut open: Option<(&str, usize)> = None;
        for (pos, &tag) in tags.iter().enumerate() {
            let parts = bio_parts(&self.labels[tag]);
            match parts {
                Some(('I', ty)) if matches!(open, Some((cur, _)) if cur == ty) => {}
                Some((_, ty)) => {
                    if let Some((cur, start)) = open.take() {
                        spans.push(Span::new(cur, start, pos));
                    }
                    open = Some((ty, pos));
                }
                None => {
                    if let Some((cur, start)) = open.take() {
                        spans.push(Span::new(cur, start, pos));
                    }
                }
            }
        }
        if let Some((cur, start)) = open {
            spans.push(Span::new(cur, start, tags.len()));
        }
        spans
    }
}

fn bio_parts(name: &str) -> Option<(char, &str)> {
    let (prefix, ty) = name.split_once('-')?;
    if ty.is_empty() {
        return None;
    }
    match prefix {
        "B" => Some(('B', ty)),
        "I" => Some(('I', ty)),
        _ => None,
    }
}

/// A typed entity span over token positions `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub entity_type: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(entity_type: &str, start: usize, end: usize) -> Self {
        debug_assert!(start < end);
        Span {
            entity_type: entity_type.to_string(),
            start,
            end,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn conll() -> LabelSpace {
        LabelSpace::new(
            &["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "B-MISC", "I-MISC"],
            Scheme::Bio,
        )
        .unwrap()
    }

    #[test]
    fn parse_known_missing_and_unknown() {
        let space = conll();
        assert_eq!(space.parse_label("B-PER", 3).unwrap(), Some(1));
        assert_eq!(space.parse_label("_", 3).unwrap(), None);
        assert_eq!(
            space.parse_label("B-XYZ", 7),
            Err(Error::UnknownLabel {
                name: "B-XYZ".into(),
                line: 7
            })
        );
    }

    #[test]
    fn begin_index_is_outside_labels() {
        let space = conll();
        assert_eq!(space.begin_index(), 9);
        assert!(space.labels().len() == space.begin_index());
    }

    #[test]
    fn rejects_bad_alphabets() {
        assert!(LabelSpace::new(&["O"], Scheme::Free).is_err());
        assert!(LabelSpace::new(&["A", "A"], Scheme::Free).is_err());
        assert!(LabelSpace::new(&["A", ""], Scheme::Free).is_err());
        assert!(LabelSpace::new(&["A", "_"], Scheme::Free).is_err());
        assert!(LabelSpace::new(&["O", "PER"], Scheme::Bio).is_err());
        assert!(LabelSpace::new(&["O", "PER"], Scheme::Free).is_ok());
    }

    #[test]
    fn textbook_span() {
        let s = conll();
        let tags = [0, 1, 2, 0];
        assert_eq!(s.extract_spans(&tags), vec![Span::new("PER", 1, 3)]);
    }

    #[test]
    fn dangling_inside_starts_span() {
        let s = conll();
        let tags = [s.index_of("I-LOC").unwrap(), 0];
        assert_eq!(s.extract_spans(&tags), vec![Span::new("LOC", 0, 1)]);
    }

    #[test]
    fn adjacent_begins() {
        let s = conll();
        assert_eq!(
            s.extract_spans(&[1, 1]),
            vec![Span::new("PER", 0, 1), Span::new("PER", 1, 2)]
        );
    }

    #[test]
    fn type_switch_inside() {
        let s = conll();
        // B-PER I-LOC -> two spans
        assert_eq!(
            s.extract_spans(&[1, 4, 4]),
            vec![Span::new("PER", 0, 1), Span::new("LOC", 1, 3)]
        );
    }

    #[test]
    fn fallback_is_o() {
        let s = LabelSpace::new(&["B-PER", "I-PER", "O"], Scheme::Bio).unwrap();
        assert_eq!(s.fallback_label(), 2);
        let f = LabelSpace::new(&["x", "y"], Scheme::Free).unwrap();
        assert_eq!(f.fallback_label(), 0);
    }
}
