//! The `.wsconll` multi-annotator format.
//!
//! ```text
//! #labels:	O	B-PER	I-PER
//! #sources:	alice	bob
//! #scheme:	BIO
//! John	B-PER	B-PER	_
//! runs	O	O	O
//!
//! Mary	?	B-PER	B-PER
//! ```
//!
//! Each body line is `token`, the gold tag (`?` when unknown) and one column
//! per source (`_` when the source is silent on that token). Sentences are
//! separated by one blank line. LF and CRLF line endings are both accepted.

#![allow(clippy::tabs_in_doc_comments)]

use std::path::Path;

use hidden_crf_core::dataset::WeakGrid;
use hidden_crf_core::labels::MISSING_MARKER;
use hidden_crf_core::{Error, LabelSpace, Scheme, Sentence, WeakDataset};

use crate::atomic::{read_to_string, write_atomic};
use crate::error::{CliError, Result};

pub const UNKNOWN_GOLD: &str = "?";

fn format_err(line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        line,
        message: message.into(),
    }
}

fn header<'a>(line: Option<(usize, &'a str)>, key: &str) -> Result<Vec<&'a str>, Error> {
    let (n, text) = line.ok_or_else(|| format_err(0, format!("missing `{key}` header")))?;
    let mut cols = text.split('\t');
    if cols.next() != Some(key) {
        return Err(format_err(n, format!("expected `{key}` header")));
    }
    Ok(cols.collect())
}

/// Parses a document. Line numbers in errors are 1-based.
pub fn parse(text: &str) -> Result<WeakDataset, Error> {
    let mut lines = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate()
        .map(|(i, l)| (i + 1, l));

    let labels = header(lines.next(), "#labels:")?;
    let sources: Vec<String> = header(lines.next(), "#sources:")?
        .into_iter()
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let scheme_cols = header(lines.next(), "#scheme:")?;
    let scheme = match scheme_cols.as_slice() {
        [s] => Scheme::parse(s).ok_or_else(|| format_err(3, format!("unknown scheme `{s}`")))?,
        _ => return Err(format_err(3, "expected exactly one scheme")),
    };
    let space = LabelSpace::new(&labels, scheme)?;
    let j = sources.len();

    let mut sentences = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let mut flush = |block: &mut Vec<(usize, &str)>| -> Result<(), Error> {
        if block.is_empty() {
            return Ok(());
        }
        sentences.push(parse_sentence(block, &space, j)?);
        block.clear();
        Ok(())
    };
    for (n, line) in lines {
        if line.is_empty() {
            flush(&mut block)?;
        } else {
            block.push((n, line));
        }
    }
    flush(&mut block)?;
    WeakDataset::new(space, sources, sentences)
}

fn parse_sentence(block: &[(usize, &str)], space: &LabelSpace, j: usize) -> Result<Sentence, Error> {
    let mut tokens = Vec::with_capacity(block.len());
    let mut gold = Vec::with_capacity(block.len());
    let mut rows = Vec::with_capacity(block.len());
    for &(n, line) in block {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != j + 2 {
            return Err(format_err(
                n,
                format!("expected {} tab-separated columns, found {}", j + 2, cols.len()),
            ));
        }
        if cols[0].is_empty() {
            return Err(format_err(n, "empty token"));
        }
        tokens.push(cols[0].to_string());
        gold.push(match cols[1] {
            UNKNOWN_GOLD => None,
            name => Some(
                space
                    .parse_label(name, n)?
                    .ok_or_else(|| format_err(n, "gold column cannot be missing; use `?`"))?,
            ),
        });
        let row = cols[2..]
            .iter()
            .map(|c| space.parse_label(c, n))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let gold = match gold.iter().filter(|g| g.is_some()).count() {
        0 => None,
        c if c == gold.len() => Some(gold.into_iter().flatten().collect()),
        _ => {
            return Err(format_err(
                block[0].0,
                "gold tags must be given for every token of a sentence or none",
            ))
        }
    };
    Sentence::new(tokens, gold, WeakGrid::from_rows(rows, j)?)
}

/// Renders a dataset. Sentences without gold get `?` in the gold column.
pub fn render(ds: &WeakDataset) -> String {
    let space = &ds.space;
    let mut out = String::new();
    out.push_str("#labels:");
    for l in space.labels() {
        out.push('\t');
        out.push_str(l);
    }
    out.push_str("\n#sources:");
    for s in &ds.source_names {
        out.push('\t');
        out.push_str(s);
    }
    out.push_str("\n#scheme:\t");
    out.push_str(space.scheme().as_str());
    out.push('\n');
    for (i, s) in ds.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for l in 0..s.len() {
            out.push_str(&s.tokens[l]);
            out.push('\t');
            out.push_str(s.gold.as_ref().map_or(UNKNOWN_GOLD, |g| space.name(g[l])));
            for j in 0..ds.n_sources() {
                out.push('\t');
                out.push_str(s.weak.get(l, j).map_or(MISSING_MARKER, |y| space.name(y)));
            }
            out.push('\n');
        }
    }
    out
}

pub fn read(path: &Path) -> Result<WeakDataset> {
    parse(&read_to_string(path)?).map_err(|source| CliError::Core {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write(path: &Path, ds: &WeakDataset) -> Result<()> {
    write_atomic(path, render(ds).as_bytes())
}

/// Two-column `token<TAB>tag` rendering, blank line between sentences.
pub fn render_predictions<S, T>(tokens: &[S], tags: &[Vec<usize>], space: &LabelSpace) -> String
where
    S: AsRef<[T]>,
    T: AsRef<str>,
{
    assert_eq!(tokens.len(), tags.len(), "one tag sequence per sentence");
    let mut out = String::new();
    for (i, (toks, ts)) in tokens.iter().zip(tags).enumerate() {
        let toks = toks.as_ref();
        assert_eq!(toks.len(), ts.len(), "sentence {i}: token/tag length mismatch");
        if i > 0 {
            out.push('\n');
        }
        for (tok, &t) in toks.iter().zip(ts) {
            out.push_str(tok.as_ref());
            out.push('\t');
            out.push_str(space.name(t));
            out.push('\n');
        }
    }
    out
}

pub fn write_predictions<S, T>(path: &Path, tokens: &[S], tags: &[Vec<usize>], space: &LabelSpace) -> Result<()>
where
    S: AsRef<[T]>,
    T: AsRef<str>,
{
    write_atomic(path, render_predictions(tokens, tags, space).as_bytes())
}

/// Sentences of a prediction file as `(tokens, tags)`.
pub type Predictions = Vec<(Vec<String>, Vec<usize>)>;

pub fn parse_predictions(text: &str, space: &LabelSpace) -> Result<Predictions, Error> {
    let mut out = Vec::new();
    let mut cur: (Vec<String>, Vec<usize>) = Default::default();
    for (i, line) in text.split('\n').enumerate() {
        let n = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            if !cur.0.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            continue;
        }
        let (tok, tag) = line
            .split_once('\t')
            .filter(|(t, g)| !t.is_empty() && !g.contains('\t'))
            .ok_or_else(|| format_err(n, "expected `token<TAB>tag`"))?;
        let tag = space
            .parse_label(tag, n)?
            .ok_or_else(|| format_err(n, "prediction cannot be missing"))?;
        cur.0.push(tok.to_string());
        cur.1.push(tag);
    }
    if !cur.0.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

pub fn read_predictions(path: &Path, space: &LabelSpace) -> Result<Predictions> {
    parse_predictions(&read_to_string(path)?, space).map_err(|source| CliError::Core {
        path: path.to_path_buf(),
        source,
    })
}
