//! Whitespace-separated column files: token first, tag last, optional
//! auxiliary columns in between; blank lines separate sentences.
//! `-DOCSTART-` rows are document markers and are not tokens.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Reserved vocabulary entry 0 for tokens never seen in training data.
pub const UNKNOWN_TOKEN: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqExample {
    pub tokens: Vec<usize>,
    pub tags: Vec<usize>,
    /// Columns between token and tag, per position.
    pub extra: Vec<Vec<String>>,
}

impl SeqExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqDataset {
    /// Token strings by id; id 0 is [`UNKNOWN_TOKEN`].
    pub vocab: Vec<String>,
    pub tags: Vec<String>,
    pub examples: Vec<SeqExample>,
}

impl SeqDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn with_examples(&self, examples: Vec<SeqExample>) -> Self {
        SeqDataset { vocab: self.vocab.clone(), tags: self.tags.clone(), examples }
    }
}

/// Loads a training file, building vocabulary and tag maps in first-seen order.
pub fn load_conll(path: impl AsRef<Path>) -> Result<SeqDataset> {
    let path = path.as_ref();
    parse_conll(&std::fs::read_to_string(path)?, path, None)
}

/// Loads an evaluation file against fixed maps: unseen tokens map to
/// [`UNKNOWN_TOKEN`], unseen tags are an error.
pub fn load_conll_with_vocab(path: impl AsRef<Path>, vocab: &[String], tags: &[String]) -> Result<SeqDataset> {
    let path = path.as_ref();
    parse_conll(&std::fs::read_to_string(path)?, path, Some((vocab, tags)))
}

pub fn parse_conll(text: &str, origin: &Path, fixed: Option<(&[String], &[String])>) -> Result<SeqDataset> {
    let err = |line: usize, msg: String| Error::Parse { path: origin.to_path_buf(), line, msg };
    let (mut vocab, mut tags): (Vec<String>, Vec<String>) = match fixed {
        Some((v, t)) => (v.to_vec(), t.to_vec()),
        None => (vec![UNKNOWN_TOKEN.to_string()], Vec::new()),
    };
    let mut vocab_ids: HashMap<String, usize> = vocab.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let mut tag_ids: HashMap<String, usize> = tags.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let frozen = fixed.is_some();

    let mut examples = Vec::new();
    let mut current = SeqExample { tokens: vec![], tags: vec![], extra: vec![] };
    let mut columns: Option<usize> = None;

    for (idx, raw) in text.split('\n').enumerate() {
        let lineno = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            if !current.is_empty() {
                examples.push(std::mem::replace(&mut current, SeqExample { tokens: vec![], tags: vec![], extra: vec![] }));
            }
            continue;
        }
        if fields[0] == "-DOCSTART-" {
            continue;
        }
        let expected = *columns.get_or_insert(fields.len());
        if fields.len() < 2 || fields.len() != expected {
            return Err(err(
                lineno,
                format!("expected {} columns, found {}", expected.max(2), fields.len()),
            ));
        }
        let token = fields[0];
        let tag = fields[fields.len() - 1];
        let token_id = match vocab_ids.get(token) {
            Some(&id) => id,
            None if frozen => 0,
            None => {
                vocab.push(token.to_string());
                vocab_ids.insert(token.to_string(), vocab.len() - 1);
                vocab.len() - 1
            }
        };
        let tag_id = match tag_ids.get(tag) {
            Some(&id) => id,
            None if frozen => return Err(err(lineno, format!("unknown tag {tag:?}"))),
            None => {
                tags.push(tag.to_string());
                tag_ids.insert(tag.to_string(), tags.len() - 1);
                tags.len() - 1
            }
        };
        current.tokens.push(token_id);
        current.tags.push(tag_id);
        current.extra.push(fields[1..fields.len() - 1].iter().map(|s| s.to_string()).collect());
    }
    if !current.is_empty() {
        examples.push(current);
    }
    if examples.is_empty() {
        return Err(Error::Format(format!("{}: no sentences", origin.display())));
    }
    Ok(SeqDataset { vocab, tags, examples })
}
