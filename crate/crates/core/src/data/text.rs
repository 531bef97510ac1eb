use crate::error::{Error, Result};

const PUNCTUATION: &str = "!'\",-.:;?";

/// Character inventory. Id 0 is padding, id 1 is end-of-sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    symbols: Vec<char>,
}

pub const PAD_ID: usize = 0;
pub const EOS_ID: usize = 1;

impl Default for CharVocab {
    fn default() -> Self {
        // Two placeholder slots for pad and eos; they never match real text.
        let mut symbols = vec!['\u{0}', '\u{3}', ' '];
        symbols.extend('a'..='z');
        symbols.extend('0'..='9');
        symbols.extend(PUNCTUATION.chars());
        Self { symbols }
    }
}

impl CharVocab {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, c: char) -> Option<usize> {
        if c == '\u{0}' || c == '\u{3}' {
            return None;
        }
        self.symbols.iter().position(|&s| s == c)
    }

    pub fn contains(&self, c: char) -> bool {
        self.id(c).is_some()
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        match id {
            PAD_ID | EOS_ID => None,
            _ => self.symbols.get(id).copied(),
        }
    }
}

/// Lowercases, maps typographic quotes and dashes to ASCII, drops characters
/// outside the vocabulary and collapses whitespace.
pub fn normalize_text(s: &str) -> Result<String> {
    let vocab = CharVocab::default();
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.chars().flat_map(char::to_lowercase) {
        let c = match c {
            '\u{2018}' | '\u{2019}' | '\u{201B}' | '`' => '\'',
            '\u{201C}' | '\u{201D}' | '\u{201F}' => '"',
            '\u{2010}'..='\u{2015}' | '\u{2212}' => '-',
            c if c.is_whitespace() => ' ',
            c => c,
        };
        if c == ' ' {
            pending_space = !out.is_empty();
        } else if vocab.contains(c) {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(out)
}

/// Per-character ids followed by the end-of-sequence id.
pub fn encode_text(s: &str, vocab: &CharVocab) -> Result<Vec<usize>> {
    let mut ids = s
        .chars()
        .map(|c| vocab.id(c).ok_or(Error::Vocab(c)))
        .collect::<Result<Vec<_>>>()?;
    ids.push(EOS_ID);
    Ok(ids)
}

/// Inverse of [`encode_text`]; padding and eos are skipped.
pub fn decode_text(ids: &[usize], vocab: &CharVocab) -> String {
    ids.iter().filter_map(|&i| vocab.symbol(i)).collect()
}
