use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// ARPAbet phones, without stress markers.
pub const PHONES: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH",
    "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH",
    "UW", "V", "W", "Y", "Z", "ZH",
];

pub const PUNCTUATION: [&str; 4] = [",", ".", "?", "!"];

pub const WORD_BOUNDARY: &str = "#";

/// Phones rendered with a noise source in the toy corpus.
pub const UNVOICED: [&str; 9] = ["CH", "F", "HH", "K", "P", "S", "SH", "T", "TH"];

/// Number of distinct token ids.
pub const VOCAB_SIZE: usize = PHONES.len() + PUNCTUATION.len() + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Phone,
    Punctuation,
    WordBoundary,
}

/// One input symbol. `id` indexes the embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhoneToken {
    pub id: u16,
    pub kind: TokenKind,
}

impl PhoneToken {
    pub fn from_symbol(symbol: &str) -> Result<Self> {
        if let Some(i) = PHONES.iter().position(|&p| p == symbol) {
            return Ok(Self {
                id: i as u16,
                kind: TokenKind::Phone,
            });
        }
        if let Some(i) = PUNCTUATION.iter().position(|&p| p == symbol) {
            return Ok(Self {
                id: (PHONES.len() + i) as u16,
                kind: TokenKind::Punctuation,
            });
        }
        if symbol == WORD_BOUNDARY {
            return Ok(Self {
                id: (VOCAB_SIZE - 1) as u16,
                kind: TokenKind::WordBoundary,
            });
        }
        Err(Error::UnknownSymbol(symbol.to_string()))
    }

    pub fn from_id(id: u16) -> Result<Self> {
        let i = id as usize;
        let kind = if i < PHONES.len() {
            TokenKind::Phone
        } else if i < PHONES.len() + PUNCTUATION.len() {
            TokenKind::Punctuation
        } else if i == VOCAB_SIZE - 1 {
            TokenKind::WordBoundary
        } else {
            return Err(Error::UnknownSymbol(format!("token id {id}")));
        };
        Ok(Self { id, kind })
    }

    pub fn symbol(&self) -> &'static str {
        let i = self.id as usize;
        match self.kind {
            TokenKind::Phone => PHONES[i],
            TokenKind::Punctuation => PUNCTUATION[i - PHONES.len()],
            TokenKind::WordBoundary => WORD_BOUNDARY,
        }
    }

    pub fn is_phone(&self) -> bool {
        self.kind == TokenKind::Phone
    }

    /// Voiced phones carry pitch; punctuation and boundaries are never voiced.
    pub fn is_voiced_phone(&self) -> bool {
        self.is_phone() && !UNVOICED.contains(&self.symbol())
    }
}

/// Parses whitespace-separated symbols, e.g. `"HH AH # L OW ."`.
pub fn parse_phones(text: &str) -> Result<Vec<PhoneToken>> {
    let tokens = text
        .split_whitespace()
        .map(PhoneToken::from_symbol)
        .collect::<Result<Vec<_>>>()?;
    if !tokens.iter().any(PhoneToken::is_phone) {
        return Err(Error::InvalidArgument("no phones in input".into()));
    }
    Ok(tokens)
}

pub fn format_phones(tokens: &[PhoneToken]) -> String {
    tokens
        .iter()
        .map(PhoneToken::symbol)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token indices of the phones in each word. Words are separated by `#`;
/// punctuation belongs to no word. Empty words are skipped.
pub fn words(tokens: &[PhoneToken]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        match t.kind {
            TokenKind::Phone => cur.push(i),
            TokenKind::WordBoundary => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            TokenKind::Punctuation => {}
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Token index of every phone, in order.
pub fn phone_positions(tokens: &[PhoneToken]) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_phone())
        .map(|(i, _)| i)
        .collect()
}
