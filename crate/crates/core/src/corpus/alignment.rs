use std::path::Path;

use super::symbols::{PhoneToken, TokenKind};
use crate::{Error, Result};

/// Frame intervals `[start, end)` for the phone-kind tokens of an utterance,
/// in token order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PhoneAlignment {
    pub intervals: Vec<(usize, usize)>,
}

impl PhoneAlignment {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn durations(&self) -> Vec<usize> {
        self.intervals.iter().map(|(s, e)| e - s).collect()
    }

    /// True when the first phone starts at frame 0 and every phone starts
    /// where the previous one ended.
    pub fn is_contiguous(&self) -> bool {
        let mut at = 0;
        for &(s, e) in &self.intervals {
            if s != at {
                return false;
            }
            at = e;
        }
        true
    }

    pub fn end_frame(&self) -> usize {
        self.intervals.last().map_or(0, |&(_, e)| e)
    }

    /// Builds a contiguous alignment from consecutive durations.
    pub fn from_durations(durations: &[usize]) -> Self {
        let mut at = 0;
        let intervals = durations
            .iter()
            .map(|&d| {
                let iv = (at, at + d);
                at += d;
                iv
            })
            .collect();
        Self { intervals }
    }
}

pub fn read_alignment(path: &Path, frame_shift_ms: f64) -> Result<(Vec<PhoneToken>, PhoneAlignment)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_alignment(&text, &path.display().to_string(), frame_shift_ms)
}

/// Parses `symbol<TAB>start_ms<TAB>end_ms` rows. Word boundaries (`#`) and
/// punctuation must have `start == end`. Leading and trailing boundaries are
/// dropped and repeated ones collapsed. Times are rounded to the nearest frame,
/// with at least one frame per phone.
pub fn parse_alignment(
    text: &str,
    source: &str,
    frame_shift_ms: f64,
) -> Result<(Vec<PhoneToken>, PhoneAlignment)> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut tokens: Vec<PhoneToken> = Vec::new();
    let mut intervals = Vec::new();
    let mut last_time = 0.0f64;
    let mut last_frame = 0usize;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err(line, format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let token = PhoneToken::from_symbol(fields[0])
            .map_err(|_| err(line, format!("unknown symbol {:?}", fields[0])))?;
        let parse_ms = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| err(line, format!("bad time {s:?}")))
        };
        let (start, end) = (parse_ms(fields[1])?, parse_ms(fields[2])?);
        if end < start {
            return Err(err(line, format!("end {end} ms before start {start} ms")));
        }
        if start < last_time {
            return Err(err(
                line,
                if token.is_phone() {
                    format!("interval starting at {start} ms overlaps previous one ending at {last_time} ms")
                } else {
                    format!("time {start} ms goes backwards (previous {last_time} ms)")
                },
            ));
        }
        match token.kind {
            TokenKind::Phone => {
                if end == start {
                    return Err(err(line, "phone has zero duration".into()));
                }
                let s = ((start / frame_shift_ms).round() as usize).max(last_frame);
                let e = ((end / frame_shift_ms).round() as usize).max(s + 1);
                intervals.push((s, e));
                last_frame = e;
                last_time = end;
                tokens.push(token);
            }
            TokenKind::Punctuation | TokenKind::WordBoundary => {
                if end != start {
                    return Err(err(line, format!("{} must have start == end", fields[0])));
                }
                last_time = start;
                let collapse = token.kind == TokenKind::WordBoundary
                    && tokens.last().map_or(true, |t| t.kind == TokenKind::WordBoundary);
                if !collapse {
                    tokens.push(token);
                }
            }
        }
    }
    while tokens.last().is_some_and(|t| t.kind == TokenKind::WordBoundary) {
        tokens.pop();
    }
    if intervals.is_empty() {
        return Err(err(text.lines().count().max(1), "no phones".into()));
    }
    Ok((tokens, PhoneAlignment { intervals }))
}

/// Inverse of [`parse_alignment`] for contiguous alignments.
pub fn format_alignment(tokens: &[PhoneToken], align: &PhoneAlignment, frame_shift_ms: f64) -> String {
    let mut out = String::new();
    let mut phones = align.intervals.iter();
    let mut at = 0.0;
    for t in tokens {
        let (s, e) = if t.is_phone() {
            let &(s, e) = phones.next().expect("alignment shorter than phone count");
            (s as f64 * frame_shift_ms, e as f64 * frame_shift_ms)
        } else {
            (at, at)
        };
        at = e;
        out.push_str(&format!("{}\t{}\t{}\n", t.symbol(), s, e));
    }
    out
}
