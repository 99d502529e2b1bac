use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::{AdvisorError, Result};

/// Upper bound on a plausible segment duration in seconds.
const MAX_SECONDS: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub lo: f64,
    pub hi: f64,
    /// The matched text, verbatim from the response.
    pub raw_span: String,
}

impl Recommendation {
    pub fn interval(&self) -> [f64; 2] {
        [self.lo, self.hi]
    }
}

const NUM: &str = r"(\d+(?:\.\d+)?)";
// hyphen, non-breaking hyphen, figure dash, en dash, em dash, minus
const DASH: &str = "[-\u{2010}\u{2011}\u{2012}\u{2013}\u{2014}\u{2212}]";
const UNIT: &str = r"(?:seconds?|secs?|s)\b";

static RANGE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i){NUM}\s*(?:{UNIT})?\s*(?:{DASH}|to)\s*~?\s*{NUM}\s*{DASH}?\s*{UNIT}"
    ))
    .unwrap()
});

static POINT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i){NUM}\s*{DASH}?\s*{UNIT}")).unwrap());

static EMPHASIS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\*\*(.+?)\*\*|__(.+?)__").unwrap());

#[derive(Debug, Clone, PartialEq)]
struct Found {
    start: usize,
    end: usize,
    lo: f64,
    hi: f64,
    is_range: bool,
}

/// A number directly preceded by a digit, decimal point or dash belongs to a
/// larger expression and cannot start a match.
fn starts_cleanly(text: &str, at: usize) -> bool {
    match text[..at].chars().next_back() {
        None => true,
        Some(c) => !(c.is_ascii_digit() || c == '.' || DASH_CHARS.contains(&c)),
    }
}

const DASH_CHARS: [char; 7] = [
    '-', '\u{2010}', '\u{2011}', '\u{2012}', '\u{2013}', '\u{2014}', '\u{2212}',
];

fn plausible(lo: f64, hi: f64) -> bool {
    lo > 0.0 && hi <= MAX_SECONDS && lo <= hi
}

fn ranges(text: &str, from: usize, to: usize) -> Vec<Found> {
    let region = &text[..to];
    let mut out = Vec::new();
    let mut pos = from;
    while let Some(c) = RANGE.captures_at(region, pos) {
        let m = c.get(0).unwrap();
        pos = m.start() + 1;
        if !starts_cleanly(text, m.start()) {
            continue;
        }
        let a: f64 = c[1].parse().unwrap();
        let b: f64 = c[2].parse().unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        if plausible(lo, hi) {
            out.push(Found {
                start: m.start(),
                end: m.end(),
                lo,
                hi,
                is_range: true,
            });
            pos = m.end();
        }
    }
    out
}

fn points(text: &str, from: usize, to: usize) -> Vec<Found> {
    let region = &text[..to];
    let mut out = Vec::new();
    let mut pos = from;
    while let Some(c) = POINT.captures_at(region, pos) {
        let m = c.get(0).unwrap();
        pos = m.start() + 1;
        if !starts_cleanly(text, m.start()) {
            continue;
        }
        let v: f64 = c[1].parse().unwrap();
        if plausible(v, v) {
            out.push(Found {
                start: m.start(),
                end: m.end(),
                lo: v,
                hi: v,
                is_range: false,
            });
            pos = m.end();
        }
    }
    out
}

/// Earliest duration in `text[from..to]`; a range wins over a point that
/// starts at the same place or inside it.
fn first_in(text: &str, from: usize, to: usize) -> Option<Found> {
    let r = ranges(text, from, to).into_iter().next();
    let p = points(text, from, to).into_iter().find(|p| {
        r.as_ref()
            .is_none_or(|r| p.start >= r.end || p.start < r.start)
    });
    match (r, p) {
        (Some(r), Some(p)) => Some(if p.start < r.start { p } else { r }),
        (r, p) => r.or(p),
    }
}

/// End of the first sentence: a terminator followed by whitespace or the
/// end of the text, where a period between digits does not count.
fn leading_sentence_end(text: &str) -> usize {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(at, c)) in chars.iter().enumerate() {
        let next = chars.get(i + 1).map(|x| x.1);
        match c {
            '\n' => return at,
            '.' | '!' | '?' if next.is_none_or(char::is_whitespace) => return at + 1,
            _ => {}
        }
    }
    text.len()
}

/// Extracts the recommended segment duration from a model response.
///
/// Precedence: the first duration inside an emphasised span (`**...**` or
/// `__...__`), then the first duration in the leading sentence, then the
/// first range anywhere, then the first point anywhere. Ranges accept
/// hyphens, dashes or "to"; units may be "s", "sec(s)" or "second(s)".
pub fn parse_recommendation(response: &str) -> Result<Recommendation> {
    let found = EMPHASIS
        .captures_iter(response)
        .filter_map(|c| {
            let inner = c.get(1).or_else(|| c.get(2)).unwrap();
            first_in(response, inner.start(), inner.end())
        })
        .next()
        .or_else(|| first_in(response, 0, leading_sentence_end(response)))
        .or_else(|| ranges(response, 0, response.len()).into_iter().next())
        .or_else(|| points(response, 0, response.len()).into_iter().next())
        .ok_or(AdvisorError::NoDurationFound)?;
    debug_assert!(found.is_range || found.lo == found.hi);
    Ok(Recommendation {
        lo: found.lo,
        hi: found.hi,
        raw_span: response[found.start..found.end].to_string(),
    })
}
