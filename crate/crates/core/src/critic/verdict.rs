use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Outcome;

/// Confidence substituted in lenient mode when the response has none.
pub const DEFAULT_CONFIDENCE: u8 = 50;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedVerdict {
    pub prediction: Outcome,
    pub confidence: u8,
    pub analysis: String,
    pub confidence_defaulted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerdictError {
    #[error("no <prediction> tag")]
    MissingPrediction,
    #[error("prediction `{0}` is neither yes nor no")]
    InvalidPrediction(String),
    #[error("no <confidence> tag")]
    MissingConfidence,
    #[error("confidence `{0}` is not a number")]
    InvalidConfidence(String),
}

static PREDICTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<prediction>(.*?)</prediction>").unwrap());
static CONFIDENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<confidence>(.*?)</confidence>").unwrap());
static ANALYSIS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<analysis>(.*?)</analysis>").unwrap());
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^([+-]?)(\d+)(?:\.(\d+))?\s*%?$").unwrap());

fn last_tag<'a>(re: &Regex, text: &'a str) -> Option<&'a str> {
    re.captures_iter(text).last().map(|c| c.get(1).unwrap().as_str())
}

fn parse_confidence(raw: &str) -> Option<u8> {
    let caps = NUMBER.captures(raw.trim())?;
    let negative = &caps[1] == "-";
    let digits = caps[2].trim_start_matches('0');
    if negative {
        return Some(0);
    }
    if digits.len() > 3 {
        return Some(100);
    }
    let whole: u32 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    let round_up = caps.get(3).is_some_and(|f| f.as_str().as_bytes()[0] >= b'5');
    Some((whole + round_up as u32).min(100) as u8)
}

/// Reads the last `<prediction>`, `<confidence>` and `<analysis>` tags.
/// `yes` maps to pass and `no` to fail; confidence is clamped to 0..=100.
pub fn parse_verdict(response: &str, mode: ParseMode) -> Result<ParsedVerdict, VerdictError> {
    let raw_prediction = last_tag(&PREDICTION, response).ok_or(VerdictError::MissingPrediction)?;
    let prediction = match raw_prediction.trim().to_ascii_lowercase().as_str() {
        "yes" => Outcome::Pass,
        "no" => Outcome::Fail,
        _ => return Err(VerdictError::InvalidPrediction(raw_prediction.trim().to_string())),
    };
    let analysis = last_tag(&ANALYSIS, response).unwrap_or("").trim().to_string();
    let confidence = match last_tag(&CONFIDENCE, response) {
        None => Err(VerdictError::MissingConfidence),
        Some(raw) => parse_confidence(raw).ok_or_else(|| VerdictError::InvalidConfidence(raw.trim().to_string())),
    };
    let (confidence, confidence_defaulted) = match (confidence, mode) {
        (Ok(c), _) => (c, false),
        (Err(_), ParseMode::Lenient) => (DEFAULT_CONFIDENCE, true),
        (Err(e), ParseMode::Strict) => return Err(e),
    };
    Ok(ParsedVerdict {
        prediction,
        confidence,
        analysis,
        confidence_defaulted,
    })
}
