use serde::{Deserialize, Serialize};

use segfp_core::eval::{win_counts, HitReport, Metric};

use crate::{AdvisorError, Recommendation, Result};

/// Widest summary span, in seconds, still reported as consistent.
pub const CONSISTENCY_THRESHOLD_S: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub lo: f64,
    pub hi: f64,
    pub consistent: bool,
}

impl ModelSummary {
    pub fn as_recommendation(&self) -> Recommendation {
        Recommendation {
            lo: self.lo,
            hi: self.hi,
            raw_span: String::new(),
        }
    }
}

/// Envelope of a model's five recommendations.
pub fn summarize_model(recs: &[Recommendation]) -> Result<ModelSummary> {
    if recs.len() != 5 {
        return Err(AdvisorError::WrongCount {
            expected: 5,
            got: recs.len(),
        });
    }
    let lo = recs.iter().map(|r| r.lo).fold(f64::INFINITY, f64::min);
    let hi = recs.iter().map(|r| r.hi).fold(f64::NEG_INFINITY, f64::max);
    Ok(ModelSummary {
        lo,
        hi,
        consistent: hi - lo <= CONSISTENCY_THRESHOLD_S,
    })
}

/// The segment length with the most Top-1-exact wins; ties go to the
/// shorter length.
pub fn best_window(report: &HitReport) -> Result<f64> {
    let wins = win_counts(report, Metric::Top1Exact);
    if wins.len() < 2 || wins[0].contested == 0 {
        return Err(AdvisorError::InsufficientReport);
    }
    let mut best = &wins[0];
    for w in &wins[1..] {
        if w.wins > best.wins {
            best = w;
        }
    }
    Ok(best.window_s)
}

/// Distance in seconds from the empirically best segment length to the
/// recommended interval; zero when the interval contains it.
pub fn score_against_empirical(rec: &Recommendation, report: &HitReport) -> Result<f64> {
    let w = best_window(report)?;
    Ok(if w < rec.lo {
        rec.lo - w
    } else if w > rec.hi {
        w - rec.hi
    } else {
        0.0
    })
}
