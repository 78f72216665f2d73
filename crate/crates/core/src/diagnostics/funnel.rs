use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::DiagError;
use crate::model::Support;

const LOG_GUARD: f64 = 1e-12;

/// Correlation between the log scale of a parent and the log magnitude of
/// the child's deviation from its mean. Funnels push this towards +1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FunnelScore {
    pub score: f64,
    pub degenerate: bool,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let constant = |v: &[f64]| v.windows(2).all(|w| w[0] == w[1]);
    if constant(x) || constant(y) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let denom = n - 1.0;
    let (cov, vx, vy) = (sxy / denom, sxx / denom, syy / denom);
    if vx <= 0.0 || vy <= 0.0 {
        return None;
    }
    Some((cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0))
}

/// Sample funnel score for one (scale parent, child) pair of series.
///
/// Positive-support parents use `ln(parent)`; others `ln(|parent| + ε)`.
pub fn detect_funnel_sample(
    parent: &[f64],
    child: &[f64],
    support: Support,
) -> Result<FunnelScore, DiagError> {
    if parent.len() != child.len() {
        return Err(DiagError::LengthMismatch {
            left: parent.len(),
            right: child.len(),
        });
    }
    if parent.len() < 50 {
        return Err(DiagError::NotEnoughData {
            needed: 50,
            got: parent.len(),
        });
    }
    let positive = support == Support::Positive && parent.iter().all(|&p| p > 0.0);
    let t: Vec<f64> = parent
        .iter()
        .map(|&p| {
            if positive {
                p.ln()
            } else {
                (p.abs() + LOG_GUARD).ln()
            }
        })
        .collect();
    let child_mean = child.iter().sum::<f64>() / child.len() as f64;
    let a: Vec<f64> = child
        .iter()
        .map(|&c| ((c - child_mean).abs() + LOG_GUARD).ln())
        .collect();
    Ok(match pearson(&t, &a) {
        Some(score) => FunnelScore {
            score,
            degenerate: false,
        },
        None => FunnelScore {
            score: 0.0,
            degenerate: true,
        },
    })
}
