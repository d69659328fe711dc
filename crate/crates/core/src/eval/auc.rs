//! Responder analysis: AUC from predicted IC50 and group effect size.

use super::{EvalError, Result};

/// Predicted ln IC50 per sample with a responder/non-responder label.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponderSet {
    pub predicted: Vec<f64>,
    pub responder: Vec<bool>,
}

impl ResponderSet {
    pub fn new(predicted: Vec<f64>, responder: Vec<bool>) -> Result<Self> {
        if predicted.len() != responder.len() {
            return Err(EvalError::Input(format!(
                "{} predictions vs {} labels",
                predicted.len(),
                responder.len()
            )));
        }
        if let Some(bad) = predicted.iter().find(|v| !v.is_finite()) {
            return Err(EvalError::Input(format!("non-finite prediction {bad}")));
        }
        Ok(ResponderSet {
            predicted,
            responder,
        })
    }

    fn split(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut resp = Vec::new();
        let mut non = Vec::new();
        for (&p, &r) in self.predicted.iter().zip(&self.responder) {
            if r {
                resp.push(p);
            } else {
                non.push(p);
            }
        }
        if resp.is_empty() || non.is_empty() {
            return Err(EvalError::SingleClass);
        }
        Ok((resp, non))
    }
}

/// AUC of responder detection from predicted ln IC50.
///
/// The score is the negated prediction, so a lower predicted IC50 means a
/// more responsive sample. The value is the rank statistic
/// `P(score_responder > score_non) + P(tie) / 2`, counted over all pairs,
/// which is invariant under every strictly increasing score transform
/// (including a softmax-style probability conversion).
pub fn auc_from_ic50(set: &ResponderSet) -> Result<f64> {
    let (resp, non) = set.split()?;
    let mut favorable = 0.0;
    for &r in &resp {
        for &n in &non {
            // score = -prediction, so compare reversed.
            if r < n {
                favorable += 1.0;
            } else if r == n {
                favorable += 0.5;
            }
        }
    }
    Ok(favorable / (resp.len() * non.len()) as f64)
}

/// Mean predicted ln IC50 of non-responders minus responders.
///
/// Positive when responders are predicted as more sensitive.
pub fn effect_size(set: &ResponderSet) -> Result<f64> {
    let (resp, non) = set.split()?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(&non) - mean(&resp))
}
