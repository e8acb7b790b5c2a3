//! Property, bond-reconstruction and atom-type losses and their weighted sum.

use std::fmt;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty sample")]
    EmptySample,
    #[error("every loss term was skipped")]
    AllTermsSkipped,
    #[error("label {0} is not a valid class")]
    InvalidLabel(usize),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
}

/// Multipliers of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_label: f64,
    pub w_edge: f64,
    pub w_node: f64,
}

impl Default for LossWeights {
    /// Supervised term primary, both self-supervised terms at 0.1.
    fn default() -> Self {
        LossWeights {
            w_label: 1.0,
            w_edge: 0.1,
            w_node: 0.1,
        }
    }
}

impl LossWeights {
    /// `L_node + 0.1·L_edge + 0.1·L_label`
    pub fn eq9() -> Self {
        LossWeights {
            w_label: 0.1,
            w_edge: 0.1,
            w_node: 1.0,
        }
    }

    /// Named presets accepted on the command line.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "eq9" => Some(Self::eq9()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let all = [self.w_label, self.w_edge, self.w_node];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(LossError::InvalidWeights(format!(
                "{self}: weights must be finite and >= 0"
            )));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(LossError::InvalidWeights("all weights are zero".into()));
        }
        Ok(())
    }
}

impl fmt::Display for LossWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "w_label={} w_edge={} w_node={}",
            self.w_label, self.w_edge, self.w_node
        )
    }
}

/// How many labels, bond pairs and contexts each term averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossCounts {
    pub labels: usize,
    pub bond_pairs: usize,
    pub contexts: usize,
}

/// Values of one joint-loss evaluation. Skipped terms are 0 with count 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown<T> {
    pub l_label: T,
    pub l_edge: T,
    pub l_node: T,
    pub joint: T,
    pub counts: LossCounts,
}

/// A computed loss term and the number of items it averages.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm<'t, T: Scalar> {
    pub value: Var<'t, T>,
    pub count: usize,
}

/// Mean two-class cross entropy of `k × 2` logits.
pub fn property_loss<'t, T: Scalar>(
    logits: Var<'t, T>,
    labels: &[usize],
) -> Result<Var<'t, T>, LossError> {
    if labels.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(LossError::InvalidLabel(bad));
    }
    Ok(logits.cross_entropy(labels)?)
}

/// Mean binary cross entropy of raw bond scores.
pub fn bond_loss<'t, T: Scalar>(
    scores: Var<'t, T>,
    is_bond: &[bool],
) -> Result<Var<'t, T>, LossError> {
    if is_bond.is_empty() {
        return Err(LossError::EmptySample);
    }
    let y: Vec<T> = is_bond
        .iter()
        .map(|&b| if b { T::one() } else { T::zero() })
        .collect();
    Ok(scores.binary_cross_entropy(&y)?)
}

/// Mean 118-class cross entropy; `targets` are atomic numbers.
pub fn atom_loss<'t, T: Scalar>(
    logits: Var<'t, T>,
    targets: &[u8],
) -> Result<Var<'t, T>, LossError> {
    if targets.is_empty() {
        return Err(LossError::EmptySample);
    }
    let classes: Vec<usize> = targets
        .iter()
        .map(|&z| match z {
            1..=118 => Ok(z as usize - 1),
            _ => Err(LossError::InvalidLabel(z as usize)),
        })
        .collect::<Result<_, _>>()?;
    Ok(logits.cross_entropy(&classes)?)
}

/// `w_node·l_node + w_edge·l_edge + w_label·l_label` on plain numbers, summed in that order.
pub fn combine<T: Scalar>(l_node: T, l_edge: T, l_label: T, w: &LossWeights) -> T {
    T::lit(w.w_node) * l_node + T::lit(w.w_edge) * l_edge + T::lit(w.w_label) * l_label
}

/// Weighted sum of the present terms.
///
/// A term that is `None` or carries weight 0 is left out of the graph
/// entirely, so its gradient contribution is exactly absent rather than
/// multiplied by zero.
pub fn joint_loss<'t, T: Scalar>(
    label: Option<LossTerm<'t, T>>,
    edge: Option<LossTerm<'t, T>>,
    node: Option<LossTerm<'t, T>>,
    weights: &LossWeights,
) -> Result<(Var<'t, T>, LossBreakdown<T>), LossError> {
    let mut b = LossBreakdown::default();
    let mut total: Option<Var<'t, T>> = None;
    let terms = [
        (node, weights.w_node, &mut b.l_node, &mut b.counts.contexts),
        (
            edge,
            weights.w_edge,
            &mut b.l_edge,
            &mut b.counts.bond_pairs,
        ),
        (label, weights.w_label, &mut b.l_label, &mut b.counts.labels),
    ];
    for (term, w, slot, count) in terms {
        let Some(term) = term else { continue };
        if w == 0.0 {
            continue;
        }
        *slot = term.value.item();
        *count = term.count;
        let scaled = term.value.scale(T::lit(w))?;
        total = Some(match total {
            None => scaled,
            Some(t) => t.add(scaled)?,
        });
    }
    let total = total.ok_or(LossError::AllTermsSkipped)?;
    b.joint = total.item();
    Ok((total, b))
}
