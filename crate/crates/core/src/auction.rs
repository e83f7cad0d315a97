//! Allocation, payments and utilities of the quasi-proportional winners-pay rule.

use crate::error::{Error, Result};
use crate::weights::WeightSpec;

/// Private values of the bidders, one per bidder.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationProfile {
    values: Vec<f64>,
}

impl ValuationProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a profile needs at least 2 bidders, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "values must be positive, got {v}"
            )));
        }
        Ok(ValuationProfile { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidVector {
    bids: Vec<f64>,
}

impl BidVector {
    pub fn new(bids: Vec<f64>) -> Result<Self> {
        if let Some(b) = bids.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "bids must be nonnegative, got {b}"
            )));
        }
        Ok(BidVector { bids })
    }

    /// Every bidder bids `bid`.
    pub fn uniform(n: usize, bid: f64) -> Result<Self> {
        Self::new(vec![bid; n])
    }

    pub fn bids(&self) -> &[f64] {
        &self.bids
    }

    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.bids.iter().filter(|&&b| b > 0.0).count()
    }

    /// Largest componentwise distance to `other`.
    pub fn sup_distance(&self, other: &BidVector) -> f64 {
        self.bids
            .iter()
            .zip(&other.bids)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Checks `0 <= b_i <= v_i` and matching length.
    pub fn check_within(&self, profile: &ValuationProfile) -> Result<()> {
        check_len(profile.len(), self.len())?;
        for (i, (&b, &v)) in self.bids.iter().zip(profile.values()).enumerate() {
            if b > v {
                return Err(Error::Precondition(format!(
                    "bid {b} of bidder {} exceeds its value {v}",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

impl From<BidVector> for Vec<f64> {
    fn from(b: BidVector) -> Self {
        b.bids
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionOutcome {
    pub allocations: Vec<f64>,
    pub payments: Vec<f64>,
    pub utilities: Vec<f64>,
    pub revenue: f64,
}

/// `log f(b_i)` for every bid.
pub fn log_weights(spec: &WeightSpec, bids: &BidVector) -> Vec<f64> {
    bids.bids().iter().map(|&b| spec.log_eval(b)).collect()
}

/// Allocation shares `f(b_i) / sum_j f(b_j)`, normalized by the largest
/// weight in log space.
pub fn allocate(spec: &WeightSpec, bids: &BidVector) -> Result<Vec<f64>> {
    allocate_from_log_weights(&log_weights(spec, bids))
}

pub(crate) fn allocate_from_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let top = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::Degenerate(
            "all bids are zero, allocation is undefined".into(),
        ));
    }
    let scaled: Vec<f64> = log_weights.iter().map(|&lw| (lw - top).exp()).collect();
    // Sum in sorted order so permuting bidders permutes shares exactly.
    let mut sorted = scaled.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    Ok(scaled.into_iter().map(|w| w / total).collect())
}

/// Payments `b_i a_i`, utilities `(v_i - b_i) a_i` and total revenue.
pub fn settle(
    spec: &WeightSpec,
    profile: &ValuationProfile,
    bids: &BidVector,
) -> Result<AuctionOutcome> {
    check_len(profile.len(), bids.len())?;
    let allocations = allocate(spec, bids)?;
    Ok(outcome_from_allocations(profile, bids, allocations))
}

pub(crate) fn outcome_from_allocations(
    profile: &ValuationProfile,
    bids: &BidVector,
    allocations: Vec<f64>,
) -> AuctionOutcome {
    let payments: Vec<f64> = bids
        .bids()
        .iter()
        .zip(&allocations)
        .map(|(b, a)| b * a)
        .collect();
    let utilities = profile
        .values()
        .iter()
        .zip(bids.bids())
        .zip(&allocations)
        .map(|((v, b), a)| (v - b) * a)
        .collect();
    let mut sorted = payments.clone();
    sorted.sort_by(f64::total_cmp);
    let revenue = sorted.iter().sum();
    AuctionOutcome {
        allocations,
        payments,
        utilities,
        revenue,
    }
}
