//! Equilibrium characterizations, bid lower bounds and the box-mapping probe.
//!
//! At an interior equilibrium every bidder satisfies the first-order condition
//!
//! ```text
//! b = v - (f / f')(b) / (1 - a)
//! ```
//!
//! which specializes to `b = v - (1 - e^{-cb}) / (c (1 - a))` for exponential
//! weights and to `b = v / (1 + 1 / (p (1 - a)))` for power weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::auction::{check_len, BidVector, ValuationProfile};
use crate::error::{Error, Result};
use crate::response::{best_response_vector, rival_log_weights};
use crate::weights::{WeightKind, WeightSpec};

/// Below this value of `1 - a_i` the characterization is not evaluated.
pub const SATURATED_SHARE_GAP: f64 = 1e-15;

/// Box-probe components with `BR_i < w_i - BOX_MARGIN_TOL` count as violations.
pub const BOX_MARGIN_TOL: f64 = 1e-9;

/// Right-hand side of the exponential characterization for a fixed share.
pub fn exponential_char_rhs(value: f64, c: f64, bid: f64, share: f64) -> f64 {
    value - (-(-c * bid).exp_m1()) / c / (1.0 - share)
}

/// Right-hand side of the power characterization for a fixed share.
pub fn power_char_rhs(value: f64, p: f64, share: f64) -> f64 {
    value / (1.0 + 1.0 / (p * (1.0 - share)))
}

/// For each bidder, `(f / f')(b_i)` and `1 / (1 - a_i)` computed from log weights.
fn ratio_and_inverse_gap(spec: &WeightSpec, bids: &BidVector) -> Result<Vec<(f64, f64)>> {
    if bids.positive_count() < 2 {
        return Err(Error::Degenerate(
            "the characterization needs at least two positive bids".into(),
        ));
    }
    let rivals = rival_log_weights(spec, bids);
    bids.bids()
        .iter()
        .zip(rivals)
        .enumerate()
        .map(|(i, (&b, ls))| {
            // 1 / (1 - a) = 1 + f / s
            let inv_gap = 1.0 + (spec.log_eval(b) - ls).exp();
            if !(inv_gap < 1.0 / SATURATED_SHARE_GAP) {
                return Err(Error::Degenerate(format!(
                    "bidder {} holds the whole allocation",
                    i + 1
                )));
            }
            Ok((spec.weight_ratio(b), inv_gap))
        })
        .collect()
}

/// `b_i` minus the family's characterization right-hand side, per bidder.
/// Exponential and power weights use their closed forms; polynomials use the
/// generic `f / f'` form.
pub fn char_residual(
    spec: &WeightSpec,
    profile: &ValuationProfile,
    bids: &BidVector,
) -> Result<Vec<f64>> {
    check_len(profile.len(), bids.len())?;
    let parts = ratio_and_inverse_gap(spec, bids)?;
    Ok(bids
        .bids()
        .iter()
        .zip(profile.values())
        .zip(parts)
        .map(|((&b, &v), (ratio, inv_gap))| {
            let rhs = match spec.kind() {
                WeightKind::Exponential { c } => v - (-(-c * b).exp_m1()) / c * inv_gap,
                WeightKind::Power { p } => v / (1.0 + inv_gap / p),
                WeightKind::Polynomial { .. } => v - ratio * inv_gap,
            };
            b - rhs
        })
        .collect())
}

/// `b_i - (v_i - (f / f')(b_i) / (1 - a_i))` for any weight family.
pub fn char_residual_generic(
    spec: &WeightSpec,
    profile: &ValuationProfile,
    bids: &BidVector,
) -> Result<Vec<f64>> {
    check_len(profile.len(), bids.len())?;
    let parts = ratio_and_inverse_gap(spec, bids)?;
    Ok(bids
        .bids()
        .iter()
        .zip(profile.values())
        .zip(parts)
        .map(|((&b, &v), (ratio, inv_gap))| b - (v - ratio * inv_gap))
        .collect())
}

fn exponential_c(spec: &WeightSpec) -> Result<f64> {
    match spec.kind() {
        WeightKind::Exponential { c } => Ok(*c),
        _ => Err(Error::InvalidParameter(format!(
            "the bound premise is defined for exponential weights only, got {spec}"
        ))),
    }
}

/// Componentwise truth of `w_i <= v_i - (1 - e^{-c w_i}) / (c (1 - a_i(w)))`.
pub fn bound_premise(
    spec: &WeightSpec,
    profile: &ValuationProfile,
    bounds: &[f64],
) -> Result<Vec<bool>> {
    let c = exponential_c(spec)?;
    check_len(profile.len(), bounds.len())?;
    let w = BidVector::new(bounds.to_vec())?;
    if w.positive_count() < 2 {
        return Err(Error::Degenerate(
            "allocations at the bound vector need two positive entries".into(),
        ));
    }
    let rivals = rival_log_weights(spec, &w);
    Ok(bounds
        .iter()
        .zip(profile.values())
        .zip(rivals)
        .map(|((&wi, &v), ls)| {
            let inv_gap = 1.0 + (spec.log_eval(wi) - ls).exp();
            wi <= v - (-(-c * wi).exp_m1()) / c * inv_gap
        })
        .collect())
}

/// Candidate lower bounds for equilibrium bids, in the caller's bidder order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundVector {
    /// Bounds clamped to `[0, v_i]`.
    pub bounds: Vec<f64>,
    /// Bounds before clamping.
    pub raw_bounds: Vec<f64>,
    /// Whether every bidder satisfies the bound premise at `bounds`.
    pub premise_ok: bool,
    /// Fewer than two positive bounds, so allocations at the bounds are undefined.
    pub degenerate: bool,
    /// `permutation[k]` is the caller index of the bidder with the k-th largest value.
    pub permutation: Vec<usize>,
}

impl BoundVector {
    /// Clamps `raw_bounds` into the value box and evaluates the premise.
    pub fn assess(
        spec: &WeightSpec,
        profile: &ValuationProfile,
        raw_bounds: Vec<f64>,
    ) -> Result<Self> {
        check_len(profile.len(), raw_bounds.len())?;
        if raw_bounds.iter().any(|w| w.is_nan()) {
            return Err(Error::InvalidParameter("bound is NaN".into()));
        }
        let bounds: Vec<f64> = raw_bounds
            .iter()
            .zip(profile.values())
            .map(|(&w, &v)| w.clamp(0.0, v))
            .collect();
        let degenerate = bounds.iter().filter(|&&w| w > 0.0).count() < 2;
        let premise_ok = !degenerate
            && bound_premise(spec, profile, &bounds)?
                .into_iter()
                .all(|ok| ok);
        Ok(BoundVector {
            bounds,
            raw_bounds,
            premise_ok,
            degenerate,
            permutation: descending_order(profile.values()),
        })
    }
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// Bounds `w_1 = v_2 - 2/c` and `w_i = v_i - 2/c` (`i >= 2`) over the
/// bidders sorted by decreasing value, reported in the caller's order.
pub fn corollary_bounds(profile: &ValuationProfile, c: f64) -> Result<BoundVector> {
    let spec = WeightSpec::exponential(c)?;
    let order = descending_order(profile.values());
    let values = profile.values();
    let mut raw = vec![0.0; values.len()];
    for (rank, &i) in order.iter().enumerate() {
        let anchor = if rank == 0 {
            values[order[1]]
        } else {
            values[i]
        };
        raw[i] = anchor - 2.0 / c;
    }
    BoundVector::assess(&spec, profile, raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxProbeReport {
    pub samples: usize,
    pub violations: usize,
    /// Smallest `BR_i(b) - w_i` seen; `None` when no samples were drawn.
    pub worst_margin: Option<f64>,
}

/// Samples bid vectors uniformly from `[w_1, v_1] x ... x [w_n, v_n]` and
/// counts best-response components that fall below their bound.
///
/// Sample `k` draws from its own ChaCha stream, so the report does not depend
/// on how samples are scheduled across threads.
pub fn box_mapping_probe(
    spec: &WeightSpec,
    profile: &ValuationProfile,
    bounds: &BoundVector,
    samples: usize,
    seed: u64,
) -> Result<BoxProbeReport> {
    check_len(profile.len(), bounds.bounds.len())?;
    if !bounds.premise_ok {
        return Err(Error::Precondition(
            "box probe needs bounds that satisfy the premise".into(),
        ));
    }
    let margins = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let bids: Vec<f64> = bounds
                .bounds
                .iter()
                .zip(profile.values())
                .map(|(&w, &v)| if w < v { rng.gen_range(w..=v) } else { v })
                .collect();
            let br = best_response_vector(spec, profile, &BidVector::new(bids)?)?;
            let margins: Vec<f64> = br
                .bids()
                .iter()
                .zip(&bounds.bounds)
                .map(|(b, w)| b - w)
                .collect();
            Ok(margins)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    let flat = margins.iter().flatten();
    Ok(BoxProbeReport {
        samples,
        violations: flat.clone().filter(|&&m| m < -BOX_MARGIN_TOL).count(),
        worst_margin: flat.copied().reduce(f64::min),
    })
}
