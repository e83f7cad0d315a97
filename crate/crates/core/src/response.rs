//! Best responses and synchronous best-response dynamics.
//!
//! A bidder with value `v` facing rival weight `s = sum_{j != i} f(b_j)` gets
//! utility `u(b) = (v - b) f(b) / (f(b) + s)`. Dividing `u'(b)` by the positive
//! factor `f'(b) (1 - a)` gives the marginal sign function
//!
//! ```text
//! m(b) = (v - b) - (f / f')(b) * (1 + f(b) / s)
//! ```
//!
//! which is `v > 0` at `b = 0+` and negative at `b = v`. The best response is
//! its unique root, found by bisection on `(0, v)`.

use crate::auction::{check_len, BidVector, ValuationProfile};
use crate::error::{Error, Result};
use crate::weights::{log_sum_exp, Family, WeightSpec};

/// Absolute bid tolerance of the best-response bisection.
pub const BID_TOLERANCE: f64 = 1e-13;

/// Hard cap on bisection steps.
pub const MAX_BISECTION_STEPS: usize = 400;

/// Fixed-point residual below which a trace counts as converged when no
/// explicit tolerance is given.
pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-10;

/// Relative floor bid used when a bidder faces no positive rival bid.
pub const DEFAULT_RESCUE_FLOOR: f64 = 1e-9;

const UNIMODALITY_SCAN_POINTS: usize = 256;

/// One bidder's best-response problem, with the rival weight held in log form.
#[derive(Debug, Clone, Copy)]
pub struct ResponseProblem<'a> {
    spec: &'a WeightSpec,
    value: f64,
    log_rival_weight: f64,
}

impl<'a> ResponseProblem<'a> {
    pub fn new(spec: &'a WeightSpec, value: f64, rival_weight_sum: f64) -> Result<Self> {
        if !(rival_weight_sum > 0.0) {
            return Err(Error::Precondition(format!(
                "rival weight sum must be positive, got {rival_weight_sum}"
            )));
        }
        Self::from_log_rival_weight(spec, value, rival_weight_sum.ln())
    }

    pub fn from_log_rival_weight(
        spec: &'a WeightSpec,
        value: f64,
        log_rival_weight: f64,
    ) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Precondition(format!(
                "value must be positive, got {value}"
            )));
        }
        if log_rival_weight == f64::NEG_INFINITY || log_rival_weight.is_nan() {
            return Err(Error::Precondition(
                "rival weight sum must be positive".into(),
            ));
        }
        Ok(ResponseProblem {
            spec,
            value,
            log_rival_weight,
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Allocation share when bidding `bid`.
    pub fn share(&self, bid: f64) -> f64 {
        1.0 / (1.0 + (self.log_rival_weight - self.spec.log_eval(bid)).exp())
    }

    pub fn utility(&self, bid: f64) -> f64 {
        (self.value - bid) * self.share(bid)
    }

    /// Same sign as `u'(bid)`.
    pub fn marginal_sign(&self, bid: f64) -> f64 {
        let weight_over_rivals = (self.spec.log_eval(bid) - self.log_rival_weight).exp();
        (self.value - bid) - self.spec.weight_ratio(bid) * (1.0 + weight_over_rivals)
    }

    fn count_sign_changes(&self) -> usize {
        let mut changes = 0;
        let mut prev = self.value;
        for k in 1..UNIMODALITY_SCAN_POINTS {
            let b = self.value * k as f64 / UNIMODALITY_SCAN_POINTS as f64;
            let m = self.marginal_sign(b);
            if (m > 0.0) != (prev > 0.0) {
                changes += 1;
            }
            prev = m;
        }
        if prev > 0.0 {
            changes += 1;
        }
        changes
    }
}

/// The utility-maximizing bid in `(0, v)`.
pub fn best_response(problem: &ResponseProblem<'_>) -> Result<f64> {
    // Exponential and power weights satisfy f f'' < 2 f'^2, so the marginal
    // sign changes once. General polynomials need not.
    if problem.spec.family() == Family::Polynomial {
        let changes = problem.count_sign_changes();
        if changes > 1 {
            return Err(Error::NotUnimodal {
                sign_changes: changes,
            });
        }
    }

    let (mut lo, mut hi) = (0.0, problem.value);
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= BID_TOLERANCE || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let m = problem.marginal_sign(mid);
        if m.is_nan() {
            return Err(Error::Domain(format!(
                "marginal utility is undefined at bid {mid}"
            )));
        }
        if m > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_BISECTION_STEPS,
    })
}

/// `log sum_{j != i} f(b_j)` for every bidder.
pub fn rival_log_weights(spec: &WeightSpec, bids: &BidVector) -> Vec<f64> {
    let lw: Vec<f64> = bids.bids().iter().map(|&b| spec.log_eval(b)).collect();
    (0..lw.len())
        .map(|i| {
            log_sum_exp(
                lw.iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &w)| w),
            )
        })
        .collect()
}

/// Simultaneous best responses, all computed from the same input vector.
/// Fails when some bidder faces only zero rival bids.
pub fn best_response_vector(
    spec: &WeightSpec,
    profile: &ValuationProfile,
    bids: &BidVector,
) -> Result<BidVector> {
    best_response_vector_with_rescue(spec, profile, bids, None).map(|(b, _)| b)
}

/// Like [`best_response_vector`], but a bidder facing only zero rival bids
/// answers with `rescue_floor * v_i` when a floor is given. The flag reports
/// whether the floor was used.
pub fn best_response_vector_with_rescue(
    spec: &WeightSpec,
    profile: &ValuationProfile,
    bids: &BidVector,
    rescue_floor: Option<f64>,
) -> Result<(BidVector, bool)> {
    check_len(profile.len(), bids.len())?;
    let mut rescued = false;
    let next = rival_log_weights(spec, bids)
        .into_iter()
        .zip(profile.values())
        .enumerate()
        .map(|(i, (ls, &v))| {
            if ls == f64::NEG_INFINITY {
                return match rescue_floor {
                    Some(floor) => {
                        rescued = true;
                        Ok(floor * v)
                    }
                    None => Err(Error::Degenerate(format!(
                        "bidder {} faces no positive rival bid",
                        i + 1
                    ))),
                };
            }
            best_response(&ResponseProblem::from_log_rival_weight(spec, v, ls)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((BidVector::new(next)?, rescued))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsOptions {
    pub max_iters: usize,
    /// Stop once the sup-norm step falls below this; `0` disables early stopping.
    pub tol: f64,
    /// Relative floor bid for bidders facing only zero rival bids.
    pub rescue_floor: f64,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        DynamicsOptions {
            max_iters: 100,
            tol: 0.0,
            rescue_floor: DEFAULT_RESCUE_FLOOR,
        }
    }
}

impl DynamicsOptions {
    pub fn with_iters(max_iters: usize) -> Self {
        DynamicsOptions {
            max_iters,
            ..Default::default()
        }
    }

    pub fn convergence_tol(&self) -> f64 {
        if self.tol > 0.0 {
            self.tol
        } else {
            DEFAULT_CONVERGENCE_TOL
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTrace {
    /// `b^0 ..= b^K`; the first entry is the supplied start.
    pub iterates: Vec<BidVector>,
    pub final_bids: BidVector,
    pub iterations: usize,
    /// `max_i |b_i - BR_i(b)|` at the final bids.
    pub residual: f64,
    pub converged: bool,
    /// Set when some bidder was answered with the rescue floor.
    pub rescued: bool,
}

/// Final state of a dynamics run without the iterate history.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSummary {
    pub final_bids: BidVector,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub rescued: bool,
}

fn check_start(
    profile: &ValuationProfile,
    start: &BidVector,
    opts: &DynamicsOptions,
) -> Result<()> {
    if opts.max_iters == 0 {
        return Err(Error::InvalidParameter(
            "max_iters must be at least 1".into(),
        ));
    }
    if !(opts.tol >= 0.0) || !(opts.rescue_floor > 0.0 && opts.rescue_floor < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tol must be >= 0 and rescue floor in (0, 1), got {} and {}",
            opts.tol, opts.rescue_floor
        )));
    }
    start.check_within(profile)?;
    if start.positive_count() == 0 {
        return Err(Error::Degenerate(
            "dynamics start has no positive bid".into(),
        ));
    }
    Ok(())
}

fn iterate(
    spec: &WeightSpec,
    profile: &ValuationProfile,
    start: &BidVector,
    opts: &DynamicsOptions,
    mut history: Option<&mut Vec<BidVector>>,
) -> Result<DynamicsSummary> {
    check_start(profile, start, opts)?;
    let floor = Some(opts.rescue_floor);
    let mut current = start.clone();
    let mut rescued = false;
    let mut iterations = 0;
    let mut fixed = false;

    while iterations < opts.max_iters {
        let (next, r) = best_response_vector_with_rescue(spec, profile, &current, floor)?;
        rescued |= r;
        let step = next.sup_distance(&current);
        iterations += 1;
        if let Some(h) = history.as_deref_mut() {
            h.push(next.clone());
        }
        fixed = next == current;
        current = next;
        if fixed || (opts.tol > 0.0 && step < opts.tol) {
            break;
        }
    }

    if fixed && opts.tol == 0.0 {
        // BR is deterministic, so an exact fixed point repeats for the
        // remaining rounds of the fixed-iteration protocol.
        if let Some(h) = history {
            h.resize(opts.max_iters + 1, current.clone());
        }
        iterations = opts.max_iters;
    }

    let residual = if fixed {
        0.0
    } else {
        let (next, r) = best_response_vector_with_rescue(spec, profile, &current, floor)?;
        rescued |= r;
        next.sup_distance(&current)
    };

    Ok(DynamicsSummary {
        converged: residual < opts.convergence_tol(),
        final_bids: current,
        iterations,
        residual,
        rescued,
    })
}

/// Runs `b^{k+1} = BR(b^k)` from `start`, recording every iterate.
pub fn run_dynamics(
    spec: &WeightSpec,
    profile: &ValuationProfile,
    start: &BidVector,
    opts: &DynamicsOptions,
) -> Result<DynamicsTrace> {
    let mut iterates = vec![start.clone()];
    let summary = iterate(spec, profile, start, opts, Some(&mut iterates))?;
    Ok(DynamicsTrace {
        iterates,
        final_bids: summary.final_bids,
        iterations: summary.iterations,
        residual: summary.residual,
        converged: summary.converged,
        rescued: summary.rescued,
    })
}

/// Like [`run_dynamics`] without keeping the iterates.
pub fn run_dynamics_summary(
    spec: &WeightSpec,
    profile: &ValuationProfile,
    start: &BidVector,
    opts: &DynamicsOptions,
) -> Result<DynamicsSummary> {
    iterate(spec, profile, start, opts, None)
}
