//! Revenue-maximizing steepness sweeps over "one large, others the same"
//! scenarios: bidder 1 has value `alpha`, every other bidder has value 1.
//!
//! Each (alpha, family, steepness) point runs 100 rounds of synchronous best
//! responses from bids of 1/2 and settles at the final bids. The sweep takes
//! the revenue argmax over a log-spaced steepness grid and refines it twice.

use rayon::prelude::*;

use crate::auction::{settle, BidVector, ValuationProfile};
use crate::error::{Error, Result};
use crate::response::{run_dynamics_summary, DynamicsOptions};
use crate::weights::{Family, WeightSpec};

pub const DEFAULT_ITERS: usize = 100;
pub const DEFAULT_START_BID: f64 = 0.5;
pub const DEFAULT_GRID_POINTS: usize = 60;
pub const DEFAULT_GRID_MIN: f64 = 0.05;
pub const DEFAULT_GRID_MAX: f64 = 500.0;
pub const DEFAULT_REFINE_ROUNDS: usize = 2;
/// Each refinement splits the intervals next to the argmax this many times.
pub const REFINE_FACTOR: usize = 10;

/// Profile `(alpha, 1, ..., 1)` with `n` bidders.
pub fn make_scenario(n: usize, alpha: f64) -> Result<ValuationProfile> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "n must be at least 2, got {n}"
        )));
    }
    if !(alpha.is_finite() && alpha >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be >= 1, got {alpha}"
        )));
    }
    let mut values = vec![1.0; n];
    values[0] = alpha;
    ValuationProfile::new(values)
}

/// `{1.2, 1.4, ..., 10.0} U {20, 30, ..., 100}`.
pub fn alpha_grid() -> Vec<f64> {
    (6..=50)
        .map(|k| k as f64 / 5.0)
        .chain((2..=10).map(|k| 10.0 * k as f64))
        .collect()
}

/// `points` values spaced evenly in log between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let last = (points - 1) as f64;
            (0..points)
                .map(|k| match k {
                    0 => lo,
                    k if k == points - 1 => hi,
                    k => (a + (b - a) * k as f64 / last).exp(),
                })
                .collect()
        }
    }
}

pub fn default_steepness_grid() -> Vec<f64> {
    log_grid(DEFAULT_GRID_MIN, DEFAULT_GRID_MAX, DEFAULT_GRID_POINTS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub n: usize,
    pub alpha: f64,
    pub family: Family,
    pub steepness_grid: Vec<f64>,
    pub iters: usize,
    pub start_bid: f64,
    pub refine_rounds: usize,
}

impl ScenarioSpec {
    /// The default protocol: 100 rounds from 1/2 over the default grid.
    pub fn new(n: usize, alpha: f64, family: Family) -> Self {
        ScenarioSpec {
            n,
            alpha,
            family,
            steepness_grid: default_steepness_grid(),
            iters: DEFAULT_ITERS,
            start_bid: DEFAULT_START_BID,
            refine_rounds: DEFAULT_REFINE_ROUNDS,
        }
    }
}

/// Revenue and final state of one dynamics run.
#[derive(Debug, Clone, PartialEq)]
pub struct RevenuePoint {
    pub revenue: f64,
    pub bids: BidVector,
    /// Allocation share of bidder 1.
    pub high_alloc: f64,
    /// `max_i |b_i - BR_i(b)|` at the final bids.
    pub residual: f64,
    pub converged: bool,
}

/// Runs `iters` best-response rounds from `(start, ..., start)` and settles.
/// With `iters = 0` the start vector itself is settled.
pub fn revenue_at(
    spec: &WeightSpec,
    profile: &ValuationProfile,
    iters: usize,
    start: f64,
) -> Result<RevenuePoint> {
    let start = BidVector::uniform(profile.len(), start)?;
    let (bids, residual, converged) = if iters == 0 {
        start.check_within(profile)?;
        let opts = DynamicsOptions::with_iters(1);
        let one = run_dynamics_summary(spec, profile, &start, &opts)?;
        let residual = one.final_bids.sup_distance(&start);
        (start, residual, residual < opts.convergence_tol())
    } else {
        let s = run_dynamics_summary(spec, profile, &start, &DynamicsOptions::with_iters(iters))?;
        (s.final_bids, s.residual, s.converged)
    };
    let outcome = settle(spec, profile, &bids)?;
    Ok(RevenuePoint {
        revenue: outcome.revenue,
        high_alloc: outcome.allocations[0],
        bids,
        residual,
        converged,
    })
}

/// One evaluated steepness value of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub steepness: f64,
    pub point: RevenuePoint,
}

/// Best steepness for one (alpha, family) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub family: Family,
    pub best_steepness: f64,
    pub revenue: f64,
    pub high_alloc: f64,
    pub high_bid: f64,
    /// Bid of bidder 2, or the lowest small-bidder bid if the small bidders
    /// have drifted apart.
    pub low_bid: f64,
    pub residual: f64,
    /// False when the argmax sits on the edge of the searched range.
    pub grid_argmax_interior: bool,
}

impl SweepRow {
    pub fn bid_gap(&self) -> f64 {
        (self.high_bid - self.low_bid).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub row: SweepRow,
    /// Every evaluated point in ascending steepness.
    pub points: Vec<SweepPoint>,
}

fn representative_low_bid(bids: &[f64]) -> f64 {
    let small = &bids[1..];
    if small.iter().all(|&b| b == small[0]) {
        small[0]
    } else {
        small.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Geometric subdivision of `[lo, hi]` into `parts` intervals, endpoints excluded.
fn interior_points(lo: f64, hi: f64, parts: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (1..parts).map(move |k| (a + (b - a) * k as f64 / parts as f64).exp())
}

fn argmax(points: &[SweepPoint]) -> usize {
    let mut best = 0;
    for (k, p) in points.iter().enumerate() {
        if p.point.revenue > points[best].point.revenue {
            best = k;
        }
    }
    best
}

/// Revenue argmax over the scenario's grid with local refinement.
pub fn sweep_steepness(scenario: &ScenarioSpec) -> Result<SweepOutcome> {
    let mut grid = scenario.steepness_grid.clone();
    if grid.is_empty() {
        return Err(Error::InvalidParameter("steepness grid is empty".into()));
    }
    if grid.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidParameter(
            "steepness values must be positive".into(),
        ));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let profile = make_scenario(scenario.n, scenario.alpha)?;
    let evaluate = |s: f64| -> Result<SweepPoint> {
        let spec = scenario.family.with_steepness(s)?;
        Ok(SweepPoint {
            steepness: s,
            point: revenue_at(&spec, &profile, scenario.iters, scenario.start_bid)?,
        })
    };

    let mut points = grid
        .iter()
        .map(|&s| evaluate(s))
        .collect::<Result<Vec<_>>>()?;
    for _ in 0..scenario.refine_rounds {
        if points.len() < 2 {
            break;
        }
        let k = argmax(&points);
        let lo = points[k.saturating_sub(1)].steepness;
        let mid = points[k].steepness;
        let hi = points[(k + 1).min(points.len() - 1)].steepness;
        let fresh = interior_points(lo, mid, REFINE_FACTOR)
            .chain(interior_points(mid, hi, REFINE_FACTOR))
            .map(evaluate)
            .collect::<Result<Vec<_>>>()?;
        points.extend(fresh);
        points.sort_by(|a, b| a.steepness.total_cmp(&b.steepness));
        points.dedup_by(|a, b| a.steepness == b.steepness);
    }

    let k = argmax(&points);
    let best = &points[k];
    let bids = best.point.bids.bids();
    let row = SweepRow {
        alpha: scenario.alpha,
        family: scenario.family,
        best_steepness: best.steepness,
        revenue: best.point.revenue,
        high_alloc: best.point.high_alloc,
        high_bid: bids[0],
        low_bid: representative_low_bid(bids),
        residual: best.point.residual,
        grid_argmax_interior: k != 0 && k != points.len() - 1,
    };
    Ok(SweepOutcome { row, points })
}

/// Steepness grids per family for a full experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SteepnessGrids {
    pub exponential: Vec<f64>,
    pub power: Vec<f64>,
    pub refine_rounds: usize,
}

impl Default for SteepnessGrids {
    fn default() -> Self {
        SteepnessGrids {
            exponential: default_steepness_grid(),
            power: default_steepness_grid(),
            refine_rounds: DEFAULT_REFINE_ROUNDS,
        }
    }
}

impl SteepnessGrids {
    pub fn for_family(&self, family: Family) -> Result<&[f64]> {
        match family {
            Family::Exponential => Ok(&self.exponential),
            Family::Power => Ok(&self.power),
            Family::Polynomial => Err(Error::InvalidParameter(
                "the polynomial family is not swept".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub alphas: Vec<f64>,
    pub families: Vec<Family>,
    pub grids: SteepnessGrids,
    pub iters: usize,
    pub start_bid: f64,
}

impl ExperimentConfig {
    /// Default protocol for `n` bidders over the standard alpha grid.
    pub fn new(n: usize) -> Self {
        ExperimentConfig {
            n,
            alphas: alpha_grid(),
            families: vec![Family::Exponential, Family::Power],
            grids: SteepnessGrids::default(),
            iters: DEFAULT_ITERS,
            start_bid: DEFAULT_START_BID,
        }
    }
}

/// Half-open bracket `(lo, hi]` of consecutive grid alphas.
pub type Bracket = (f64, f64);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CrossoverSummary {
    /// Brackets where `revenue(exp) - revenue(pow)` changes sign.
    pub revenue_crossovers: Vec<Bracket>,
    /// Brackets where `gap(exp) - gap(pow)` changes sign, with
    /// `gap = |high_bid - low_bid|`.
    pub bid_gap_crossovers: Vec<Bracket>,
    /// `(alpha, best c)` in ascending alpha.
    pub exponential_steepness: Vec<(f64, f64)>,
    /// `(alpha, best p)` in ascending alpha.
    pub power_steepness: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub n: usize,
    /// Sorted by (alpha, family).
    pub rows: Vec<SweepRow>,
    /// Every evaluated point, parallel to `rows`.
    pub points: Vec<Vec<SweepPoint>>,
    pub summary: CrossoverSummary,
}

impl ExperimentReport {
    pub fn row(&self, alpha: f64, family: Family) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.alpha == alpha && r.family == family)
    }
}

/// Grid brackets where `diff` changes sign; zero counts as non-positive.
pub fn sign_change_brackets(series: &[(f64, f64)]) -> Vec<Bracket> {
    series
        .windows(2)
        .filter(|w| (w[0].1 > 0.0) != (w[1].1 > 0.0))
        .map(|w| (w[0].0, w[1].0))
        .collect()
}

/// Sweeps every (alpha, family) pair; pairs run in parallel on the current
/// rayon pool and rows are assembled in (alpha, family) order.
pub fn run_full_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut alphas = config.alphas.clone();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut families = config.families.clone();
    families.sort();
    families.dedup();
    for &family in &families {
        config.grids.for_family(family)?;
    }

    let tasks: Vec<(f64, Family)> = alphas
        .iter()
        .flat_map(|&a| families.iter().map(move |&f| (a, f)))
        .collect();
    let outcomes = tasks
        .par_iter()
        .map(|&(alpha, family)| {
            sweep_steepness(&ScenarioSpec {
                n: config.n,
                alpha,
                family,
                steepness_grid: config.grids.for_family(family)?.to_vec(),
                iters: config.iters,
                start_bid: config.start_bid,
                refine_rounds: config.grids.refine_rounds,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (rows, points): (Vec<SweepRow>, Vec<Vec<SweepPoint>>) =
        outcomes.into_iter().map(|o| (o.row, o.points)).unzip();
    let summary = summarize(&rows);
    Ok(ExperimentReport {
        n: config.n,
        rows,
        points,
        summary,
    })
}

fn summarize(rows: &[SweepRow]) -> CrossoverSummary {
    let series =
        |family: Family| -> Vec<&SweepRow> { rows.iter().filter(|r| r.family == family).collect() };
    let exp = series(Family::Exponential);
    let pow = series(Family::Power);
    let paired: Vec<(&SweepRow, &SweepRow)> = exp
        .iter()
        .filter_map(|e| pow.iter().find(|p| p.alpha == e.alpha).map(|p| (*e, *p)))
        .collect();
    let revenue_diff: Vec<(f64, f64)> = paired
        .iter()
        .map(|(e, p)| (e.alpha, e.revenue - p.revenue))
        .collect();
    let gap_diff: Vec<(f64, f64)> = paired
        .iter()
        .map(|(e, p)| (e.alpha, e.bid_gap() - p.bid_gap()))
        .collect();
    CrossoverSummary {
        revenue_crossovers: sign_change_brackets(&revenue_diff),
        bid_gap_crossovers: sign_change_brackets(&gap_diff),
        exponential_steepness: exp.iter().map(|r| (r.alpha, r.best_steepness)).collect(),
        power_steepness: pow.iter().map(|r| (r.alpha, r.best_steepness)).collect(),
    }
}
