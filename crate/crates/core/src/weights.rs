//! Bid weight functions.
//!
//! Every family maps a bid `x >= 0` to a weight `f(x)` with `f(0) = 0` and `f`
//! strictly increasing:
//!
//! * exponential: `f(x) = e^{cx} - 1`
//! * power: `f(x) = x^p`
//! * polynomial: `f(x) = c1 x + c2 x^2 + ... + cd x^d`
//!
//! Allocation code works with `log f(x)` so that steep exponentials never
//! overflow, and with the ratio `f / f'` which stays bounded for all families.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Highest polynomial degree accepted.
pub const MAX_POLY_DEGREE: usize = 32;

/// Above this value of `c * x` the raw exponential is never evaluated.
pub const EXP_OVERFLOW_THRESHOLD: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Exponential,
    Power,
    Polynomial,
}

impl Family {
    pub fn tag(self) -> &'static str {
        match self {
            Family::Exponential => "exp",
            Family::Power => "pow",
            Family::Polynomial => "poly",
        }
    }

    /// Builds the single-parameter member of the family with the given steepness.
    pub fn with_steepness(self, steepness: f64) -> Result<WeightSpec> {
        match self {
            Family::Exponential => WeightSpec::exponential(steepness),
            Family::Power => WeightSpec::power(steepness),
            Family::Polynomial => Err(Error::InvalidWeight(
                "the polynomial family has no single steepness parameter".into(),
            )),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exp" => Ok(Family::Exponential),
            "pow" => Ok(Family::Power),
            "poly" => Ok(Family::Polynomial),
            other => Err(Error::InvalidWeight(format!(
                "unknown family `{other}` (expected exp, pow or poly)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightKind {
    Exponential {
        c: f64,
    },
    Power {
        p: f64,
    },
    /// `coeffs[k]` multiplies `x^(k + 1)`.
    Polynomial {
        coeffs: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivOrder {
    First,
    Second,
}

/// A validated weight function.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpec {
    kind: WeightKind,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidWeight(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

impl WeightSpec {
    pub fn exponential(c: f64) -> Result<Self> {
        Ok(WeightSpec {
            kind: WeightKind::Exponential {
                c: positive("c", c)?,
            },
        })
    }

    pub fn power(p: f64) -> Result<Self> {
        Ok(WeightSpec {
            kind: WeightKind::Power {
                p: positive("p", p)?,
            },
        })
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() > MAX_POLY_DEGREE {
            return Err(Error::InvalidWeight(format!(
                "polynomial degree must be in 1..={MAX_POLY_DEGREE}, got {}",
                coeffs.len()
            )));
        }
        if let Some(bad) = coeffs.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::InvalidWeight(format!(
                "polynomial coefficients must be nonnegative, got {bad}"
            )));
        }
        if coeffs.iter().all(|&c| c == 0.0) {
            return Err(Error::InvalidWeight(
                "polynomial needs at least one positive coefficient".into(),
            ));
        }
        Ok(WeightSpec {
            kind: WeightKind::Polynomial { coeffs },
        })
    }

    /// Truncated Taylor series of `e^{cx} - 1` with `degree` terms.
    pub fn exponential_series(c: f64, degree: usize) -> Result<Self> {
        let c = positive("c", c)?;
        let mut coeffs = Vec::with_capacity(degree);
        let mut term = 1.0;
        for k in 1..=degree {
            term *= c / k as f64;
            coeffs.push(term);
        }
        Self::polynomial(coeffs)
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn family(&self) -> Family {
        match self.kind {
            WeightKind::Exponential { .. } => Family::Exponential,
            WeightKind::Power { .. } => Family::Power,
            WeightKind::Polynomial { .. } => Family::Polynomial,
        }
    }

    /// The steepness parameter `c` or `p`, if the family has one.
    pub fn steepness(&self) -> Option<f64> {
        match self.kind {
            WeightKind::Exponential { c } => Some(c),
            WeightKind::Power { p } => Some(p),
            WeightKind::Polynomial { .. } => None,
        }
    }

    /// `f(x)`. Exactly zero at `x = 0`.
    pub fn eval(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        if x == 0.0 {
            return 0.0;
        }
        match &self.kind {
            WeightKind::Exponential { c } => (c * x).exp_m1(),
            WeightKind::Power { p } => x.powf(*p),
            WeightKind::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, &ck| (acc + ck) * x)
            }
        }
    }

    /// Analytic first or second derivative.
    pub fn deriv(&self, x: f64, order: DerivOrder) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!(
                "weight derivative needs x >= 0, got {x}"
            )));
        }
        let value = match (&self.kind, order) {
            (WeightKind::Exponential { c }, DerivOrder::First) => c * (c * x).exp(),
            (WeightKind::Exponential { c }, DerivOrder::Second) => c * c * (c * x).exp(),
            (WeightKind::Power { p }, DerivOrder::First) => p * x.powf(p - 1.0),
            (WeightKind::Power { p }, DerivOrder::Second) => {
                if x == 0.0 && *p < 2.0 {
                    return Err(Error::Domain(format!(
                        "second derivative of x^{p} is undefined at 0"
                    )));
                }
                p * (p - 1.0) * x.powf(p - 2.0)
            }
            (WeightKind::Polynomial { coeffs }, DerivOrder::First) => coeffs
                .iter()
                .enumerate()
                .rev()
                .fold(0.0, |acc, (k, &ck)| acc * x + (k + 1) as f64 * ck),
            (WeightKind::Polynomial { coeffs }, DerivOrder::Second) => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &ck)| acc * x + ((k + 1) * k) as f64 * ck),
        };
        Ok(value)
    }

    /// `log f(x)`, or negative infinity at `x = 0`.
    pub fn log_eval(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        if x == 0.0 {
            return f64::NEG_INFINITY;
        }
        match &self.kind {
            // log(e^{cx} - 1) = cx + log(1 - e^{-cx})
            WeightKind::Exponential { c } => {
                let cx = c * x;
                cx + (-(-cx).exp_m1()).ln()
            }
            WeightKind::Power { p } => p * x.ln(),
            WeightKind::Polynomial { coeffs } => {
                let lx = x.ln();
                let terms = poly_log_terms(coeffs, lx);
                log_sum_exp(terms)
            }
        }
    }

    /// `log f(x) - shift`.
    pub fn log_weight_shifted(&self, x: f64, shift: f64) -> f64 {
        self.log_eval(x) - shift
    }

    /// `f(x) / f'(x)`, finite for every bid and zero at `x = 0`.
    pub fn weight_ratio(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        match &self.kind {
            WeightKind::Exponential { c } => -(-c * x).exp_m1() / c,
            WeightKind::Power { p } => x / p,
            WeightKind::Polynomial { coeffs } => {
                let lx = x.ln();
                let top = coeffs
                    .iter()
                    .enumerate()
                    .filter(|(_, &ck)| ck > 0.0)
                    .map(|(k, &ck)| ck.ln() + (k + 1) as f64 * lx)
                    .fold(f64::NEG_INFINITY, f64::max);
                let (num, den) = coeffs.iter().enumerate().filter(|(_, &ck)| ck > 0.0).fold(
                    (0.0, 0.0),
                    |(num, den), (k, &ck)| {
                        let t = (ck.ln() + (k + 1) as f64 * lx - top).exp();
                        (num + t, den + (k + 1) as f64 * t)
                    },
                );
                x * num / den
            }
        }
    }
}

fn poly_log_terms(coeffs: &[f64], lx: f64) -> impl Iterator<Item = f64> + '_ {
    coeffs
        .iter()
        .enumerate()
        .filter(|(_, &ck)| ck > 0.0)
        .map(move |(k, &ck)| ck.ln() + (k + 1) as f64 * lx)
}

/// `log(sum(exp(t)))` over the given log-terms, summed in ascending order so
/// the result does not depend on the input order.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut terms: Vec<f64> = terms.into_iter().collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if top == f64::INFINITY {
        return f64::INFINITY;
    }
    for t in terms.iter_mut() {
        *t = (*t - top).exp();
    }
    terms.sort_by(f64::total_cmp);
    top + terms.iter().sum::<f64>().ln()
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            WeightKind::Exponential { c } => write!(f, "exp:c={c}"),
            WeightKind::Power { p } => write!(f, "pow:p={p}"),
            WeightKind::Polynomial { coeffs } => {
                f.write_str("poly:")?;
                for (k, ck) in coeffs.iter().enumerate() {
                    if k > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "c{}={ck}", k + 1)?;
                }
                Ok(())
            }
        }
    }
}

fn parse_number(key: &str, raw: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidWeight(format!("`{key}` is not a number: `{raw}`")))
}

impl FromStr for WeightSpec {
    type Err = Error;

    /// Parses `exp:c=<f>`, `pow:p=<f>` or `poly:c1=<f>,c2=<f>,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (family, params) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidWeight(format!("missing `:` in `{s}`")))?;
        let pairs = params
            .split(',')
            .map(|kv| {
                kv.split_once('=')
                    .map(|(k, v)| (k.trim(), v.trim()))
                    .ok_or_else(|| Error::InvalidWeight(format!("expected key=value, got `{kv}`")))
            })
            .collect::<Result<Vec<_>>>()?;

        let single = |name: &str| -> Result<f64> {
            match pairs.as_slice() {
                [(k, v)] if *k == name => parse_number(k, v),
                _ => Err(Error::InvalidWeight(format!(
                    "expected exactly `{name}=<float>` in `{s}`"
                ))),
            }
        };

        match family.parse::<Family>()? {
            Family::Exponential => WeightSpec::exponential(single("c")?),
            Family::Power => WeightSpec::power(single("p")?),
            Family::Polynomial => {
                let mut coeffs = vec![0.0; 0];
                for (k, v) in &pairs {
                    let degree = k
                        .strip_prefix('c')
                        .and_then(|d| d.parse::<usize>().ok())
                        .filter(|d| (1..=MAX_POLY_DEGREE).contains(d))
                        .ok_or_else(|| {
                            Error::InvalidWeight(format!(
                                "bad coefficient key `{k}` (expected c1..c{MAX_POLY_DEGREE})"
                            ))
                        })?;
                    if coeffs.len() < degree {
                        coeffs.resize(degree, 0.0);
                    }
                    coeffs[degree - 1] = parse_number(k, v)?;
                }
                WeightSpec::polynomial(coeffs)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn eval_examples() {
        assert_eq!(WeightSpec::exponential(1.0).unwrap().eval(0.0), 0.0);
        assert_eq!(WeightSpec::power(2.0).unwrap().eval(3.0), 9.0);
        let e2 = WeightSpec::exponential(2.0).unwrap().eval(1.0);
        assert!((e2 - 6.3890560989).abs() < 1e-9);
    }

    #[test]
    fn deriv_examples() {
        let exp2 = WeightSpec::exponential(2.0).unwrap();
        assert_eq!(exp2.deriv(0.0, DerivOrder::First).unwrap(), 2.0);
        let pow3 = WeightSpec::power(3.0).unwrap();
        assert!((pow3.deriv(2.0, DerivOrder::Second).unwrap() - 12.0).abs() < 1e-12);
        let poly = WeightSpec::polynomial(vec![1.0, 0.5]).unwrap();
        assert_eq!(poly.deriv(2.0, DerivOrder::First).unwrap(), 3.0);
        assert_eq!(poly.deriv(2.0, DerivOrder::Second).unwrap(), 1.0);
    }

    #[test]
    fn power_second_derivative_at_zero() {
        let p = WeightSpec::power(1.5).unwrap();
        assert!(matches!(
            p.deriv(0.0, DerivOrder::Second),
            Err(Error::Domain(_))
        ));
        let p = WeightSpec::power(3.0).unwrap();
        assert_eq!(p.deriv(0.0, DerivOrder::Second).unwrap(), 0.0);
    }

    #[test]
    fn shifted_log_examples() {
        let steep = WeightSpec::exponential(1000.0).unwrap();
        assert!(steep.log_weight_shifted(1.0, 1000.0).abs() < 1e-300);
        let e1 = WeightSpec::exponential(1.0).unwrap();
        assert!((e1.log_weight_shifted(3f64.ln(), 0.0) - 2f64.ln()).abs() < 1e-15);
        let sq = WeightSpec::power(2.0).unwrap();
        assert!(sq.log_weight_shifted(4.0, 2.0 * 4f64.ln()).abs() < 1e-15);
        assert_eq!(sq.log_eval(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(WeightSpec::exponential(0.0).is_err());
        assert!(WeightSpec::power(-1.0).is_err());
        assert!(WeightSpec::power(f64::NAN).is_err());
        assert!(WeightSpec::polynomial(vec![]).is_err());
        assert!(WeightSpec::polynomial(vec![0.0, 0.0]).is_err());
        assert!(WeightSpec::polynomial(vec![1.0, -0.1]).is_err());
        assert!(WeightSpec::polynomial(vec![1.0; MAX_POLY_DEGREE + 1]).is_err());
    }

    #[test]
    fn text_form() {
        let w: WeightSpec = "exp:c=2".parse().unwrap();
        assert_eq!(w, WeightSpec::exponential(2.0).unwrap());
        let w: WeightSpec = "pow:p=0.5".parse().unwrap();
        assert_eq!(w, WeightSpec::power(0.5).unwrap());
        let w: WeightSpec = "poly:c1=1,c3=0.25".parse().unwrap();
        assert_eq!(w, WeightSpec::polynomial(vec![1.0, 0.0, 0.25]).unwrap());
        assert_eq!(w.to_string(), "poly:c1=1,c2=0,c3=0.25");
        for bad in [
            "exp",
            "exp:c=0",
            "exp:p=1",
            "pow:p=-1",
            "poly:c0=1",
            "tri:c=1",
            "exp:c=x",
        ] {
            assert!(bad.parse::<WeightSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn log_eval_matches_direct_where_representable() {
        let specs = [
            WeightSpec::exponential(3.0).unwrap(),
            WeightSpec::power(2.5).unwrap(),
            WeightSpec::polynomial(vec![0.5, 0.0, 2.0]).unwrap(),
        ];
        for spec in &specs {
            for &x in &[1e-8, 0.01, 0.3, 1.0, 7.0] {
                assert!(
                    close(spec.log_eval(x), spec.eval(x).ln(), 1e-12),
                    "{spec} {x}"
                );
                let ratio = spec.eval(x) / spec.deriv(x, DerivOrder::First).unwrap();
                assert!(close(spec.weight_ratio(x), ratio, 1e-12), "{spec} {x}");
            }
        }
    }

    #[test]
    fn steep_exponential_log_weight_is_finite() {
        let spec = WeightSpec::exponential(1000.0).unwrap();
        let lw = spec.log_eval(5.0);
        assert!(lw.is_finite());
        assert!((lw - 5000.0).abs() < 1e-12);
    }

    fn any_spec() -> impl Strategy<Value = WeightSpec> {
        prop_oneof![
            (0.1f64..100.0).prop_map(|c| WeightSpec::exponential(c).unwrap()),
            (0.1f64..100.0).prop_map(|p| WeightSpec::power(p).unwrap()),
            proptest::collection::vec(0.0f64..3.0, 1..6).prop_map(|mut c| {
                c[0] += 0.01;
                WeightSpec::polynomial(c).unwrap()
            }),
        ]
    }

    fn log_grid() -> Vec<f64> {
        (0..=70)
            .map(|k| 1e-6 * 10f64.powf(k as f64 / 10.0))
            .collect()
    }

    fn central_difference(g: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (g(x + h) - g(x - h)) / (2.0 * h)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let specs = [
            WeightSpec::exponential(0.7).unwrap(),
            WeightSpec::exponential(3.0).unwrap(),
            WeightSpec::power(0.5).unwrap(),
            WeightSpec::power(2.0).unwrap(),
            WeightSpec::power(4.5).unwrap(),
            WeightSpec::polynomial(vec![1.0, 0.5, 0.0, 0.1]).unwrap(),
        ];
        for spec in &specs {
            for x in log_grid() {
                // Power functions are scale-free; the others are smooth through 0.
                let h = match spec.family() {
                    Family::Power => 1e-5 * x,
                    _ => 1e-5 * x.max(1e-2),
                };
                let d1 = spec.deriv(x, DerivOrder::First).unwrap();
                let fd1 = central_difference(|y| spec.eval(y), x, h);
                assert!(close(d1, fd1, 1e-6), "{spec} f' at {x}: {d1} vs {fd1}");
                let d2 = spec.deriv(x, DerivOrder::Second).unwrap();
                let fd2 = central_difference(|y| spec.deriv(y, DerivOrder::First).unwrap(), x, h);
                assert!(close(d2, fd2, 1e-6), "{spec} f'' at {x}: {d2} vs {fd2}");
            }
        }
    }

    #[test]
    fn exponential_agrees_with_truncated_series() {
        for &c in &[0.01, 0.5, 1.0, 4.0] {
            let exp = WeightSpec::exponential(c).unwrap();
            let series = WeightSpec::exponential_series(c, 8).unwrap();
            for k in 1..=50 {
                let x = 0.1 / c * k as f64 / 50.0;
                assert!(close(exp.eval(x), series.eval(x), 1e-9), "c={c} x={x}");
            }
        }
    }

    proptest! {
        #[test]
        fn zero_at_origin_and_strictly_increasing(spec in any_spec(), a in 0.0f64..10.0, b in 0.0f64..10.0) {
            prop_assert_eq!(spec.eval(0.0), 0.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            // Raw exponentials overflow for steep members; compare in log space there.
            let (f_lo, f_hi) = (spec.eval(lo), spec.eval(hi));
            if f_hi.is_finite() {
                prop_assert!(f_lo < f_hi);
            }
            prop_assert!(spec.log_eval(lo) < spec.log_eval(hi));
        }

        #[test]
        fn curvature_condition_holds(c in 0.1f64..100.0, p in 0.1f64..100.0, x in 1e-6f64..10.0) {
            // f f'' < 2 f'^2, compared through f / f' to stay finite for steep members.
            for spec in [WeightSpec::exponential(c).unwrap(), WeightSpec::power(p).unwrap()] {
                let ratio = spec.weight_ratio(x);
                let curvature = match spec.kind() {
                    WeightKind::Exponential { c } => *c,
                    WeightKind::Power { p } => (p - 1.0) / x,
                    WeightKind::Polynomial { .. } => unreachable!(),
                };
                // f f'' / f'^2 = (f / f') (f'' / f')
                prop_assert!(ratio * curvature < 2.0, "{} at {}", spec, x);
            }
        }

        #[test]
        fn text_form_round_trips(spec in any_spec()) {
            let back: WeightSpec = spec.to_string().parse().unwrap();
            prop_assert_eq!(back, spec);
        }
    }

    #[test]
    fn curvature_condition_direct_where_finite() {
        for &c in &[0.1, 1.0, 10.0, 60.0] {
            let spec = WeightSpec::exponential(c).unwrap();
            for k in 1..=100 {
                let x = k as f64 / 10.0;
                let f = spec.eval(x);
                let d1 = spec.deriv(x, DerivOrder::First).unwrap();
                let d2 = spec.deriv(x, DerivOrder::Second).unwrap();
                if (f * d2).is_finite() && (d1 * d1).is_finite() {
                    assert!(f * d2 < 2.0 * d1 * d1, "c={c} x={x}");
                }
            }
        }
    }
}
