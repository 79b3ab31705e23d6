//! Payoff descriptions: shape metadata plus pointwise evaluation.
//!
//! A [`Payoff`] is a nonnegative-price function g together with the metadata
//! the engines rely on: a Lipschitz constant L, a monotonicity flag and a
//! declared [`Shape`]. The metadata is *declared*, not inferred — the pricing
//! engines trust it (the convex reduction is only valid for convex g, the
//! error budgets scale with L). [`Payoff::validate_metadata`] exists to audit
//! a declaration against sampled evaluations; it reports violations with a
//! witness instead of erroring so callers can decide what to do.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared curvature class of a payoff.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Convex,
    Concave,
    General,
}

/// Payoff families the engines understand.
///
/// `Table` is the escape hatch: arbitrary piecewise-linear payoffs given as
/// ordered knots, linearly interpolated between knots and constant beyond the
/// first/last knot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    Call,
    Put,
    Forward,
    Straddle,
    Butterfly,
    DigitalRamp,
    Table,
}

/// A payoff function together with its declared analytic metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Payoff {
    pub kind: PayoffKind,
    /// Strike prices; arity depends on `kind` (1 for call/put/forward/
    /// straddle, 2 for the digital ramp, 3 for the butterfly, 0 for tables).
    #[serde(default)]
    pub strikes: Vec<f64>,
    /// Knots for `PayoffKind::Table`: strictly increasing prices with their
    /// values. Linear interpolation between knots, constant extrapolation
    /// outside.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(f64, f64)>>,
    /// Declared Lipschitz constant L (in price units).
    pub lipschitz: f64,
    /// Declared monotonicity: g nondecreasing in the price.
    pub monotone_nondecreasing: bool,
    /// Declared curvature class.
    pub shape: Shape,
}

impl Payoff {
    /// European call, g(x) = max(x − k, 0).
    pub fn call(strike: f64) -> Self {
        Payoff {
            kind: PayoffKind::Call,
            strikes: vec![strike],
            table: None,
            lipschitz: 1.0,
            monotone_nondecreasing: true,
            shape: Shape::Convex,
        }
    }

    /// European put, g(x) = max(k − x, 0).
    pub fn put(strike: f64) -> Self {
        Payoff {
            kind: PayoffKind::Put,
            strikes: vec![strike],
            table: None,
            lipschitz: 1.0,
            monotone_nondecreasing: false,
            shape: Shape::Convex,
        }
    }

    /// Forward, g(x) = x − k. Linear, hence both convex and concave; it is
    /// declared convex so the two-point reduction applies directly.
    pub fn forward(strike: f64) -> Self {
        Payoff {
            kind: PayoffKind::Forward,
            strikes: vec![strike],
            table: None,
            lipschitz: 1.0,
            monotone_nondecreasing: true,
            shape: Shape::Convex,
        }
    }

    /// Straddle, g(x) = |x − k|.
    pub fn straddle(strike: f64) -> Self {
        Payoff {
            kind: PayoffKind::Straddle,
            strikes: vec![strike],
            table: None,
            lipschitz: 1.0,
            monotone_nondecreasing: false,
            shape: Shape::Convex,
        }
    }

    /// Butterfly on strikes k₁ < k₂ < k₃: zero outside [k₁, k₃], peak value
    /// k₂ − k₁ at k₂, linear in between (slope 1 up, (k₂−k₁)/(k₃−k₂) down).
    pub fn butterfly(k1: f64, k2: f64, k3: f64) -> Self {
        let down_slope = (k2 - k1) / (k3 - k2);
        Payoff {
            kind: PayoffKind::Butterfly,
            strikes: vec![k1, k2, k3],
            table: None,
            lipschitz: down_slope.max(1.0),
            monotone_nondecreasing: false,
            shape: Shape::General,
        }
    }

    /// Digital payoff with a linear ramp between k₁ and k₂ (0 below k₁,
    /// 1 above k₂). The ramp keeps the payoff Lipschitz with L = 1/(k₂−k₁).
    pub fn digital_ramp(k1: f64, k2: f64) -> Self {
        Payoff {
            kind: PayoffKind::DigitalRamp,
            strikes: vec![k1, k2],
            table: None,
            lipschitz: 1.0 / (k2 - k1),
            monotone_nondecreasing: true,
            shape: Shape::General,
        }
    }

    /// Piecewise-linear payoff from ordered (price, value) knots.
    pub fn table(
        knots: Vec<(f64, f64)>,
        lipschitz: f64,
        monotone_nondecreasing: bool,
        shape: Shape,
    ) -> Self {
        Payoff {
            kind: PayoffKind::Table,
            strikes: Vec::new(),
            table: Some(knots),
            lipschitz,
            monotone_nondecreasing,
            shape,
        }
    }

    /// Structural validation of the definition itself (strike arity, knot
    /// ordering, positive Lipschitz constant). Run by the CLI after
    /// deserializing a config; library constructors produce valid payoffs by
    /// construction.
    pub fn validate_definition(&self) -> Result<()> {
        let need = |n: usize| -> Result<()> {
            if self.strikes.len() != n {
                return Err(Error::Config(format!(
                    "payoff kind {:?} requires exactly {} strike(s), got {}",
                    self.kind,
                    n,
                    self.strikes.len()
                )));
            }
            Ok(())
        };
        if !self.lipschitz.is_finite() || self.lipschitz <= 0.0 {
            return Err(Error::Config(format!(
                "payoff lipschitz constant must be finite and positive, got {}",
                self.lipschitz
            )));
        }
        for &k in &self.strikes {
            if !k.is_finite() || k <= 0.0 {
                return Err(Error::Config(format!(
                    "strikes must be finite and positive, got {k}"
                )));
            }
        }
        match self.kind {
            PayoffKind::Call | PayoffKind::Put | PayoffKind::Forward | PayoffKind::Straddle => {
                need(1)?
            }
            PayoffKind::DigitalRamp => {
                need(2)?;
                if self.strikes[0] >= self.strikes[1] {
                    return Err(Error::Config(format!(
                        "digital ramp strikes must satisfy k1 < k2, got {} ≥ {}",
                        self.strikes[0], self.strikes[1]
                    )));
                }
            }
            PayoffKind::Butterfly => {
                need(3)?;
                if !(self.strikes[0] < self.strikes[1] && self.strikes[1] < self.strikes[2]) {
                    return Err(Error::Config(format!(
                        "butterfly strikes must be strictly increasing, got {:?}",
                        self.strikes
                    )));
                }
            }
            PayoffKind::Table => {
                let knots = self.table.as_deref().ok_or_else(|| {
                    Error::Config("table payoff requires a `table` of knots".into())
                })?;
                if knots.is_empty() {
                    return Err(Error::Config("table payoff has no knots".into()));
                }
                for w in knots.windows(2) {
                    if !(w[0].0 < w[1].0) {
                        return Err(Error::Config(format!(
                            "table knot prices must be strictly increasing, got {} then {}",
                            w[0].0, w[1].0
                        )));
                    }
                }
                for &(x, v) in knots {
                    if !x.is_finite() || x < 0.0 || !v.is_finite() {
                        return Err(Error::Config(format!(
                            "table knots must be finite with nonnegative prices, got ({x}, {v})"
                        )));
                    }
                }
            }
        }
        if self.kind != PayoffKind::Table && self.table.is_some() {
            return Err(Error::Config(format!(
                "payoff kind {:?} does not take a knot table",
                self.kind
            )));
        }
        Ok(())
    }

    /// Evaluate g at `price`.
    ///
    /// Prices below zero are outside the domain and return
    /// [`Error::NegativePrice`]; the value g(0) is whatever the definition
    /// gives (it is documented, not forced, to be 0).
    pub fn eval(&self, price: f64) -> Result<f64> {
        if price < 0.0 {
            return Err(Error::NegativePrice { price });
        }
        Ok(self.value_at(price))
    }

    /// Evaluation without the domain check, for engine interiors where the
    /// lattice construction already guarantees positive prices.
    #[inline]
    pub(crate) fn value_at(&self, price: f64) -> f64 {
        debug_assert!(price >= 0.0, "engine produced a negative price {price}");
        match self.kind {
            PayoffKind::Call => (price - self.strikes[0]).max(0.0),
            PayoffKind::Put => (self.strikes[0] - price).max(0.0),
            PayoffKind::Forward => price - self.strikes[0],
            PayoffKind::Straddle => (price - self.strikes[0]).abs(),
            PayoffKind::Butterfly => {
                let (k1, k2, k3) = (self.strikes[0], self.strikes[1], self.strikes[2]);
                if price <= k1 || price >= k3 {
                    0.0
                } else if price <= k2 {
                    price - k1
                } else {
                    (k3 - price) * (k2 - k1) / (k3 - k2)
                }
            }
            PayoffKind::DigitalRamp => {
                let (k1, k2) = (self.strikes[0], self.strikes[1]);
                if price <= k1 {
                    0.0
                } else if price >= k2 {
                    1.0
                } else {
                    (price - k1) / (k2 - k1)
                }
            }
            PayoffKind::Table => {
                let knots = self.table.as_deref().expect("validated table payoff");
                interp_knots(knots, price)
            }
        }
    }

    /// Prices where g has a kink (derivative discontinuity). Used by oracles
    /// to enumerate candidate binding returns of piecewise-linear payoffs.
    pub fn kink_prices(&self) -> Vec<f64> {
        match self.kind {
            PayoffKind::Forward => Vec::new(),
            PayoffKind::Call | PayoffKind::Put | PayoffKind::Straddle => {
                vec![self.strikes[0]]
            }
            PayoffKind::Butterfly | PayoffKind::DigitalRamp => self.strikes.clone(),
            PayoffKind::Table => self
                .table
                .as_deref()
                .map(|ks| ks.iter().map(|&(x, _)| x).collect())
                .unwrap_or_default(),
        }
    }

    /// Audit the declared metadata against `probe_count` uniform samples of
    /// g on `[range.0, range.1]`.
    ///
    /// Report-only: a violated declaration is returned with a witness, never
    /// turned into an error, because a declaration can be deliberately loose
    /// (e.g. a conservative Lipschitz constant is harmless while a tight one
    /// is not).
    pub fn validate_metadata(
        &self,
        range: (f64, f64),
        probe_count: usize,
    ) -> Result<ValidationReport> {
        let (lo, hi) = range;
        if probe_count < 2 {
            return Err(Error::Domain(format!(
                "metadata validation needs at least 2 probes, got {probe_count}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || lo >= hi {
            return Err(Error::Domain(format!(
                "metadata validation range must satisfy 0 ≤ lo < hi, got [{lo}, {hi}]"
            )));
        }
        let step = (hi - lo) / (probe_count - 1) as f64;
        let xs: Vec<f64> = (0..probe_count).map(|i| lo + i as f64 * step).collect();
        let vs: Vec<f64> = xs.iter().map(|&x| self.value_at(x)).collect();

        let mut violations = Vec::new();
        // Scale-aware slack: probe arithmetic itself is inexact.
        let slack = |v: f64| 1e-9 * (1.0 + v.abs());

        for i in 1..probe_count {
            let dx = xs[i] - xs[i - 1];
            let dv = vs[i] - vs[i - 1];
            if dv.abs() > self.lipschitz * dx + slack(vs[i]) {
                violations.push(MetadataViolation::Lipschitz {
                    x0: xs[i - 1],
                    x1: xs[i],
                    slope: dv / dx,
                    declared: self.lipschitz,
                });
            }
            if self.monotone_nondecreasing && dv < -slack(vs[i]) {
                violations.push(MetadataViolation::Monotone {
                    x0: xs[i - 1],
                    x1: xs[i],
                    v0: vs[i - 1],
                    v1: vs[i],
                });
            }
        }
        if self.shape != Shape::General {
            for i in 1..probe_count - 1 {
                // Uniform spacing, so the plain second difference carries the
                // curvature sign.
                let second = vs[i + 1] - 2.0 * vs[i] + vs[i - 1];
                let bad = match self.shape {
                    Shape::Convex => second < -slack(vs[i]),
                    Shape::Concave => second > slack(vs[i]),
                    Shape::General => false,
                };
                if bad {
                    violations.push(MetadataViolation::Shape {
                        x0: xs[i - 1],
                        x1: xs[i],
                        x2: xs[i + 1],
                        second_difference: second,
                        declared: self.shape,
                    });
                }
            }
        }
        Ok(ValidationReport { violations })
    }
}

/// Piecewise-linear interpolation over ordered knots with constant
/// extrapolation outside the knot range.
fn interp_knots(knots: &[(f64, f64)], x: f64) -> f64 {
    let n = knots.len();
    if x <= knots[0].0 {
        return knots[0].1;
    }
    if x >= knots[n - 1].0 {
        return knots[n - 1].1;
    }
    // partition_point: first knot with price > x; x lives in [idx-1, idx].
    let idx = knots.partition_point(|&(kx, _)| kx <= x);
    let (x0, v0) = knots[idx - 1];
    let (x1, v1) = knots[idx];
    v0 + (x - x0) * (v1 - v0) / (x1 - x0)
}

/// Outcome of [`Payoff::validate_metadata`].
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<MetadataViolation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A metadata declaration contradicted by sampled evaluations, with the
/// witnessing probe points.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MetadataViolation {
    /// |g(x₁) − g(x₀)| exceeds L·(x₁ − x₀).
    Lipschitz {
        x0: f64,
        x1: f64,
        slope: f64,
        declared: f64,
    },
    /// g decreases on a payoff declared nondecreasing.
    Monotone { x0: f64, x1: f64, v0: f64, v1: f64 },
    /// Second difference has the wrong sign for the declared shape.
    Shape {
        x0: f64,
        x1: f64,
        x2: f64,
        second_difference: f64,
        declared: Shape,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn call_at_eleven() {
        let g = Payoff::call(10.0);
        assert_eq!(g.eval(11.0).unwrap(), 1.0);
        assert_eq!(g.eval(10.0).unwrap(), 0.0);
        assert_eq!(g.eval(0.0).unwrap(), 0.0);
    }

    #[test]
    fn put_at_the_money_is_zero() {
        let g = Payoff::put(10.0);
        assert_eq!(g.eval(10.0).unwrap(), 0.0);
        assert_eq!(g.eval(8.0).unwrap(), 2.0);
    }

    #[test]
    fn table_interpolates_between_knots() {
        let g = Payoff::table(
            vec![(8.0, 0.0), (10.0, 2.0), (12.0, 0.0)],
            1.0,
            false,
            Shape::General,
        );
        assert_eq!(g.eval(9.0).unwrap(), 1.0);
        assert_eq!(g.eval(10.0).unwrap(), 2.0);
        assert_eq!(g.eval(11.0).unwrap(), 1.0);
        // Constant extrapolation outside the knots.
        assert_eq!(g.eval(5.0).unwrap(), 0.0);
        assert_eq!(g.eval(20.0).unwrap(), 0.0);
    }

    #[test]
    fn negative_price_is_rejected() {
        let g = Payoff::call(10.0);
        assert!(matches!(
            g.eval(-1.0),
            Err(Error::NegativePrice { price }) if price == -1.0
        ));
    }

    #[test]
    fn butterfly_matches_its_table_form() {
        let b = Payoff::butterfly(8.0, 10.0, 12.0);
        let t = Payoff::table(
            vec![(8.0, 0.0), (10.0, 2.0), (12.0, 0.0)],
            1.0,
            false,
            Shape::General,
        );
        for i in 0..=160 {
            let x = i as f64 * 0.1;
            assert!(
                (b.eval(x).unwrap() - t.eval(x).unwrap()).abs() < 1e-12,
                "butterfly and table disagree at {x}"
            );
        }
    }

    #[test]
    fn asymmetric_butterfly_slope_and_lipschitz() {
        // k₂ − k₁ = 4, k₃ − k₂ = 2: down slope 2, so L = 2.
        let b = Payoff::butterfly(8.0, 12.0, 14.0);
        assert_eq!(b.lipschitz, 2.0);
        assert_eq!(b.eval(12.0).unwrap(), 4.0);
        assert_eq!(b.eval(13.0).unwrap(), 2.0);
    }

    #[test]
    fn digital_ramp_values() {
        let g = Payoff::digital_ramp(9.0, 11.0);
        assert_eq!(g.eval(8.0).unwrap(), 0.0);
        assert_eq!(g.eval(10.0).unwrap(), 0.5);
        assert_eq!(g.eval(12.0).unwrap(), 1.0);
        assert_eq!(g.lipschitz, 0.5);
    }

    #[test]
    fn butterfly_declared_convex_is_reported() {
        let mut b = Payoff::butterfly(8.0, 10.0, 12.0);
        b.shape = Shape::Convex;
        let report = b.validate_metadata((6.0, 14.0), 33).unwrap();
        assert!(
            report
                .violations
                .iter()
                .any(|v| matches!(v, MetadataViolation::Shape { .. })),
            "expected a shape violation, got {:?}",
            report.violations
        );
    }

    #[test]
    fn understated_lipschitz_is_reported_with_witness() {
        // True slope 2.5 between the knots, declared L = 1.
        let g = Payoff::table(vec![(8.0, 0.0), (10.0, 5.0)], 1.0, true, Shape::General);
        let report = g.validate_metadata((8.0, 10.0), 21).unwrap();
        let lipschitz_hit = report.violations.iter().any(|v| {
            matches!(v, MetadataViolation::Lipschitz { slope, .. } if (slope - 2.5).abs() < 1e-9)
        });
        assert!(
            lipschitz_hit,
            "expected a Lipschitz violation with slope 2.5, got {:?}",
            report.violations
        );
    }

    #[test]
    fn honest_declarations_validate_clean() {
        for g in [
            Payoff::call(10.0),
            Payoff::put(10.0),
            Payoff::forward(10.0),
            Payoff::straddle(10.0),
            Payoff::butterfly(8.0, 10.0, 12.0),
            Payoff::digital_ramp(9.0, 11.0),
        ] {
            let report = g.validate_metadata((0.5, 20.0), 64).unwrap();
            assert!(
                report.is_clean(),
                "{:?} reported spurious violations {:?}",
                g.kind,
                report.violations
            );
        }
    }

    #[test]
    fn probe_count_below_two_is_a_domain_error() {
        let g = Payoff::call(10.0);
        assert!(matches!(
            g.validate_metadata((1.0, 2.0), 1),
            Err(Error::Domain(_))
        ));
    }
}
