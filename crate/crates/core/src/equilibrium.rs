//! Single-round equilibrium: the minimax price of one round of the game.
//!
//! One round, support r₁ < … < r_b with continuation values v₁ … v_b. The
//! seller picks a hedge Δ, the adversary picks a return; the robust price is
//!
//!   p* = min_Δ max_i [ v_i − r_i·Δ ]
//!
//! whose linear-programming dual is the maximum of Σ wᵢvᵢ over probability
//! weights with Σ wᵢrᵢ = 0 — i.e. over *risk-neutral measures* on the
//! support. Geometrically p* is the value at r = 0 of the upper concave
//! envelope of the points (rᵢ, vᵢ), which is how [`envelope_at_zero`]
//! computes it: an O(b) upper-hull sweep after the (already sorted) input.
//!
//! At an optimum either exactly one constraint binds at a support point with
//! r = 0, or two bind with r⁽¹⁾ < 0 < r⁽²⁾ and the measure puts weights
//! r⁽²⁾/(r⁽²⁾−r⁽¹⁾) and −r⁽¹⁾/(r⁽²⁾−r⁽¹⁾) on them. Degenerate optima (three
//! or more points within 1e−12 of the envelope) are resolved by a fixed
//! tie-break — smallest r_j − r_i, then smallest |r_i| — so prices, hedges
//! and binding indices are reproducible bit-for-bit across runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on envelope values used to group near-optimal
/// constraints before tie-breaking.
pub const ENVELOPE_TIE_TOL: f64 = 1e-12;

/// Tolerance on the superhedge feasibility audit p + rᵢΔ ≥ vᵢ.
pub const FEASIBILITY_TOL: f64 = 1e-10;

/// Tolerance on measure invariants (weights sum to 1, zero mean).
pub const MEASURE_TOL: f64 = 1e-12;

/// A finite return support with continuation values, r₁ < … < r_b.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscreteSupport {
    returns: Vec<f64>,
    values: Vec<f64>,
}

impl DiscreteSupport {
    /// Build a support; returns must be finite, strictly increasing and as
    /// numerous as the values.
    pub fn new(returns: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if returns.is_empty() || returns.len() != values.len() {
            return Err(Error::Domain(format!(
                "support needs equally many returns and values (≥ 1), got {} and {}",
                returns.len(),
                values.len()
            )));
        }
        if returns.iter().any(|r| !r.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("support entries must be finite".into()));
        }
        for w in returns.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Domain(format!(
                    "support returns must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(DiscreteSupport { returns, values })
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// True iff the support contains a strictly negative and a strictly
    /// positive return — the condition for a risk-neutral measure to exist.
    pub fn straddles_zero(&self) -> bool {
        self.returns.first().is_some_and(|&r| r < 0.0)
            && self.returns.last().is_some_and(|&r| r > 0.0)
    }
}

/// A probability measure on returns with zero mean.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiskNeutralMeasure {
    pub support: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RiskNeutralMeasure {
    /// Check the measure invariants: nonnegative weights summing to 1 and
    /// zero mean, both within [`MEASURE_TOL`].
    pub fn validate(&self) -> Result<()> {
        if self.support.len() != self.weights.len() {
            return Err(Error::Domain(
                "measure support and weights must have equal length".into(),
            ));
        }
        if self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Domain("measure weights must be nonnegative".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > MEASURE_TOL {
            return Err(Error::Domain(format!(
                "measure weights sum to {sum}, expected 1 within {MEASURE_TOL}"
            )));
        }
        let mean: f64 = self
            .support
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| r * w)
            .sum();
        if mean.abs() > MEASURE_TOL {
            return Err(Error::Domain(format!(
                "measure mean return is {mean}, expected 0 within {MEASURE_TOL}"
            )));
        }
        Ok(())
    }
}

/// Solution of one round: robust price, optimal hedge, the extremal measure
/// attaining the dual, and the indices of the binding constraints (one index
/// when a support point at r = 0 binds alone, two otherwise).
#[derive(Clone, Debug, Serialize)]
pub struct SingleRoundSolution {
    pub price: f64,
    pub hedge: f64,
    pub measure: RiskNeutralMeasure,
    pub binding: Vec<usize>,
}

/// Value at x = 0 of the upper concave envelope of `points`, plus the
/// indices of the chosen binding pair (equal indices when a point at x = 0
/// itself attains the envelope).
///
/// Preconditions: x-coordinates strictly increasing and straddling zero
/// (x₁ ≤ 0 ≤ x_n); violations are domain errors. Ties within
/// [`ENVELOPE_TIE_TOL`] of the envelope are broken toward the smallest
/// x_j − x_i, then the smallest |x_i|.
pub fn envelope_at_zero(points: &[(f64, f64)]) -> Result<(f64, usize, usize)> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Domain("envelope of an empty point set".into()));
    }
    for w in points.windows(2) {
        if !(w[0].0 < w[1].0) {
            return Err(Error::Domain(format!(
                "envelope x-coordinates must be strictly increasing, got {} then {}",
                w[0].0, w[1].0
            )));
        }
    }
    if points[0].0 > 0.0 || points[n - 1].0 < 0.0 {
        return Err(Error::Domain(format!(
            "envelope points must straddle zero, got x ∈ [{}, {}]",
            points[0].0,
            points[n - 1].0
        )));
    }

    // Upper hull, monotone-chain: pop while the middle point is on or below
    // the chord of its neighbours.
    let mut hull: Vec<usize> = Vec::with_capacity(n.min(32));
    for i in 0..n {
        while hull.len() >= 2 {
            let (ax, ay) = points[hull[hull.len() - 2]];
            let (bx, by) = points[hull[hull.len() - 1]];
            let (cx, cy) = points[i];
            // cross > 0 ⇔ b strictly below chord a–c.
            let cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }

    // Hull edge (or vertex) over x = 0.
    let mut seg = 0;
    while seg + 1 < hull.len() && points[hull[seg + 1]].0 < 0.0 {
        seg += 1;
    }
    let (lx, ly) = points[hull[seg]];
    let envelope_value = if hull.len() == 1 || points[hull[seg]].0 == 0.0 {
        ly
    } else if seg + 1 < hull.len() {
        let (rx, ry) = points[hull[seg + 1]];
        if rx == 0.0 {
            ry
        } else {
            ly + (0.0 - lx) * (ry - ly) / (rx - lx)
        }
    } else {
        // Last hull vertex has x == 0 (x_n = 0 straddle edge case).
        ly
    };

    // A support point exactly at zero that attains the envelope binds alone.
    if let Some(k) = points.iter().position(|&(x, _)| x == 0.0) {
        if points[k].1 >= envelope_value - ENVELOPE_TIE_TOL {
            return Ok((points[k].1, k, k));
        }
    }

    // Two-sided binding pair: among points within tolerance of the envelope
    // line, take the negative point closest to zero and the positive point
    // closest to zero — that minimizes x_j − x_i and |x_i| simultaneously.
    let line = |x: f64| -> f64 {
        let (ax, ay) = points[hull[seg]];
        let (bx, by) = points[hull[(seg + 1).min(hull.len() - 1)]];
        if ax == bx {
            ay
        } else {
            ay + (x - ax) * (by - ay) / (bx - ax)
        }
    };
    let mut left: Option<usize> = None;
    let mut right: Option<usize> = None;
    for (i, &(x, v)) in points.iter().enumerate() {
        if (line(x) - v).abs() <= ENVELOPE_TIE_TOL {
            if x < 0.0 {
                left = Some(i); // increasing scan: final hit is closest to 0
            } else if x > 0.0 && right.is_none() {
                right = Some(i);
            }
        }
    }
    let (i, j) = match (left, right) {
        (Some(i), Some(j)) => (i, j),
        // Envelope attained from one side only (e.g. x₁ = 0 boundary).
        _ => return Ok((envelope_value, hull[seg], hull[seg])),
    };
    let (xi, vi) = points[i];
    let (xj, vj) = points[j];
    let value = vi + (0.0 - xi) * (vj - vi) / (xj - xi);
    Ok((value, i, j))
}

/// Robust price of one round from the seller's side (upper bound), with the
/// optimal hedge and the extremal risk-neutral measure.
///
/// Errors with [`Error::NoRiskNeutralMeasure`] when the support does not
/// contain both a strictly negative and a strictly positive return. The
/// returned solution satisfies the superhedge inequalities
/// price + rᵢ·hedge ≥ vᵢ for every i (audited to [`FEASIBILITY_TOL`]).
pub fn solve_upper(support: &DiscreteSupport) -> Result<SingleRoundSolution> {
    if !support.straddles_zero() {
        return Err(Error::NoRiskNeutralMeasure);
    }
    let points: Vec<(f64, f64)> = support
        .returns
        .iter()
        .copied()
        .zip(support.values.iter().copied())
        .collect();
    let (price, i, j) = envelope_at_zero(&points)?;

    let (hedge, measure, binding) = if i == j {
        // Single binding constraint at r = 0: the hedge is the slope of the
        // envelope segment immediately to its left. On a concave envelope
        // that is the smallest chord slope into the binding point from the
        // left, and the extension of that segment stays above every point.
        let (rk, vk) = points[i];
        let mut slope = f64::INFINITY;
        for &(r, v) in points.iter().filter(|&&(r, _)| r < rk) {
            let s = (vk - v) / (rk - r);
            if s < slope {
                slope = s;
            }
        }
        debug_assert!(slope.is_finite(), "straddle guarantees a point left of 0");
        let measure = RiskNeutralMeasure {
            support: vec![rk],
            weights: vec![1.0],
        };
        (slope, measure, vec![i])
    } else {
        let (ri, vi) = points[i];
        let (rj, vj) = points[j];
        let hedge = (vj - vi) / (rj - ri);
        let measure = RiskNeutralMeasure {
            support: vec![ri, rj],
            weights: vec![rj / (rj - ri), -ri / (rj - ri)],
        };
        (hedge, measure, vec![i, j])
    };

    // Superhedge feasibility audit: the optimal (price, hedge) must dominate
    // every constraint.
    let worst = support
        .returns
        .iter()
        .zip(&support.values)
        .map(|(r, v)| v - (price + r * hedge))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(
        worst <= FEASIBILITY_TOL,
        "superhedge feasibility violated by {worst:e} (price {price}, hedge {hedge})"
    );

    Ok(SingleRoundSolution {
        price,
        hedge,
        measure,
        binding,
    })
}

/// Buyer's side (lower bound): by symmetry the lower problem on values v is
/// the upper problem on −v with price and hedge negated; measure and binding
/// indices carry over.
pub fn solve_lower(support: &DiscreteSupport) -> Result<SingleRoundSolution> {
    let negated = DiscreteSupport {
        returns: support.returns.clone(),
        values: support.values.iter().map(|v| -v).collect(),
    };
    let sol = solve_upper(&negated)?;
    Ok(SingleRoundSolution {
        price: -sol.price,
        hedge: -sol.hedge,
        measure: sol.measure,
        binding: sol.binding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn support(returns: &[f64], values: &[f64]) -> DiscreteSupport {
        DiscreteSupport::new(returns.to_vec(), values.to_vec()).unwrap()
    }

    #[test]
    fn symmetric_two_point_round() {
        let sol = solve_upper(&support(&[-0.1, 0.1], &[0.0, 1.0])).unwrap();
        assert!((sol.price - 0.5).abs() < 1e-15, "price {}", sol.price);
        assert!((sol.hedge - 5.0).abs() < 1e-15, "hedge {}", sol.hedge);
        assert_eq!(sol.binding, vec![0, 1]);
        assert!((sol.measure.weights[0] - 0.5).abs() < 1e-15);
        assert!((sol.measure.weights[1] - 0.5).abs() < 1e-15);
        sol.measure.validate().unwrap();
    }

    #[test]
    fn asymmetric_three_point_round() {
        // Envelope at 0 of (−0.1, 0), (0.05, 1), (0.1, 1): the chord from
        // −0.1 to 0.05 gives 2/3 and binds; the hedge is its slope 1/0.15.
        let sol = solve_upper(&support(&[-0.1, 0.05, 0.1], &[0.0, 1.0, 1.0])).unwrap();
        assert!((sol.price - 2.0 / 3.0).abs() < 1e-12, "price {}", sol.price);
        assert!(
            (sol.hedge - 1.0 / 0.15).abs() < 1e-12,
            "hedge {}",
            sol.hedge
        );
        assert_eq!(sol.binding, vec![0, 1]);
        sol.measure.validate().unwrap();
    }

    #[test]
    fn lower_bound_binds_the_outer_pair() {
        let sol = solve_lower(&support(&[-0.1, 0.05, 0.1], &[0.0, 1.0, 1.0])).unwrap();
        assert!((sol.price - 0.5).abs() < 1e-12, "price {}", sol.price);
        assert_eq!(sol.binding, vec![0, 2]);
        sol.measure.validate().unwrap();
    }

    #[test]
    fn constant_values_price_the_constant_with_zero_hedge() {
        let sol = solve_upper(&support(&[-0.2, -0.1, 0.1, 0.3], &[2.0, 2.0, 2.0, 2.0])).unwrap();
        assert!((sol.price - 2.0).abs() < 1e-15);
        assert!(sol.hedge.abs() < 1e-15);
        sol.measure.validate().unwrap();
    }

    #[test]
    fn one_sided_support_has_no_measure() {
        let s = support(&[0.05, 0.1, 0.2], &[0.0, 1.0, 2.0]);
        assert!(matches!(solve_upper(&s), Err(Error::NoRiskNeutralMeasure)));
        let s = support(&[-0.2, -0.1], &[1.0, 0.0]);
        assert!(matches!(solve_lower(&s), Err(Error::NoRiskNeutralMeasure)));
    }

    #[test]
    fn envelope_requires_straddling_zero() {
        assert!(matches!(
            envelope_at_zero(&[(0.1, 1.0), (0.2, 2.0)]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn collinear_tie_breaks_to_tightest_pair() {
        // All four points on the line v = 1 + r: every straddling chord
        // prices 1.0; the tie-break picks the pair hugging zero.
        let sol = solve_upper(&support(
            &[-0.2, -0.1, 0.1, 0.2],
            &[0.8, 0.9, 1.1, 1.2],
        ))
        .unwrap();
        assert!((sol.price - 1.0).abs() < 1e-12);
        assert_eq!(sol.binding, vec![1, 2]);
    }

    #[test]
    fn binding_point_at_zero_uses_left_segment_slope() {
        // Peak exactly at r = 0; envelope value is v(0) = 2 and the hedge
        // must be the slope of the segment arriving from the left, 10.
        let sol = solve_upper(&support(&[-0.1, 0.0, 0.1], &[1.0, 2.0, 1.0])).unwrap();
        assert!((sol.price - 2.0).abs() < 1e-15);
        assert_eq!(sol.binding, vec![1]);
        assert!((sol.hedge - 10.0).abs() < 1e-12, "hedge {}", sol.hedge);
        sol.measure.validate().unwrap();
        // Left-segment hedge stays feasible: checked inside solve_upper.
    }

    #[test]
    fn zero_point_below_envelope_is_not_binding() {
        // v(0) = 0 sits strictly below the chord (−0.1, 1) → (0.1, 1).
        let sol = solve_upper(&support(&[-0.1, 0.0, 0.1], &[1.0, 0.0, 1.0])).unwrap();
        assert!((sol.price - 1.0).abs() < 1e-15);
        assert_eq!(sol.binding, vec![0, 2]);
    }

    #[test]
    fn upper_dominates_lower() {
        let s = support(&[-0.15, -0.02, 0.03, 0.2], &[0.3, 0.55, 0.6, 1.4]);
        let up = solve_upper(&s).unwrap();
        let lo = solve_lower(&s).unwrap();
        assert!(up.price >= lo.price - 1e-12);
    }
}
