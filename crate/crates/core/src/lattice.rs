//! Two-point lattice engines for convex/concave payoffs, the lognormal
//! limit, and the convergence scan between them.
//!
//! For a convex payoff the adversary's worst case in every round sits at the
//! interval extremes {−ζ̲ₜ, ζ̄ₜ}, so the τ-round game collapses to a binomial
//! tree: risk-neutral weights ζ̄/(ζ̲+ζ̄) on the down move and ζ̲/(ζ̲+ζ̄) on the
//! up move. Uniform intervals recombine into O(τ²) nodes with prices
//! S₀(1+ζ̄)^k(1−ζ̲)^(t−k); per-round intervals do not recombine and are capped
//! at τ ≤ 22 (2^τ leaves).
//!
//! Hedge ratios come from the *value-function* difference quotient
//!
//!   Δ = (v_{t+1}(x(1+ζ̄)) − v_{t+1}(x(1−ζ̲))) / (ζ̲ + ζ̄),
//!
//! which superhedges path-by-path (the raw-payoff quotient does not once
//! τ > 1). With ν = Σ ζ̲ₜζ̄ₜ held fixed and rounds refined, the binomial price
//! converges to the lognormal (Black–Scholes-style) value with total
//! variance ν, which [`black_scholes`] evaluates in closed form for calls
//! and puts and by adaptive quadrature otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::payoff::{Payoff, Shape};

/// Hard cap on rounds for non-recombining (per-round interval) trees.
pub const NON_UNIFORM_MAX_TAU: usize = 22;

/// Absolute tolerance of the quadrature fallback in [`black_scholes`].
pub const QUADRATURE_TOL: f64 = 1e-8;

/// A τ-round game: initial price, per-round uncertainty intervals
/// [−ζ̲ₜ, ζ̄ₜ], and the terminal payoff.
///
/// Invariants (enforced by the constructors): S₀ > 0, τ ≥ 1,
/// ζ̲ₜ ∈ (0, 1) and ζ̄ₜ > 0 for every round, one interval bound pair per
/// round. Fields are public for ergonomic reads; construct through
/// [`GameSpec::new`] / [`GameSpec::uniform`] to keep the invariants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GameSpec {
    pub s0: f64,
    pub tau: usize,
    pub zeta_lower: Vec<f64>,
    pub zeta_upper: Vec<f64>,
    pub payoff: Payoff,
}

impl GameSpec {
    pub fn new(
        s0: f64,
        zeta_lower: Vec<f64>,
        zeta_upper: Vec<f64>,
        payoff: Payoff,
    ) -> Result<Self> {
        if !(s0.is_finite() && s0 > 0.0) {
            return Err(Error::Domain(format!(
                "initial price must be finite and positive, got {s0}"
            )));
        }
        if zeta_lower.is_empty() || zeta_lower.len() != zeta_upper.len() {
            return Err(Error::Domain(format!(
                "need one (ζ̲, ζ̄) pair per round (≥ 1), got {} and {}",
                zeta_lower.len(),
                zeta_upper.len()
            )));
        }
        for (t, (&zl, &zu)) in zeta_lower.iter().zip(&zeta_upper).enumerate() {
            if !(zl > 0.0 && zl < 1.0) {
                return Err(Error::Domain(format!(
                    "round {t}: ζ̲ must lie in (0, 1), got {zl}"
                )));
            }
            if !(zu.is_finite() && zu > 0.0) {
                return Err(Error::Domain(format!(
                    "round {t}: ζ̄ must be finite and positive, got {zu}"
                )));
            }
        }
        let tau = zeta_lower.len();
        Ok(GameSpec {
            s0,
            tau,
            zeta_lower,
            zeta_upper,
            payoff,
        })
    }

    /// Same interval every round.
    pub fn uniform(s0: f64, tau: usize, zl: f64, zu: f64, payoff: Payoff) -> Result<Self> {
        if tau == 0 {
            return Err(Error::Domain("a game needs at least one round".into()));
        }
        GameSpec::new(s0, vec![zl; tau], vec![zu; tau], payoff)
    }

    /// True iff every round shares the same interval (bitwise).
    pub fn is_uniform(&self) -> bool {
        self.zeta_lower.windows(2).all(|w| w[0] == w[1])
            && self.zeta_upper.windows(2).all(|w| w[0] == w[1])
    }
}

/// Hedge ratio at one lattice node.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HedgeNode {
    /// Price at the node where the position is entered.
    pub price: f64,
    /// Currency exposure Δ held over the following round (the P&L of the
    /// round is Δ·R for realized return R).
    pub delta: f64,
}

/// Hedge ratios on every reachable lattice node, round by round.
///
/// `rounds()[t]` holds the nodes at time t, i.e. the positions entered for
/// round t+1. For a uniform (recombining) lattice node k at time t is the
/// state with k up-moves, price S₀(1+ζ̄)^k(1−ζ̲)^(t−k). For per-round
/// intervals the index is the path written in binary, most significant bit
/// first (bit = 1 for an up move).
#[derive(Clone, Debug, Serialize)]
pub struct HedgeSchedule {
    rounds: Vec<Vec<HedgeNode>>,
}

impl HedgeSchedule {
    pub fn rounds(&self) -> &[Vec<HedgeNode>] {
        &self.rounds
    }

    /// Hedge entered at time `t` in node `index` (see the type docs for the
    /// index convention).
    pub fn delta(&self, t: usize, index: usize) -> Option<&HedgeNode> {
        self.rounds.get(t).and_then(|r| r.get(index))
    }
}

/// Upper robust price of a convex payoff with its superhedging schedule.
///
/// Errors: [`Error::ShapeMismatch`] unless the payoff is declared convex;
/// [`Error::SizeLimit`] for per-round intervals with τ > 22.
pub fn binomial_upper(spec: &GameSpec) -> Result<(f64, HedgeSchedule)> {
    if spec.payoff.shape != Shape::Convex {
        return Err(Error::ShapeMismatch {
            required: "Convex",
            found: spec.payoff.shape,
        });
    }
    two_point_value(spec)
}

/// Upper robust price of a concave payoff: the adversary can stay at 0, and
/// for concave g no mixture beats staying put, so the price is g(S₀).
/// (Every uncertainty interval contains 0 by construction of [`GameSpec`].)
pub fn concave_upper(spec: &GameSpec) -> Result<f64> {
    if spec.payoff.shape != Shape::Concave {
        return Err(Error::ShapeMismatch {
            required: "Concave",
            found: spec.payoff.shape,
        });
    }
    spec.payoff.eval(spec.s0)
}

/// Lower robust price. Convex payoffs pin the buyer to g(S₀) (the mirror of
/// [`concave_upper`]); concave payoffs mirror the binomial recursion (the
/// expectation under the same two-point weights). Payoffs declared
/// [`Shape::General`] have no two-point reduction and are rejected — use the
/// discretized engines instead.
pub fn bound_lower(spec: &GameSpec) -> Result<f64> {
    match spec.payoff.shape {
        Shape::Convex => spec.payoff.eval(spec.s0),
        Shape::Concave => Ok(two_point_value(spec)?.0),
        Shape::General => Err(Error::ShapeMismatch {
            required: "Convex or Concave",
            found: Shape::General,
        }),
    }
}

/// Shared two-point backward recursion with value-function hedges.
fn two_point_value(spec: &GameSpec) -> Result<(f64, HedgeSchedule)> {
    if spec.is_uniform() {
        two_point_recombining(spec)
    } else {
        two_point_tree(spec)
    }
}

/// Uniform intervals: recombining lattice, O(τ²) work, node prices computed
/// from exponents so a node's price does not depend on the path taken.
fn two_point_recombining(spec: &GameSpec) -> Result<(f64, HedgeSchedule)> {
    let tau = spec.tau;
    let (zl, zu) = (spec.zeta_lower[0], spec.zeta_upper[0]);
    let (w_dn, w_up) = (zu / (zl + zu), zl / (zl + zu));
    let node_price = |t: usize, k: usize| -> f64 {
        spec.s0 * (1.0 + zu).powi(k as i32) * (1.0 - zl).powi((t - k) as i32)
    };

    let mut values: Vec<f64> = (0..=tau)
        .map(|k| spec.payoff.value_at(node_price(tau, k)))
        .collect();
    let mut rounds: Vec<Vec<HedgeNode>> = Vec::with_capacity(tau);
    for t in (0..tau).rev() {
        let mut level = Vec::with_capacity(t + 1);
        let mut next_values = Vec::with_capacity(t + 1);
        for k in 0..=t {
            let (down, up) = (values[k], values[k + 1]);
            level.push(HedgeNode {
                price: node_price(t, k),
                delta: (up - down) / (zl + zu),
            });
            next_values.push(w_dn * down + w_up * up);
        }
        values = next_values;
        rounds.push(level);
    }
    rounds.reverse();
    Ok((values[0], HedgeSchedule { rounds }))
}

/// Per-round intervals: the tree does not recombine; 2^t nodes at time t,
/// indexed by the path bits (MSB = first round, 1 = up move).
fn two_point_tree(spec: &GameSpec) -> Result<(f64, HedgeSchedule)> {
    let tau = spec.tau;
    if tau > NON_UNIFORM_MAX_TAU {
        return Err(Error::SizeLimit(format!(
            "per-round intervals do not recombine; τ is capped at \
             {NON_UNIFORM_MAX_TAU} (2^τ leaves), got τ = {tau}"
        )));
    }
    let path_price = |t: usize, idx: usize| -> f64 {
        let mut x = spec.s0;
        for s in 0..t {
            let up = (idx >> (t - 1 - s)) & 1 == 1;
            x *= if up {
                1.0 + spec.zeta_upper[s]
            } else {
                1.0 - spec.zeta_lower[s]
            };
        }
        x
    };

    let mut values: Vec<f64> = (0..1usize << tau)
        .map(|idx| spec.payoff.value_at(path_price(tau, idx)))
        .collect();
    let mut rounds: Vec<Vec<HedgeNode>> = Vec::with_capacity(tau);
    for t in (0..tau).rev() {
        let (zl, zu) = (spec.zeta_lower[t], spec.zeta_upper[t]);
        let (w_dn, w_up) = (zu / (zl + zu), zl / (zl + zu));
        let mut level = Vec::with_capacity(1 << t);
        let mut next_values = Vec::with_capacity(1 << t);
        for idx in 0..1usize << t {
            let (down, up) = (values[idx << 1], values[(idx << 1) | 1]);
            level.push(HedgeNode {
                price: path_price(t, idx),
                delta: (up - down) / (zl + zu),
            });
            next_values.push(w_dn * down + w_up * up);
        }
        values = next_values;
        rounds.push(level);
    }
    rounds.reverse();
    Ok((values[0], HedgeSchedule { rounds }))
}

/// Lognormal-limit price with total log-variance ν: the payoff expectation
/// under S = S₀·exp(√ν·Z − ν/2), Z standard normal.
///
/// Calls and puts use the closed form (Φ from the error function); every
/// other payoff goes through adaptive Simpson quadrature, refined to
/// [`QUADRATURE_TOL`] absolute.
pub fn black_scholes(s0: f64, payoff: &Payoff, nu: f64) -> Result<f64> {
    if !(s0.is_finite() && s0 > 0.0) {
        return Err(Error::Domain(format!(
            "initial price must be finite and positive, got {s0}"
        )));
    }
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::Domain(format!(
            "total variance ν must be finite and positive, got {nu}"
        )));
    }
    use crate::payoff::PayoffKind;
    let sqrt_nu = nu.sqrt();
    match payoff.kind {
        PayoffKind::Call => {
            let k = payoff.strikes[0];
            let d1 = ((s0 / k).ln() + 0.5 * nu) / sqrt_nu;
            let d2 = d1 - sqrt_nu;
            Ok(s0 * normal_cdf(d1) - k * normal_cdf(d2))
        }
        PayoffKind::Put => {
            let k = payoff.strikes[0];
            let d1 = ((s0 / k).ln() + 0.5 * nu) / sqrt_nu;
            let d2 = d1 - sqrt_nu;
            Ok(k * normal_cdf(-d2) - s0 * normal_cdf(-d1))
        }
        _ => Ok(lognormal_expectation(s0, payoff, nu)),
    }
}

/// Standard normal CDF via the complementary error function.
fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// E[g(S₀·exp(√ν·Z − ν/2))] by adaptive Simpson over z ∈ [−10, 10]
/// (the tail mass beyond is ~10⁻²³ against a Lipschitz payoff).
fn lognormal_expectation(s0: f64, payoff: &Payoff, nu: f64) -> f64 {
    let sqrt_nu = nu.sqrt();
    let integrand = |z: f64| -> f64 {
        let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        payoff.value_at(s0 * (sqrt_nu * z - 0.5 * nu).exp()) * density
    };
    adaptive_simpson(&integrand, -10.0, 10.0, QUADRATURE_TOL)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        if depth >= 50 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth + 1)
                + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth + 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fb, fm) = (f(a), f(b), f(m));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 0)
}

/// One row of a convergence scan.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScanRow {
    pub tau: usize,
    pub game_price: f64,
    pub bs_price: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
}

/// Price the τ-round game with intervals scaled as ζ/√τ for each τ in
/// `tau_list` and compare against the fixed lognormal limit ν = ζ̲·ζ̄.
pub fn convergence_scan(
    s0: f64,
    payoff: &Payoff,
    zeta_lower: f64,
    zeta_upper: f64,
    tau_list: &[usize],
) -> Result<Vec<ScanRow>> {
    let bs_price = black_scholes(s0, payoff, zeta_lower * zeta_upper)?;
    let mut rows = Vec::with_capacity(tau_list.len());
    for &tau in tau_list {
        let scale = (tau as f64).sqrt();
        let spec = GameSpec::uniform(
            s0,
            tau,
            zeta_lower / scale,
            zeta_upper / scale,
            payoff.clone(),
        )?;
        let (game_price, _) = binomial_upper(&spec)?;
        let abs_gap = (game_price - bs_price).abs();
        rows.push(ScanRow {
            tau,
            game_price,
            bs_price,
            abs_gap,
            rel_gap: abs_gap / bs_price.abs().max(f64::MIN_POSITIVE),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_round_call_prices_at_half() {
        let spec = GameSpec::uniform(10.0, 1, 0.1, 0.1, Payoff::call(10.0)).unwrap();
        let (price, hedges) = binomial_upper(&spec).unwrap();
        assert!((price - 0.5).abs() < 1e-15, "price {price}");
        assert!((hedges.delta(0, 0).unwrap().delta - 5.0).abs() < 1e-12);
    }

    #[test]
    fn two_round_call_prices_at_0525() {
        let spec = GameSpec::uniform(10.0, 2, 0.1, 0.1, Payoff::call(10.0)).unwrap();
        let (price, hedges) = binomial_upper(&spec).unwrap();
        assert!((price - 0.525).abs() < 1e-12, "price {price}");
        assert_eq!(hedges.rounds().len(), 2);
        assert_eq!(hedges.rounds()[1].len(), 2);
    }

    #[test]
    fn forward_upper_and_lower_coincide_at_s0_minus_k() {
        let spec = GameSpec::uniform(100.0, 5, 0.07, 0.12, Payoff::forward(90.0)).unwrap();
        let (upper, _) = binomial_upper(&spec).unwrap();
        let lower = bound_lower(&spec).unwrap();
        assert!((upper - 10.0).abs() < 1e-10, "upper {upper}");
        assert!((lower - 10.0).abs() < 1e-12, "lower {lower}");
    }

    #[test]
    fn concave_lower_mirrors_the_binomial() {
        let payoff = Payoff::table(
            vec![(0.0, 0.0), (10.0, 10.0), (1000.0, 10.0)],
            1.0,
            true,
            Shape::Concave,
        );
        let spec = GameSpec::uniform(10.0, 1, 0.1, 0.1, payoff).unwrap();
        let lower = bound_lower(&spec).unwrap();
        assert!((lower - 9.5).abs() < 1e-12, "lower {lower}");
        assert!((concave_upper(&spec).unwrap() - 10.0).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let spec = GameSpec::uniform(10.0, 2, 0.1, 0.1, Payoff::butterfly(8.0, 10.0, 12.0)).unwrap();
        assert!(matches!(
            binomial_upper(&spec),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(bound_lower(&spec), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn non_uniform_tree_agrees_with_the_lp_oracle() {
        use crate::multinomial::DiscretizedSet;
        use crate::oracle::{game_value_exact, OracleLimits};
        let zl = vec![0.05, 0.1, 0.08, 0.12];
        let zu = vec![0.07, 0.06, 0.11, 0.09];
        let spec = GameSpec::new(100.0, zl.clone(), zu.clone(), Payoff::call(100.0)).unwrap();
        let (engine, _) = binomial_upper(&spec).unwrap();
        let sets: Vec<DiscretizedSet> = zl
            .iter()
            .zip(&zu)
            .map(|(&l, &u)| DiscretizedSet {
                epsilon: l + u,
                returns: vec![-l, u],
            })
            .collect();
        let oracle = game_value_exact(&spec, &sets, false, &OracleLimits::default()).unwrap();
        assert!(
            (engine - oracle).abs() < 1e-10,
            "engine {engine} vs oracle {oracle}"
        );
    }

    #[test]
    fn non_uniform_tree_respects_the_round_cap() {
        let mut zl = vec![0.1; 23];
        zl[0] = 0.09; // break uniformity
        let spec = GameSpec::new(100.0, zl, vec![0.1; 23], Payoff::call(100.0)).unwrap();
        assert!(matches!(binomial_upper(&spec), Err(Error::SizeLimit(_))));
    }

    #[test]
    fn closed_form_call_matches_the_reference_value() {
        // S₀ = K = 100, ν = 0.04: price = 100(Φ(0.1) − Φ(−0.1)) = 7.9656…
        let price = black_scholes(100.0, &Payoff::call(100.0), 0.04).unwrap();
        assert!((price - 7.9655674554058038).abs() < 1e-10, "price {price}");
    }

    #[test]
    fn quadrature_agrees_with_the_closed_form() {
        // Same call routed through the quadrature fallback as a table.
        let knots: Vec<(f64, f64)> = (0..=400)
            .map(|i| {
                let x = i as f64 * 2.0;
                (x, (x - 100.0f64).max(0.0))
            })
            .collect();
        let table = Payoff::table(knots, 1.0, true, Shape::Convex);
        let quad = black_scholes(100.0, &table, 0.04).unwrap();
        let closed = black_scholes(100.0, &Payoff::call(100.0), 0.04).unwrap();
        assert!(
            (quad - closed).abs() < 1e-3,
            "quadrature {quad} vs closed form {closed}"
        );
    }

    #[test]
    fn put_call_parity_in_the_limit() {
        let call = black_scholes(100.0, &Payoff::call(95.0), 0.09).unwrap();
        let put = black_scholes(100.0, &Payoff::put(95.0), 0.09).unwrap();
        // C − P = S₀ − K under the martingale measure.
        assert!((call - put - 5.0).abs() < 1e-10);
    }

    #[test]
    fn nonpositive_variance_is_a_domain_error() {
        assert!(matches!(
            black_scholes(100.0, &Payoff::call(100.0), 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn scan_gap_shrinks_with_more_rounds() {
        let rows = convergence_scan(100.0, &Payoff::call(100.0), 0.2, 0.2, &[4, 16, 64]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].abs_gap >= rows[1].abs_gap);
        assert!(rows[1].abs_gap >= rows[2].abs_gap);
        assert!(rows[2].rel_gap < 0.05, "rel gap {}", rows[2].rel_gap);
    }
}
