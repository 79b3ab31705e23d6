//! ε-grid discretization of the uncertainty intervals and the two
//! approximation engines for payoffs with no two-point reduction.
//!
//! Replacing the interval [−ζ̲, ζ̄] by the arithmetic grid
//! {−ζ̲, −ζ̲+ε, …} ∪ {ζ̄} can only lower the adversary's value, so the
//! discretized price ĝ₀ satisfies 0 ≤ g₀ − ĝ₀ ≤ C·√ε·L·τ·S₀ and grows
//! monotonically as the grid is refined (nested grids, ε halvings). The
//! budget inversion ε = δ²/(8·L²·τ²) ([`epsilon_for_target`]) turns a target
//! relative error δ into a step size.
//!
//! Two engines evaluate the discretized game:
//!
//! * [`Engine::ExactReachable`] — memoized recursion over exactly reachable
//!   states. Uniform games recombine into multisets of chosen returns
//!   (order-free products); per-round grids fall back to full choice
//!   sequences. No interpolation error, but state counts explode, so the
//!   engine is capped ([`ExactCaps`], overridable).
//! * [`Engine::Grid`] — backward induction on a shared log-price grid with
//!   linear interpolation between grid values and constant extrapolation
//!   beyond the span (which is built to contain every reachable price).
//!   Spacing h ≤ ε/4. The final round is evaluated against the payoff
//!   itself, not an interpolant, so single-round prices are exact.
//!
//! The grid recursion here is also the substrate for the American and
//! quota-jump engines (same code path, so their degenerate cases reduce to
//! this engine bit-for-bit).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{envelope_at_zero, solve_upper, DiscreteSupport};
use crate::error::{Error, Result};
use crate::lattice::GameSpec;
use crate::payoff::Payoff;

/// Coefficient in ε = coeff·δ²/(L²τ²).
pub const EPSILON_BUDGET_COEFF: f64 = 0.125;

/// Grid spacing is at most ε divided by this factor.
pub const GRID_POINTS_PER_EPSILON: f64 = 4.0;

/// Hard ceiling on exact-engine state counts, even with overridden caps.
pub const EXACT_STATE_CEILING: u128 = 20_000_000;

/// An ε-discretized uncertainty set: strictly increasing returns from −ζ̲ to
/// ζ̄ with consecutive gaps ≤ ε, containing at least one return of each
/// sign. 0 is on the grid whenever ζ̲/ε is integral.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedSet {
    pub epsilon: f64,
    pub returns: Vec<f64>,
}

impl DiscretizedSet {
    /// Smallest and largest return.
    pub fn extremes(&self) -> (f64, f64) {
        (self.returns[0], *self.returns.last().expect("nonempty set"))
    }
}

/// Discretize [−ζ̲, ζ̄] with step ε: points −ζ̲ + k·ε (computed from the
/// index, not by running accumulation, so exact cancellations are kept),
/// with ζ̄ appended when the last step does not land on it.
pub fn discretize(zeta_lower: f64, zeta_upper: f64, epsilon: f64) -> Result<DiscretizedSet> {
    if !(zeta_lower > 0.0 && zeta_lower < 1.0) {
        return Err(Error::Domain(format!(
            "ζ̲ must lie in (0, 1), got {zeta_lower}"
        )));
    }
    if !(zeta_upper.is_finite() && zeta_upper > 0.0) {
        return Err(Error::Domain(format!(
            "ζ̄ must be finite and positive, got {zeta_upper}"
        )));
    }
    let width = zeta_lower + zeta_upper;
    if !(epsilon > 0.0 && epsilon < width) {
        return Err(Error::DegenerateStep {
            epsilon,
            width,
        });
    }
    let n = (width / epsilon).floor() as usize;
    let mut returns: Vec<f64> = Vec::with_capacity(n + 2);
    for k in 0..=n {
        let r = -zeta_lower + k as f64 * epsilon;
        if r > zeta_upper {
            break; // float overshoot of the mathematical bound
        }
        returns.push(r);
    }
    if *returns.last().expect("ε < width ⇒ at least the left end") < zeta_upper {
        returns.push(zeta_upper);
    }
    debug_assert!(returns.windows(2).all(|w| w[0] < w[1]));
    debug_assert!(returns[0] == -zeta_lower && *returns.last().unwrap() == zeta_upper);
    Ok(DiscretizedSet {
        epsilon,
        returns,
    })
}

/// Step size that certifies a total error of δ·S₀ for an L-Lipschitz payoff
/// over τ rounds: ε = δ²/(8·L²·τ²).
pub fn epsilon_for_target(delta: f64, lipschitz: f64, tau: usize) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!(
            "error target δ must be positive, got {delta}"
        )));
    }
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::Domain(format!(
            "Lipschitz constant must be positive, got {lipschitz}"
        )));
    }
    if tau == 0 {
        return Err(Error::Domain("τ must be at least 1".into()));
    }
    let lt = lipschitz * tau as f64;
    Ok(EPSILON_BUDGET_COEFF * delta * delta / (lt * lt))
}

/// Certified error budget δ·S₀ implied by a step ε (the inverse of
/// [`epsilon_for_target`]).
fn error_budget(spec: &GameSpec, epsilon: f64) -> f64 {
    let delta = spec.payoff.lipschitz * spec.tau as f64 * (epsilon / EPSILON_BUDGET_COEFF).sqrt();
    delta * spec.s0
}

/// Which engine evaluates the discretized game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    ExactReachable,
    Grid,
}

/// Size caps for [`Engine::ExactReachable`]. The defaults are deliberately
/// tight; callers that know what they are doing can raise them, still
/// subject to [`EXACT_STATE_CEILING`].
#[derive(Clone, Copy, Debug)]
pub struct ExactCaps {
    pub max_tau: usize,
    pub max_support: usize,
}

impl Default for ExactCaps {
    fn default() -> Self {
        ExactCaps {
            max_tau: 6,
            max_support: 12,
        }
    }
}

/// Priced approximation with the certified budget it was run under.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ApproximationResult {
    pub price: f64,
    /// Hedge at the root (currency exposure over round one).
    pub hedge: f64,
    pub engine: Engine,
    pub epsilon: f64,
    /// δ·S₀ for the δ certified by this ε (payoff L and τ from the spec).
    pub error_budget: f64,
}

/// One round's value function on the shared log-price grid.
#[derive(Clone, Debug, Serialize)]
pub struct ValueGrid {
    /// Round index t; values are the robust price of the remaining τ−t
    /// rounds as a function of the time-t price.
    pub round: usize,
    pub log_prices: Vec<f64>,
    pub values: Vec<f64>,
    pub spacing: f64,
}

/// Upper robust price of the discretized game.
pub fn price_upper(
    spec: &GameSpec,
    sets: &[DiscretizedSet],
    engine: Engine,
) -> Result<ApproximationResult> {
    price_upper_capped(spec, sets, engine, &ExactCaps::default())
}

/// [`price_upper`] with explicit exact-engine caps.
pub fn price_upper_capped(
    spec: &GameSpec,
    sets: &[DiscretizedSet],
    engine: Engine,
    caps: &ExactCaps,
) -> Result<ApproximationResult> {
    solve_european(spec, sets, engine, caps, false)
}

/// Lower robust price of the discretized game (buyer's side).
pub fn price_lower(
    spec: &GameSpec,
    sets: &[DiscretizedSet],
    engine: Engine,
) -> Result<ApproximationResult> {
    price_lower_capped(spec, sets, engine, &ExactCaps::default())
}

/// [`price_lower`] with explicit exact-engine caps.
pub fn price_lower_capped(
    spec: &GameSpec,
    sets: &[DiscretizedSet],
    engine: Engine,
    caps: &ExactCaps,
) -> Result<ApproximationResult> {
    solve_european(spec, sets, engine, caps, true)
}

fn solve_european(
    spec: &GameSpec,
    sets: &[DiscretizedSet],
    engine: Engine,
    caps: &ExactCaps,
    lower: bool,
) -> Result<ApproximationResult> {
    let epsilon = validate_sets(spec, sets)?;
    let (price, hedge) = match engine {
        Engine::Grid => {
            let out = grid_solve(&GridConfig {
                spec,
                sets,
                jump: None,
                american: false,
                lower,
            })?;
            (out.price, out.hedge)
        }
        Engine::ExactReachable => {
            let out = exact_solve(&ExactConfig {
                spec,
                sets,
                caps,
                american: false,
                lower,
            })?;
            (out.price, out.hedge)
        }
    };
    Ok(ApproximationResult {
        price,
        hedge,
        engine,
        epsilon,
        error_budget: error_budget(spec, epsilon),
    })
}

/// European upper value functions on the shared grid, rounds 1 through τ
/// (round τ is the payoff sampled on the grid).
pub fn grid_value_functions(spec: &GameSpec, sets: &[DiscretizedSet]) -> Result<Vec<ValueGrid>> {
    validate_sets(spec, sets)?;
    let out = grid_solve(&GridConfig {
        spec,
        sets,
        jump: None,
        american: false,
        lower: false,
    })?;
    let mut grids: Vec<ValueGrid> = out
        .rounds
        .into_iter()
        .map(|r| ValueGrid {
            round: r.round,
            log_prices: out.log_prices.clone(),
            values: r.layers.into_iter().next().expect("one layer"),
            spacing: out.spacing,
        })
        .collect();
    grids.push(ValueGrid {
        round: spec.tau,
        values: out
            .log_prices
            .iter()
            .map(|&y| spec.payoff.value_at(y.exp()))
            .collect(),
        log_prices: out.log_prices,
        spacing: out.spacing,
    });
    grids.sort_by_key(|g| g.round);
    Ok(grids)
}

/// Check the `sets` convention (one shared set or one per round), equal ε
/// across rounds, and returns compatible with positive prices; returns ε.
pub(crate) fn validate_sets(spec: &GameSpec, sets: &[DiscretizedSet]) -> Result<f64> {
    if sets.is_empty() || (sets.len() != 1 && sets.len() != spec.tau) {
        return Err(Error::Config(format!(
            "expected 1 or τ = {} discretized sets, got {}",
            spec.tau,
            sets.len()
        )));
    }
    let epsilon = sets[0].epsilon;
    for set in sets {
        if set.epsilon != epsilon {
            return Err(Error::Config(format!(
                "all rounds must share one ε, got {} and {}",
                epsilon, set.epsilon
            )));
        }
        validate_one_set(set)?;
    }
    Ok(epsilon)
}

pub(crate) fn validate_one_set(set: &DiscretizedSet) -> Result<()> {
    if set.returns.len() < 2 {
        return Err(Error::Domain(
            "a discretized set needs at least two returns".into(),
        ));
    }
    if !set.returns.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Domain(
            "discretized returns must be strictly increasing".into(),
        ));
    }
    if set.returns[0] <= -1.0 {
        return Err(Error::Domain(format!(
            "returns must stay above −1 to keep prices positive, got {}",
            set.returns[0]
        )));
    }
    if !(set.returns[0] < 0.0 && *set.returns.last().unwrap() > 0.0) {
        return Err(Error::Domain(
            "a discretized set must contain a negative and a positive return".into(),
        ));
    }
    Ok(())
}

pub(crate) fn resolve_rounds<'a>(
    spec: &GameSpec,
    sets: &'a [DiscretizedSet],
) -> Vec<&'a DiscretizedSet> {
    if sets.len() == 1 {
        vec![&sets[0]; spec.tau]
    } else {
        sets.iter().collect()
    }
}

// ─────────────────────────── Grid engine ───────────────────────────

pub(crate) struct GridConfig<'a> {
    pub spec: &'a GameSpec,
    pub sets: &'a [DiscretizedSet],
    /// Widened set and jump quota for the adversarial-jump game.
    pub jump: Option<(&'a DiscretizedSet, usize)>,
    pub american: bool,
    pub lower: bool,
}

pub(crate) struct GridRound {
    pub round: usize,
    /// Value function per remaining-jump-quota layer, `layers[m][i]`.
    pub layers: Vec<Vec<f64>>,
    /// Immediate-exercise flags (American only), aligned with `layers`.
    pub exercised: Vec<Vec<bool>>,
}

pub(crate) struct GridOutcome {
    pub price: f64,
    pub hedge: f64,
    pub root_exercised: bool,
    pub log_prices: Vec<f64>,
    pub spacing: f64,
    /// Rounds 1..=τ−1 in ascending round order (empty for τ = 1).
    pub rounds: Vec<GridRound>,
}

/// Backward induction on the shared log-price grid. Handles the European,
/// American (exercise max) and quota-jump (layered value) variants in one
/// code path; a solve with quota 0 performs literally the same float
/// operations as one with no jump at all.
pub(crate) fn grid_solve(cfg: &GridConfig<'_>) -> Result<GridOutcome> {
    let spec = cfg.spec;
    let tau = spec.tau;
    let rounds = resolve_rounds(spec, cfg.sets);
    let epsilon = cfg.sets[0].epsilon;
    let quota = match cfg.jump {
        Some((wide, q)) => {
            validate_one_set(wide)?;
            if wide.epsilon != epsilon {
                return Err(Error::Config(format!(
                    "widened jump set must share the base ε, got {} and {}",
                    wide.epsilon, epsilon
                )));
            }
            if q > tau {
                return Err(Error::Config(format!(
                    "jump quota ℓ = {q} cannot exceed τ = {tau}"
                )));
            }
            q
        }
        None => 0,
    };
    let layers = quota + 1;
    // The internal solve works on sign·g so the buyer's side reuses the
    // upper-envelope machinery; see `sign` uses below.
    let sign = if cfg.lower { -1.0 } else { 1.0 };

    // Log-price span covering every reachable node: per-round extremes,
    // widened by the quota's worst-case replacement of a normal move by a
    // jump move. With no jump (or quota 0) the widening terms are exactly
    // zero and the span is bit-identical to the plain engine's.
    let mut lo = spec.s0.ln();
    let mut hi = lo;
    for set in &rounds {
        let (rmin, rmax) = set.extremes();
        lo += rmin.ln_1p();
        hi += rmax.ln_1p();
    }
    let (widen_lo, widen_hi) = match cfg.jump {
        Some((wide, q)) => {
            let (wmin, wmax) = wide.extremes();
            let max_of_mins = rounds
                .iter()
                .map(|s| s.extremes().0.ln_1p())
                .fold(f64::NEG_INFINITY, f64::max);
            let min_of_maxes = rounds
                .iter()
                .map(|s| s.extremes().1.ln_1p())
                .fold(f64::INFINITY, f64::min);
            (
                q as f64 * (max_of_mins - wmin.ln_1p()).max(0.0),
                q as f64 * (wmax.ln_1p() - min_of_maxes).max(0.0),
            )
        }
        None => (0.0, 0.0),
    };
    let lo = lo - widen_lo;
    let hi = hi + widen_hi;

    let h_max = epsilon / GRID_POINTS_PER_EPSILON;
    let n = (((hi - lo) / h_max).ceil() as usize + 1).max(2);
    let spacing = (hi - lo) / (n - 1) as f64;
    let log_prices: Vec<f64> = (0..n).map(|i| lo + i as f64 * spacing).collect();

    // Backward in time: `remaining` rounds left to play. The slice for
    // `remaining` lives at round τ−remaining. remaining = 1 evaluates the
    // payoff exactly at the child price instead of interpolating, so kinks
    // are not smeared in the final round.
    let mut prev: Vec<Vec<f64>> = Vec::new(); // [layer][grid]
    let mut stored: Vec<GridRound> = Vec::new();
    for remaining in 1..tau {
        let round = tau - remaining;
        let set = rounds[round];
        let mut layer_values: Vec<Vec<f64>> = Vec::with_capacity(layers);
        let mut layer_flags: Vec<Vec<bool>> = Vec::with_capacity(layers);
        for m in 0..layers {
            let solve_point = |&y: &f64| -> (f64, bool) {
                let x = y.exp();
                let points = node_points(
                    spec, set, cfg.jump, m, remaining, y, x, sign, &prev, lo, spacing,
                );
                let cont = envelope_at_zero(&points)
                    .expect("node constraints are strictly increasing and straddle 0")
                    .0;
                node_value(spec, cfg.american, cfg.lower, x, sign, cont)
            };
            let solved: Vec<(f64, bool)> = if n >= 1024 {
                log_prices.par_iter().map(solve_point).collect()
            } else {
                log_prices.iter().map(solve_point).collect()
            };
            layer_values.push(solved.iter().map(|&(v, _)| v).collect());
            layer_flags.push(solved.iter().map(|&(_, e)| e).collect());
        }
        stored.push(GridRound {
            round,
            layers: layer_values.iter().map(|vs| vs.iter().map(|v| sign * v).collect()).collect(),
            exercised: layer_flags,
        });
        prev = layer_values;
    }

    // Root: a single node at S₀ exactly, on the top quota layer.
    let y0 = spec.s0.ln();
    let points = node_points(
        spec,
        rounds[0],
        cfg.jump,
        quota,
        tau,
        y0,
        spec.s0,
        sign,
        &prev,
        lo,
        spacing,
    );
    let (returns, values): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
    let support = DiscreteSupport::new(returns, values)?;
    let sol = solve_upper(&support)?;
    let (root_value, root_exercised) =
        node_value(spec, cfg.american, cfg.lower, spec.s0, sign, sol.price);

    stored.sort_by_key(|r| r.round);
    Ok(GridOutcome {
        price: sign * root_value,
        hedge: sign * sol.hedge,
        root_exercised,
        log_prices,
        spacing,
        rounds: stored,
    })
}

/// Constraint set of one node: the per-round grid against the same quota
/// layer, merged (when a jump is still available) with the widened grid
/// against the layer below. Duplicate returns keep the larger value.
#[allow(clippy::too_many_arguments)]
fn node_points(
    spec: &GameSpec,
    set: &DiscretizedSet,
    jump: Option<(&DiscretizedSet, usize)>,
    m: usize,
    remaining: usize,
    y: f64,
    x: f64,
    sign: f64,
    prev: &[Vec<f64>],
    lo: f64,
    spacing: f64,
) -> Vec<(f64, f64)> {
    let child = |layer: usize, r: f64| -> f64 {
        if remaining == 1 {
            sign * spec.payoff.value_at(x * (1.0 + r))
        } else {
            interp(&prev[layer], lo, spacing, y + r.ln_1p())
        }
    };
    let base: Vec<(f64, f64)> = set.returns.iter().map(|&r| (r, child(m, r))).collect();
    match jump {
        Some((wide, _)) if m >= 1 => {
            let widened: Vec<(f64, f64)> =
                wide.returns.iter().map(|&r| (r, child(m - 1, r))).collect();
            merge_constraints(&base, &widened)
        }
        _ => base,
    }
}

fn node_value(
    spec: &GameSpec,
    american: bool,
    lower: bool,
    x: f64,
    sign: f64,
    cont: f64,
) -> (f64, bool) {
    if !american {
        return (cont, false);
    }
    let immediate = sign * spec.payoff.value_at(x);
    // Ties break toward continuation on both sides.
    if lower {
        if immediate < cont {
            (immediate, true)
        } else {
            (cont, false)
        }
    } else if immediate > cont {
        (immediate, true)
    } else {
        (cont, false)
    }
}

/// Merge two strictly-increasing constraint families; exact duplicate
/// returns keep the max value (the adversary has both options).
fn merge_constraints(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i].0 < b[j].0 {
            out.push(a[i]);
            i += 1;
        } else if b[j].0 < a[i].0 {
            out.push(b[j]);
            j += 1;
        } else {
            out.push((a[i].0, a[i].1.max(b[j].1)));
            i += 1;
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Linear interpolation on the uniform log-price grid, constant beyond the
/// ends.
#[inline]
fn interp(values: &[f64], lo: f64, spacing: f64, y: f64) -> f64 {
    let pos = (y - lo) / spacing;
    if pos <= 0.0 {
        return values[0];
    }
    let top = (values.len() - 1) as f64;
    if pos >= top {
        return *values.last().expect("nonempty grid");
    }
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    values[i] + w * (values[i + 1] - values[i])
}

// ──────────────────────── Exact-reachable engine ────────────────────────

pub(crate) struct ExactConfig<'a> {
    pub spec: &'a GameSpec,
    pub sets: &'a [DiscretizedSet],
    pub caps: &'a ExactCaps,
    pub american: bool,
    pub lower: bool,
}

pub(crate) struct ExactOutcome {
    pub price: f64,
    pub hedge: f64,
    pub root_exercised: bool,
    /// Every reachable state: (round, price, exercised). Root excluded;
    /// terminal included with `exercised = true` (forced exercise).
    pub states: Vec<(usize, f64, bool)>,
}

/// Memoized recursion over exactly reachable states.
pub(crate) fn exact_solve(cfg: &ExactConfig<'_>) -> Result<ExactOutcome> {
    let spec = cfg.spec;
    let tau = spec.tau;
    let caps = cfg.caps;
    if tau > caps.max_tau {
        return Err(Error::SizeLimit(format!(
            "exact engine capped at τ ≤ {}, got τ = {}",
            caps.max_tau, tau
        )));
    }
    let rounds = resolve_rounds(spec, cfg.sets);
    for set in &rounds {
        if set.returns.len() > caps.max_support {
            return Err(Error::SizeLimit(format!(
                "exact engine capped at {} returns per round, got {}",
                caps.max_support,
                set.returns.len()
            )));
        }
    }
    let uniform = rounds.windows(2).all(|w| w[0].returns == w[1].returns);
    let states: u128 = if uniform {
        // Multisets of size ≤ τ from b elements: C(τ+b−1, τ) at the last
        // level dominates; sum the levels exactly.
        let b = rounds[0].returns.len() as u128;
        let mut total = 0u128;
        let mut level = 1u128;
        for t in 0..=tau as u128 {
            total = total.saturating_add(level);
            level = level
                .saturating_mul(b + t)
                .saturating_div(t + 1);
        }
        total
    } else {
        rounds
            .iter()
            .fold(1u128, |acc, s| acc.saturating_mul(s.returns.len() as u128))
    };
    if states > EXACT_STATE_CEILING {
        return Err(Error::SizeLimit(format!(
            "exact engine would visit ~{states} states; ceiling is {EXACT_STATE_CEILING}"
        )));
    }

    let sign = if cfg.lower { -1.0 } else { 1.0 };
    let mut walker = ExactWalker {
        spec,
        rounds: &rounds,
        american: cfg.american,
        lower: cfg.lower,
        sign,
        uniform,
        bits: bits_for(rounds.iter().map(|s| s.returns.len()).max().unwrap()),
        memo: std::collections::HashMap::new(),
        states: Vec::new(),
    };
    if walker.uniform && walker.bits * tau > 64 {
        return Err(Error::SizeLimit(format!(
            "exact engine cannot key τ = {tau} rounds over {} returns (needs {} bits)",
            rounds[0].returns.len(),
            walker.bits * tau
        )));
    }

    // Root: children once, then the audited hedge solve.
    let set0 = rounds[0];
    let mut indices = Vec::with_capacity(tau);
    let mut values = Vec::with_capacity(set0.returns.len());
    for i in 0..set0.returns.len() {
        indices.push(i);
        values.push(walker.value(1, &mut indices));
        indices.pop();
    }
    let support = DiscreteSupport::new(set0.returns.clone(), values)?;
    let sol = solve_upper(&support)?;
    let (root_value, root_exercised) =
        node_value(spec, cfg.american, cfg.lower, spec.s0, sign, sol.price);

    let mut states = std::mem::take(&mut walker.states);
    states.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).expect("finite prices"));
    Ok(ExactOutcome {
        price: sign * root_value,
        hedge: sign * sol.hedge,
        root_exercised,
        states,
    })
}

fn bits_for(b: usize) -> usize {
    (usize::BITS - (b.max(2) - 1).leading_zeros()) as usize
}

struct ExactWalker<'a> {
    spec: &'a GameSpec,
    rounds: &'a [&'a DiscretizedSet],
    american: bool,
    lower: bool,
    sign: f64,
    uniform: bool,
    bits: usize,
    memo: std::collections::HashMap<u64, f64>,
    states: Vec<(usize, f64, bool)>,
}

impl ExactWalker<'_> {
    /// Internal-scale value of the state reached by the choices in
    /// `indices` (sorted in place when the game is uniform, so recombining
    /// states share a key).
    fn value(&mut self, t: usize, indices: &mut Vec<usize>) -> f64 {
        let key = if self.uniform {
            indices.sort_unstable();
            let mut k: u64 = 1; // leading 1 guards against length aliasing
            for &i in indices.iter() {
                k = (k << self.bits) | i as u64;
            }
            Some(k)
        } else {
            None
        };
        if let Some(k) = key {
            if let Some(&v) = self.memo.get(&k) {
                return v;
            }
        }
        let mut x = self.spec.s0;
        if self.uniform {
            for &i in indices.iter() {
                x *= 1.0 + self.rounds[0].returns[i];
            }
        } else {
            for (round, &i) in indices.iter().enumerate() {
                x *= 1.0 + self.rounds[round].returns[i];
            }
        }

        let spec = self.spec;
        let v = if t == spec.tau {
            self.states.push((t, x, true));
            self.sign * spec.payoff.value_at(x)
        } else {
            let set = self.rounds[t];
            let mut child_vals = Vec::with_capacity(set.returns.len());
            for i in 0..set.returns.len() {
                indices.push(i);
                child_vals.push(self.value(t + 1, indices));
                indices.pop();
                if self.uniform {
                    // value() sorted in place; restore the prefix order is
                    // unnecessary (the prefix is itself kept sorted).
                }
            }
            let points: Vec<(f64, f64)> = set
                .returns
                .iter()
                .copied()
                .zip(child_vals)
                .collect();
            let cont = envelope_at_zero(&points)
                .expect("discretized sets straddle zero")
                .0;
            let (v, exercised) = node_value(spec, self.american, self.lower, x, self.sign, cont);
            self.states.push((t, x, exercised));
            v
        };
        if let Some(k) = key {
            self.memo.insert(k, v);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::binomial_upper;
    use crate::payoff::Shape;

    #[test]
    fn discretize_symmetric_tenth_with_nickel_steps() {
        let set = discretize(0.1, 0.1, 0.05).unwrap();
        assert_eq!(set.returns, vec![-0.1, -0.05, 0.0, 0.05, 0.1]);
    }

    #[test]
    fn discretize_appends_the_upper_end() {
        let set = discretize(0.1, 0.07, 0.05).unwrap();
        assert_eq!(set.returns, vec![-0.1, -0.05, 0.0, 0.05, 0.07]);
    }

    #[test]
    fn discretize_rejects_steps_wider_than_the_interval() {
        assert!(matches!(
            discretize(0.1, 0.1, 0.2),
            Err(Error::DegenerateStep { .. })
        ));
        assert!(matches!(
            discretize(0.1, 0.1, 0.25),
            Err(Error::DegenerateStep { .. })
        ));
    }

    #[test]
    fn epsilon_budget_worked_example() {
        // δ = 0.01, L = 1, τ = 10 → ε = 1e−4/800 = 1.25e−7.
        let eps = epsilon_for_target(0.01, 1.0, 10).unwrap();
        assert!((eps - 1.25e-7).abs() < 1e-20, "ε = {eps}");
    }

    #[test]
    fn grid_and_exact_agree_on_the_two_round_call() {
        let spec = GameSpec::uniform(10.0, 2, 0.1, 0.1, Payoff::call(10.0)).unwrap();
        let sets = [discretize(0.1, 0.1, 0.05).unwrap()];
        let exact = price_upper(&spec, &sets, Engine::ExactReachable).unwrap();
        let grid = price_upper(&spec, &sets, Engine::Grid).unwrap();
        let (binom, _) = binomial_upper(&spec).unwrap();
        assert!((exact.price - 0.525).abs() < 1e-12, "exact {}", exact.price);
        assert!((grid.price - binom).abs() < 1e-6, "grid {}", grid.price);
        assert!(exact.price <= binom + 1e-12, "discretized must not exceed");
    }

    #[test]
    fn single_round_butterfly_bounds_are_sharp() {
        let payoff = Payoff::table(
            vec![(8.0, 0.0), (10.0, 2.0), (12.0, 0.0)],
            1.0,
            false,
            Shape::General,
        );
        let spec = GameSpec::uniform(10.0, 1, 0.1, 0.1, payoff).unwrap();
        let sets = [discretize(0.1, 0.1, 0.1).unwrap()];
        for engine in [Engine::ExactReachable, Engine::Grid] {
            let upper = price_upper(&spec, &sets, engine).unwrap();
            let lower = price_lower(&spec, &sets, engine).unwrap();
            assert!((upper.price - 2.0).abs() < 1e-12, "{engine:?} upper {}", upper.price);
            assert!((lower.price - 1.0).abs() < 1e-12, "{engine:?} lower {}", lower.price);
        }
    }

    #[test]
    fn refinement_is_monotone_for_the_exact_engine() {
        let payoff = Payoff::table(
            vec![(6.0, 0.0), (9.0, 1.5), (10.5, 1.8), (14.0, 3.0)],
            1.0,
            true,
            Shape::General,
        );
        let spec = GameSpec::uniform(10.0, 3, 0.1, 0.1, payoff).unwrap();
        let mut last = f64::NEG_INFINITY;
        for eps in [0.1, 0.05, 0.025] {
            let sets = [discretize(0.1, 0.1, eps).unwrap()];
            let res = price_upper(&spec, &sets, Engine::ExactReachable).unwrap();
            assert!(
                res.price >= last - 1e-13,
                "refinement must not lose value: {} then {}",
                last,
                res.price
            );
            last = res.price;
        }
    }

    #[test]
    fn lower_bound_never_exceeds_upper() {
        let payoff = Payoff::butterfly(8.0, 10.0, 12.0);
        let spec = GameSpec::uniform(10.0, 2, 0.12, 0.08, payoff).unwrap();
        let sets = [discretize(0.12, 0.08, 0.04).unwrap()];
        for engine in [Engine::ExactReachable, Engine::Grid] {
            let upper = price_upper(&spec, &sets, engine).unwrap();
            let lower = price_lower(&spec, &sets, engine).unwrap();
            assert!(lower.price <= upper.price + 1e-12, "{engine:?}");
        }
    }

    #[test]
    fn exact_engine_enforces_caps() {
        let spec = GameSpec::uniform(10.0, 7, 0.1, 0.1, Payoff::call(10.0)).unwrap();
        let sets = [discretize(0.1, 0.1, 0.05).unwrap()];
        assert!(matches!(
            price_upper(&spec, &sets, Engine::ExactReachable),
            Err(Error::SizeLimit(_))
        ));
        // Raised caps admit it.
        let res = price_upper_capped(
            &spec,
            &sets,
            Engine::ExactReachable,
            &ExactCaps {
                max_tau: 8,
                max_support: 12,
            },
        )
        .unwrap();
        assert!(res.price > 0.0);
    }

    #[test]
    fn value_grids_carry_the_rounds() {
        let spec = GameSpec::uniform(10.0, 3, 0.1, 0.1, Payoff::call(10.0)).unwrap();
        let sets = [discretize(0.1, 0.1, 0.05).unwrap()];
        let grids = grid_value_functions(&spec, &sets).unwrap();
        assert_eq!(
            grids.iter().map(|g| g.round).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        for g in &grids {
            assert_eq!(g.log_prices.len(), g.values.len());
            assert!(g.spacing <= sets[0].epsilon / GRID_POINTS_PER_EPSILON + 1e-18);
        }
    }
}
