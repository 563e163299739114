//! Built-in markets: the independent binary large market, the one-period
//! counterexample on `([0,1], Lebesgue)` with exact analytics, and generic
//! one-period markets loaded from JSON.

use std::collections::HashMap;
use std::sync::Arc;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probspace::{ScenarioTree, TimeGrid, TreeBuilder, MASS_TOLERANCE};
use crate::process::{AdaptedProcess, PredictableStrategy};
use crate::portfolio::WealthProcess;

// ---------------------------------------------------------------------------
// Counterexample market

/// `(n+1)/n (1-eps)^(n/(n+1)) - 1 - 2 sqrt(eps)`; zero exactly when the
/// n-th asset has unit mean.
pub fn epsilon_residual(n: usize, eps: f64) -> f64 {
    exact_mean_unchecked(n, eps) - 1.0
}

fn exact_mean_unchecked(n: usize, eps: f64) -> f64 {
    let nf = n as f64;
    -2.0 * eps.sqrt() + (nf + 1.0) / nf * (1.0 - eps).powf(nf / (nf + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonRoot {
    pub n: usize,
    pub eps: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Bisection for the cut point of asset `n`. The residual is strictly
/// decreasing in `eps`, positive at 0 and negative at 1, so the root is
/// unique. Iterates until `|residual| < tol` and the bracket stops shrinking.
pub fn solve_epsilon(n: usize, tol: f64) -> Result<EpsilonRoot> {
    if n == 0 {
        return Err(Error::Precondition("asset index n must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("tolerance must be positive, got {tol}")));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut iterations = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        iterations += 1;
        if mid <= lo || mid >= hi {
            break;
        }
        if epsilon_residual(n, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rl, rh) = (epsilon_residual(n, lo), epsilon_residual(n, hi));
    let (eps, residual) = if rl.abs() <= rh.abs() { (lo, rl) } else { (hi, rh) };
    if residual.abs() >= tol {
        return Err(Error::Solver(format!("bisection for n = {n} stalled at residual {residual:e} >= {tol:e}")));
    }
    Ok(EpsilonRoot { n, eps, residual, iterations })
}

/// `E[S^n]` in closed form for a cut point `eps` in `[0, 1)`.
pub fn exact_mean(n: usize, eps: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Precondition("asset index n must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Precondition(format!("cut point must lie in [0, 1), got {eps}")));
    }
    Ok(exact_mean_unchecked(n, eps))
}

/// Terminal payoff of asset `n` at `omega`.
pub fn counterexample_payoff(n: usize, eps: f64, omega: f64) -> f64 {
    if omega < eps {
        -1.0 / omega.sqrt()
    } else {
        (1.0 - omega).powf(-1.0 / (n as f64 + 1.0))
    }
}

/// `int_a^b S^n(omega) d omega`, from the antiderivatives `-2 sqrt(w)` and
/// `-(n+1)/n (1-w)^(n/(n+1))`.
pub fn counterexample_integral(n: usize, eps: f64, a: f64, b: f64) -> f64 {
    let mut total = 0.0;
    let (lo, hi) = (a, b.min(eps));
    if hi > lo {
        total -= 2.0 * (hi.sqrt() - lo.sqrt());
    }
    let (lo, hi) = (a.max(eps), b);
    if hi > lo {
        let nf = n as f64;
        let k = nf / (nf + 1.0);
        total += (nf + 1.0) / nf * ((1.0 - lo).powf(k) - (1.0 - hi).powf(k));
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Plain Monte Carlo of `E[S^n]` with uniform draws on `(0, 1)`.
pub fn monte_carlo_mean(n: usize, eps: f64, draws: usize, seed: u64) -> McEstimate {
    const CHUNKS: usize = 64;
    let (sum, sum_sq) = (0..CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let count = draws / CHUNKS + usize::from(chunk < draws % CHUNKS);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let omega: f64 = rng.sample(Open01);
                let x = counterexample_payoff(n, eps, omega);
                s += x;
                s2 += x * x;
            }
            (s, s2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let m = draws as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean) * m / (m - 1.0);
    McEstimate { mean, std_error: (var / m).sqrt(), draws }
}

/// The first `N` assets of the counterexample with their cut points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleMarket {
    roots: Vec<EpsilonRoot>,
}

impl CounterexampleMarket {
    pub fn new(n: usize, tol: f64) -> Result<Self> {
        let roots = (1..=n).map(|k| solve_epsilon(k, tol)).collect::<Result<Vec<_>>>()?;
        Ok(Self { roots })
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn roots(&self) -> &[EpsilonRoot] {
        &self.roots
    }

    /// Cut point of asset `n` (1-based).
    pub fn eps(&self, n: usize) -> f64 {
        self.roots[n - 1].eps
    }

    /// Cell boundaries `0, eps_N, ..., eps_1, 1`.
    pub fn cells(&self) -> Vec<f64> {
        let mut b = vec![0.0];
        b.extend(self.roots.iter().rev().map(|r| r.eps));
        b.push(1.0);
        b
    }

    pub fn payoff(&self, n: usize, omega: f64) -> f64 {
        counterexample_payoff(n, self.eps(n), omega)
    }

    /// Grid refined geometrically towards both singular ends: all cut points,
    /// `eps_N r^k`, `r^k / 2` and `1 - r^k / 2` for `k = 1..=levels`, plus
    /// `uniform` equal splits of `[0, 1]`.
    pub fn geometric_grid(&self, levels: u32, ratio: f64, uniform: usize) -> Vec<f64> {
        let eps_min = self.roots.last().map_or(0.5, |r| r.eps);
        let mut pts: Vec<f64> = vec![0.0, 1.0];
        pts.extend(self.roots.iter().map(|r| r.eps));
        for k in 1..=levels {
            let rk = ratio.powi(k as i32);
            pts.extend([eps_min * rk, 0.5 * rk, 1.0 - 0.5 * rk]);
        }
        pts.extend((1..uniform).map(|i| i as f64 / uniform as f64));
        pts.retain(|p| (0.0..=1.0).contains(p));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Default discretization used by the detectors.
    pub fn default_grid(&self) -> Vec<f64> {
        self.geometric_grid(40, 0.5, 40)
    }

    /// One-period market whose atoms are the grid cells, with Lebesgue mass
    /// and cell-average payoffs. Cell averages keep every asset mean exact.
    pub fn discretize(&self, grid: &[f64]) -> Result<OnePeriodMarket> {
        if grid.len() < 2 || grid[0] != 0.0 || grid[grid.len() - 1] != 1.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition("grid must increase strictly from 0 to 1".into()));
        }
        let probs: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
        let assets = self
            .roots
            .iter()
            .map(|r| AssetSpec {
                label: format!("S{}", r.n),
                payoff: grid
                    .windows(2)
                    .map(|w| counterexample_integral(r.n, r.eps, w[0], w[1]) / (w[1] - w[0]))
                    .collect(),
            })
            .collect();
        OnePeriodMarket::with_normalized_probs(format!("counterexample-{}", self.len()), probs, assets, Vec::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowerBound {
    /// `X` tends to `-inf` as `omega -> 0`.
    UnboundedBelow,
    BoundedBelow,
}

/// Coefficients of a static portfolio in the first `len` assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub c: Vec<f64>,
}

impl CoefficientVector {
    pub fn new(c: Vec<f64>) -> Self {
        Self { c }
    }

    pub fn positive(&self) -> Vec<usize> {
        (0..self.c.len()).filter(|k| self.c[*k] > 0.0).map(|k| k + 1).collect()
    }

    pub fn negative(&self) -> Vec<usize> {
        (0..self.c.len()).filter(|k| self.c[*k] < 0.0).map(|k| k + 1).collect()
    }

    /// `alpha = sum_{c > 0} c - sum_{c < 0} |c|`.
    pub fn alpha(&self) -> f64 {
        let pos: f64 = self.c.iter().filter(|c| **c > 0.0).sum();
        let neg: f64 = self.c.iter().filter(|c| **c < 0.0).map(|c| c.abs()).sum();
        pos - neg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioPayoff {
    pub alpha: f64,
    /// Behaviour on the common singular cell `[0, eps_m)`, where
    /// `X = -alpha / sqrt(omega)`.
    pub singular_cell: LowerBound,
    /// Whether `X -> -inf` as `omega -> 1`, which happens when the
    /// lowest-index nonzero coefficient is negative.
    pub unbounded_near_one: bool,
    /// Infimum of `X` over `(0, 1)`; `-inf` if unbounded on either end.
    pub infimum: f64,
}

/// Terminal payoff `X = sum_k c_k S^k`.
pub fn portfolio_value(mkt: &CounterexampleMarket, c: &CoefficientVector, omega: f64) -> f64 {
    c.c.iter().enumerate().map(|(k, ck)| if *ck == 0.0 { 0.0 } else { ck * mkt.payoff(k + 1, omega) }).sum()
}

/// Lower-bound analysis of `X = sum_k c_k S^k`.
pub fn portfolio_payoff(mkt: &CounterexampleMarket, c: &CoefficientVector) -> Result<PortfolioPayoff> {
    if c.c.len() > mkt.len() {
        return Err(Error::Precondition(format!("{} coefficients for a market of {} assets", c.c.len(), mkt.len())));
    }
    let alpha = c.alpha();
    let singular_cell = if alpha > 0.0 { LowerBound::UnboundedBelow } else { LowerBound::BoundedBelow };
    let unbounded_near_one = c.c.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0);
    let infimum = if singular_cell == LowerBound::UnboundedBelow || unbounded_near_one {
        f64::NEG_INFINITY
    } else {
        numeric_infimum(mkt, c)
    };
    Ok(PortfolioPayoff { alpha, singular_cell, unbounded_near_one, infimum })
}

/// Cellwise infimum: on each cell `X` is smooth, so a grid search refined by
/// golden-section around the best point, together with the cell end limits.
fn numeric_infimum(mkt: &CounterexampleMarket, c: &CoefficientVector) -> f64 {
    let m = c.c.len();
    if m == 0 {
        return 0.0;
    }
    let mut bounds = vec![0.0];
    bounds.extend((1..=m).rev().map(|k| mkt.eps(k)));
    bounds.push(1.0);
    bounds.dedup();
    let f = |w: f64| portfolio_value(mkt, c, w);
    let mut best = f64::INFINITY;
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        // Interior samples only: the ends may be singular.
        const SAMPLES: usize = 256;
        let xs: Vec<f64> = (1..SAMPLES).map(|i| a + (b - a) * i as f64 / SAMPLES as f64).collect();
        let (i_min, _) = xs.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, x)| {
            let v = f(*x);
            if v < acc.1 {
                (i, v)
            } else {
                acc
            }
        });
        let lo = if i_min == 0 { a } else { xs[i_min - 1] };
        let hi = if i_min + 1 == xs.len() { b } else { xs[i_min + 1] };
        best = best.min(golden_min(&f, lo, hi)).min(f(xs[i_min]));
        // Limits at the ends of the cell, where finite.
        for x in [a, b] {
            if x > 0.0 && x < 1.0 {
                let inside = if x == a { x } else { x - (b - a) * 1e-12 };
                best = best.min(f(inside));
            }
        }
    }
    best
}

fn golden_min(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..100 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    f1.min(f2)
}

/// `E[X] = sum_k c_k E[S^k]`, each mean taken in closed form.
pub fn expected_payoff(mkt: &CounterexampleMarket, c: &CoefficientVector) -> Result<f64> {
    if c.c.len() > mkt.len() {
        return Err(Error::Precondition(format!("{} coefficients for a market of {} assets", c.c.len(), mkt.len())));
    }
    c.c.iter()
        .enumerate()
        .map(|(k, ck)| Ok(ck * exact_mean(k + 1, mkt.eps(k + 1))?))
        .sum()
}

// ---------------------------------------------------------------------------
// Binary large market

/// Largest asset count for a full product tree.
pub const BINARY_PRODUCT_GUARD: usize = 20;
/// Above this count callers should work with per-asset marginals.
pub const BINARY_DENSE_LIMIT: usize = 12;

/// Independent assets with `P[S^n = -1] = p_n`, `P[S^n = 1] = 1 - p_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinaryLargeMarket {
    p: Vec<f64>,
}

impl BinaryLargeMarket {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Precondition("binary market needs at least one asset".into()));
        }
        if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::Market { path: format!("p[{i}]"), message: format!("{v} not in (0, 1)") });
        }
        Ok(Self { p })
    }

    /// `p_n = ratio^n`.
    pub fn geometric(n: usize, ratio: f64) -> Result<Self> {
        Self::new((1..=n).map(|k| ratio.powi(k as i32)).collect())
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    /// `p_n` for 1-based `n`.
    pub fn p(&self, n: usize) -> f64 {
        self.p[n - 1]
    }

    pub fn is_decreasing(&self) -> bool {
        self.p.windows(2).all(|w| w[1] < w[0])
    }

    /// Closed form of the Emery distance between `S^n` and the unit
    /// terminal jump: the difference is -2 with probability `p_n`.
    pub fn distance_to_unit_jump(&self, n: usize) -> f64 {
        self.p(n)
    }

    /// Sign of asset `n` (1-based) on product atom `atom`. Asset 1 is the
    /// slowest-varying coordinate and -1 comes first.
    pub fn sign(&self, atom: usize, n: usize) -> f64 {
        let bit = (atom >> (self.len() - n)) & 1;
        if bit == 0 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn product_probs(&self) -> Result<Vec<f64>> {
        let n = self.len();
        if n > BINARY_PRODUCT_GUARD {
            return Err(Error::GuardExceeded(format!("binary product tree with {n} > {BINARY_PRODUCT_GUARD} assets")));
        }
        Ok((0..1usize << n)
            .map(|a| (1..=n).map(|k| if self.sign(a, k) < 0.0 { self.p(k) } else { 1.0 - self.p(k) }).product())
            .collect())
    }

    /// One-period product tree, price processes and buy-and-hold generators.
    pub fn build_tree(&self) -> Result<BinaryTree> {
        let probs = self.product_probs()?;
        let mut b = TreeBuilder::new(TimeGrid::uniform(1));
        let root = b.root();
        for q in &probs {
            b.add_child(root, *q);
        }
        let tree = Arc::new(b.build()?);
        let n = self.len();
        let prices = (1..=n)
            .map(|k| {
                let jumps: Vec<f64> = (0..probs.len()).map(|a| self.sign(a, k)).collect();
                AdaptedProcess::terminal_jump(tree.clone(), &jumps)
            })
            .collect::<Result<Vec<_>>>()?;
        let generators = (0..n)
            .map(|k| {
                let hold = PredictableStrategy::constant(tree.clone(), 1.0);
                WealthProcess::from_positions(&prices, vec![(k, hold)])
            })
            .collect::<Result<Vec<_>>>()?;
        let unit_jump = AdaptedProcess::terminal_jump(tree.clone(), &vec![1.0; probs.len()])?;
        Ok(BinaryTree { tree, prices, generators, unit_jump })
    }

    /// Two-atom tree of asset `n` alone, atoms ordered `-1, +1`.
    pub fn marginal_tree(&self, n: usize) -> Result<Arc<ScenarioTree>> {
        Ok(Arc::new(ScenarioTree::one_period(&[self.p(n), 1.0 - self.p(n)])?))
    }

    /// One-period market on the product space, with the unit jump as limit
    /// candidate.
    pub fn to_market(&self) -> Result<OnePeriodMarket> {
        let probs = self.product_probs()?;
        let assets = (1..=self.len())
            .map(|k| AssetSpec { label: format!("S{k}"), payoff: (0..probs.len()).map(|a| self.sign(a, k)).collect() })
            .collect();
        let limit = vec![AssetSpec { label: "J".into(), payoff: vec![1.0; probs.len()] }];
        OnePeriodMarket::new(format!("binary-{}", self.len()), probs, assets, limit)
    }
}

#[derive(Debug, Clone)]
pub struct BinaryTree {
    pub tree: Arc<ScenarioTree>,
    pub prices: Vec<AdaptedProcess>,
    /// Buy-and-hold of each single asset.
    pub generators: Vec<WealthProcess>,
    /// The deterministic unit terminal jump.
    pub unit_jump: AdaptedProcess,
}

// ---------------------------------------------------------------------------
// Generic one-period markets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSpec {
    pub label: String,
    /// Terminal gain `S_1 - S_0` per atom.
    pub payoff: Vec<f64>,
}

/// JSON form of a one-period market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub name: String,
    pub probs: Vec<f64>,
    pub assets: Vec<AssetSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub limit_candidates: Vec<AssetSpec>,
}

/// Finite one-period market: atoms with probabilities and asset gains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OnePeriodMarket {
    name: String,
    probs: Vec<f64>,
    assets: Vec<AssetSpec>,
    limit_candidates: Vec<AssetSpec>,
}

fn market_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Market { path: path.into(), message: message.into() }
}

impl OnePeriodMarket {
    pub fn new(name: String, probs: Vec<f64>, assets: Vec<AssetSpec>, limit_candidates: Vec<AssetSpec>) -> Result<Self> {
        let cfg = MarketConfig { name, probs, assets, limit_candidates };
        Self::from_config(cfg)
    }

    /// Like [`new`](Self::new) but rescales the probabilities by their sum
    /// first, absorbing rounding in generated cell masses.
    pub fn with_normalized_probs(name: String, probs: Vec<f64>, assets: Vec<AssetSpec>, limit: Vec<AssetSpec>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        Self::new(name, probs.iter().map(|p| p / total).collect(), assets, limit)
    }

    pub fn from_config(cfg: MarketConfig) -> Result<Self> {
        let n = cfg.probs.len();
        if n == 0 {
            return Err(market_err("probs", "at least one atom is required"));
        }
        for (i, p) in cfg.probs.iter().enumerate() {
            if !(p.is_finite() && *p > 0.0) {
                return Err(market_err(format!("probs[{i}]"), format!("probability {p} must be finite and > 0")));
            }
        }
        let total: f64 = cfg.probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE * n.max(1) as f64 {
            return Err(market_err("probs", format!("atom mass {total} ≠ 1")));
        }
        if cfg.assets.is_empty() {
            return Err(market_err("assets", "at least one asset is required"));
        }
        for (field, list) in [("assets", &cfg.assets), ("limit_candidates", &cfg.limit_candidates)] {
            for (j, a) in list.iter().enumerate() {
                if a.payoff.len() != n {
                    return Err(market_err(
                        format!("{field}[{j}].payoff"),
                        format!("expected {n} entries, got {}", a.payoff.len()),
                    ));
                }
                if let Some(i) = a.payoff.iter().position(|x| !x.is_finite()) {
                    return Err(market_err(format!("{field}[{j}].payoff[{i}]"), "payoff must be finite"));
                }
            }
        }
        Ok(Self { name: cfg.name, probs: cfg.probs, assets: cfg.assets, limit_candidates: cfg.limit_candidates })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: MarketConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            market_err(if path == "." { "<document>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        Self::from_config(cfg)
    }

    pub fn to_config(&self) -> MarketConfig {
        MarketConfig {
            name: self.name.clone(),
            probs: self.probs.clone(),
            assets: self.assets.clone(),
            limit_candidates: self.limit_candidates.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_config()).expect("market serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_atoms(&self) -> usize {
        self.probs.len()
    }

    pub fn num_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn assets(&self) -> &[AssetSpec] {
        &self.assets
    }

    pub fn payoff(&self, asset: usize) -> &[f64] {
        &self.assets[asset].payoff
    }

    pub fn limit_candidates(&self) -> &[AssetSpec] {
        &self.limit_candidates
    }

    /// Same market with extra limit candidates.
    pub fn with_limit_candidates(mut self, extra: Vec<AssetSpec>) -> Result<Self> {
        self.limit_candidates.extend(extra);
        Self::from_config(self.to_config())
    }

    /// Terminal gain of the position `theta` (one entry per asset).
    pub fn portfolio_payoff(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.num_atoms())
            .map(|a| theta.iter().zip(&self.assets).map(|(t, s)| t * s.payoff[a]).sum())
            .collect()
    }

    /// Market on a subset of the assets, with atoms that the subset cannot
    /// tell apart merged. Limit candidates are dropped.
    pub fn restrict(&self, subset: &[usize]) -> Result<Self> {
        if let Some(j) = subset.iter().find(|j| **j >= self.num_assets()) {
            return Err(Error::Precondition(format!("asset {j} outside market of {}", self.num_assets())));
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut probs: Vec<f64> = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for a in 0..self.num_atoms() {
            let row: Vec<f64> = subset.iter().map(|j| self.assets[*j].payoff[a]).collect();
            let key = row.iter().map(|x| x.to_bits()).collect();
            match index.get(&key) {
                Some(i) => probs[*i] += self.probs[a],
                None => {
                    index.insert(key, probs.len());
                    probs.push(self.probs[a]);
                    rows.push(row);
                }
            }
        }
        let assets = subset
            .iter()
            .enumerate()
            .map(|(k, j)| AssetSpec { label: self.assets[*j].label.clone(), payoff: rows.iter().map(|r| r[k]).collect() })
            .collect();
        Ok(Self { name: format!("{}{:?}", self.name, subset), probs, assets, limit_candidates: Vec::new() })
    }
}

/// Names accepted by [`builtin_market`].
pub const BUILTIN_MARKETS: &[&str] = &["fair-coin", "dominant", "binary-3", "binary-12", "counterexample-5"];

/// Small reference markets used by the CLI and the test suites.
pub fn builtin_market(name: &str) -> Result<OnePeriodMarket> {
    let asset = |label: &str, payoff: Vec<f64>| AssetSpec { label: label.into(), payoff };
    match name {
        "fair-coin" => OnePeriodMarket::new(name.into(), vec![0.5, 0.5], vec![asset("S1", vec![-1.0, 1.0])], Vec::new()),
        "dominant" => OnePeriodMarket::new(name.into(), vec![0.5, 0.5], vec![asset("S1", vec![1.0, 2.0])], Vec::new()),
        "binary-3" => BinaryLargeMarket::geometric(3, 0.5)?.to_market(),
        "binary-12" => BinaryLargeMarket::geometric(12, 0.5)?.to_market(),
        "counterexample-5" => {
            let m = CounterexampleMarket::new(5, 1e-12)?;
            m.discretize(&m.default_grid())
        }
        _ => Err(market_err("market", format!("unknown built-in market {name:?}; known: {}", BUILTIN_MARKETS.join(", ")))),
    }
}

/// Random market with up to `max_atoms` atoms and `max_assets` assets.
/// Roughly a third of the draws get a shifted asset, which usually creates
/// an arbitrage.
pub fn random_market<R: Rng + ?Sized>(rng: &mut R, max_atoms: usize, max_assets: usize) -> OnePeriodMarket {
    let atoms = rng.gen_range(2..=max_atoms.max(2));
    let n_assets = rng.gen_range(1..=max_assets.max(1));
    let raw: Vec<f64> = (0..atoms).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let mut assets: Vec<AssetSpec> = (0..n_assets)
        .map(|j| AssetSpec {
            label: format!("S{}", j + 1),
            payoff: (0..atoms).map(|_| (rng.gen_range(-4.0f64..4.0) * 4.0).round() / 4.0).collect(),
        })
        .collect();
    if rng.gen_bool(1.0 / 3.0) {
        let j = rng.gen_range(0..n_assets);
        let lo = assets[j].payoff.iter().copied().fold(f64::INFINITY, f64::min);
        for x in &mut assets[j].payoff {
            *x -= lo;
        }
    }
    OnePeriodMarket::with_normalized_probs("random".into(), probs, assets, Vec::new()).expect("generated market is valid")
}
