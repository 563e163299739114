//! No-arbitrage detectors for one-period markets.
//!
//! Everything here reduces to small linear programs solved by [`crate::lp`]:
//! arbitrage and its dual martingale density, maximal success probabilities
//! of 1-admissible positions, separating-measure polytopes with an
//! equivalence floor, and polar/bipolar cone membership.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::markets::{AssetSpec, OnePeriodMarket};

/// Tolerance on LP objectives and constraint checks.
pub const LP_TOL: f64 = 1e-9;
/// Atom count up to which success probabilities are maximized exactly.
pub const SUPPORT_GUARD: usize = 12;
/// Atom count up to which the LP relaxation is used; beyond it only the
/// single-asset candidates are scored.
pub const RELAXATION_GUARD: usize = 256;
/// Asset count up to which every subset is checked for arbitrage.
pub const SUBSET_GUARD: usize = 12;
/// Atom count limit for polar computations.
pub const POLAR_GUARD: usize = 12;
/// Largest number of candidate active sets tried by vertex enumeration.
pub const VERTEX_COMBINATION_GUARD: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArbitrageCertificate {
    pub labels: Vec<String>,
    /// Position per generator.
    pub theta: Vec<f64>,
    pub payoff: Vec<f64>,
    pub min_payoff: f64,
    /// `P[payoff > 0]`.
    pub gain_prob: f64,
}

impl ArbitrageCertificate {
    fn build(labels: Vec<String>, theta: Vec<f64>, gens: &[&[f64]], probs: &[f64]) -> Self {
        let payoff = combine(gens, &theta);
        let min_payoff = payoff.iter().copied().fold(f64::INFINITY, f64::min);
        let gain_prob = payoff.iter().zip(probs).filter(|(x, _)| **x > LP_TOL).fold(0.0, |s, (_, p)| s + p);
        Self { labels, theta, payoff, min_payoff, gain_prob }
    }

    pub fn is_valid(&self) -> bool {
        self.min_payoff >= -1e-12 && self.gain_prob > 0.0
    }
}

fn combine(gens: &[&[f64]], theta: &[f64]) -> Vec<f64> {
    let atoms = gens.first().map_or(0, |g| g.len());
    (0..atoms).map(|a| gens.iter().zip(theta).map(|(g, t)| t * g[a]).sum()).collect()
}

fn scale_of(gens: &[&[f64]]) -> f64 {
    gens.iter().flat_map(|g| g.iter()).fold(1.0f64, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum NaVerdict {
    /// `q` is a strictly positive measure on the atoms with `E_q[g] = 0` for
    /// every generator; `density` is `q / p`.
    NoArbitrage { q: Vec<f64>, density: Vec<f64> },
    Arbitrage(ArbitrageCertificate),
}

impl NaVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, NaVerdict::NoArbitrage { .. })
    }

    pub fn certificate(&self) -> Option<&ArbitrageCertificate> {
        match self {
            NaVerdict::Arbitrage(c) => Some(c),
            NaVerdict::NoArbitrage { .. } => None,
        }
    }
}

/// Arbitrage test on a list of generator payoffs.
///
/// The primal problem is `max sum_a payoff(theta)_a` subject to
/// `payoff >= 0` and `|theta| <= 1`. It is solved through its dual
/// `min sum(u + v)` subject to `G^T (1 + y) = u - v`, `y, u, v >= 0`, which
/// has one row per generator regardless of the atom count. A zero optimum
/// gives the martingale measure `q = (1 + y) / sum(1 + y)`; otherwise the
/// shadow prices, negated, are an arbitrage.
pub fn na_check_payoffs(probs: &[f64], labels: Vec<String>, gens: &[&[f64]]) -> Result<NaVerdict> {
    let atoms = probs.len();
    let m = gens.len();
    if let Some(g) = gens.iter().find(|g| g.len() != atoms) {
        return Err(Error::LengthMismatch { expected: atoms, got: g.len() });
    }
    if m == 0 {
        let q = probs.to_vec();
        return Ok(NaVerdict::NoArbitrage { density: vec![1.0; atoms], q });
    }
    let nv = atoms + 2 * m;
    let mut obj = vec![0.0; nv];
    obj[atoms..].iter_mut().for_each(|c| *c = 1.0);
    let mut lp = LinearProgram::minimize(obj);
    for (j, g) in gens.iter().enumerate() {
        let mut row = vec![0.0; nv];
        row[..atoms].copy_from_slice(g);
        row[atoms + j] = -1.0;
        row[atoms + m + j] = 1.0;
        lp.add_constraint(row, Relation::Eq, -g.iter().sum::<f64>());
    }
    let sol = match lp.solve()? {
        LpOutcome::Optimal(s) => s,
        other => return Err(Error::Solver(format!("arbitrage dual not optimal: {other:?}"))),
    };
    let scale = scale_of(gens) * atoms as f64;
    if sol.objective <= LP_TOL * scale {
        let w: Vec<f64> = sol.x[..atoms].iter().map(|y| 1.0 + y).collect();
        let total: f64 = w.iter().sum();
        let q: Vec<f64> = w.iter().map(|x| x / total).collect();
        let density = q.iter().zip(probs).map(|(q, p)| q / p).collect();
        return Ok(NaVerdict::NoArbitrage { q, density });
    }
    for sign in [-1.0, 1.0] {
        let theta: Vec<f64> = sol.duals.iter().map(|d| sign * d).collect();
        let cert = ArbitrageCertificate::build(labels.clone(), theta, gens, probs);
        if cert.min_payoff >= -LP_TOL * scale && cert.gain_prob > 0.0 {
            return Ok(NaVerdict::Arbitrage(clean(cert, gens, probs)));
        }
    }
    Err(Error::Solver("arbitrage detected but no certificate could be recovered from the duals".into()))
}

/// Clips round-off negatives of order `LP_TOL` to zero in the certificate.
fn clean(mut cert: ArbitrageCertificate, gens: &[&[f64]], probs: &[f64]) -> ArbitrageCertificate {
    if cert.min_payoff < 0.0 {
        cert = ArbitrageCertificate::build(cert.labels, cert.theta, gens, probs);
        for x in &mut cert.payoff {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        cert.min_payoff = cert.payoff.iter().copied().fold(f64::INFINITY, f64::min);
    }
    cert
}

fn asset_refs(assets: &[AssetSpec]) -> (Vec<String>, Vec<&[f64]>) {
    (assets.iter().map(|a| a.label.clone()).collect(), assets.iter().map(|a| a.payoff.as_slice()).collect())
}

/// Arbitrage test for the small market on `subset` (indices into the
/// market's assets).
pub fn na_check(market: &OnePeriodMarket, subset: &[usize]) -> Result<NaVerdict> {
    if let Some(j) = subset.iter().find(|j| **j >= market.num_assets()) {
        return Err(Error::Precondition(format!("asset {j} outside market of {}", market.num_assets())));
    }
    let labels = subset.iter().map(|j| market.assets()[*j].label.clone()).collect();
    let gens: Vec<&[f64]> = subset.iter().map(|j| market.payoff(*j)).collect();
    na_check_payoffs(market.probs(), labels, &gens)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetVerdict {
    pub assets: Vec<usize>,
    pub verdict: NaVerdict,
}

/// Arbitrage test on every nonempty asset subset, or on the full set only
/// when there are more than [`SUBSET_GUARD`] assets.
pub fn na_small(market: &OnePeriodMarket) -> Result<Vec<SubsetVerdict>> {
    let n = market.num_assets();
    let subsets: Vec<Vec<usize>> = if n <= SUBSET_GUARD {
        (1usize..1 << n).map(|mask| (0..n).filter(|j| mask >> j & 1 == 1).collect()).collect()
    } else {
        vec![(0..n).collect()]
    };
    subsets
        .into_par_iter()
        .map(|assets| Ok(SubsetVerdict { verdict: na_check(market, &assets)?, assets }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosureReport {
    pub small: NaVerdict,
    pub augmented: NaVerdict,
    /// Label of the limit candidate carrying the arbitrage, if any.
    pub witness: Option<String>,
    pub fails: bool,
}

/// Arbitrage test with the limit candidates added as extra generators.
pub fn na_closure_check(market: &OnePeriodMarket, candidates: &[AssetSpec]) -> Result<ClosureReport> {
    let (labels, gens) = asset_refs(market.assets());
    let small = na_check_payoffs(market.probs(), labels.clone(), &gens)?;
    let all: Vec<AssetSpec> = market.assets().iter().chain(candidates).cloned().collect();
    let (labels, gens) = asset_refs(&all);
    let augmented = na_check_payoffs(market.probs(), labels, &gens)?;
    let fails = !augmented.holds();
    let witness = match (&small, &augmented) {
        (NaVerdict::NoArbitrage { .. }, NaVerdict::Arbitrage(c)) => {
            let k = market.num_assets();
            c.theta[k..]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(i, _)| candidates[i].label.clone())
        }
        _ => None,
    };
    Ok(ClosureReport { small, augmented, witness, fails })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NupbrPoint {
    pub c: f64,
    /// Best `P[X_1 >= c]` found over 1-admissible positions.
    pub prob: f64,
    pub theta: Vec<f64>,
    /// False for heuristic values, which are lower bounds.
    pub exact: bool,
}

/// Scaled arbitrage: `k * theta` stays 1-admissible and exceeds any level
/// with probability `gain_prob` as `k` grows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aa1Witness {
    pub theta: Vec<f64>,
    pub gain_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NupbrProfile {
    pub points: Vec<NupbrPoint>,
    /// Whether 1-admissible terminal wealths are bounded; on a finite space
    /// this fails exactly when a recession direction with nonzero payoff
    /// exists.
    pub bounded: bool,
    pub aa1: Option<Aa1Witness>,
}

fn success_feasible(gens: &[&[f64]], c: f64, support: &[usize]) -> Result<Option<Vec<f64>>> {
    let m = gens.len();
    let atoms = gens[0].len();
    let mut lp = LinearProgram::feasibility(m);
    lp.set_all_free();
    for a in 0..atoms {
        let row: Vec<f64> = gens.iter().map(|g| g[a]).collect();
        let floor = if support.contains(&a) { c } else { -1.0 };
        lp.add_constraint(row, Relation::Ge, floor);
    }
    Ok(lp.solve()?.optimal().map(|s| s.x.clone()))
}

fn success_exact(gens: &[&[f64]], probs: &[f64], c: f64) -> Result<NupbrPoint> {
    let atoms = probs.len();
    let mut masks: Vec<(f64, usize)> = (0usize..1 << atoms)
        .map(|mask| ((0..atoms).filter(|a| mask >> a & 1 == 1).fold(0.0, |s, a| s + probs[a]), mask))
        .collect();
    masks.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    for (prob, mask) in masks {
        let support: Vec<usize> = (0..atoms).filter(|a| mask >> a & 1 == 1).collect();
        if let Some(theta) = success_feasible(gens, c, &support)? {
            return Ok(NupbrPoint { c, prob, theta, exact: true });
        }
    }
    Err(Error::Solver("no 1-admissible position found; theta = 0 should always be feasible".into()))
}

/// LP relaxation: `z_a` in `[0, 1]` with `X_a >= -1 + (c + 1) z_a`,
/// maximizing `sum p_a z_a`, then rounding to the atoms where `X_a >= c`.
fn success_relaxed(gens: &[&[f64]], probs: &[f64], c: f64) -> Result<NupbrPoint> {
    let m = gens.len();
    let atoms = probs.len();
    let nv = m + atoms;
    let mut obj = vec![0.0; nv];
    obj[m..].copy_from_slice(probs);
    let mut lp = LinearProgram::maximize(obj);
    for j in 0..m {
        lp.set_free(j);
    }
    for a in 0..atoms {
        let mut row = vec![0.0; nv];
        for (j, g) in gens.iter().enumerate() {
            row[j] = g[a];
        }
        row[m + a] = -(c + 1.0);
        lp.add_constraint(row, Relation::Ge, -1.0);
        let mut cap = vec![0.0; nv];
        cap[m + a] = 1.0;
        lp.add_constraint(cap, Relation::Le, 1.0);
    }
    let theta = match lp.solve()? {
        LpOutcome::Optimal(s) => s.x[..m].to_vec(),
        // Unbounded cannot happen (objective <= 1); keep theta = 0 otherwise.
        _ => vec![0.0; m],
    };
    let relaxed = score(gens, probs, c, theta);
    let best = single_asset_candidates(gens, probs, c);
    Ok(if relaxed.prob >= best.prob { relaxed } else { best })
}

fn score(gens: &[&[f64]], probs: &[f64], c: f64, theta: Vec<f64>) -> NupbrPoint {
    let payoff = combine(gens, &theta);
    let tol = LP_TOL * scale_of(gens);
    let admissible = payoff.iter().all(|x| *x >= -1.0 - tol);
    let prob = if admissible { success_mass(&payoff, probs, c - tol) } else { 0.0 };
    let theta = if admissible { theta } else { vec![0.0; gens.len()] };
    NupbrPoint { c, prob, theta, exact: false }
}

fn success_mass(payoff: &[f64], probs: &[f64], level: f64) -> f64 {
    payoff.iter().zip(probs).filter(|(x, _)| **x >= level).fold(0.0, |s, (_, p)| s + p)
}

/// Best of `theta = +-e_j` scaled to the largest 1-admissible size.
fn single_asset_candidates(gens: &[&[f64]], probs: &[f64], c: f64) -> NupbrPoint {
    let m = gens.len();
    let mut best = score(gens, probs, c, vec![0.0; m]);
    for (j, g) in gens.iter().enumerate() {
        for sign in [1.0, -1.0] {
            let worst = g.iter().map(|x| sign * x).fold(f64::INFINITY, f64::min);
            let size = if worst < 0.0 { 1.0 / -worst } else if g.iter().any(|x| sign * x > 0.0) { 1e12 } else { continue };
            let mut theta = vec![0.0; m];
            theta[j] = sign * size;
            let cand = score(gens, probs, c, theta);
            if cand.prob > best.prob {
                best = cand;
            }
        }
    }
    best
}

/// `c -> max P[X_1 >= c]` over positions with `X_1 >= -1` on every atom.
pub fn nupbr_scan(market: &OnePeriodMarket, c_list: &[f64]) -> Result<NupbrProfile> {
    if c_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("c-list must be strictly increasing".into()));
    }
    let (labels, gens) = asset_refs(market.assets());
    let probs = market.probs();
    let exact = probs.len() <= SUPPORT_GUARD;
    let mut points: Vec<NupbrPoint> = c_list
        .par_iter()
        .map(|c| {
            if exact {
                success_exact(&gens, probs, *c)
            } else if probs.len() <= RELAXATION_GUARD {
                success_relaxed(&gens, probs, *c)
            } else {
                Ok(single_asset_candidates(&gens, probs, *c))
            }
        })
        .collect::<Result<_>>()?;
    // A position reaching level c' also reaches every c < c'.
    for i in (0..points.len().saturating_sub(1)).rev() {
        if points[i + 1].prob > points[i].prob {
            let better = points[i + 1].clone();
            points[i].prob = better.prob;
            points[i].theta = better.theta;
        }
    }
    let recession = na_check_payoffs(probs, labels, &gens)?;
    let aa1 = recession.certificate().map(|c| Aa1Witness { theta: c.theta.clone(), gain_prob: c.gain_prob });
    Ok(NupbrProfile { points, bounded: aa1.is_none(), aa1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolytopeMode {
    /// `E_q[g] <= 0` for every generator (separating measures).
    Inequality,
    /// `E_q[g] = 0` for every generator (martingale measures).
    Equality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FloorKind {
    /// `q >= delta p`.
    Lower,
    /// `delta p <= q <= p / delta`.
    Band,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum PolytopeStatus {
    Feasible { q: Vec<f64> },
    Infeasible { farkas: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurePolytope {
    pub atoms: usize,
    pub mode: PolytopeMode,
    pub floor: FloorKind,
    pub delta: f64,
    pub status: PolytopeStatus,
    /// Largest feasible floor, by bisection.
    pub delta_star: f64,
    /// Largest feasible floor from a single LP with `delta` as a variable;
    /// only available for [`FloorKind::Lower`].
    pub delta_star_lp: Option<f64>,
}

impl MeasurePolytope {
    pub fn witness(&self) -> Option<&[f64]> {
        match &self.status {
            PolytopeStatus::Feasible { q } => Some(q),
            PolytopeStatus::Infeasible { .. } => None,
        }
    }
}

/// Feasibility of the polytope at a fixed floor. Variables are
/// `r = q - delta p >= 0`.
pub fn polytope_at(probs: &[f64], gens: &[&[f64]], delta: f64, mode: PolytopeMode, floor: FloorKind) -> Result<PolytopeStatus> {
    let atoms = probs.len();
    if let Some(g) = gens.iter().find(|g| g.len() != atoms) {
        return Err(Error::LengthMismatch { expected: atoms, got: g.len() });
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Precondition(format!("floor must lie in [0, 1], got {delta}")));
    }
    let rel = match mode {
        PolytopeMode::Inequality => Relation::Le,
        PolytopeMode::Equality => Relation::Eq,
    };
    let mut lp = LinearProgram::feasibility(atoms);
    for g in gens {
        let shift: f64 = g.iter().zip(probs).map(|(x, p)| x * p).sum();
        lp.add_constraint(g.to_vec(), rel, -delta * shift);
    }
    lp.add_constraint(vec![1.0; atoms], Relation::Eq, 1.0 - delta);
    if floor == FloorKind::Band && delta > 0.0 {
        for a in 0..atoms {
            let mut row = vec![0.0; atoms];
            row[a] = 1.0;
            lp.add_constraint(row, Relation::Le, probs[a] * (1.0 / delta - delta));
        }
    }
    Ok(match lp.solve()? {
        LpOutcome::Optimal(s) => {
            PolytopeStatus::Feasible { q: s.x.iter().zip(probs).map(|(r, p)| r + delta * p).collect() }
        }
        LpOutcome::Infeasible { farkas } => PolytopeStatus::Infeasible { farkas },
        LpOutcome::Unbounded { .. } => return Err(Error::Solver("feasibility LP reported unbounded".into())),
    })
}

/// `max delta` with `q = r + delta p`, `r >= 0`, as one LP.
pub fn lower_floor_lp(probs: &[f64], gens: &[&[f64]], mode: PolytopeMode) -> Result<Option<f64>> {
    let atoms = probs.len();
    let mut obj = vec![0.0; atoms + 1];
    obj[atoms] = 1.0;
    let mut lp = LinearProgram::maximize(obj);
    let rel = match mode {
        PolytopeMode::Inequality => Relation::Le,
        PolytopeMode::Equality => Relation::Eq,
    };
    for g in gens {
        let mut row = g.to_vec();
        row.push(g.iter().zip(probs).map(|(x, p)| x * p).sum());
        lp.add_constraint(row, rel, 0.0);
    }
    let mut mass = vec![1.0; atoms + 1];
    mass[atoms] = 1.0;
    lp.add_constraint(mass, Relation::Eq, 1.0);
    Ok(lp.solve()?.optimal().map(|s| s.objective))
}

/// Largest feasible floor by bisection on `[0, 1]`; 0 if even `delta = 0`
/// is infeasible. Stops when the bracket is narrower than `tol`.
pub fn floor_bisect(probs: &[f64], gens: &[&[f64]], mode: PolytopeMode, floor: FloorKind, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("bisection tolerance must be positive, got {tol}")));
    }
    let feasible = |d: f64| -> Result<bool> { Ok(matches!(polytope_at(probs, gens, d, mode, floor)?, PolytopeStatus::Feasible { .. })) };
    if feasible(1.0)? {
        return Ok(1.0);
    }
    if !feasible(0.0)? {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Separating (inequality) or martingale (equality) measures with floor
/// `delta`, together with the largest feasible floor.
pub fn separating_polytope(
    probs: &[f64],
    gens: &[&[f64]],
    delta: f64,
    mode: PolytopeMode,
    floor: FloorKind,
    bisect_tol: f64,
) -> Result<MeasurePolytope> {
    if gens.is_empty() {
        return Err(Error::Precondition("separating polytope needs at least one generator".into()));
    }
    let status = polytope_at(probs, gens, delta, mode, floor)?;
    let delta_star = floor_bisect(probs, gens, mode, floor, bisect_tol)?;
    let delta_star_lp = match floor {
        FloorKind::Lower => Some(lower_floor_lp(probs, gens, mode)?.unwrap_or(0.0)),
        FloorKind::Band => None,
    };
    Ok(MeasurePolytope { atoms: probs.len(), mode, floor, delta, status, delta_star, delta_star_lp })
}

/// Polytope over a market's own assets.
pub fn market_polytope(market: &OnePeriodMarket, delta: f64, mode: PolytopeMode, floor: FloorKind, bisect_tol: f64) -> Result<MeasurePolytope> {
    let (_, gens) = asset_refs(market.assets());
    separating_polytope(market.probs(), &gens, delta, mode, floor, bisect_tol)
}

// Polar and bipolar cones. The pairing is `<f, g> = E[f g] = sum_a p_a f_a g_a`.

fn check_polar_guard(probs: &[f64]) -> Result<()> {
    if probs.len() > POLAR_GUARD {
        return Err(Error::GuardExceeded(format!("polar computations limited to {POLAR_GUARD} atoms, got {}", probs.len())));
    }
    Ok(())
}

fn pairing(probs: &[f64], f: &[f64], g: &[f64]) -> f64 {
    probs.iter().zip(f).zip(g).map(|((p, x), y)| p * x * y).sum()
}

/// Appends the negative unit vectors, so the cone contains `-L^inf_+`.
pub fn with_negative_orthant(gens: &[Vec<f64>], atoms: usize) -> Vec<Vec<f64>> {
    let mut out = gens.to_vec();
    for a in 0..atoms {
        let mut e = vec![0.0; atoms];
        e[a] = -1.0;
        out.push(e);
    }
    out
}

/// `g` in the polar cone: `E[f g] <= 0` for every generator `f`.
pub fn polar_cone_membership(probs: &[f64], gens: &[Vec<f64>], g: &[f64]) -> Result<bool> {
    check_polar_guard(probs)?;
    let scale = gens.iter().flatten().chain(g).fold(1.0f64, |m, x| m.max(x.abs()));
    Ok(gens.iter().all(|f| pairing(probs, f, g) <= LP_TOL * scale * scale))
}

/// `x = sum_i lambda_i f_i` with `lambda >= 0`.
pub fn cone_hull_membership(gens: &[Vec<f64>], x: &[f64]) -> Result<bool> {
    if gens.is_empty() {
        return Ok(x.iter().all(|v| v.abs() <= LP_TOL));
    }
    let mut lp = LinearProgram::feasibility(gens.len());
    for a in 0..x.len() {
        lp.add_constraint(gens.iter().map(|f| f[a]).collect(), Relation::Eq, x[a]);
    }
    Ok(lp.solve()?.is_feasible())
}

/// `x` in the bipolar: `max E[x g]` over `g` in the polar with `|g| <= 1`
/// is zero.
pub fn bipolar_membership(probs: &[f64], gens: &[Vec<f64>], x: &[f64]) -> Result<bool> {
    check_polar_guard(probs)?;
    let atoms = probs.len();
    let obj: Vec<f64> = probs.iter().zip(x).map(|(p, v)| p * v).collect();
    let mut lp = LinearProgram::maximize(obj);
    lp.set_all_free();
    for f in gens {
        lp.add_constraint(probs.iter().zip(f).map(|(p, v)| p * v).collect(), Relation::Le, 0.0);
    }
    for a in 0..atoms {
        let mut row = vec![0.0; atoms];
        row[a] = 1.0;
        lp.add_constraint(row.clone(), Relation::Le, 1.0);
        lp.add_constraint(row, Relation::Ge, -1.0);
    }
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    match lp.solve()? {
        LpOutcome::Optimal(s) => Ok(s.objective <= LP_TOL * scale),
        other => Err(Error::Solver(format!("bipolar LP not optimal: {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BipolarReport {
    pub total: usize,
    pub agree: usize,
    /// Test points where the two memberships differ.
    pub disagreements: Vec<usize>,
    /// Points found inside the cone hull.
    pub inside: usize,
}

/// Compares bipolar membership with cone-hull membership on each point.
pub fn bipolar_check(probs: &[f64], gens: &[Vec<f64>], points: &[Vec<f64>]) -> Result<BipolarReport> {
    check_polar_guard(probs)?;
    let results: Vec<(bool, bool)> = points
        .par_iter()
        .map(|x| Ok((bipolar_membership(probs, gens, x)?, cone_hull_membership(gens, x)?)))
        .collect::<Result<_>>()?;
    let disagreements: Vec<usize> = results.iter().enumerate().filter(|(_, (a, b))| a != b).map(|(i, _)| i).collect();
    Ok(BipolarReport {
        total: points.len(),
        agree: points.len() - disagreements.len(),
        inside: results.iter().filter(|(_, b)| *b).count(),
        disagreements,
    })
}

/// Vertices of `{q >= 0, sum q = 1, E_q-pairing with each generator <= 0}`
/// written as densities `q_a / p_a`, so that their cone is the polar cone
/// once the negative orthant is among the generators.
pub fn separating_vertices(probs: &[f64], gens: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_polar_guard(probs)?;
    let n = probs.len();
    // Inequalities a . q <= 0 in measure coordinates.
    let mut ineq: Vec<Vec<f64>> = gens.iter().map(|f| f.clone()).collect();
    for a in 0..n {
        let mut e = vec![0.0; n];
        e[a] = -1.0;
        if !ineq.contains(&e) {
            ineq.push(e);
        }
    }
    let k = ineq.len();
    let choose = n.saturating_sub(1);
    if binomial(k, choose) > VERTEX_COMBINATION_GUARD {
        return Err(Error::GuardExceeded(format!("vertex enumeration over C({k}, {choose}) active sets")));
    }
    let scale = ineq.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    for active in combinations(k, choose) {
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for (r, i) in active.iter().enumerate() {
            for c in 0..n {
                m[(r, c)] = ineq[*i][c];
            }
        }
        for c in 0..n {
            m[(n - 1, c)] = 1.0;
        }
        rhs[n - 1] = 1.0;
        let Some(q) = m.lu().solve(&rhs) else { continue };
        if q.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let ok = ineq.iter().all(|f| f.iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>() <= 1e-9 * scale);
        if !ok {
            continue;
        }
        let density: Vec<f64> = q.iter().zip(probs).map(|(q, p)| q.max(0.0) / p).collect();
        if !vertices.iter().any(|v| v.iter().zip(&density).all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs()))) {
            vertices.push(density);
        }
    }
    Ok(vertices)
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparatingWitness {
    /// Measure weights per atom.
    pub q: Vec<f64>,
    /// `min_a q_a / p_a`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailingLeg {
    pub leg: String,
    pub certificate: Option<ArbitrageCertificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoArbitrageReport {
    pub market: String,
    pub na_small: Vec<SubsetVerdict>,
    pub na_small_holds: bool,
    pub na_closure: ClosureReport,
    pub nupbr: NupbrProfile,
    pub na: bool,
    pub naflvr: bool,
    pub witness: Option<SeparatingWitness>,
    /// Largest two-sided floor of the martingale polytope, when computed.
    pub martingale_band_floor: Option<f64>,
    pub failing: Option<FailingLeg>,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub c_list: Vec<f64>,
    pub bisect_tol: f64,
    /// Generators used for the separating witness; defaults to `+-` each
    /// asset, i.e. martingale measures.
    pub witness_generators: Option<Vec<Vec<f64>>>,
    /// Compute the two-sided martingale floor when the market has at most
    /// this many atoms.
    pub band_floor_atoms: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { c_list: vec![0.5, 1.0, 2.0, 5.0, 10.0], bisect_tol: 1e-6, witness_generators: None, band_floor_atoms: 256 }
    }
}

/// Runs every leg and combines them: NAFLVR = NA-small, NA-closure and NUPBR.
pub fn naflvr_report(market: &OnePeriodMarket, opts: &ReportOptions) -> Result<NoArbitrageReport> {
    let na_small = na_small(market)?;
    let na_small_holds = na_small.iter().all(|s| s.verdict.holds());
    let na_closure = na_closure_check(market, market.limit_candidates())?;
    let nupbr = nupbr_scan(market, &opts.c_list)?;
    let na = na_small_holds && !na_closure.fails;
    let naflvr = na && nupbr.bounded;

    let mut reasons = Vec::new();
    let mut failing = None;
    match na_small.iter().find(|s| !s.verdict.holds()) {
        Some(s) => {
            reasons.push(format!("NA-small fails on assets {:?}", s.assets));
            failing = Some(FailingLeg { leg: "na-small".into(), certificate: s.verdict.certificate().cloned() });
        }
        None => reasons.push(format!("NA-small holds on {} subsets", na_small.len())),
    }
    if na_closure.fails {
        let w = na_closure.witness.clone().unwrap_or_else(|| "small market".into());
        reasons.push(format!("NA-in-closure fails, witness {w}"));
        if failing.is_none() {
            failing = Some(FailingLeg { leg: "na-closure".into(), certificate: na_closure.augmented.certificate().cloned() });
        }
    } else {
        reasons.push(format!("NA-in-closure holds with {} limit candidates", market.limit_candidates().len()));
    }
    if nupbr.bounded {
        reasons.push("NUPBR holds: 1-admissible wealths are bounded".into());
    } else {
        reasons.push("NUPBR fails: scaled arbitrage gives an AA1 sequence".into());
        if failing.is_none() {
            failing = Some(FailingLeg { leg: "nupbr".into(), certificate: None });
        }
    }

    let witness = if naflvr {
        let gens_owned: Vec<Vec<f64>> = match &opts.witness_generators {
            Some(g) => g.clone(),
            None => market.assets().iter().flat_map(|a| [a.payoff.clone(), a.payoff.iter().map(|x| -x).collect()]).collect(),
        };
        let gens: Vec<&[f64]> = gens_owned.iter().map(|g| g.as_slice()).collect();
        let best = lower_floor_lp(market.probs(), &gens, PolytopeMode::Inequality)?.unwrap_or(0.0);
        if best > 0.0 {
            let d = best.min(1.0);
            match polytope_at(market.probs(), &gens, d * (1.0 - 1e-9), PolytopeMode::Inequality, FloorKind::Lower)? {
                PolytopeStatus::Feasible { q } => {
                    let delta = q.iter().zip(market.probs()).map(|(q, p)| q / p).fold(f64::INFINITY, f64::min);
                    reasons.push(format!("separating density with floor {delta:.6}"));
                    Some(SeparatingWitness { q, delta })
                }
                PolytopeStatus::Infeasible { .. } => None,
            }
        } else {
            None
        }
    } else {
        None
    };
    if naflvr && witness.is_none() {
        reasons.push("no separating density with a positive floor was found".into());
    }
    let martingale_band_floor = if market.num_atoms() <= opts.band_floor_atoms {
        let (_, gens) = asset_refs(market.assets());
        Some(floor_bisect(market.probs(), &gens, PolytopeMode::Equality, FloorKind::Band, opts.bisect_tol)?)
    } else {
        None
    };
    Ok(NoArbitrageReport {
        market: market.name().to_string(),
        na_small,
        na_small_holds,
        na_closure,
        nupbr,
        na,
        naflvr,
        witness,
        martingale_band_floor,
        failing,
        reasons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markets::{builtin_market, random_market, BinaryLargeMarket};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn refs(m: &OnePeriodMarket) -> Vec<&[f64]> {
        m.assets().iter().map(|a| a.payoff.as_slice()).collect()
    }

    #[test]
    fn na_examples() {
        let coin = builtin_market("fair-coin").unwrap();
        match na_check(&coin, &[0]).unwrap() {
            NaVerdict::NoArbitrage { q, .. } => {
                assert!((q[0] - 0.5).abs() < 1e-12 && (q[1] - 0.5).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let dom = builtin_market("dominant").unwrap();
        let cert = na_check(&dom, &[0]).unwrap().certificate().cloned().unwrap();
        assert!((cert.theta[0] - 1.0).abs() < 1e-12);
        assert!((cert.min_payoff - 1.0).abs() < 1e-12);
        assert!(cert.is_valid());
    }

    #[test]
    fn binary_subsets_have_no_arbitrage() {
        let m = builtin_market("binary-3").unwrap();
        let all = na_small(&m).unwrap();
        assert_eq!(all.len(), 7);
        assert!(all.iter().all(|s| s.verdict.holds()));
    }

    #[test]
    fn closure_examples() {
        let b = BinaryLargeMarket::geometric(4, 0.5).unwrap().to_market().unwrap();
        let r = na_closure_check(&b, b.limit_candidates()).unwrap();
        assert!(r.fails);
        assert_eq!(r.witness.as_deref(), Some("J"));
        assert!(r.augmented.certificate().unwrap().is_valid());
        let none = na_closure_check(&b, &[]).unwrap();
        assert!(!none.fails);
        let zero = AssetSpec { label: "Z".into(), payoff: vec![0.0; b.num_atoms()] };
        assert!(!na_closure_check(&b, &[zero]).unwrap().fails);
    }

    #[test]
    fn nupbr_examples() {
        let coin = builtin_market("fair-coin").unwrap();
        let p = nupbr_scan(&coin, &[0.5, 1.0, 1.5, 3.0]).unwrap();
        assert!(p.bounded);
        assert_eq!(p.points[2].prob, 0.0);
        assert_eq!(p.points[3].prob, 0.0);
        assert_eq!(p.points[1].prob, 0.5);
        let b = builtin_market("binary-3").unwrap();
        let p = nupbr_scan(&b, &[1.0, 2.0, 3.5, 5.0]).unwrap();
        assert!(p.bounded);
        assert!(p.points.iter().skip(1).all(|pt| pt.prob == 0.0));
        let dom = builtin_market("dominant").unwrap();
        let p = nupbr_scan(&dom, &[1.0, 100.0]).unwrap();
        assert!(!p.bounded);
        assert_eq!(p.points[1].prob, 1.0);
        assert!(nupbr_scan(&dom, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn nupbr_relaxation_is_a_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let m = random_market(&mut rng, 6, 3);
            let gens = refs(&m);
            for c in [0.5, 1.0, 3.0] {
                let exact = success_exact(&gens, m.probs(), c).unwrap();
                let relaxed = success_relaxed(&gens, m.probs(), c).unwrap();
                assert!(relaxed.prob <= exact.prob + 1e-12);
            }
        }
    }

    #[test]
    fn polytope_examples() {
        let coin = builtin_market("fair-coin").unwrap();
        let poly = market_polytope(&coin, 0.5, PolytopeMode::Equality, FloorKind::Lower, 1e-9).unwrap();
        assert_eq!(poly.witness().unwrap(), &[0.5, 0.5]);
        assert!((poly.delta_star - 1.0).abs() < 1e-9);
        assert_eq!(poly.delta_star_lp, Some(1.0));
        let dom = builtin_market("dominant").unwrap();
        let poly = market_polytope(&dom, 0.0, PolytopeMode::Equality, FloorKind::Lower, 1e-9).unwrap();
        assert!(matches!(poly.status, PolytopeStatus::Infeasible { .. }));
        assert_eq!(poly.delta_star, 0.0);
        assert!(separating_polytope(&[1.0], &[], 0.0, PolytopeMode::Equality, FloorKind::Lower, 1e-9).is_err());
    }

    #[test]
    fn binary_marginals_are_forced_to_half() {
        let b = BinaryLargeMarket::geometric(3, 0.5).unwrap();
        let m = b.to_market().unwrap();
        let poly = market_polytope(&m, 0.0, PolytopeMode::Equality, FloorKind::Lower, 1e-9).unwrap();
        let q = poly.witness().unwrap();
        for n in 1..=3 {
            let down: f64 = (0..q.len()).filter(|a| b.sign(*a, n) < 0.0).map(|a| q[a]).sum();
            assert!((down - 0.5).abs() < 1e-9);
        }
        // Lower floor: limited by the heaviest up-probability, 1 / (2 (1 - p_min)).
        let expect = 1.0 / (2.0 * (1.0 - 0.125));
        assert!((poly.delta_star_lp.unwrap() - expect).abs() < 1e-9);
        assert!((poly.delta_star - expect).abs() < 1e-8);
    }

    #[test]
    fn bisection_agrees_with_direct_lp() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..40 {
            let m = random_market(&mut rng, 6, 3);
            let gens = refs(&m);
            for mode in [PolytopeMode::Equality, PolytopeMode::Inequality] {
                let bis = floor_bisect(m.probs(), &gens, mode, FloorKind::Lower, 1e-10).unwrap();
                let lp = lower_floor_lp(m.probs(), &gens, mode).unwrap().unwrap_or(0.0);
                assert!((bis - lp.min(1.0)).abs() < 1e-8, "{bis} vs {lp}");
            }
        }
    }

    #[test]
    fn polar_examples() {
        let probs = [0.5, 0.5];
        let gens = vec![vec![-1.0, 0.0]];
        assert!(polar_cone_membership(&probs, &gens, &[1.0, -5.0]).unwrap());
        assert!(!polar_cone_membership(&probs, &gens, &[-1.0, 0.0]).unwrap());
        let f = vec![1.0, -2.0];
        let gens = vec![f.clone(), f.iter().map(|x| -x).collect()];
        assert!(polar_cone_membership(&probs, &gens, &[2.0, 1.0]).unwrap());
        assert!(!polar_cone_membership(&probs, &gens, &[1.0, 1.0]).unwrap());
        assert!(polar_cone_membership(&[0.1; 13], &[], &[0.0; 13]).is_err());
    }

    #[test]
    fn bipolar_agrees_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let probs = [0.1, 0.2, 0.3, 0.4];
        let gens = with_negative_orthant(&[vec![1.0, -1.0, 0.5, -0.25], vec![-0.5, 1.0, -1.0, 0.75]], 4);
        let points: Vec<Vec<f64>> = (0..100).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let report = bipolar_check(&probs, &gens, &points).unwrap();
        assert_eq!(report.agree, 100);
        assert!(report.inside > 0 && report.inside < 100);
    }

    #[test]
    fn vertex_cone_matches_polar() {
        let probs = [0.25, 0.25, 0.5];
        let gens = with_negative_orthant(&[vec![1.0, -1.0, 0.0]], 3);
        let vertices = separating_vertices(&probs, &gens).unwrap();
        assert_eq!(vertices.len(), 3);
        for v in &vertices {
            assert!(polar_cone_membership(&probs, &gens, v).unwrap());
        }
        assert!(cone_hull_membership(&vertices, &[1.0, 1.0, 0.0]).unwrap());
        assert!(!cone_hull_membership(&vertices, &[2.0, 1.0, 0.0]).unwrap());
    }

    #[test]
    fn combinations_enumerate_all() {
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(binomial(12, 5), 792);
    }

    #[test]
    fn report_examples() {
        let coin = builtin_market("fair-coin").unwrap();
        let r = naflvr_report(&coin, &ReportOptions::default()).unwrap();
        assert!(r.naflvr);
        let w = r.witness.unwrap();
        assert!((w.q[0] - 0.5).abs() < 1e-9);
        let b = builtin_market("binary-3").unwrap();
        let r = naflvr_report(&b, &ReportOptions::default()).unwrap();
        assert!(r.na_small_holds && r.nupbr.bounded);
        assert!(!r.naflvr);
        assert_eq!(r.failing.unwrap().leg, "na-closure");
        let dom = builtin_market("dominant").unwrap();
        let r = naflvr_report(&dom, &ReportOptions::default()).unwrap();
        assert_eq!(r.failing.unwrap().leg, "na-small");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn na_dual_is_feasible_for_polytope(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_market(&mut rng, 6, 3);
            let gens = refs(&m);
            match na_check(&m, &(0..m.num_assets()).collect::<Vec<_>>()).unwrap() {
                NaVerdict::NoArbitrage { q, .. } => {
                    prop_assert!(q.iter().all(|x| *x > 0.0));
                    prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    for g in &gens {
                        let e: f64 = g.iter().zip(&q).map(|(a, b)| a * b).sum();
                        prop_assert!(e.abs() < 1e-9);
                    }
                    let st = polytope_at(m.probs(), &gens, 0.0, PolytopeMode::Inequality, FloorKind::Lower).unwrap();
                    let feasible = matches!(st, PolytopeStatus::Feasible { .. });
                    prop_assert!(feasible);
                }
                NaVerdict::Arbitrage(c) => prop_assert!(c.is_valid()),
            }
        }

        #[test]
        fn nupbr_invariant_under_rescaling(seed in 0u64..10_000, s in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_market(&mut rng, 5, 2);
            let scaled_assets = m.assets().iter().map(|a| AssetSpec { label: a.label.clone(), payoff: a.payoff.iter().map(|x| x * s).collect() }).collect();
            let scaled = OnePeriodMarket::new("scaled".into(), m.probs().to_vec(), scaled_assets, Vec::new()).unwrap();
            let cs = [0.5, 1.0, 2.0];
            let a = nupbr_scan(&m, &cs).unwrap();
            let b = nupbr_scan(&scaled, &cs).unwrap();
            for (x, y) in a.points.iter().zip(&b.points) {
                prop_assert!((x.prob - y.prob).abs() < 1e-12);
            }
            for w in a.points.windows(2) {
                prop_assert!(w[1].prob <= w[0].prob);
            }
        }

        #[test]
        fn floor_monotone_in_generators(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_market(&mut rng, 6, 3);
            let gens = refs(&m);
            let mut last = f64::INFINITY;
            for k in 1..=gens.len() {
                let d = lower_floor_lp(m.probs(), &gens[..k], PolytopeMode::Inequality).unwrap().unwrap_or(0.0);
                prop_assert!(d <= last + 1e-9);
                last = d;
            }
        }
    }
}
