//! Admissible wealth processes and the constructive operations on them:
//! concatenation, switching, drawdown exploitation, truncation
//! decomposition and supermartingale deflator checks.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probspace::ScenarioTree;
use crate::process::{stochastic_integral, AdaptedProcess, PredictableStrategy, StoppingTime};

/// Tolerance used when re-checking lower bounds that hold by construction.
pub const ADMISSIBILITY_TOL: f64 = 1e-12;

/// Labels of the traded assets. Any finite subset is a valid small market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetUniverse {
    labels: Vec<String>,
}

impl AssetUniverse {
    pub fn new(labels: Vec<String>) -> Self {
        Self { labels }
    }

    /// Assets labelled `1..=n`.
    pub fn numbered(n: usize) -> Self {
        Self::new((1..=n).map(|i| i.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Result<BTreeSet<usize>> {
        match indices.iter().find(|i| **i >= self.len()) {
            Some(i) => Err(Error::Precondition(format!("asset index {i} outside universe of {}", self.len()))),
            None => Ok(indices.iter().copied().collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum WealthProvenance {
    SmallMarket,
    /// Limit candidate of an Emery-Cauchy sequence, certified up to `residual`.
    EmeryLimit { residual: f64 },
}

/// Wealth of a strategy on a finite asset subset, starting at zero.
#[derive(Debug, Clone)]
pub struct WealthProcess {
    assets: BTreeSet<usize>,
    positions: Vec<(usize, PredictableStrategy)>,
    process: AdaptedProcess,
    level: f64,
    provenance: WealthProvenance,
}

fn check_starts_at_zero(x: &AdaptedProcess) -> Result<()> {
    if x.initial() != 0.0 {
        return Err(Error::Precondition(format!("wealth must start at 0, got {}", x.initial())));
    }
    Ok(())
}

impl WealthProcess {
    /// `sum_a K_a . S_a` over the given positions. `prices[a]` is asset `a`.
    pub fn from_positions(prices: &[AdaptedProcess], positions: Vec<(usize, PredictableStrategy)>) -> Result<Self> {
        let tree = match (prices.first(), positions.first()) {
            (Some(p), _) => p.tree().clone(),
            (None, Some((_, k))) => k.tree().clone(),
            (None, None) => return Err(Error::Precondition("no assets given".into())),
        };
        let mut process = AdaptedProcess::zeros(tree);
        for (a, k) in &positions {
            let s = prices
                .get(*a)
                .ok_or_else(|| Error::Precondition(format!("no price process for asset {a}")))?;
            process = process.add(&stochastic_integral(k, s)?)?;
        }
        let assets = positions.iter().map(|(a, _)| *a).collect();
        let level = admissibility_level(&process);
        Ok(Self { assets, positions, process, level, provenance: WealthProvenance::SmallMarket })
    }

    /// Wraps a process whose replicating positions are not tracked.
    pub fn from_process(assets: BTreeSet<usize>, process: AdaptedProcess) -> Result<Self> {
        check_starts_at_zero(&process)?;
        let level = admissibility_level(&process);
        Ok(Self { assets, positions: Vec::new(), process, level, provenance: WealthProvenance::SmallMarket })
    }

    pub fn from_emery_limit(assets: BTreeSet<usize>, process: AdaptedProcess, residual: f64) -> Result<Self> {
        let mut w = Self::from_process(assets, process)?;
        w.provenance = WealthProvenance::EmeryLimit { residual };
        Ok(w)
    }

    pub fn assets(&self) -> &BTreeSet<usize> {
        &self.assets
    }

    pub fn positions(&self) -> &[(usize, PredictableStrategy)] {
        &self.positions
    }

    pub fn process(&self) -> &AdaptedProcess {
        &self.process
    }

    pub fn tree(&self) -> &Arc<ScenarioTree> {
        self.process.tree()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.process.terminal()
    }

    /// `lambda = max(0, -min X)`.
    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn provenance(&self) -> &WealthProvenance {
        &self.provenance
    }

    pub fn is_admissible(&self, lambda: f64) -> bool {
        self.level <= lambda + ADMISSIBILITY_TOL
    }

    /// Node of the first violation of `X >= -lambda`, if any.
    pub fn first_breach(&self, lambda: f64) -> Option<usize> {
        let floor = -lambda - ADMISSIBILITY_TOL;
        self.process.values().iter().position(|v| *v < floor)
    }
}

/// `max(0, -min over nodes of X)`.
pub fn admissibility_level(x: &AdaptedProcess) -> f64 {
    (-x.min_value()).max(0.0)
}

/// Positions of `sum_i H_i . W_i` expressed in the underlying assets.
fn weighted_positions(parts: &[(&PredictableStrategy, &WealthProcess)]) -> Result<Vec<(usize, PredictableStrategy)>> {
    let mut out: Vec<(usize, PredictableStrategy)> = Vec::new();
    for (h, w) in parts {
        for (a, k) in &w.positions {
            let hk = h.mul(k)?;
            match out.iter_mut().find(|(b, _)| b == a) {
                Some((_, acc)) => *acc = acc.add(&hk)?,
                None => out.push((*a, hk)),
            }
        }
    }
    Ok(out)
}

fn has_positions(w: &WealthProcess) -> bool {
    !w.positions.is_empty() || w.process.values().iter().all(|v| *v == 0.0)
}

/// `Z = H . X + G . Y` for nonnegative `H`, `G` with `HG = 0`, required to
/// stay above -1.
pub fn concatenate(h: &PredictableStrategy, x: &WealthProcess, g: &PredictableStrategy, y: &WealthProcess) -> Result<WealthProcess> {
    for (name, k) in [("H", h), ("G", g)] {
        if let Some(node) = k.values().iter().position(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Concatenation { node, reason: format!("{name} must be finite and nonnegative") });
        }
    }
    let hg = h.mul(g)?;
    if let Some(node) = hg.values().iter().position(|v| *v != 0.0) {
        return Err(Error::Concatenation { node, reason: "HG = 0 violated".into() });
    }
    let z = x.process.integrate(h)?.add(&y.process.integrate(g)?)?;
    if let Some(node) = z.values().iter().position(|v| *v < -1.0 - ADMISSIBILITY_TOL) {
        return Err(Error::Concatenation { node, reason: format!("Z = {} < -1", z.value(node)) });
    }
    let positions = if has_positions(x) && has_positions(y) {
        weighted_positions(&[(h, x), (g, y)])?
    } else {
        Vec::new()
    };
    let assets = x.assets.union(&y.assets).copied().collect();
    let level = admissibility_level(&z);
    Ok(WealthProcess { assets, positions, process: z, level, provenance: WealthProvenance::SmallMarket })
}

/// `X = B + M + X_big` at jump threshold `C`.
#[derive(Debug, Clone)]
pub struct TruncationDecomposition {
    pub threshold: f64,
    /// Predictable part. Holds `X_0`.
    pub b: AdaptedProcess,
    pub m: AdaptedProcess,
    /// Sum of jumps with `|dX| > C`.
    pub big: AdaptedProcess,
    /// `dB` on the step out of each non-leaf node; zero at leaves.
    pub b_step: Vec<f64>,
}

impl TruncationDecomposition {
    pub fn reconstruction_error(&self, x: &AdaptedProcess) -> f64 {
        (0..x.tree().num_nodes())
            .map(|v| (self.b.value(v) + self.m.value(v) + self.big.value(v) - x.value(v)).abs())
            .fold(0.0, f64::max)
    }

    /// `max_u |E[dM | u]|`.
    pub fn martingale_residual(&self) -> f64 {
        let tree = self.m.tree();
        (0..tree.num_nodes())
            .filter(|u| !tree.is_leaf(*u))
            .map(|u| {
                tree.children(u)
                    .iter()
                    .map(|c| tree.transition_prob(*c) * (self.m.value(*c) - self.m.value(u)))
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn max_martingale_jump(&self) -> f64 {
        self.m.jumps().iter().fold(0.0, |a, j| a.max(j.abs()))
    }
}

pub fn truncation_decompose(x: &AdaptedProcess, c: f64) -> Result<TruncationDecomposition> {
    if !(c > 0.0) {
        return Err(Error::Precondition(format!("truncation threshold must be positive, got {c}")));
    }
    let tree = x.tree().clone();
    let n = tree.num_nodes();
    let jumps = x.jumps();
    let mut b_step = vec![0.0; n];
    for u in 0..n {
        b_step[u] = tree
            .children(u)
            .iter()
            .filter(|v| jumps[**v].abs() <= c)
            .map(|v| tree.transition_prob(*v) * jumps[*v])
            .sum();
    }
    let (mut b, mut m, mut big) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for v in tree.top_down() {
        match tree.parent(v) {
            None => b[v] = x.value(v),
            Some(u) => {
                let j = jumps[v];
                let (small, large) = if j.abs() > c { (0.0, j) } else { (j, 0.0) };
                b[v] = b[u] + b_step[u];
                big[v] = big[u] + large;
                m[v] = m[u] + (small - b_step[u]);
            }
        }
    }
    Ok(TruncationDecomposition {
        threshold: c,
        b: AdaptedProcess::new(tree.clone(), b)?,
        m: AdaptedProcess::new(tree.clone(), m)?,
        big: AdaptedProcess::new(tree, big)?,
        b_step,
    })
}

/// Data of the switch between two wealth processes.
#[derive(Debug, Clone)]
pub struct SwitchPlan {
    pub threshold: f64,
    pub alpha: f64,
    /// `dB = |dB^k| + |dB^l|` per non-leaf node.
    pub dominating: Vec<f64>,
    pub density_k: Vec<f64>,
    pub density_l: Vec<f64>,
    /// `r^k >= r^l`, decided at the parent node.
    pub gamma: Vec<bool>,
    pub sigma: StoppingTime,
}

/// Follows `X^k` on `{r^k >= r^l}` and `X^l` elsewhere, up to the first time
/// the switched martingale-plus-jump part falls more than `alpha` below the
/// better of the two.
pub fn switch(xk: &WealthProcess, xl: &WealthProcess, c: f64, alpha: f64) -> Result<(SwitchPlan, WealthProcess)> {
    if !(alpha > 0.0) {
        return Err(Error::Precondition(format!("switch tolerance alpha must be positive, got {alpha}")));
    }
    for w in [xk, xl] {
        if let Some(node) = w.first_breach(1.0) {
            return Err(Error::NotAdmissible { node, min: w.process.value(node), floor: -1.0 });
        }
    }
    let tree = xk.tree().clone();
    if **xl.tree() != *tree {
        return Err(Error::TreeMismatch);
    }
    let dk = truncation_decompose(&xk.process, c)?;
    let dl = truncation_decompose(&xl.process, c)?;
    let n = tree.num_nodes();
    let dominating: Vec<f64> = (0..n).map(|u| dk.b_step[u].abs() + dl.b_step[u].abs()).collect();
    let density = |steps: &[f64]| -> Vec<f64> {
        steps.iter().zip(&dominating).map(|(s, d)| if *d == 0.0 { 0.0 } else { s / d }).collect()
    };
    let density_k = density(&dk.b_step);
    let density_l = density(&dl.b_step);
    let gamma: Vec<bool> = (0..n).map(|u| !tree.is_leaf(u) && density_k[u] >= density_l[u]).collect();

    let on = PredictableStrategy::from_fn(tree.clone(), |u| if gamma[u] { 1.0 } else { 0.0 });
    let off = PredictableStrategy::from_fn(tree.clone(), |u| if gamma[u] { 0.0 } else { 1.0 });
    let yk = dk.m.add(&dk.big)?;
    let yl = dl.m.add(&dl.big)?;
    let y_switched = yk.integrate(&on)?.add(&yl.integrate(&off)?)?;
    let sigma = StoppingTime::first_hitting(&y_switched, |v, y| y < yk.value(v).max(yl.value(v)) - alpha);

    let until = sigma.indicator_until(tree.clone())?;
    let hk = on.mul(&until)?;
    let hl = off.mul(&until)?;
    let process = xk.process.integrate(&hk)?.add(&xl.process.integrate(&hl)?)?;
    let positions = if has_positions(xk) && has_positions(xl) {
        weighted_positions(&[(&hk, xk), (&hl, xl)])?
    } else {
        Vec::new()
    };
    let level = admissibility_level(&process);
    let wealth = WealthProcess {
        assets: xk.assets.union(&xl.assets).copied().collect(),
        positions,
        process,
        level,
        provenance: WealthProvenance::SmallMarket,
    };
    let plan = SwitchPlan { threshold: c, alpha, dominating, density_k, density_l, gamma, sigma };
    Ok((plan, wealth))
}

/// Result of [`drawdown_exploit`].
#[derive(Debug, Clone)]
pub struct DrawdownExploit {
    pub wealth: WealthProcess,
    /// Guaranteed gain `lambda - eps - 1` on the drawdown event.
    pub delta: f64,
    /// Atoms in `D = {Y_t <= -(lambda - eps)}`.
    pub on_event: Vec<bool>,
    pub event_prob: f64,
}

/// Buys `Y` after depth `t` on the event that it has fallen to
/// `-(lambda - eps)`. Since `Y_1 >= -1`, the position gains at least
/// `lambda - eps - 1` there and is untouched elsewhere.
pub fn drawdown_exploit(y: &WealthProcess, t: usize, eps: f64, lambda: f64) -> Result<DrawdownExploit> {
    let tree = y.tree().clone();
    tree.check_depth(t)?;
    let level = lambda - eps;
    if !(level > 1.0) {
        return Err(Error::Precondition(format!("need lambda - eps > 1, got {level}")));
    }
    let terminal = y.terminal();
    if let Some(a) = terminal.iter().position(|v| *v < -1.0 - ADMISSIBILITY_TOL) {
        let node = tree.atom_leaf(a);
        return Err(Error::NotAdmissible { node, min: terminal[a], floor: -1.0 });
    }
    let threshold = -level;
    let in_event = |node: usize| y.process.value(tree.ancestor(node, t)) <= threshold;
    let h = PredictableStrategy::from_fn(tree.clone(), |u| if tree.depth(u) >= t && in_event(u) { 1.0 } else { 0.0 });
    let on_event: Vec<bool> = (0..tree.num_atoms()).map(|a| in_event(tree.atom_leaf(a))).collect();
    let event_prob: f64 = on_event.iter().zip(tree.atom_probs()).filter(|(d, _)| **d).map(|(_, p)| p).sum();
    if event_prob == 0.0 {
        return Err(Error::EmptyDrawdown { threshold });
    }
    let process = y.process.integrate(&h)?;
    let positions = if has_positions(y) { weighted_positions(&[(&h, y)])? } else { Vec::new() };
    let level_out = admissibility_level(&process);
    let wealth = WealthProcess {
        assets: y.assets.clone(),
        positions,
        process,
        level: level_out,
        provenance: WealthProvenance::SmallMarket,
    };
    Ok(DrawdownExploit { wealth, delta: level - 1.0, on_event, event_prob })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeflatorViolation {
    /// Index into the checked list.
    pub process: usize,
    pub node: usize,
    /// `E[D (1 + X) | node]` over the next step.
    pub next: f64,
    pub current: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeflatorReport {
    /// Problems with the candidate itself (negative values, `D_0 > 1`).
    pub candidate_issues: Vec<String>,
    pub violations: Vec<DeflatorViolation>,
}

impl DeflatorReport {
    pub fn passed(&self) -> bool {
        self.candidate_issues.is_empty() && self.violations.is_empty()
    }
}

pub const DEFLATOR_TOL: f64 = 1e-12;

/// Checks that `D (1 + X)` is a supermartingale for each `X`.
pub fn check_deflator(d: &AdaptedProcess, xs: &[WealthProcess]) -> DeflatorReport {
    let tree = d.tree();
    let mut candidate_issues = Vec::new();
    if let Some(v) = d.values().iter().position(|v| *v < 0.0) {
        candidate_issues.push(format!("deflator negative at node {v}"));
    }
    if d.initial() > 1.0 {
        candidate_issues.push(format!("deflator starts at {} > 1", d.initial()));
    }
    let violations = xs
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, x)| {
            if **x.tree() != **tree {
                return vec![DeflatorViolation { process: i, node: tree.root(), next: f64::NAN, current: f64::NAN }];
            }
            let dx = |v: usize| d.value(v) * (1.0 + x.process.value(v));
            (0..tree.num_nodes())
                .filter(|u| !tree.is_leaf(*u))
                .filter_map(|u| {
                    let next: f64 = tree.children(u).iter().map(|c| tree.transition_prob(*c) * dx(*c)).sum();
                    let current = dx(u);
                    (next > current + DEFLATOR_TOL).then_some(DeflatorViolation { process: i, node: u, next, current })
                })
                .collect()
        })
        .collect();
    DeflatorReport { candidate_issues, violations }
}

pub fn convex_combine(xs: &[AdaptedProcess], weights: &[f64]) -> Result<AdaptedProcess> {
    if xs.is_empty() || xs.len() != weights.len() {
        return Err(Error::Precondition(format!("{} processes but {} weights", xs.len(), weights.len())));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!("weights must be nonnegative and sum to 1, got {weights:?}")));
    }
    let mut out = xs[0].scale(weights[0]);
    for (x, w) in xs.iter().zip(weights).skip(1) {
        out = out.add(&x.scale(*w))?;
    }
    Ok(out)
}

/// Portfolio entry of a config file: asset indices and one strategy value
/// per node for each asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSpec {
    pub assets: Vec<usize>,
    pub strategies: Vec<Vec<f64>>,
}

impl PortfolioSpec {
    pub fn build(&self, prices: &[AdaptedProcess]) -> Result<WealthProcess> {
        if self.assets.len() != self.strategies.len() {
            return Err(Error::LengthMismatch { expected: self.assets.len(), got: self.strategies.len() });
        }
        let tree = prices.first().ok_or_else(|| Error::Precondition("no price processes".into()))?.tree();
        let positions = self
            .assets
            .iter()
            .zip(&self.strategies)
            .map(|(a, k)| Ok((*a, PredictableStrategy::new(tree.clone(), k.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        WealthProcess::from_positions(prices, positions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probspace::{random_tree, RandomTreeSpec, TimeGrid, TreeBuilder};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coin_walk(steps: usize, up: f64, down: f64) -> AdaptedProcess {
        let mut b = TreeBuilder::new(TimeGrid::uniform(steps));
        let mut frontier = vec![(b.root(), 0.0)];
        let mut values = vec![0.0];
        for _ in 0..steps {
            let mut next = Vec::new();
            for (u, x) in frontier {
                for jump in [up, down] {
                    let v = b.add_child(u, 0.5);
                    values.push(x + jump);
                    debug_assert_eq!(v + 1, values.len());
                    next.push((v, x + jump));
                }
            }
            frontier = next;
        }
        AdaptedProcess::new(Arc::new(b.build().unwrap()), values).unwrap()
    }

    fn wealth(x: AdaptedProcess) -> WealthProcess {
        WealthProcess::from_process(BTreeSet::from([0]), x).unwrap()
    }

    /// Random process on a random tree, floored at -1 and started at 0.
    fn random_admissible(rng: &mut ChaCha8Rng, tree: &Arc<ScenarioTree>) -> AdaptedProcess {
        let mut v: Vec<f64> = (0..tree.num_nodes()).map(|_| rng.gen_range(-1.0..1.5)).collect();
        v[tree.root()] = 0.0;
        AdaptedProcess::new(tree.clone(), v).unwrap()
    }

    #[test]
    fn admissibility_examples() {
        let t = ScenarioTree::one_period(&[0.2, 0.3, 0.5]).unwrap();
        let t = Arc::new(t);
        assert_eq!(admissibility_level(&AdaptedProcess::zeros(t.clone())), 0.0);
        let x = AdaptedProcess::terminal_jump(t.clone(), &[0.3, -0.4, 0.1]).unwrap();
        assert_eq!(admissibility_level(&x), 0.4);
        let brute = (0..t.num_atoms())
            .flat_map(|a| t.atom_path(a).into_iter().map(|n| x.value(n)))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(admissibility_level(&x), (-brute).max(0.0));
    }

    #[test]
    fn concatenation_examples() {
        let x = coin_walk(2, 0.5, -0.5);
        let t = x.tree().clone();
        let y = x.scale(-1.0);
        let (wx, wy) = (wealth(x.clone()), WealthProcess::from_process(BTreeSet::from([1]), y).unwrap());
        let one = PredictableStrategy::constant(t.clone(), 1.0);
        let zero = PredictableStrategy::zeros(t.clone());
        let z = concatenate(&one, &wx, &zero, &wy).unwrap();
        assert_eq!(z.process(), &x);
        assert_eq!(z.assets(), &BTreeSet::from([0, 1]));

        // H = 1_[0,tau] with tau = 1, G = 1_(tau,1]: follow X for one step, then Y.
        let tau = StoppingTime::constant(&t, 1).unwrap();
        let h = tau.indicator_until(t.clone()).unwrap();
        let g = PredictableStrategy::from_fn(t.clone(), |u| 1.0 - h.value(u));
        let z = concatenate(&h, &wx, &g, &wy).unwrap();
        // Up then up: +0.5 from X, then -0.5 from Y = -X.
        let uu = t.atom_leaf(0);
        assert_eq!(z.process().value(uu), 0.0);
        let ud = t.atom_leaf(1);
        assert_eq!(z.process().value(ud), 1.0);

        let err = concatenate(&one, &wx, &one, &wy).unwrap_err();
        assert!(matches!(err, Error::Concatenation { node: 0, ref reason } if reason == "HG = 0 violated"));
    }

    #[test]
    fn concatenation_rejects_breach_of_floor() {
        let x = coin_walk(2, 0.75, -0.75);
        let t = x.tree().clone();
        let one = PredictableStrategy::constant(t.clone(), 1.0);
        let zero = PredictableStrategy::zeros(t);
        let err = concatenate(&one, &wealth(x.clone()), &zero, &wealth(x)).unwrap_err();
        assert!(matches!(err, Error::Concatenation { .. }));
    }

    #[test]
    fn decomposition_examples() {
        let x = coin_walk(3, 0.5, -0.5);
        let d = truncation_decompose(&x, 1.0).unwrap();
        assert!(d.b.values().iter().all(|v| *v == 0.0));
        assert!(d.big.values().iter().all(|v| *v == 0.0));
        assert_eq!(d.m, x);

        let x = coin_walk(2, 1.5, -0.5);
        let d = truncation_decompose(&x, 1.0).unwrap();
        let t = x.tree();
        for v in 0..t.num_nodes() {
            assert_eq!(d.b.value(v), -0.25 * t.depth(v) as f64);
        }
        // Atom 0 goes up twice.
        assert_eq!(d.big.value(t.atom_leaf(0)), 3.0);
        assert_eq!(d.big.value(t.atom_leaf(3)), 0.0);
        assert!(d.reconstruction_error(&x) < 1e-12);
        assert!(d.martingale_residual() < 1e-12);

        let mut b = TreeBuilder::new(TimeGrid::uniform(3));
        let mut cur = b.root();
        for _ in 0..3 {
            cur = b.add_child(cur, 1.0);
        }
        let t = Arc::new(b.build().unwrap());
        let x = AdaptedProcess::from_fn(t.clone(), |v| 0.1 * t.depth(v) as f64);
        let d = truncation_decompose(&x, 1.0).unwrap();
        assert_eq!(d.b, x);
        assert!(d.m.values().iter().all(|v| *v == 0.0));
        assert!(truncation_decompose(&x, 0.0).is_err());
    }

    #[test]
    fn switch_examples() {
        let x = coin_walk(2, 0.5, -0.5);
        let w = wealth(x.clone());
        let (plan, out) = switch(&w, &w, 1.0, 0.1).unwrap();
        assert!(plan.sigma.depths().iter().all(|d| *d == x.tree().horizon()));
        assert_eq!(out.process(), &x);
        assert!(switch(&w, &w, 1.0, 0.0).is_err());

        // X^k drifts up by 0.1 a step, X^l drifts down: Gamma picks X^k.
        let up = coin_walk(2, 0.3, -0.1);
        let down = AdaptedProcess::from_fn(up.tree().clone(), |v| {
            -0.1 * up.tree().depth(v) as f64 + (up.value(v) - 0.1 * up.tree().depth(v) as f64)
        });
        let (plan, out) = switch(&wealth(up.clone()), &wealth(down), 1.0, 0.1).unwrap();
        let t = up.tree();
        for u in 0..t.num_nodes() {
            if !t.is_leaf(u) {
                assert!(plan.gamma[u]);
                assert!((plan.density_k[u] - 0.5).abs() < 1e-12);
                assert!((plan.density_l[u] + 0.5).abs() < 1e-12);
            }
        }
        assert_eq!(out.process(), &up);
        assert!(out.is_admissible(1.1));
    }

    #[test]
    fn switch_rejects_inadmissible_inputs() {
        let x = coin_walk(2, 0.75, -0.75);
        let w = wealth(x);
        assert!(matches!(switch(&w, &w, 1.0, 0.1), Err(Error::NotAdmissible { .. })));
    }

    #[test]
    fn drawdown_examples() {
        let t = Arc::new(ScenarioTree::one_period(&[0.5, 0.5]).unwrap());
        let never = wealth(AdaptedProcess::terminal_jump(t.clone(), &[-0.5, 0.5]).unwrap());
        assert!(matches!(drawdown_exploit(&never, 1, 0.3, 2.0), Err(Error::EmptyDrawdown { .. })));
        assert!(matches!(drawdown_exploit(&never, 1, 1.0, 2.0), Err(Error::Precondition(_))));

        // Two steps: atom 0 sinks to -1.5 at depth 1, then recovers to -0.5.
        let mut b = TreeBuilder::new(TimeGrid::uniform(2));
        let r = b.root();
        let down = b.add_child(r, 0.5);
        let flat = b.add_child(r, 0.5);
        b.add_child(down, 1.0);
        b.add_child(flat, 1.0);
        let t = Arc::new(b.build().unwrap());
        let y = wealth(AdaptedProcess::new(t.clone(), vec![0.0, -1.5, 0.0, -0.5, 0.2]).unwrap());
        assert!(matches!(drawdown_exploit(&y, 1, 0.3, 2.0), Err(Error::EmptyDrawdown { .. })));
        let e = drawdown_exploit(&y, 1, 0.5, 2.0).unwrap();
        assert_eq!(e.delta, 0.5);
        assert_eq!(e.on_event, vec![true, false]);
        assert_eq!(e.wealth.terminal(), vec![1.0, 0.0]);

        // Deterministic drop to -lambda then back to -1.
        let mut b = TreeBuilder::new(TimeGrid::uniform(2));
        let u = b.add_child(b.root(), 1.0);
        b.add_child(u, 1.0);
        let t = Arc::new(b.build().unwrap());
        let y = wealth(AdaptedProcess::new(t, vec![0.0, -3.0, -1.0]).unwrap());
        let e = drawdown_exploit(&y, 1, 0.5, 3.0).unwrap();
        assert_eq!(e.wealth.terminal(), vec![2.0]);
        assert_eq!(e.event_prob, 1.0);
    }

    #[test]
    fn deflator_examples() {
        let x = coin_walk(2, 0.5, -0.5);
        let t = x.tree().clone();
        let one = AdaptedProcess::constant(t.clone(), 1.0);
        assert!(check_deflator(&one, &[wealth(x)]).passed());
        let drift = coin_walk(2, 0.6, -0.4);
        let report = check_deflator(&one, &[wealth(drift)]);
        assert_eq!(report.violations.len(), 3);
        let bad = AdaptedProcess::constant(t, 2.0);
        assert_eq!(check_deflator(&bad, &[]).candidate_issues.len(), 1);
    }

    #[test]
    fn convex_combine_examples() {
        let x = coin_walk(1, 0.5, -0.25);
        assert_eq!(convex_combine(&[x.clone()], &[1.0]).unwrap(), x);
        let mid = convex_combine(&[x.clone(), x.scale(-1.0)], &[0.5, 0.5]).unwrap();
        assert!(mid.values().iter().all(|v| *v == 0.0));
        let y = x.scale(2.0);
        let z = convex_combine(&[x.clone(), y], &[0.25, 0.75]).unwrap();
        assert_eq!(z.values(), &[0.0, 0.875, -0.4375]);
        assert!(convex_combine(&[x.clone()], &[0.5]).is_err());
        assert!(convex_combine(&[x.clone(), x], &[1.5, -0.5]).is_err());
    }

    #[test]
    fn positions_follow_concatenation() {
        let s = coin_walk(2, 0.5, -0.5);
        let t = s.tree().clone();
        let prices = vec![s.clone(), s.scale(0.5)];
        let spec = PortfolioSpec { assets: vec![0, 1], strategies: vec![vec![1.0; 7], vec![-1.0; 7]] };
        let w = spec.build(&prices).unwrap();
        let h = PredictableStrategy::constant(t.clone(), 0.5);
        let z = concatenate(&h, &w, &PredictableStrategy::zeros(t), &w).unwrap();
        let replay = WealthProcess::from_positions(&prices, z.positions().to_vec()).unwrap();
        assert_eq!(replay.process(), z.process());
    }

    proptest! {
        #[test]
        fn level_scales(seed in 0u64..10_000, c in 0.01f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tree(&mut rng, RandomTreeSpec::default());
            let x = random_admissible(&mut rng, &t);
            prop_assert!((admissibility_level(&x.scale(c)) - c * admissibility_level(&x)).abs() < 1e-12);
        }

        #[test]
        fn decomposition_invariants(seed in 0u64..10_000, c in 0.1f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tree(&mut rng, RandomTreeSpec::default());
            let x = random_admissible(&mut rng, &t);
            let d = truncation_decompose(&x, c).unwrap();
            prop_assert!(d.reconstruction_error(&x) < 1e-12);
            prop_assert!(d.martingale_residual() < 1e-12);
            prop_assert!(d.max_martingale_jump() <= 2.0 * c + 1e-12);
        }

        #[test]
        fn convex_combination_level_bounded(seed in 0u64..10_000, w in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tree(&mut rng, RandomTreeSpec::default());
            let x = random_admissible(&mut rng, &t);
            let y = random_admissible(&mut rng, &t);
            let z = convex_combine(&[x.clone(), y.clone()], &[w, 1.0 - w]).unwrap();
            prop_assert!(admissibility_level(&z) <= admissibility_level(&x).max(admissibility_level(&y)) + 1e-12);
        }
    }
}
