//! ucp and Emery distances between processes on a scenario tree.
//!
//! The Emery distance is a supremum over simple predictable strategies with
//! `|K| <= 1`. Estimates here are maxima over finite candidate families and
//! therefore lower bounds. [`emery_distance_oracle`] solves the `{-1, 0, 1}`
//! restriction exactly on small trees.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::probspace::ScenarioTree;
use crate::process::{AdaptedProcess, PredictableStrategy};

/// Oracle guard: non-root depths.
pub const ORACLE_MAX_DEPTH: usize = 4;
/// Oracle guard: atoms.
pub const ORACLE_MAX_ATOMS: usize = 16;
/// Largest family [`CandidateFamily::enumerated`] will materialize.
pub const ENUMERATION_LIMIT: usize = 59_049;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SignGreedy,
    Enumerated,
    Random,
    User,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::SignGreedy => "sign-greedy",
            Provenance::Enumerated => "enumerated",
            Provenance::Random => "random",
            Provenance::User => "user",
        };
        f.write_str(s)
    }
}

/// Finite set of strategies bounded by 1. Always holds `K = 0` and `K = 1`.
#[derive(Debug, Clone)]
pub struct CandidateFamily {
    tree: Arc<ScenarioTree>,
    members: Vec<(PredictableStrategy, Provenance)>,
}

impl CandidateFamily {
    pub fn new(tree: Arc<ScenarioTree>) -> Self {
        let members = vec![
            (PredictableStrategy::zeros(tree.clone()), Provenance::Enumerated),
            (PredictableStrategy::constant(tree.clone(), 1.0), Provenance::Enumerated),
        ];
        Self { tree, members }
    }

    /// Every node-wise strategy with values in `{-1, 0, 1}`.
    pub fn enumerated(tree: Arc<ScenarioTree>) -> Result<Self> {
        let decision: Vec<usize> = (0..tree.num_nodes()).filter(|v| !tree.is_leaf(*v)).collect();
        let count = 3usize
            .checked_pow(decision.len() as u32)
            .filter(|c| *c <= ENUMERATION_LIMIT)
            .ok_or_else(|| {
                Error::GuardExceeded(format!(
                    "enumerating 3^{} strategies exceeds {ENUMERATION_LIMIT}",
                    decision.len()
                ))
            })?;
        let mut members = Vec::with_capacity(count);
        for code in 0..count {
            let mut values = vec![0.0; tree.num_nodes()];
            let mut c = code;
            for v in &decision {
                values[*v] = [0.0, 1.0, -1.0][c % 3];
                c /= 3;
            }
            members.push((PredictableStrategy::new(tree.clone(), values)?, Provenance::Enumerated));
        }
        Ok(Self { tree, members })
    }

    pub fn tree(&self) -> &Arc<ScenarioTree> {
        &self.tree
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[(PredictableStrategy, Provenance)] {
        &self.members
    }

    fn push(&mut self, k: PredictableStrategy, tag: Provenance) {
        if !self.members.iter().any(|(m, _)| *m == k) {
            self.members.push((k, tag));
        }
    }

    /// Adds `K = sign(E[dD | node])`, with sign(0) = 0.
    pub fn with_sign_greedy(mut self, d: &AdaptedProcess) -> Result<Self> {
        if **d.tree() != *self.tree {
            return Err(Error::TreeMismatch);
        }
        let tree = &self.tree;
        let k = PredictableStrategy::from_fn(tree.clone(), |u| {
            let drift: f64 = tree
                .children(u)
                .iter()
                .map(|c| tree.transition_prob(*c) * (d.value(*c) - d.value(u)))
                .sum();
            if drift > 0.0 {
                1.0
            } else if drift < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        self.push(k, Provenance::SignGreedy);
        Ok(self)
    }

    /// Adds `n` strategies with node values drawn uniformly from `{-1, 0, 1}`.
    pub fn with_random<R: Rng + ?Sized>(mut self, n: usize, rng: &mut R) -> Self {
        for _ in 0..n {
            let values: Vec<f64> = (0..self.tree.num_nodes())
                .map(|_| [-1.0, 0.0, 1.0][rng.gen_range(0..3)])
                .collect();
            let k = PredictableStrategy::new(self.tree.clone(), values).expect("length matches");
            self.push(k, Provenance::Random);
        }
        self
    }

    pub fn with_user(mut self, k: PredictableStrategy) -> Result<Self> {
        if **k.tree() != *self.tree {
            return Err(Error::TreeMismatch);
        }
        k.check_bound(1.0)?;
        self.push(k, Provenance::User);
        Ok(self)
    }

    /// Short description such as `enumerated:2,sign-greedy:1`.
    pub fn descriptor(&self) -> String {
        let mut counts: Vec<(Provenance, usize)> = Vec::new();
        for (_, tag) in &self.members {
            match counts.iter_mut().find(|(t, _)| t == tag) {
                Some((_, n)) => *n += 1,
                None => counts.push((*tag, 1)),
            }
        }
        counts.iter().map(|(t, n)| format!("{t}:{n}")).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone)]
pub struct EmeryEstimate {
    pub value: f64,
    /// Index of the attaining member in the family.
    pub index: usize,
    pub strategy: PredictableStrategy,
    pub provenance: Provenance,
    pub family: String,
}

fn truncated_sup_mean(tree: &ScenarioTree, x: &AdaptedProcess) -> f64 {
    x.running_sup_abs()
        .iter()
        .zip(tree.atom_probs())
        .map(|(s, p)| p * s.min(1.0))
        .sum::<f64>()
        .min(1.0)
}

/// `E[sup_t |X_t - Y_t| ^ 1]`.
pub fn ucp_distance(x: &AdaptedProcess, y: &AdaptedProcess) -> Result<f64> {
    let d = x.sub(y)?;
    Ok(truncated_sup_mean(x.tree(), &d))
}

/// `E[sup_t |(K . D)_t| ^ 1]` for one strategy.
pub fn emery_objective(k: &PredictableStrategy, d: &AdaptedProcess) -> Result<f64> {
    let i = d.integrate(k)?;
    Ok(truncated_sup_mean(d.tree(), &i))
}

/// Best value over the family; a lower bound of the Emery distance.
pub fn emery_distance(x: &AdaptedProcess, y: &AdaptedProcess, family: &CandidateFamily) -> Result<EmeryEstimate> {
    let d = x.sub(y)?;
    if **d.tree() != *family.tree {
        return Err(Error::TreeMismatch);
    }
    if family.is_empty() {
        return Err(Error::Precondition("candidate family is empty".into()));
    }
    let values: Vec<f64> = family
        .members
        .par_iter()
        .map(|(k, _)| emery_objective(k, &d))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    let (strategy, provenance) = family.members[best].clone();
    Ok(EmeryEstimate { value: values[best], index: best, strategy, provenance, family: family.descriptor() })
}

/// One-period closed form: with a single decision `|k| <= 1` the objective
/// `E[|k dD| ^ 1]` is maximized at `|k| = 1`.
pub fn one_period_distance(jumps: &[f64], probs: &[f64]) -> Result<f64> {
    if jumps.len() != probs.len() {
        return Err(Error::LengthMismatch { expected: probs.len(), got: jumps.len() });
    }
    Ok(jumps.iter().zip(probs).map(|(d, p)| p * d.abs().min(1.0)).sum())
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    pub strategy: PredictableStrategy,
}

/// Exact maximum over all node-wise `{-1, 0, 1}` strategies.
///
/// Each node is reached by a single path, so the choice at a node only
/// interacts with its ancestors through the running integral and running
/// maximum. The search recurses on that state instead of enumerating.
pub fn emery_distance_oracle(x: &AdaptedProcess, y: &AdaptedProcess) -> Result<OracleResult> {
    let d = x.sub(y)?;
    let tree = d.tree();
    if tree.horizon() > ORACLE_MAX_DEPTH || tree.num_atoms() > ORACLE_MAX_ATOMS {
        return Err(Error::GuardExceeded(format!(
            "oracle needs <= {ORACLE_MAX_DEPTH} depths and <= {ORACLE_MAX_ATOMS} atoms, tree has {} and {}",
            tree.horizon(),
            tree.num_atoms()
        )));
    }
    let mut choice = vec![0.0; tree.num_nodes()];
    let value = oracle_node(tree, &d, tree.root(), 0.0, 0.0, &mut choice);
    Ok(OracleResult { value, strategy: PredictableStrategy::new(tree.clone(), choice)? })
}

fn oracle_node(tree: &ScenarioTree, d: &AdaptedProcess, u: usize, integral: f64, run: f64, choice: &mut [f64]) -> f64 {
    if tree.is_leaf(u) {
        return run.min(1.0);
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_choice = Vec::new();
    for k in [0.0, 1.0, -1.0] {
        let mut trial = choice.to_vec();
        trial[u] = k;
        let mut total = 0.0;
        for &c in tree.children(u) {
            let next = integral + k * (d.value(c) - d.value(u));
            total += tree.transition_prob(c) * oracle_node(tree, d, c, next, run.max(next.abs()), &mut trial);
        }
        if total > best {
            best = total;
            best_choice = trial;
        }
    }
    choice.copy_from_slice(&best_choice);
    best
}

#[derive(Debug, Clone)]
pub enum CauchyOutcome {
    /// Heuristic verdict: the distances are lower bounds.
    Limit {
        limit: AdaptedProcess,
        /// Estimated distance from each element to the limit.
        residuals: Vec<f64>,
        max_residual: f64,
        successive: Vec<f64>,
    },
    NotCauchy { successive: Vec<f64> },
}

/// Tests whether the last successive estimated distance is below `tol` and,
/// if so, reports a limit candidate. Without a supplied candidate the
/// coordinate-wise median of the second half of the sequence is used.
pub fn cauchy_limit(
    seq: &[AdaptedProcess],
    family: &CandidateFamily,
    tol: f64,
    candidate: Option<&AdaptedProcess>,
) -> Result<CauchyOutcome> {
    if seq.len() < 2 {
        return Err(Error::Precondition("cauchy_limit needs at least two processes".into()));
    }
    let successive: Vec<f64> = seq
        .par_windows(2)
        .map(|w| emery_distance(&w[0], &w[1], family).map(|e| e.value))
        .collect::<Result<_>>()?;
    if successive.last().copied().unwrap_or(0.0) >= tol {
        return Ok(CauchyOutcome::NotCauchy { successive });
    }
    let limit = match candidate {
        Some(c) => c.clone(),
        None => tail_median(seq),
    };
    let residuals: Vec<f64> = seq
        .par_iter()
        .map(|x| emery_distance(x, &limit, family).map(|e| e.value))
        .collect::<Result<_>>()?;
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(CauchyOutcome::Limit { limit, residuals, max_residual, successive })
}

fn tail_median(seq: &[AdaptedProcess]) -> AdaptedProcess {
    let tail = &seq[seq.len() / 2..];
    let tree = tail[0].tree().clone();
    AdaptedProcess::from_fn(tree, |v| {
        let mut vals: Vec<f64> = tail.iter().map(|x| x.value(v)).collect();
        vals.sort_by(f64::total_cmp);
        let m = vals.len();
        if m % 2 == 1 {
            vals[m / 2]
        } else {
            0.5 * (vals[m / 2 - 1] + vals[m / 2])
        }
    })
}

/// `sup_n sup_K P[sup_t |(K . X^n)_t| >= c]`.
pub fn put_statistic(seq: &[AdaptedProcess], family: &CandidateFamily, c: f64) -> Result<f64> {
    if c <= 0.0 {
        return Err(Error::Precondition(format!("P-UT level must be positive, got {c}")));
    }
    let per: Vec<f64> = seq
        .par_iter()
        .map(|x| {
            let mut best = 0.0f64;
            for (k, _) in &family.members {
                let sup = x.integrate(k)?.running_sup_abs();
                let p = sup.iter().zip(x.tree().atom_probs()).filter(|(s, _)| **s >= c).fold(0.0, |acc, (_, p)| acc + p);
                best = best.max(p);
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probspace::{random_tree, RandomTreeSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coin() -> Arc<ScenarioTree> {
        Arc::new(ScenarioTree::one_period(&[0.5, 0.5]).unwrap())
    }

    fn random_pair(seed: u64, spec: RandomTreeSpec) -> (AdaptedProcess, AdaptedProcess) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tree(&mut rng, spec);
        let mut draw = |t: &Arc<ScenarioTree>| {
            let mut v: Vec<f64> = (0..t.num_nodes()).map(|_| rng.gen_range(-1.5..1.5)).collect();
            v[t.root()] = 0.0;
            AdaptedProcess::new(t.clone(), v).unwrap()
        };
        let x = draw(&t);
        let y = draw(&t);
        (x, y)
    }

    #[test]
    fn ucp_examples() {
        let t = coin();
        let x = AdaptedProcess::terminal_jump(t.clone(), &[0.4, -2.0]).unwrap();
        let zero = AdaptedProcess::zeros(t.clone());
        assert_eq!(ucp_distance(&x, &x).unwrap(), 0.0);
        assert!((ucp_distance(&x, &zero).unwrap() - 0.7).abs() < 1e-15);
        let big = AdaptedProcess::terminal_jump(t, &[1.0, -3.0]).unwrap();
        assert_eq!(ucp_distance(&big, &zero).unwrap(), 1.0);
    }

    #[test]
    fn one_period_jump_is_closed_form() {
        let t = Arc::new(ScenarioTree::one_period(&[0.2, 0.3, 0.5]).unwrap());
        let jumps = [0.5, -1.7, 0.25];
        let x = AdaptedProcess::terminal_jump(t.clone(), &jumps).unwrap();
        let zero = AdaptedProcess::zeros(t.clone());
        let est = emery_distance(&x, &zero, &CandidateFamily::new(t.clone())).unwrap();
        let closed = one_period_distance(&jumps, t.atom_probs()).unwrap();
        assert!((est.value - closed).abs() < 1e-15);
        assert_eq!(est.strategy.value(0).abs(), 1.0);
        let oracle = emery_distance_oracle(&x, &zero).unwrap();
        assert!((oracle.value - closed).abs() < 1e-15);
    }

    #[test]
    fn oracle_examples() {
        let t = coin();
        let x = AdaptedProcess::terminal_jump(t.clone(), &[0.3, 0.3]).unwrap();
        let zero = AdaptedProcess::zeros(t.clone());
        assert_eq!(emery_distance_oracle(&x, &x).unwrap().value, 0.0);
        let r = emery_distance_oracle(&x, &zero).unwrap();
        assert!((r.value - 0.3).abs() < 1e-15);
        assert_eq!(r.strategy.value(0), 1.0);
    }

    #[test]
    fn oracle_guard_refuses_large_trees() {
        let t = Arc::new(ScenarioTree::one_period(&[1.0 / 17.0; 17]).unwrap());
        let x = AdaptedProcess::zeros(t);
        assert!(matches!(emery_distance_oracle(&x, &x), Err(Error::GuardExceeded(_))));
    }

    #[test]
    fn oracle_matches_brute_force_enumeration() {
        let spec = RandomTreeSpec { max_depth: 3, max_atoms: 8, max_branching: 2 };
        for seed in 0..60 {
            let (x, y) = random_pair(seed, spec);
            let Ok(family) = CandidateFamily::enumerated(x.tree().clone()) else { continue };
            let est = emery_distance(&x, &y, &family).unwrap();
            let oracle = emery_distance_oracle(&x, &y).unwrap();
            assert!((est.value - oracle.value).abs() < 1e-12, "seed {seed}");
            let d = x.sub(&y).unwrap();
            let replay = emery_objective(&oracle.strategy, &d).unwrap();
            assert!((replay - oracle.value).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_dominates_families_on_small_instances() {
        let spec = RandomTreeSpec { max_depth: 2, max_atoms: 4, max_branching: 2 };
        for seed in 0..100 {
            let (x, y) = random_pair(seed, spec);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let d = x.sub(&y).unwrap();
            let family = CandidateFamily::new(x.tree().clone())
                .with_sign_greedy(&d)
                .unwrap()
                .with_random(8, &mut rng);
            let est = emery_distance(&x, &y, &family).unwrap();
            let oracle = emery_distance_oracle(&x, &y).unwrap();
            assert!(oracle.value >= est.value - 1e-12);
        }
    }

    #[test]
    fn family_rejects_unbounded_user_strategy() {
        let t = coin();
        let k = PredictableStrategy::constant(t.clone(), 1.5);
        assert!(matches!(CandidateFamily::new(t).with_user(k), Err(Error::StrategyBound { .. })));
    }

    #[test]
    fn descriptor_counts_tags() {
        let t = coin();
        let d = AdaptedProcess::terminal_jump(t.clone(), &[-1.0, -1.0]).unwrap();
        let f = CandidateFamily::new(t).with_sign_greedy(&d).unwrap();
        assert_eq!(f.descriptor(), "enumerated:2,sign-greedy:1");
    }

    #[test]
    fn cauchy_examples() {
        let t = coin();
        let x = AdaptedProcess::terminal_jump(t.clone(), &[0.2, -0.1]).unwrap();
        let family = CandidateFamily::new(t.clone());
        match cauchy_limit(&[x.clone(), x.clone(), x.clone()], &family, 1e-9, None).unwrap() {
            CauchyOutcome::Limit { limit, max_residual, .. } => {
                assert_eq!(limit, x);
                assert_eq!(max_residual, 0.0);
            }
            other => panic!("expected a limit, got {other:?}"),
        }
        let up = AdaptedProcess::terminal_jump(t.clone(), &[1.0, 1.0]).unwrap();
        let down = up.scale(-1.0);
        let alt = vec![up.clone(), down.clone(), up, down];
        assert!(matches!(cauchy_limit(&alt, &family, 0.1, None).unwrap(), CauchyOutcome::NotCauchy { .. }));
        assert!(cauchy_limit(&alt[..1], &family, 0.1, None).is_err());
    }

    #[test]
    fn put_examples() {
        let t = coin();
        let family = CandidateFamily::new(t.clone());
        let zero = AdaptedProcess::zeros(t.clone());
        assert_eq!(put_statistic(&[zero.clone(), zero], &family, 0.1).unwrap(), 0.0);
        let x = AdaptedProcess::terminal_jump(t.clone(), &[-1.0, 1.0]).unwrap();
        assert_eq!(put_statistic(&[x.clone()], &family, 2.0).unwrap(), 0.0);
        let scaled: Vec<_> = (1..=5).map(|n| x.scale(n as f64)).collect();
        assert_eq!(put_statistic(&scaled, &family, 3.0).unwrap(), 1.0);
        assert_eq!(put_statistic(&scaled[..2], &family, 3.0).unwrap(), 0.0);
        assert!(put_statistic(&scaled, &family, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn distances_are_bounded_and_ordered(seed in 0u64..10_000) {
            let (x, y) = random_pair(seed, RandomTreeSpec::default());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = x.sub(&y).unwrap();
            let small = CandidateFamily::new(x.tree().clone());
            let large = small.clone().with_sign_greedy(&d).unwrap().with_random(6, &mut rng);
            let ucp = ucp_distance(&x, &y).unwrap();
            let a = emery_distance(&x, &y, &small).unwrap().value;
            let b = emery_distance(&x, &y, &large).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&ucp));
            prop_assert!((0.0..=1.0).contains(&b));
            prop_assert!(a >= ucp - 1e-12);
            prop_assert!(b >= a);
            prop_assert!((ucp - ucp_distance(&y, &x).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn ucp_triangle_inequality(seed in 0u64..10_000) {
            let (x, y) = random_pair(seed, RandomTreeSpec::default());
            let z = x.add(&y).unwrap().scale(0.5);
            let lhs = ucp_distance(&x, &y).unwrap();
            let rhs = ucp_distance(&x, &z).unwrap() + ucp_distance(&z, &y).unwrap();
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn put_is_monotone(seed in 0u64..10_000, c in 0.05f64..3.0, dc in 0.0f64..2.0) {
            let (x, y) = random_pair(seed, RandomTreeSpec::default());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let small = CandidateFamily::new(x.tree().clone());
            let large = small.clone().with_random(5, &mut rng);
            let seq = [x, y];
            let p = put_statistic(&seq, &small, c).unwrap();
            prop_assert!(put_statistic(&seq, &small, c + dc).unwrap() <= p);
            prop_assert!(put_statistic(&seq, &large, c).unwrap() >= p);
        }
    }
}
