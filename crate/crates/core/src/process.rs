//! Adapted processes and predictable simple strategies on a scenario tree.
//!
//! A process holds one value per node. A strategy holds one value per
//! non-leaf node `u`: the position carried over the step from `u` to each of
//! its children, which makes predictability structural.

use std::io::{self, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::probspace::ScenarioTree;

fn same_tree(a: &Arc<ScenarioTree>, b: &Arc<ScenarioTree>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::TreeMismatch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    tree: Arc<ScenarioTree>,
    values: Vec<f64>,
}

impl AdaptedProcess {
    pub fn new(tree: Arc<ScenarioTree>, values: Vec<f64>) -> Result<Self> {
        if values.len() != tree.num_nodes() {
            return Err(Error::LengthMismatch { expected: tree.num_nodes(), got: values.len() });
        }
        Ok(Self { tree, values })
    }

    pub fn zeros(tree: Arc<ScenarioTree>) -> Self {
        Self::constant(tree, 0.0)
    }

    pub fn constant(tree: Arc<ScenarioTree>, c: f64) -> Self {
        let n = tree.num_nodes();
        Self { tree, values: vec![c; n] }
    }

    pub fn from_fn(tree: Arc<ScenarioTree>, f: impl Fn(usize) -> f64) -> Self {
        let values = (0..tree.num_nodes()).map(f).collect();
        Self { tree, values }
    }

    /// Process that is 0 before the horizon and equals `terminal[atom]` at it.
    pub fn terminal_jump(tree: Arc<ScenarioTree>, terminal: &[f64]) -> Result<Self> {
        if terminal.len() != tree.num_atoms() {
            return Err(Error::LengthMismatch { expected: tree.num_atoms(), got: terminal.len() });
        }
        let mut values = vec![0.0; tree.num_nodes()];
        for (a, v) in terminal.iter().enumerate() {
            values[tree.atom_leaf(a)] = *v;
        }
        Ok(Self { tree, values })
    }

    pub fn tree(&self) -> &Arc<ScenarioTree> {
        &self.tree
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn initial(&self) -> f64 {
        self.values[self.tree.root()]
    }

    /// Value at the horizon, one entry per atom.
    pub fn terminal(&self) -> Vec<f64> {
        (0..self.tree.num_atoms())
            .map(|a| self.values[self.tree.atom_leaf(a)])
            .collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { tree: self.tree.clone(), values: self.values.iter().map(|v| f(*v)).collect() }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_tree(&self.tree, &other.tree)?;
        Ok(Self {
            tree: self.tree.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `X_v - X_parent(v)`; zero at the root.
    pub fn jumps(&self) -> Vec<f64> {
        (0..self.tree.num_nodes())
            .map(|v| match self.tree.parent(v) {
                Some(p) => self.values[v] - self.values[p],
                None => 0.0,
            })
            .collect()
    }

    /// `sup_t |X_t|` along each atom's path.
    pub fn running_sup_abs(&self) -> Vec<f64> {
        let mut run = vec![0.0f64; self.tree.num_nodes()];
        for v in self.tree.top_down() {
            let here = self.values[v].abs();
            run[v] = match self.tree.parent(v) {
                Some(p) => run[p].max(here),
                None => here,
            };
        }
        (0..self.tree.num_atoms()).map(|a| run[self.tree.atom_leaf(a)]).collect()
    }

    /// Integral against `K`, see [`stochastic_integral`].
    pub fn integrate(&self, k: &PredictableStrategy) -> Result<Self> {
        stochastic_integral(k, self)
    }

    /// CSV rows `atom,path,depth,value`; the path is the dash-joined node list.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "atom,path,depth,value")?;
        for a in 0..self.tree.num_atoms() {
            let path = self.tree.atom_path(a);
            for (depth, node) in path.iter().enumerate() {
                let prefix: Vec<String> = path[..=depth].iter().map(|n| n.to_string()).collect();
                writeln!(out, "{},{},{},{}", a, prefix.join("-"), depth, self.values[*node])?;
            }
        }
        Ok(())
    }
}

/// Simple predictable strategy: `values[u]` is held from node `u` to its
/// children. Entries at leaves are kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictableStrategy {
    tree: Arc<ScenarioTree>,
    values: Vec<f64>,
}

impl PredictableStrategy {
    pub fn new(tree: Arc<ScenarioTree>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != tree.num_nodes() {
            return Err(Error::LengthMismatch { expected: tree.num_nodes(), got: values.len() });
        }
        for (v, x) in values.iter_mut().enumerate() {
            if tree.is_leaf(v) {
                *x = 0.0;
            }
        }
        Ok(Self { tree, values })
    }

    pub fn constant(tree: Arc<ScenarioTree>, c: f64) -> Self {
        Self::from_fn(tree, |_| c)
    }

    pub fn zeros(tree: Arc<ScenarioTree>) -> Self {
        Self::constant(tree, 0.0)
    }

    pub fn from_fn(tree: Arc<ScenarioTree>, f: impl Fn(usize) -> f64) -> Self {
        let values = (0..tree.num_nodes())
            .map(|v| if tree.is_leaf(v) { 0.0 } else { f(v) })
            .collect();
        Self { tree, values }
    }

    pub fn tree(&self) -> &Arc<ScenarioTree> {
        &self.tree
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn check_bound(&self, bound: f64) -> Result<()> {
        match self.values.iter().position(|v| v.abs() > bound) {
            Some(node) => Err(Error::StrategyBound { node, value: self.values[node], bound }),
            None => Ok(()),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { tree: self.tree.clone(), values: self.values.iter().map(|v| c * v).collect() }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_tree(&self.tree, &other.tree)?;
        Ok(Self {
            tree: self.tree.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Pointwise product `H K`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }
}

/// `(K . X)_v = sum over steps up to v of K_parent * (X_child - X_parent)`,
/// starting from zero at the root.
pub fn stochastic_integral(k: &PredictableStrategy, x: &AdaptedProcess) -> Result<AdaptedProcess> {
    same_tree(&k.tree, &x.tree)?;
    let tree = &x.tree;
    let mut out = vec![0.0; tree.num_nodes()];
    for v in tree.top_down() {
        if let Some(p) = tree.parent(v) {
            out[v] = out[p] + k.values[p] * (x.values[v] - x.values[p]);
        }
    }
    Ok(AdaptedProcess { tree: tree.clone(), values: out })
}

/// Per-atom stopping depth, measurable with respect to the tree filtration.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingTime {
    depths: Vec<usize>,
    /// `stopped[v]` iff tau <= depth(v) on the atoms below `v`.
    stopped: Vec<bool>,
}

impl StoppingTime {
    pub fn new(tree: &ScenarioTree, depths: Vec<usize>) -> Result<Self> {
        if depths.len() != tree.num_atoms() {
            return Err(Error::LengthMismatch { expected: tree.num_atoms(), got: depths.len() });
        }
        if let Some(&d) = depths.iter().find(|&&d| d > tree.horizon()) {
            return Err(Error::DepthOutOfRange { depth: d, max: tree.horizon() });
        }
        let n = tree.num_nodes();
        let mut lo = vec![usize::MAX; n];
        let mut hi = vec![0usize; n];
        for (a, &d) in depths.iter().enumerate() {
            lo[tree.atom_leaf(a)] = d;
            hi[tree.atom_leaf(a)] = d;
        }
        for v in tree.bottom_up().collect::<Vec<_>>() {
            if let Some(p) = tree.parent(v) {
                lo[p] = lo[p].min(lo[v]);
                hi[p] = hi[p].max(hi[v]);
            }
        }
        let mut stopped = vec![false; n];
        for v in 0..n {
            let k = tree.depth(v);
            if lo[v] <= k && hi[v] > k {
                return Err(Error::NotMeasurable { node: v });
            }
            stopped[v] = hi[v] <= k;
        }
        Ok(Self { depths, stopped })
    }

    pub fn constant(tree: &ScenarioTree, depth: usize) -> Result<Self> {
        Self::new(tree, vec![depth; tree.num_atoms()])
    }

    /// First depth at which `hit(node, value)` holds, or the horizon.
    pub fn first_hitting(x: &AdaptedProcess, hit: impl Fn(usize, f64) -> bool) -> Self {
        let tree = x.tree();
        let mut first = vec![usize::MAX; tree.num_nodes()];
        for v in tree.top_down() {
            let inherited = tree.parent(v).map_or(usize::MAX, |p| first[p]);
            first[v] = if inherited != usize::MAX {
                inherited
            } else if hit(v, x.value(v)) {
                tree.depth(v)
            } else {
                usize::MAX
            };
        }
        let depths = (0..tree.num_atoms())
            .map(|a| first[tree.atom_leaf(a)].min(tree.horizon()))
            .collect();
        Self::new(tree, depths).expect("hitting times are measurable")
    }

    pub fn depths(&self) -> &[usize] {
        &self.depths
    }

    pub fn depth(&self, atom: usize) -> usize {
        self.depths[atom]
    }

    pub fn has_stopped(&self, node: usize) -> bool {
        self.stopped[node]
    }

    /// The strategy `1_{[0, tau]}`: hold on the step out of `u` iff tau > depth(u).
    pub fn indicator_until(&self, tree: Arc<ScenarioTree>) -> Result<PredictableStrategy> {
        if self.stopped.len() != tree.num_nodes() {
            return Err(Error::TreeMismatch);
        }
        let values = self.stopped.iter().map(|s| if *s { 0.0 } else { 1.0 }).collect();
        PredictableStrategy::new(tree, values)
    }
}

/// `X^tau`: the process frozen from tau onward.
pub fn stop(x: &AdaptedProcess, tau: &StoppingTime) -> Result<AdaptedProcess> {
    let tree = x.tree();
    if tau.depths.len() != tree.num_atoms() || tau.stopped.len() != tree.num_nodes() {
        return Err(Error::TreeMismatch);
    }
    let mut out = x.values.clone();
    for v in tree.top_down() {
        if let Some(p) = tree.parent(v) {
            if tau.stopped[p] {
                out[v] = out[p];
            }
        }
    }
    Ok(AdaptedProcess { tree: tree.clone(), values: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probspace::{random_tree, RandomTreeSpec, TimeGrid, TreeBuilder};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Single path 0 -> 1 -> 2 -> 3 with deterministic transitions.
    fn chain(steps: usize) -> Arc<ScenarioTree> {
        let mut b = TreeBuilder::new(TimeGrid::uniform(steps));
        let mut cur = b.root();
        for _ in 0..steps {
            cur = b.add_child(cur, 1.0);
        }
        Arc::new(b.build().unwrap())
    }

    fn random_process(tree: &Arc<ScenarioTree>, rng: &mut ChaCha8Rng) -> AdaptedProcess {
        let mut values = random_values(tree.num_nodes(), rng);
        values[tree.root()] = 0.0;
        AdaptedProcess::new(tree.clone(), values).unwrap()
    }

    fn random_values(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn integral_examples() {
        let t = chain(2);
        let x = AdaptedProcess::new(t.clone(), vec![0.0, 1.0, -1.0]).unwrap();
        let zero = PredictableStrategy::zeros(t.clone());
        assert!(x.integrate(&zero).unwrap().values().iter().all(|v| *v == 0.0));
        let one = PredictableStrategy::constant(t.clone(), 1.0);
        let shifted = x.map(|v| v - x.initial());
        assert_eq!(x.integrate(&one).unwrap(), shifted);
        let k = PredictableStrategy::new(t.clone(), vec![1.0, 0.5, 0.0]).unwrap();
        let i = x.integrate(&k).unwrap();
        assert_eq!(i.terminal(), vec![0.0]);
    }

    #[test]
    fn integral_rejects_other_tree() {
        let x = AdaptedProcess::zeros(chain(2));
        let k = PredictableStrategy::zeros(chain(3));
        assert_eq!(x.integrate(&k), Err(Error::TreeMismatch));
    }

    #[test]
    fn stop_examples() {
        let t = chain(3);
        let x = AdaptedProcess::new(t.clone(), vec![0.0, -0.2, -0.7, 0.4]).unwrap();
        let horizon = StoppingTime::constant(&t, 3).unwrap();
        assert_eq!(stop(&x, &horizon).unwrap(), x);
        let zero = StoppingTime::constant(&t, 0).unwrap();
        assert!(stop(&x, &zero).unwrap().values().iter().all(|v| *v == 0.0));
        let tau = StoppingTime::first_hitting(&x, |_, v| v <= -0.5);
        assert_eq!(tau.depths(), &[2]);
        assert_eq!(stop(&x, &tau).unwrap().values(), &[0.0, -0.2, -0.7, -0.7]);
    }

    #[test]
    fn non_measurable_time_is_rejected() {
        let t = ScenarioTree::one_period(&[0.5, 0.5]).unwrap();
        assert!(matches!(StoppingTime::new(&t, vec![0, 1]), Err(Error::NotMeasurable { node: 0 })));
    }

    #[test]
    fn running_sup_examples() {
        let t = chain(2);
        assert_eq!(AdaptedProcess::zeros(t.clone()).running_sup_abs(), vec![0.0]);
        let x = AdaptedProcess::new(t, vec![0.0, 1.0, -3.0]).unwrap();
        assert_eq!(x.running_sup_abs(), vec![3.0]);
        assert_eq!(x.jumps(), vec![0.0, 1.0, -4.0]);
    }

    #[test]
    fn running_sup_matches_path_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let t = random_tree(&mut rng, RandomTreeSpec::default());
            let x = AdaptedProcess::new(t.clone(), random_values(t.num_nodes(), &mut rng)).unwrap();
            let sup = x.running_sup_abs();
            for a in 0..t.num_atoms() {
                let scan = t.atom_path(a).iter().map(|n| x.value(*n).abs()).fold(0.0, f64::max);
                assert_eq!(sup[a], scan);
            }
        }
    }

    #[test]
    fn csv_export_lists_every_atom_and_depth() {
        let t = ScenarioTree::one_period(&[0.5, 0.5]).unwrap();
        let x = AdaptedProcess::terminal_jump(Arc::new(t), &[-1.0, 1.5]).unwrap();
        let mut buf = Vec::new();
        x.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "atom,path,depth,value\n0,0,0,0\n0,0-1,1,-1\n1,0,0,0\n1,0-2,1,1.5\n");
    }

    proptest! {
        #[test]
        fn integral_is_bilinear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tree(&mut rng, RandomTreeSpec::default());
            let n = t.num_nodes();
            let x = AdaptedProcess::new(t.clone(), random_values(n, &mut rng)).unwrap();
            let y = AdaptedProcess::new(t.clone(), random_values(n, &mut rng)).unwrap();
            let k = PredictableStrategy::new(t.clone(), random_values(n, &mut rng)).unwrap();
            let l = PredictableStrategy::new(t.clone(), random_values(n, &mut rng)).unwrap();
            let lhs = x.integrate(&k.scale(a).add(&l.scale(b)).unwrap()).unwrap();
            let rhs = x.integrate(&k).unwrap().scale(a).add(&x.integrate(&l).unwrap().scale(b)).unwrap();
            for (p, q) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
            let lhs = x.scale(a).add(&y.scale(b)).unwrap().integrate(&k).unwrap();
            let rhs = x.integrate(&k).unwrap().scale(a).add(&y.integrate(&k).unwrap().scale(b)).unwrap();
            for (p, q) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn integral_is_associative(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tree(&mut rng, RandomTreeSpec::default());
            let n = t.num_nodes();
            let x = random_process(&t, &mut rng);
            let h = PredictableStrategy::new(t.clone(), random_values(n, &mut rng)).unwrap();
            let k = PredictableStrategy::new(t.clone(), random_values(n, &mut rng)).unwrap();
            let lhs = x.integrate(&k).unwrap().integrate(&h).unwrap();
            let rhs = x.integrate(&h.mul(&k).unwrap()).unwrap();
            for (p, q) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn stopping_commutes_with_integration(seed in 0u64..10_000, level in -1.5f64..1.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tree(&mut rng, RandomTreeSpec::default());
            let n = t.num_nodes();
            let x = AdaptedProcess::new(t.clone(), random_values(n, &mut rng)).unwrap();
            let k = PredictableStrategy::new(t.clone(), random_values(n, &mut rng)).unwrap();
            let tau = StoppingTime::first_hitting(&x, |_, v| v <= level);
            let gated = tau.indicator_until(t.clone()).unwrap().mul(&k).unwrap();
            let lhs = x.integrate(&gated).unwrap();
            let rhs = stop(&x.integrate(&k).unwrap(), &tau).unwrap();
            for (p, q) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
            let once = stop(&x, &tau).unwrap();
            prop_assert_eq!(stop(&once, &tau).unwrap(), once);
        }
    }
}
