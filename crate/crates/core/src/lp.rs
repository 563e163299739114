//! Dense two-phase simplex.
//!
//! Small, deterministic and dependency-free. Every LP in this crate is at
//! most a few hundred rows, so a full tableau is fine. Besides the primal
//! optimum the solver reports shadow prices (`duals`) for optimal problems
//! and a Farkas certificate for infeasible ones; the detectors rely on both.
//!
//! Pivoting is Dantzig's rule with a switch to Bland's rule after a run of
//! degenerate pivots. Ratio-test ties go to the smallest basic column, so the
//! pivot sequence is fully determined by the input.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    NonNegative,
    Free,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<f64>,
    rel: Relation,
    rhs: f64,
}

/// A linear program over `n` variables. Default sense is minimisation.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    kinds: Vec<VarKind>,
    objective: Vec<f64>,
    maximize: bool,
    rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Shadow price of each constraint: d(objective)/d(rhs).
    pub duals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    /// `y` with `y_i <= 0` on `Le` rows, `y_i >= 0` on `Ge` rows,
    /// `y^T A_j <= 0` on non-negative columns, `= 0` on free columns and
    /// `y^T b > 0`.
    Infeasible { farkas: Vec<f64> },
    /// Feasible direction along which the objective improves without bound.
    Unbounded { ray: Vec<f64> },
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<&LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        !matches!(self, LpOutcome::Infeasible { .. })
    }
}

const REDUCED_COST_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-11;
const FEASIBILITY_TOL: f64 = 1e-9;
const MAX_ITERATIONS: usize = 200_000;
const DEGENERATE_RUN_BEFORE_BLAND: usize = 50;

impl LinearProgram {
    pub fn minimize(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            kinds: vec![VarKind::NonNegative; n],
            objective,
            maximize: false,
            rows: Vec::new(),
        }
    }

    pub fn maximize(objective: Vec<f64>) -> Self {
        let mut lp = Self::minimize(objective);
        lp.maximize = true;
        lp
    }

    /// Pure feasibility problem over `n` variables.
    pub fn feasibility(n: usize) -> Self {
        Self::minimize(vec![0.0; n])
    }

    pub fn num_vars(&self) -> usize {
        self.kinds.len()
    }

    pub fn set_free(&mut self, var: usize) -> &mut Self {
        self.kinds[var] = VarKind::Free;
        self
    }

    pub fn set_all_free(&mut self) -> &mut Self {
        self.kinds.iter_mut().for_each(|k| *k = VarKind::Free);
        self
    }

    pub fn add_constraint(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.kinds.len(), "constraint width");
        self.rows.push(Row { coeffs, rel, rhs });
        self
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        Tableau::build(self)?.run(self)
    }
}

struct Tableau {
    m: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    /// column -> (variable, sign) for structural columns
    structural: Vec<(usize, f64)>,
    first_art: usize,
    row_sign: Vec<f64>,
    row_scale: Vec<f64>,
    /// original row index of each tableau row
    row_origin: Vec<usize>,
}

enum Phase {
    One,
    Two,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Result<Tableau> {
        let mut structural = Vec::new();
        for (j, kind) in lp.kinds.iter().enumerate() {
            structural.push((j, 1.0));
            if *kind == VarKind::Free {
                structural.push((j, -1.0));
            }
        }
        let mut kept = Vec::new();
        for (i, row) in lp.rows.iter().enumerate() {
            if !row.rhs.is_finite() || row.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(Error::Solver(format!("non-finite data in constraint {i}")));
            }
            if row.coeffs.iter().all(|a| *a == 0.0) {
                let ok = match row.rel {
                    Relation::Le => row.rhs >= -FEASIBILITY_TOL,
                    Relation::Ge => row.rhs <= FEASIBILITY_TOL,
                    Relation::Eq => row.rhs.abs() <= FEASIBILITY_TOL,
                };
                if !ok {
                    // handled by the caller through an immediate certificate
                    kept.push(i);
                }
                continue;
            }
            kept.push(i);
        }

        let m = kept.len();
        let n_struct = structural.len();
        let n_slack = kept
            .iter()
            .filter(|&&i| lp.rows[i].rel != Relation::Eq)
            .count();
        let first_art = n_struct + n_slack;
        let ncols = first_art + m;
        let width = ncols + 1;
        let mut data = vec![0.0; (m + 1) * width];
        let mut row_sign = Vec::with_capacity(m);
        let mut row_scale = Vec::with_capacity(m);
        let mut slack_col = n_struct;
        for (t, &i) in kept.iter().enumerate() {
            let row = &lp.rows[i];
            let scale = match row.coeffs.iter().fold(0.0_f64, |acc, a| acc.max(a.abs())) {
                s if s > 0.0 => s,
                _ => 1.0,
            };
            let mut rhs = row.rhs / scale;
            let mut rel = row.rel;
            let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
            rhs *= sign;
            if sign < 0.0 {
                rel = match rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
            let base = t * width;
            for (c, &(var, s)) in structural.iter().enumerate() {
                data[base + c] = sign * s * row.coeffs[var] / scale;
            }
            match rel {
                Relation::Le => {
                    data[base + slack_col] = 1.0;
                    slack_col += 1;
                }
                Relation::Ge => {
                    data[base + slack_col] = -1.0;
                    slack_col += 1;
                }
                Relation::Eq => {}
            }
            data[base + first_art + t] = 1.0;
            data[base + ncols] = rhs;
            row_sign.push(sign);
            row_scale.push(scale);
        }
        Ok(Tableau {
            m,
            width,
            data,
            basis: (first_art..first_art + m).collect(),
            structural,
            first_art,
            row_sign,
            row_scale,
            row_origin: kept,
        })
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs_col(&self) -> usize {
        self.width - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.data[r * w + c];
        for j in 0..w {
            self.data[r * w + j] /= p;
        }
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        for i in 0..=self.m {
            if i == r {
                continue;
            }
            let f = self.data[i * w + c];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.data[i * w..(i + 1) * w];
            for (x, pr) in row.iter_mut().zip(&pivot_row) {
                *x -= f * pr;
            }
            row[c] = 0.0;
        }
        self.basis[r] = c;
    }

    fn set_objective(&mut self, costs: &[f64]) {
        let w = self.width;
        let m = self.m;
        let mut obj = costs.to_vec();
        obj.push(0.0);
        for i in 0..m {
            let cb = costs[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for j in 0..w {
                obj[j] -= cb * self.data[i * w + j];
            }
        }
        self.data[m * w..(m + 1) * w].copy_from_slice(&obj);
    }

    /// Returns `Ok(None)` at optimality, `Ok(Some(col))` if unbounded along `col`.
    fn iterate(&mut self, phase: Phase) -> Result<Option<usize>> {
        let entering_limit = match phase {
            Phase::One => self.width - 1,
            Phase::Two => self.first_art,
        };
        let rhs = self.rhs_col();
        let mut degenerate_run = 0usize;
        let mut bland = false;
        for _ in 0..MAX_ITERATIONS {
            let obj = self.m;
            let mut entering = None;
            let mut best = -REDUCED_COST_TOL;
            for j in 0..entering_limit {
                let d = self.at(obj, j);
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = entering else {
                return Ok(None);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, c);
                if a > PIVOT_TOL {
                    let ratio = self.at(i, rhs).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best_ratio)) => {
                            if ratio < best_ratio - 1e-15
                                || (ratio <= best_ratio + 1e-15 && self.basis[i] < self.basis[r])
                            {
                                Some((i, ratio))
                            } else {
                                Some((r, best_ratio))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(Some(c));
            };
            if ratio <= 1e-14 {
                degenerate_run += 1;
                if degenerate_run > DEGENERATE_RUN_BEFORE_BLAND {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
        }
        Err(Error::Solver("simplex iteration limit reached".into()))
    }

    fn map_row_values(&self, lp: &LinearProgram, normalized: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; lp.rows.len()];
        for t in 0..self.m {
            out[self.row_origin[t]] = normalized[t] * self.row_sign[t] / self.row_scale[t];
        }
        out
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpOutcome> {
        // An all-zero row with an unsatisfiable rhs is infeasible on its own.
        for &i in &self.row_origin {
            let row = &lp.rows[i];
            if row.coeffs.iter().all(|a| *a == 0.0) {
                let mut farkas = vec![0.0; lp.rows.len()];
                farkas[i] = match row.rel {
                    Relation::Le => -1.0,
                    Relation::Ge => 1.0,
                    Relation::Eq => row.rhs.signum(),
                };
                return Ok(LpOutcome::Infeasible { farkas });
            }
        }

        let ncols = self.width - 1;
        let mut phase_one = vec![0.0; ncols];
        for c in phase_one.iter_mut().skip(self.first_art) {
            *c = 1.0;
        }
        self.set_objective(&phase_one);
        if self.iterate(Phase::One)?.is_some() {
            return Err(Error::Solver("phase one reported unboundedness".into()));
        }
        let infeasibility = -self.at(self.m, self.rhs_col());
        if infeasibility > FEASIBILITY_TOL {
            let y: Vec<f64> = (0..self.m)
                .map(|t| 1.0 - self.at(self.m, self.first_art + t))
                .collect();
            return Ok(LpOutcome::Infeasible {
                farkas: self.map_row_values(lp, &y),
            });
        }

        // Drive zero-level artificials out of the basis where possible.
        for r in 0..self.m {
            if self.basis[r] < self.first_art {
                continue;
            }
            let col = (0..self.first_art).find(|&j| self.at(r, j).abs() > 1e-9);
            if let Some(c) = col {
                self.pivot(r, c);
            }
        }

        let sense = if lp.maximize { -1.0 } else { 1.0 };
        let mut costs = vec![0.0; ncols];
        for (c, &(var, s)) in self.structural.iter().enumerate() {
            costs[c] = sense * s * lp.objective[var];
        }
        self.set_objective(&costs);
        if let Some(c) = self.iterate(Phase::Two)? {
            let mut ray = vec![0.0; lp.num_vars()];
            let mut add = |col: usize, amount: f64| {
                if col < self.structural.len() {
                    let (var, s) = self.structural[col];
                    ray[var] += s * amount;
                }
            };
            add(c, 1.0);
            for i in 0..self.m {
                add(self.basis[i], -self.at(i, c));
            }
            return Ok(LpOutcome::Unbounded { ray });
        }

        let mut x = vec![0.0; lp.num_vars()];
        for i in 0..self.m {
            let col = self.basis[i];
            if col < self.structural.len() {
                let (var, s) = self.structural[col];
                x[var] += s * self.at(i, self.rhs_col());
            }
        }
        let objective: f64 = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
        let y: Vec<f64> = (0..self.m)
            .map(|t| -sense * self.at(self.m, self.first_art + t))
            .collect();
        Ok(LpOutcome::Optimal(LpSolution {
            x,
            objective,
            duals: self.map_row_values(lp, &y),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn textbook_maximum() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  ->  (2, 6), 36
        let mut lp = LinearProgram::maximize(vec![3.0, 5.0]);
        lp.add_constraint(vec![1.0, 0.0], Relation::Le, 4.0)
            .add_constraint(vec![0.0, 2.0], Relation::Le, 12.0)
            .add_constraint(vec![3.0, 2.0], Relation::Le, 18.0);
        let sol = lp.solve().unwrap();
        let sol = sol.optimal().unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-12);
        assert!((sol.x[1] - 6.0).abs() < 1e-12);
        assert!((sol.objective - 36.0).abs() < 1e-12);
        // shadow prices of the classic example are (0, 1.5, 1)
        assert!((sol.duals[0]).abs() < 1e-12);
        assert!((sol.duals[1] - 1.5).abs() < 1e-12);
        assert!((sol.duals[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_variables_and_equalities() {
        // min x + y s.t. x - y = -3, x >= -10, x free, y >= 0  ->  (-3, 0)
        // min x + y, x - y = -3, x >= -10 (x free), y >= 0 -> x = -3, y = 0
        let mut lp = LinearProgram::minimize(vec![1.0, 1.0]);
        lp.set_free(0);
        lp.add_constraint(vec![1.0, -1.0], Relation::Eq, -3.0)
            .add_constraint(vec![1.0, 0.0], Relation::Ge, -10.0);
        let sol = lp.solve().unwrap();
        let sol = sol.optimal().unwrap();
        assert!((sol.x[0] + 3.0).abs() < 1e-12, "{:?}", sol.x);
        assert!(sol.x[1].abs() < 1e-12);
        assert!((sol.objective + 3.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_system_yields_valid_farkas_certificate() {
        // x + y <= 1, x + y >= 2, x, y >= 0
        let mut lp = LinearProgram::feasibility(2);
        lp.add_constraint(vec![1.0, 1.0], Relation::Le, 1.0)
            .add_constraint(vec![1.0, 1.0], Relation::Ge, 2.0);
        let LpOutcome::Infeasible { farkas } = lp.solve().unwrap() else {
            panic!("expected infeasible");
        };
        assert!(farkas[0] <= 1e-12 && farkas[1] >= -1e-12);
        let cols = [[1.0, 1.0], [1.0, 1.0]];
        for j in 0..2 {
            let ya: f64 = (0..2).map(|i| farkas[i] * cols[i][j]).sum();
            assert!(ya <= 1e-12);
        }
        assert!(dot(&farkas, &[1.0, 2.0]) > 1e-9);
    }

    #[test]
    fn unbounded_ray_improves_objective() {
        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.add_constraint(vec![1.0, -1.0], Relation::Le, 1.0);
        let LpOutcome::Unbounded { ray } = lp.solve().unwrap() else {
            panic!("expected unbounded");
        };
        assert!(ray[0] > 0.0);
        assert!(ray[0] - ray[1] <= 1e-12);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Beale's cycling example (cycles under naive Dantzig without anti-cycling).
        let mut lp = LinearProgram::minimize(vec![-0.75, 150.0, -0.02, 6.0]);
        lp.add_constraint(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0)
            .add_constraint(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0)
            .add_constraint(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let sol = lp.solve().unwrap();
        let sol = sol.optimal().unwrap();
        assert!((sol.objective + 0.05).abs() < 1e-9, "{}", sol.objective);
    }
}
