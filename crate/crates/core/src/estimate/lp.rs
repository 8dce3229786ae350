//! Dense two-phase primal simplex for `min c^T z` subject to `Q z <= k`
//! with sign-unrestricted `z`.
//!
//! Free variables are split into nonnegative pairs, rows are slackened, and
//! rows whose right-hand side is negative get phase-1 artificials. Bland's
//! rule everywhere: no cycling, deterministic pivots. Problem sizes in this
//! crate stay below a few hundred columns, so a full tableau is the simplest
//! correct tool.

use nalgebra::{DMatrix, DVector};

/// `min c^T z` subject to `q z <= k`, `z` free.
#[derive(Clone, Debug)]
pub struct LpProblem {
    pub c: DVector<f64>,
    pub q: DMatrix<f64>,
    pub k: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal(DVector<f64>),
    Infeasible,
    Unbounded,
}

const REDUCED_COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;

struct Tableau {
    /// Row-reduced `[A | b]`, basis columns are unit vectors.
    t: DMatrix<f64>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[(i, self.ncols)]
    }

    /// Reduced-cost row for the given objective.
    fn reduced_costs(&self, costs: &[f64]) -> Vec<f64> {
        let m = self.basis.len();
        let mut r = costs.to_vec();
        for i in 0..m {
            let cb = costs[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for j in 0..self.ncols {
                r[j] -= cb * self.t[(i, j)];
            }
        }
        r
    }

    fn objective(&self, costs: &[f64]) -> f64 {
        self.basis
            .iter()
            .enumerate()
            .map(|(i, &b)| costs[b] * self.rhs(i))
            .sum()
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let m = self.t.nrows();
        let piv = self.t[(row, col)];
        for j in 0..=self.ncols {
            self.t[(row, j)] /= piv;
        }
        for i in 0..m {
            if i == row {
                continue;
            }
            let f = self.t[(i, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..=self.ncols {
                self.t[(i, j)] -= f * self.t[(row, j)];
            }
        }
        self.basis[row] = col;
    }

    /// Bland's-rule simplex over the allowed column range.
    /// Returns false when the problem is unbounded in this phase.
    fn run(&mut self, costs: &[f64], allowed: impl Fn(usize) -> bool) -> bool {
        loop {
            let r = self.reduced_costs(costs);
            let entering = (0..self.ncols)
                .find(|&j| allowed(j) && !self.basis.contains(&j) && r[j] < -REDUCED_COST_TOL);
            let Some(col) = entering else {
                return true;
            };
            // ratio test, ties broken by the smallest basis variable index
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..self.basis.len() {
                let a = self.t[(i, col)];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    let key = (ratio, self.basis[i]);
                    if best
                        .map(|(br, bb, _)| (key.0, key.1) < (br, bb))
                        .unwrap_or(true)
                    {
                        best = Some((ratio, self.basis[i], i));
                    }
                }
            }
            let Some((_, _, row)) = best else {
                return false;
            };
            self.pivot(row, col);
        }
    }
}

/// Solve the free-variable inequality form with a two-phase tableau simplex.
pub fn lp_solve(p: &LpProblem) -> LpOutcome {
    let m = p.q.nrows();
    let n = p.q.ncols();
    assert_eq!(p.c.len(), n, "cost length");
    assert_eq!(p.k.len(), m, "bound length");

    // columns: u (n), v (n), slack (m), artificial (added as needed)
    let base_cols = 2 * n + m;
    let mut art_rows: Vec<usize> = Vec::new();
    for i in 0..m {
        if p.k[i] < 0.0 {
            art_rows.push(i);
        }
    }
    let ncols = base_cols + art_rows.len();
    let mut t = DMatrix::zeros(m, ncols + 1);
    let mut basis = vec![0usize; m];
    let mut next_art = base_cols;
    for i in 0..m {
        let flip = if p.k[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = flip * p.q[(i, j)];
            t[(i, n + j)] = -flip * p.q[(i, j)];
        }
        t[(i, 2 * n + i)] = flip;
        t[(i, ncols)] = flip * p.k[i];
        if flip < 0.0 {
            t[(i, next_art)] = 1.0;
            basis[i] = next_art;
            next_art += 1;
        } else {
            basis[i] = 2 * n + i;
        }
    }
    let mut tab = Tableau { t, basis, ncols };

    if !art_rows.is_empty() {
        let mut phase1 = vec![0.0; ncols];
        for j in base_cols..ncols {
            phase1[j] = 1.0;
        }
        // phase 1 of a feasible-region search cannot be unbounded
        let _ = tab.run(&phase1, |_| true);
        let scale = 1.0 + p.k.amax();
        if tab.objective(&phase1) > 1e-7 * scale {
            return LpOutcome::Infeasible;
        }
        // drive any degenerate artificials out of the basis where possible
        for i in 0..m {
            if tab.basis[i] >= base_cols {
                if let Some(col) = (0..base_cols).find(|&j| tab.t[(i, j)].abs() > PIVOT_TOL) {
                    tab.pivot(i, col);
                }
            }
        }
    }

    let mut costs = vec![0.0; ncols];
    for j in 0..n {
        costs[j] = p.c[j];
        costs[n + j] = -p.c[j];
    }
    if !tab.run(&costs, |j| j < base_cols) {
        return LpOutcome::Unbounded;
    }

    let mut z = DVector::zeros(n);
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            z[b] += tab.rhs(i);
        } else if b < 2 * n {
            z[b - n] -= tab.rhs(i);
        }
    }
    LpOutcome::Optimal(z)
}

/// Objective value of a candidate point.
pub fn lp_objective(p: &LpProblem, z: &DVector<f64>) -> f64 {
    p.c.dot(z)
}

/// Feasibility check with an absolute slack.
pub fn lp_feasible(p: &LpProblem, z: &DVector<f64>, tol: f64) -> bool {
    let qz = &p.q * z;
    (0..p.k.len()).all(|i| qz[i] <= p.k[i] + tol)
}

/// The least-absolute-residuals subproblem as a linear program:
/// variables `[dx; s]`, constraints `|dy - H dx| <= s` component-wise,
/// objective `sum w_tilde_i s_i`.
pub fn lad_problem(h: &DMatrix<f64>, dy: &DVector<f64>, w_tilde: &DVector<f64>) -> LpProblem {
    let mp = h.nrows();
    let n = h.ncols();
    let mut q = DMatrix::zeros(2 * mp, n + mp);
    let mut k = DVector::zeros(2 * mp);
    for i in 0..mp {
        for j in 0..n {
            q[(i, j)] = -h[(i, j)];
            q[(mp + i, j)] = h[(i, j)];
        }
        q[(i, n + i)] = -1.0;
        q[(mp + i, n + i)] = -1.0;
        k[i] = -dy[i];
        k[mp + i] = dy[i];
    }
    let mut c = DVector::zeros(n + mp);
    for i in 0..mp {
        c[n + i] = w_tilde[i];
    }
    LpProblem { c, q, k }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn solve(c: &[f64], q: &[&[f64]], k: &[f64]) -> LpOutcome {
        let n = c.len();
        let m = k.len();
        let mut qm = DMatrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                qm[(i, j)] = q[i][j];
            }
        }
        lp_solve(&LpProblem {
            c: DVector::from_row_slice(c),
            q: qm,
            k: DVector::from_row_slice(k),
        })
    }

    #[test]
    fn lower_bounded_minimum() {
        // min x s.t. x >= 1, i.e. -x <= -1
        match solve(&[1.0], &[&[-1.0]], &[-1.0]) {
            LpOutcome::Optimal(z) => assert_relative_eq!(z[0], 1.0, epsilon = 1e-9),
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn two_dimensional_vertex() {
        // min -x - y s.t. x + y <= 4, x <= 2, y <= 3 -> (2, 2), value -4
        match solve(
            &[-1.0, -1.0],
            &[&[1.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]],
            &[4.0, 2.0, 3.0],
        ) {
            LpOutcome::Optimal(z) => {
                assert_relative_eq!(z[0] + z[1], 4.0, epsilon = 1e-9);
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        // x <= -1 and -x <= -1 cannot both hold
        assert_eq!(
            solve(&[1.0], &[&[1.0], &[-1.0]], &[-1.0, -1.0]),
            LpOutcome::Infeasible
        );
        // min -x s.t. x >= 1: unbounded below
        assert_eq!(solve(&[-1.0], &[&[-1.0]], &[-1.0]), LpOutcome::Unbounded);
    }

    #[test]
    fn optimum_beats_random_feasible_points() {
        // min x + 2y s.t. -x - y <= -2, x <= 5, y <= 5
        let p = LpProblem {
            c: DVector::from_row_slice(&[1.0, 2.0]),
            q: DMatrix::from_row_slice(3, 2, &[-1.0, -1.0, 1.0, 0.0, 0.0, 1.0]),
            k: DVector::from_row_slice(&[-2.0, 5.0, 5.0]),
        };
        let LpOutcome::Optimal(z) = lp_solve(&p) else {
            panic!("expected optimum")
        };
        assert!(lp_feasible(&p, &z, 1e-9));
        let best = lp_objective(&p, &z);
        let mut seed = 99u64;
        let mut rand = move || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (seed >> 33) as f64 / (1u64 << 31) as f64
        };
        for _ in 0..1000 {
            let cand = DVector::from_row_slice(&[rand() * 5.0, rand() * 5.0]);
            if lp_feasible(&p, &cand, 0.0) {
                assert!(lp_objective(&p, &cand) >= best - 1e-9);
            }
        }
    }

    #[test]
    fn lad_is_weighted_median_scalar() {
        // fitting a constant in L1 is the weighted median
        let data = [3.0, -1.0, 2.0, 10.0, 2.5];
        let weights = [1.0, 0.5, 2.0, 0.3, 1.2];
        let h = DMatrix::from_element(5, 1, 1.0);
        let dy = DVector::from_row_slice(&data);
        let wt = DVector::from_row_slice(&weights);
        let p = lad_problem(&h, &dy, &wt);
        let LpOutcome::Optimal(z) = lp_solve(&p) else {
            panic!("expected optimum")
        };
        let obj = |x: f64| -> f64 {
            data.iter()
                .zip(&weights)
                .map(|(&d, &w)| w * (d - x).abs())
                .sum()
        };
        // any data point is a candidate minimizer; the solver must match the best
        let best = data.iter().map(|&d| obj(d)).fold(f64::MAX, f64::min);
        assert!(obj(z[0]) <= best + 1e-9, "objective {} vs {}", obj(z[0]), best);
    }
}
