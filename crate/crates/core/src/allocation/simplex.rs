//! Dense two-phase tableau simplex with Bland's anti-cycling rule.

use crate::error::{OsarError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// maximize cᵀx subject to the rows and x ≥ 0.
#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

struct Tableau {
    m: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let p = self.data[row * w + col];
        let inv = 1.0 / p;
        for v in &mut self.data[row * w..(row + 1) * w] {
            *v *= inv;
        }
        self.data[row * w + col] = 1.0;
        let pivot_row: Vec<f64> = self.data[row * w..(row + 1) * w].to_vec();
        for r in 0..=self.m {
            if r == row {
                continue;
            }
            let f = self.data[r * w + col];
            if f == 0.0 {
                continue;
            }
            let dst = &mut self.data[r * w..(r + 1) * w];
            for (d, s) in dst.iter_mut().zip(&pivot_row) {
                *d -= f * s;
            }
            dst[col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Run simplex iterations on the objective row `m` (stored as negated
    /// reduced costs) over columns `< allowed`. Returns pivots used.
    fn optimize(&mut self, allowed: usize, max_pivots: usize) -> Result<usize> {
        let rhs = self.width - 1;
        let mut pivots = 0;
        loop {
            // Bland: lowest-index column with negative objective-row entry.
            let enter = (0..allowed).find(|&c| self.at(self.m, c) < -PIVOT_TOL);
            let Some(col) = enter else { return Ok(pivots) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, col);
                if a > PIVOT_TOL {
                    let ratio = self.at(r, rhs) / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-14 * lratio.abs().max(1.0)
                                || (ratio <= lratio + 1e-14 * lratio.abs().max(1.0)
                                    && self.basis[r] < self.basis[lr])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, _)) = leave else { return Err(OsarError::Unbounded) };
            self.pivot(row, col);
            pivots += 1;
            if pivots > max_pivots {
                return Err(OsarError::Numerical(format!("simplex exceeded {max_pivots} pivots")));
            }
        }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.objective.len();
    let m = lp.rows.len();
    let mut n_slack = 0;
    let mut n_art = 0;
    let mut rows = Vec::with_capacity(m);
    for (coef, rel, rhs) in &lp.rows {
        if coef.len() != n {
            return Err(OsarError::Contract("row length differs from objective length".into()));
        }
        let (coef, rel, rhs) = if *rhs < 0.0 {
            let flipped = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
            (coef.iter().map(|v| -v).collect::<Vec<_>>(), flipped, -rhs)
        } else {
            (coef.clone(), *rel, *rhs)
        };
        match rel {
            Relation::Le => n_slack += 1,
            Relation::Ge => {
                n_slack += 1;
                n_art += 1
            }
            Relation::Eq => n_art += 1,
        }
        rows.push((coef, rel, rhs));
    }
    let art_start = n + n_slack;
    let width = n + n_slack + n_art + 1;
    let rhs_col = width - 1;
    let mut t = Tableau { m, width, data: vec![0.0; (m + 1) * width], basis: vec![0; m] };
    let (mut si, mut ai) = (n, art_start);
    for (r, (coef, rel, rhs)) in rows.iter().enumerate() {
        t.data[r * width..r * width + n].copy_from_slice(coef);
        t.data[r * width + rhs_col] = *rhs;
        match rel {
            Relation::Le => {
                t.data[r * width + si] = 1.0;
                t.basis[r] = si;
                si += 1;
            }
            Relation::Ge => {
                t.data[r * width + si] = -1.0;
                si += 1;
                t.data[r * width + ai] = 1.0;
                t.basis[r] = ai;
                ai += 1;
            }
            Relation::Eq => {
                t.data[r * width + ai] = 1.0;
                t.basis[r] = ai;
                ai += 1;
            }
        }
    }
    let max_pivots = 50 * (m + width) + 1000;
    let mut pivots = 0;
    if n_art > 0 {
        // Phase 1: minimize the artificial sum, i.e. maximize its negation.
        for r in 0..m {
            if t.basis[r] >= art_start {
                for c in 0..width {
                    let v = t.data[r * width + c];
                    t.data[m * width + c] -= v;
                }
            }
        }
        for c in art_start..rhs_col {
            t.data[m * width + c] = 0.0;
        }
        pivots += t.optimize(art_start, max_pivots)?;
        if -t.at(m, rhs_col) > FEAS_TOL * (1.0 + rows.iter().map(|r| r.2).fold(0.0, f64::max)) {
            return Err(OsarError::Numerical("linear program is infeasible".into()));
        }
        // Drive remaining zero-level artificials out of the basis.
        for r in 0..m {
            if t.basis[r] >= art_start {
                if let Some(c) = (0..art_start).find(|&c| t.at(r, c).abs() > PIVOT_TOL) {
                    t.pivot(r, c);
                    pivots += 1;
                }
            }
        }
    }
    for c in 0..width {
        t.data[m * width + c] = 0.0;
    }
    for (c, &v) in lp.objective.iter().enumerate() {
        t.data[m * width + c] = -v;
    }
    for r in 0..m {
        let b = t.basis[r];
        let cb = if b < n { lp.objective[b] } else { 0.0 };
        if cb != 0.0 {
            for c in 0..width {
                let v = t.data[r * width + c];
                t.data[m * width + c] += cb * v;
            }
        }
    }
    pivots += t.optimize(art_start, max_pivots)?;
    let mut x = vec![0.0; n];
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] = t.at(r, rhs_col).max(0.0);
        }
    }
    let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { x, value, pivots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn textbook_lp() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 -> (2, 6), 36
        let lp = LinearProgram {
            objective: vec![3.0, 5.0],
            rows: vec![
                (vec![1.0, 0.0], Relation::Le, 4.0),
                (vec![0.0, 2.0], Relation::Le, 12.0),
                (vec![3.0, 2.0], Relation::Le, 18.0),
            ],
        };
        let s = solve(&lp).unwrap();
        assert_relative_eq!(s.value, 36.0, epsilon = 1e-10);
        assert_relative_eq!(s.x[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(s.x[1], 6.0, epsilon = 1e-10);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max x + y, x + y = 1, x ≥ 0.3, y ≥ 0.2 (as Ge rows)
        let lp = LinearProgram {
            objective: vec![1.0, 2.0],
            rows: vec![
                (vec![1.0, 1.0], Relation::Eq, 1.0),
                (vec![1.0, 0.0], Relation::Ge, 0.3),
            ],
        };
        let s = solve(&lp).unwrap();
        assert_relative_eq!(s.x[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(s.x[1], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn detects_unbounded_and_infeasible() {
        let lp = LinearProgram { objective: vec![1.0], rows: vec![(vec![-1.0], Relation::Le, 1.0)] };
        assert!(matches!(solve(&lp), Err(OsarError::Unbounded)));
        let lp = LinearProgram {
            objective: vec![1.0],
            rows: vec![(vec![1.0], Relation::Le, 1.0), (vec![1.0], Relation::Ge, 2.0)],
        };
        assert!(solve(&lp).is_err());
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's classic cycling instance under the largest-coefficient rule.
        let lp = LinearProgram {
            objective: vec![0.75, -150.0, 0.02, -6.0],
            rows: vec![
                (vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0),
                (vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0),
                (vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0),
            ],
        };
        let s = solve(&lp).unwrap();
        assert_relative_eq!(s.value, 0.05, epsilon = 1e-10);
    }
}
