//! Dense strictly convex QP with affine inequality rows and weighted slacks.
//!
//! Minimizes `|u|^2 + 1/2 sum w_i eps_i^2` subject to `a_j . u >= b_j` (hard)
//! or `a_j . u >= b_j - eps_{s(j)}` (soft), using the Goldfarb-Idnani dual
//! active-set method. The Hessian is diagonal, so the initial factor
//! `J = L^-T` is diagonal too.

pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::cbf::AffineConstraint;
use crate::error::{Error, Result};

/// Hard rows must hold to within this absolute margin at an optimum.
pub const FEAS_TOL: f64 = 1e-8;
/// Bound on the scaled KKT residual of a returned optimum.
pub const KKT_TOL: f64 = 1e-6;
/// Rows with a coefficient norm below this are treated as constant.
pub const DEGENERATE_ROW_NORM: f64 = 1e-12;

const NORMALIZED_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    /// Control dimension.
    pub m: usize,
    /// One positive weight per slack variable.
    pub slack_weights: Vec<f64>,
    pub constraints: Vec<AffineConstraint>,
}

impl QpProblem {
    pub fn new(m: usize) -> Self {
        QpProblem {
            m,
            slack_weights: Vec::new(),
            constraints: Vec::new(),
        }
    }

    pub fn p(&self) -> usize {
        self.slack_weights.len()
    }

    pub fn objective(&self, u: &[f64], eps: &[f64]) -> f64 {
        let uu: f64 = u.iter().map(|v| v * v).sum();
        let ee: f64 = eps
            .iter()
            .zip(&self.slack_weights)
            .map(|(e, w)| w * e * e)
            .sum();
        uu + 0.5 * ee
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self
            .slack_weights
            .iter()
            .any(|w| !(w.is_finite() && *w > 0.0))
        {
            return Err(Error::Input(
                "slack weights must be positive and finite".into(),
            ));
        }
        for (j, row) in self.constraints.iter().enumerate() {
            if row.a.len() != self.m {
                return Err(Error::dimension(self.m, row.a.len()));
            }
            if !row.b.is_finite() || row.a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!(
                    "constraint {j} ({}) has non-finite coefficients",
                    row.tag
                )));
            }
            if let Some(s) = row.slack_index {
                if s >= self.p() {
                    return Err(Error::Input(format!(
                        "constraint {j} uses slack {s} but only {} weights were given",
                        self.p()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Row `j` over the stacked variable `(u, eps)`.
    pub(crate) fn full_row(&self, j: usize) -> Vec<f64> {
        let row = &self.constraints[j];
        let mut v = vec![0.0; self.m + self.p()];
        v[..self.m].copy_from_slice(&row.a);
        if let Some(s) = row.slack_index {
            v[self.m + s] = 1.0;
        }
        v
    }

    /// Diagonal of the Hessian of the objective over `(u, eps)`.
    pub(crate) fn hessian_diag(&self) -> Vec<f64> {
        let mut h = vec![2.0; self.m];
        h.extend_from_slice(&self.slack_weights);
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub u: Vec<f64>,
    pub eps: Vec<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    /// Indices of the constraints active at the optimum.
    pub active: Vec<usize>,
    /// Tags of the rows implicated when the problem is infeasible.
    pub detail: String,
}

impl QpSolution {
    fn infeasible(prob: &QpProblem, detail: String) -> Self {
        QpSolution {
            u: vec![0.0; prob.m],
            eps: vec![0.0; prob.p()],
            status: QpStatus::Infeasible,
            kkt_residual: f64::NAN,
            active: Vec::new(),
            detail,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Working state of the dual active-set iteration.
struct ActiveSet {
    n: usize,
    /// Columns of `J`, each of length `n`.
    j: Vec<Vec<f64>>,
    /// Upper-triangular `R`, stored by columns; column `c` has `c + 1` entries.
    r: Vec<Vec<f64>>,
    /// Constraint indices in the active set, in factor order.
    idx: Vec<usize>,
    /// Multipliers of the active constraints.
    lambda: Vec<f64>,
}

impl ActiveSet {
    fn new(hdiag: &[f64]) -> Self {
        let n = hdiag.len();
        let j = (0..n)
            .map(|c| {
                let mut col = vec![0.0; n];
                col[c] = 1.0 / hdiag[c].sqrt();
                col
            })
            .collect();
        ActiveSet {
            n,
            j,
            r: Vec::new(),
            idx: Vec::new(),
            lambda: Vec::new(),
        }
    }

    fn q(&self) -> usize {
        self.idx.len()
    }

    /// `d = J^T n`.
    fn project(&self, row: &[f64]) -> Vec<f64> {
        self.j.iter().map(|col| dot(col, row)).collect()
    }

    /// Primal direction `z = J2 d2` and dual direction `r = R^-1 d1`.
    fn directions(&self, d: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let q = self.q();
        let mut z = vec![0.0; self.n];
        for c in q..self.n {
            if d[c] != 0.0 {
                for (zi, ji) in z.iter_mut().zip(&self.j[c]) {
                    *zi += d[c] * ji;
                }
            }
        }
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for c in i + 1..q {
                acc -= self.r[c][i] * r[c];
            }
            r[i] = acc / self.r[i][i];
        }
        (z, r)
    }

    /// Appends a constraint whose projection is `d`, rotating `J` so that
    /// `R` stays upper triangular. Returns false when the new row is
    /// numerically dependent on the active ones.
    fn add(&mut self, index: usize, mut d: Vec<f64>) -> bool {
        let q = self.q();
        for c in (q + 1..self.n).rev() {
            let (x, y) = (d[c - 1], d[c]);
            if y == 0.0 {
                continue;
            }
            let h = x.hypot(y);
            let (cs, sn) = (x / h, y / h);
            d[c - 1] = h;
            d[c] = 0.0;
            let (left, right) = self.j.split_at_mut(c);
            let (a, b) = (&mut left[c - 1], &mut right[0]);
            for (ai, bi) in a.iter_mut().zip(b.iter_mut()) {
                let (va, vb) = (*ai, *bi);
                *ai = cs * va + sn * vb;
                *bi = -sn * va + cs * vb;
            }
        }
        if d[q].abs() <= f64::EPSILON * 1e2 {
            return false;
        }
        self.r.push(d[..=q].to_vec());
        self.idx.push(index);
        true
    }

    /// Removes the active constraint at position `pos` and re-triangularizes.
    fn drop(&mut self, pos: usize) {
        self.r.remove(pos);
        self.idx.remove(pos);
        self.lambda.remove(pos);
        let q = self.q();
        // columns pos.. are upper Hessenberg: entry (c + 1, c) is nonzero
        for c in pos..q {
            let (x, y) = (self.r[c][c], self.r[c][c + 1]);
            let h = x.hypot(y);
            if h == 0.0 {
                self.r[c].truncate(c + 1);
                continue;
            }
            let (cs, sn) = (x / h, y / h);
            for col in self.r.iter_mut().skip(c) {
                let (va, vb) = (col[c], col[c + 1]);
                col[c] = cs * va + sn * vb;
                col[c + 1] = -sn * va + cs * vb;
            }
            self.r[c].truncate(c + 1);
            let (left, right) = self.j.split_at_mut(c + 1);
            let (a, b) = (&mut left[c], &mut right[0]);
            for (ai, bi) in a.iter_mut().zip(b.iter_mut()) {
                let (va, vb) = (*ai, *bi);
                *ai = cs * va + sn * vb;
                *bi = -sn * va + cs * vb;
            }
        }
    }

    fn condition(&self) -> f64 {
        let diag = (0..self.q()).map(|i| self.r[i][i].abs());
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        if self.q() == 0 {
            1.0
        } else if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the QP to global optimality or reports it infeasible.
pub fn solve(prob: &QpProblem) -> Result<QpSolution> {
    prob.validate()?;
    let m = prob.m;
    let n = m + prob.p();
    let hdiag = prob.hessian_diag();

    // unit-norm rows over (u, eps); constant rows are resolved up front
    let mut rows: Vec<(usize, Vec<f64>, f64, f64)> = Vec::with_capacity(prob.constraints.len());
    for (j, c) in prob.constraints.iter().enumerate() {
        let full = prob.full_row(j);
        let norm = dot(&full, &full).sqrt();
        if norm < DEGENERATE_ROW_NORM {
            if c.b <= FEAS_TOL {
                continue;
            }
            let tag = if c.tag.is_empty() {
                format!("row {j}")
            } else {
                c.tag.clone()
            };
            return Ok(QpSolution::infeasible(
                prob,
                format!("{tag} has a vanishing gradient but needs {:.3e}", c.b),
            ));
        }
        rows.push((j, full.iter().map(|v| v / norm).collect(), c.b / norm, norm));
    }

    let mut x = vec![0.0; n];
    let mut set = ActiveSet::new(&hdiag);
    let mut in_set = vec![false; rows.len()];
    let max_iter = 50 * (rows.len() + n) + 100;
    let mut iter = 0;

    loop {
        // most violated inactive row
        let mut pick: Option<(usize, f64)> = None;
        for (k, (_, row, b, norm)) in rows.iter().enumerate() {
            if in_set[k] {
                continue;
            }
            let s = dot(row, &x) - b;
            let violated = s < -NORMALIZED_TOL || s * norm < -0.5 * FEAS_TOL;
            if violated && pick.is_none_or(|(_, best)| s < best) {
                pick = Some((k, s));
            }
        }
        let Some((p, _)) = pick else { break };
        let mut lambda_p = 0.0;

        // take steps until constraint p joins the active set
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(Error::Numerical {
                    message: format!("active-set iteration limit ({max_iter}) reached"),
                    condition: set.condition(),
                });
            }
            let row = &rows[p].1;
            let d = set.project(row);
            let (z, r) = set.directions(&d);
            let zn = dot(&z, row);

            let mut t1 = f64::INFINITY;
            let mut drop_pos = None;
            for (pos, (&rj, &lj)) in r.iter().zip(&set.lambda).enumerate() {
                if rj > 0.0 {
                    let t = lj / rj;
                    if t < t1 {
                        t1 = t;
                        drop_pos = Some(pos);
                    }
                }
            }
            let s_p = dot(row, &x) - rows[p].2;
            let t2 = if zn.abs() > 1e-14 {
                -s_p / zn
            } else {
                f64::INFINITY
            };

            if t1.is_infinite() && t2.is_infinite() {
                let mut implicated: Vec<String> = set
                    .idx
                    .iter()
                    .chain(std::iter::once(&p))
                    .map(|&k| {
                        let j = rows[k].0;
                        let tag = &prob.constraints[j].tag;
                        if tag.is_empty() {
                            format!("row {j}")
                        } else {
                            tag.clone()
                        }
                    })
                    .collect();
                implicated.dedup();
                return Ok(QpSolution::infeasible(
                    prob,
                    format!("no control satisfies {} together", implicated.join(", ")),
                ));
            }

            let t = t1.min(t2);
            for (lj, rj) in set.lambda.iter_mut().zip(&r) {
                *lj -= t * rj;
            }
            lambda_p += t;
            if t2.is_finite() {
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
            }
            if t2 <= t1 {
                let d = set.project(row);
                if !set.add(p, d) {
                    return Err(Error::Numerical {
                        message: "constraint dependent on the active set".into(),
                        condition: set.condition(),
                    });
                }
                set.lambda.push(lambda_p);
                in_set[p] = true;
                break;
            }
            let pos = drop_pos.expect("finite dual step has a blocking constraint");
            in_set[set.idx[pos]] = false;
            set.drop(pos);
        }
    }

    // stationarity H x = N_A lambda, scaled by the gradient size
    let mut resid: Vec<f64> = x.iter().zip(&hdiag).map(|(xi, hi)| hi * xi).collect();
    let scale = resid.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    for (&k, &l) in set.idx.iter().zip(&set.lambda) {
        for (ri, ni) in resid.iter_mut().zip(&rows[k].1) {
            *ri -= l * ni;
        }
    }
    let mut kkt = resid.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) / scale;
    for (&k, &l) in set.idx.iter().zip(&set.lambda) {
        let s = dot(&rows[k].1, &x) - rows[k].2;
        kkt = kkt.max((-l).max(0.0) / scale).max(s.abs());
    }
    if kkt > KKT_TOL {
        log::debug!("rejected solution {x:?} for {prob:?}");
        return Err(Error::Numerical {
            message: format!("KKT residual {kkt:.3e} exceeds tolerance"),
            condition: set.condition(),
        });
    }

    let active = {
        let mut a: Vec<usize> = set.idx.iter().map(|&k| rows[k].0).collect();
        a.sort_unstable();
        a
    };
    Ok(QpSolution {
        u: x[..m].to_vec(),
        eps: x[m..].to_vec(),
        status: QpStatus::Optimal,
        kkt_residual: kkt,
        active,
        detail: String::new(),
    })
}

#[cfg(test)]
mod tests;
