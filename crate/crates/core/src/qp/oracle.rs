//! Exhaustive active-set enumeration for small QPs.
//!
//! Used as a reference in tests. For every subset `S` of rows it solves the
//! equality-constrained KKT system `(N_S^T H^-1 N_S) lambda = b_S`,
//! `v = H^-1 N_S lambda`, and keeps the cheapest candidate that satisfies all
//! rows. Shares no numerics with the active-set solver.

use super::{QpProblem, QpSolution, QpStatus};
use crate::error::{Error, Result};

pub const MAX_VARIABLES: usize = 6;
pub const MAX_CONSTRAINTS: usize = 12;

const PIVOT_TOL: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-9;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when `a` is numerically singular.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= PIVOT_TOL * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Brute-force solution of `prob`. Errors with [`Error::Size`] past
/// [`MAX_VARIABLES`] variables or [`MAX_CONSTRAINTS`] rows.
pub fn brute_force(prob: &QpProblem) -> Result<QpSolution> {
    prob.validate()?;
    let n = prob.m + prob.p();
    let rows = prob.constraints.len();
    if n > MAX_VARIABLES || rows > MAX_CONSTRAINTS {
        return Err(Error::Size(format!(
            "{n} variables and {rows} constraints (limits {MAX_VARIABLES} and {MAX_CONSTRAINTS})"
        )));
    }
    let hinv: Vec<f64> = prob.hessian_diag().iter().map(|h| 1.0 / h).collect();
    let full: Vec<Vec<f64>> = (0..rows).map(|j| prob.full_row(j)).collect();
    let norms: Vec<f64> = full
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0))
        .collect();

    let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
    for mask in 0u32..(1 << rows) {
        let subset: Vec<usize> = (0..rows).filter(|j| mask & (1 << j) != 0).collect();
        if subset.len() > n {
            continue;
        }
        let gram: Vec<Vec<f64>> = subset
            .iter()
            .map(|&i| {
                subset
                    .iter()
                    .map(|&k| (0..n).map(|c| full[i][c] * hinv[c] * full[k][c]).sum())
                    .collect()
            })
            .collect();
        let rhs: Vec<f64> = subset.iter().map(|&i| prob.constraints[i].b).collect();
        let Some(lambda) = gauss_solve(gram, rhs) else {
            continue;
        };
        let v: Vec<f64> = (0..n)
            .map(|c| {
                hinv[c]
                    * subset
                        .iter()
                        .zip(&lambda)
                        .map(|(&i, l)| full[i][c] * l)
                        .sum::<f64>()
            })
            .collect();
        let feasible = (0..rows).all(|j| {
            let s: f64 =
                full[j].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() - prob.constraints[j].b;
            s >= -FEAS_TOL * norms[j]
        });
        if !feasible {
            continue;
        }
        let obj = prob.objective(&v[..prob.m], &v[prob.m..]);
        if best.as_ref().is_none_or(|(b, _, _)| obj < *b) {
            best = Some((obj, v, subset));
        }
    }

    Ok(match best {
        Some((_, v, active)) => QpSolution {
            u: v[..prob.m].to_vec(),
            eps: v[prob.m..].to_vec(),
            status: QpStatus::Optimal,
            kkt_residual: 0.0,
            active,
            detail: String::new(),
        },
        None => QpSolution {
            u: vec![0.0; prob.m],
            eps: vec![0.0; prob.p()],
            status: QpStatus::Infeasible,
            kkt_residual: f64::NAN,
            active: Vec::new(),
            detail: "no active set yields a feasible point".into(),
        },
    })
}
