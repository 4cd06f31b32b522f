//! Projection onto an intersection of half-spaces by dual coordinate ascent,
//! with an exact active-set polish. The hard-margin classifier is the
//! special case `w0 = 0`, `b = 1`.

use serde::{Deserialize, Serialize};

use crate::grad::Tensor;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpOptions {
    pub max_sweeps: usize,
    /// KKT residual at which the ascent stops.
    pub tolerance: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 20_000,
            tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxMarginSolution {
    pub w: Vec<f64>,
    /// Geometric margin `1 / ||w||`.
    pub margin: f64,
    /// Samples with functional margin within 1e-6 of 1.
    pub active_set: Vec<usize>,
    pub duality_gap: f64,
    pub sweeps: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Projection {
    w: Vec<f64>,
    sweeps: usize,
    /// Sum of the dual multipliers behind `w`.
    dual_sum: f64,
}

/// `argmin ||w - w0||^2 / 2` subject to `z_j . w >= b` for every row `z_j`.
fn project(z: &[Vec<f64>], b: f64, w0: &[f64], opts: QpOptions) -> Result<Projection, Error> {
    let dim = w0.len();
    let sq: Vec<f64> = z.iter().map(|r| dot(r, r)).collect();
    if let Some(j) = (0..z.len()).find(|&j| sq[j] == 0.0 && b > 0.0) {
        return Err(Error::Infeasible(format!("constraint {j} has a zero row and positive bound")));
    }
    let mut alpha = vec![0.0; z.len()];
    let mut w = w0.to_vec();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        for j in 0..z.len() {
            if sq[j] == 0.0 {
                continue;
            }
            let g = b - dot(&z[j], &w);
            let delta = (g / sq[j]).max(-alpha[j]);
            if delta != 0.0 {
                alpha[j] += delta;
                for (wi, zi) in w.iter_mut().zip(&z[j]) {
                    *wi += delta * zi;
                }
            }
        }
        let mut kkt: f64 = 0.0;
        for j in 0..z.len() {
            let g = b - dot(&z[j], &w);
            kkt = kkt.max(if alpha[j] > 0.0 { g.abs() } else { g.max(0.0) });
        }
        let total: f64 = alpha.iter().sum();
        if !total.is_finite() || total > 1e12 {
            return Err(Error::Infeasible("dual variables diverge; constraints cannot be met".into()));
        }
        if kkt <= opts.tolerance * (1.0 + b.abs()) {
            converged = true;
            break;
        }
    }
    let mut dual_sum: f64 = alpha.iter().sum();
    if let Some((polished, beta)) = polish(z, b, w0, &alpha) {
        let obj = |v: &[f64]| v.iter().zip(w0).map(|(a, c)| (a - c) * (a - c)).sum::<f64>();
        if obj(&polished) <= obj(&w) + 1e-9 * (1.0 + obj(&w)) {
            w = polished;
            dual_sum = beta.iter().sum();
            converged = true;
        }
    }
    let worst = z.iter().map(|r| b - dot(r, &w)).fold(f64::NEG_INFINITY, f64::max);
    if !converged && worst > 1e-6 {
        return Err(Error::Infeasible(format!(
            "no feasible point after {sweeps} sweeps (worst violation {worst:.3e})"
        )));
    }
    debug_assert_eq!(w.len(), dim);
    Ok(Projection { w, sweeps, dual_sum })
}

/// Solves the equality system on an independent subset of the constraints
/// with positive multipliers. Returns `None` if the result fails KKT.
fn polish(z: &[Vec<f64>], b: f64, w0: &[f64], alpha: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let dim = w0.len();
    // Gram-Schmidt over active rows, keeping the independent ones.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();
    for (j, row) in z.iter().enumerate() {
        if alpha[j] <= 0.0 || chosen.len() == dim {
            continue;
        }
        let mut v = row.clone();
        for q in &basis {
            let c = dot(&v, q);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= c * qi;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-9 * dot(row, row).sqrt().max(1e-300) {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
            chosen.push(j);
        }
    }
    if chosen.is_empty() {
        return None;
    }
    let k = chosen.len();
    let mut a = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for (p, &i) in chosen.iter().enumerate() {
        for (q, &j) in chosen.iter().enumerate() {
            a[p * k + q] = dot(&z[i], &z[j]);
        }
        rhs[p] = b - dot(&z[i], w0);
    }
    let beta = cholesky_solve(&mut a, &mut rhs, k)?;
    let mut w = w0.to_vec();
    for (p, &i) in chosen.iter().enumerate() {
        for (wi, zi) in w.iter_mut().zip(&z[i]) {
            *wi += beta[p] * zi;
        }
    }
    let scale = 1.0 + b.abs();
    let feasible = z.iter().all(|r| dot(r, &w) >= b - 1e-10 * scale);
    let dual_ok = beta.iter().all(|&v| v >= -1e-10);
    (feasible && dual_ok).then_some((w, beta))
}

fn cholesky_solve(a: &mut [f64], rhs: &mut [f64], k: usize) -> Option<Vec<f64>> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / d;
        }
    }
    for i in 0..k {
        let mut s = rhs[i];
        for p in 0..i {
            s -= a[i * k + p] * rhs[p];
        }
        rhs[i] = s / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = rhs[i];
        for p in i + 1..k {
            s -= a[p * k + i] * rhs[p];
        }
        rhs[i] = s / a[i * k + i];
    }
    Some(rhs.to_vec())
}

fn signed_rows(x: &Tensor, y: &[f64]) -> Result<Vec<Vec<f64>>, Error> {
    if x.rank() != 2 || x.rows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "expected (n, dim) inputs with n = {} labels, got {:?}",
            y.len(),
            x.shape()
        )));
    }
    Ok((0..x.rows()).map(|i| x.row(i).iter().map(|v| v * y[i]).collect()).collect())
}

/// Hard-margin classifier through the origin: `min ||w||^2 / 2` subject to
/// `y_i <w, x_i> >= 1`.
pub fn max_margin_solve(x: &Tensor, y: &[f64], opts: QpOptions) -> Result<MaxMarginSolution, Error> {
    let z = signed_rows(x, y)?;
    if z.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let dim = x.shape()[1];
    let p = project(&z, 1.0, &vec![0.0; dim], opts)?;
    let w = p.w;
    let margins: Vec<f64> = z.iter().map(|r| dot(r, &w)).collect();
    let active_set = (0..z.len()).filter(|&j| (margins[j] - 1.0).abs() <= 1e-6).collect::<Vec<_>>();
    let norm2 = dot(&w, &w);
    // Primal ||w||²/2 minus dual sum(beta) - ||w||²/2.
    let duality_gap = (norm2 - p.dual_sum).abs();
    Ok(MaxMarginSolution {
        margin: 1.0 / norm2.sqrt(),
        w,
        active_set,
        duality_gap,
        sweeps: p.sweeps,
    })
}

/// `argmin ||w - w0||` subject to `z_j . w >= b` for every row of `z`.
pub fn project_onto_halfspaces(z: &Tensor, b: f64, w0: &[f64], opts: QpOptions) -> Result<Vec<f64>, Error> {
    if z.rank() != 2 || z.shape()[1] != w0.len() {
        return Err(Error::InvalidInput(format!(
            "constraint matrix {:?} does not match point of length {}",
            z.shape(),
            w0.len()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..z.rows()).map(|i| z.row(i).to_vec()).collect();
    Ok(project(&rows, b, w0, opts)?.w)
}
