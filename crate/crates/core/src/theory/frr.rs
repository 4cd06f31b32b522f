//! Reconstruction through a one-dimensional logit on the toy problem.
//!
//! For a fixed classifier `w` the best linear decoder is available in closed
//! form, so the reconstruction objective reduces to a function of `w` alone:
//! with `M = E[x x^T]`, coordinate `i` leaves residual
//! `M_ii - (M w)_i^2 / (w^T M w)`. The constrained program minimizes the
//! largest of these over the sign constraints `y <w, x> >= 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::qp::{project_onto_halfspaces, QpOptions};
use super::toy::ReplicationMap;
use crate::grad::{Graph, NormKind, Tensor};
use crate::optim::{Adam, AdamConfig};
use crate::Error;

/// Uncentered second-moment matrix `X^T X / n`, row-major `dim x dim`.
pub fn second_moments(x: &Tensor) -> Vec<f64> {
    let (n, dim) = (x.rows(), x.row_len());
    let mut m = vec![0.0; dim * dim];
    crate::grad::gemm(dim, n, dim, x.data(), true, x.data(), false, &mut m, 0.0);
    let inv = 1.0 / n.max(1) as f64;
    m.iter_mut().for_each(|v| *v *= inv);
    m
}

/// Least-squares decoder `phi_i = E[s x_i] / E[s^2]` with `s = <w, x>`.
pub fn optimal_linear_decoder(w: &[f64], x: &Tensor) -> Result<Vec<f64>, Error> {
    if x.rank() != 2 || x.row_len() != w.len() {
        return Err(Error::InvalidInput(format!(
            "decoder fit: weights of length {} for inputs {:?}",
            w.len(),
            x.shape()
        )));
    }
    let dim = w.len();
    let mut num = vec![0.0; dim];
    let mut den = 0.0;
    for i in 0..x.rows() {
        let r = x.row(i);
        let s: f64 = r.iter().zip(w).map(|(a, b)| a * b).sum();
        den += s * s;
        for (acc, v) in num.iter_mut().zip(r) {
            *acc += s * v;
        }
    }
    if den <= 0.0 || !den.is_finite() {
        return Err(Error::InvalidInput("degenerate classifier: E[<w,x>^2] = 0".into()));
    }
    Ok(num.into_iter().map(|v| v / den).collect())
}

/// The closed-form population loss exactly as printed, in terms of the
/// replicated group's summed weight `a` and the last weight `b`.
pub fn frr_population_loss(a: f64, b: f64) -> Result<f64, Error> {
    if a == 0.0 && b == 0.0 {
        return Err(Error::InvalidInput("population loss undefined at w = 0".into()));
    }
    let lo = a.min(b);
    Ok(13.0 / 12.0 * (1.0 - lo * lo / ((a + b).powi(2) + (a * a + b * b) / 12.0)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrrOptions {
    pub max_iters: usize,
    /// Converged when the objective moves less than `stall_tol` over this
    /// many iterations.
    pub stall_window: usize,
    pub stall_tol: f64,
    pub qp: QpOptions,
}

impl Default for FrrOptions {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            stall_window: 100,
            stall_tol: 1e-10,
            qp: QpOptions {
                max_sweeps: 500,
                tolerance: 1e-12,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrrSolution {
    /// Unit-norm classifier.
    pub w: Vec<f64>,
    pub phi: Vec<f64>,
    /// Largest per-coordinate mean squared residual.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct Residuals<'a> {
    m: &'a [f64],
    dim: usize,
}

impl Residuals<'_> {
    fn values(&self, w: &[f64]) -> Vec<f64> {
        let (u, q) = self.mw(w);
        (0..self.dim).map(|i| self.m[i * self.dim + i] - u[i] * u[i] / q).collect()
    }

    fn mw(&self, w: &[f64]) -> (Vec<f64>, f64) {
        let d = self.dim;
        let u: Vec<f64> = (0..d).map(|i| (0..d).map(|j| self.m[i * d + j] * w[j]).sum()).collect();
        let q = u.iter().zip(w).map(|(a, b)| a * b).sum();
        (u, q)
    }

    fn gradient(&self, w: &[f64], i: usize) -> Vec<f64> {
        let d = self.dim;
        let (u, q) = self.mw(w);
        let c = 2.0 * u[i] / q;
        (0..d).map(|j| c * (u[i] * u[j] / q - self.m[i * d + j])).collect()
    }

    fn max(&self, w: &[f64]) -> f64 {
        self.values(w).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn normalize(w: &mut [f64]) {
    let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        w.iter_mut().for_each(|v| *v /= n);
    }
}

/// Minimum-norm point of the convex hull of `gs` (projected gradient on
/// the simplex).
fn min_norm_hull(gs: &[Vec<f64>]) -> Vec<f64> {
    let k = gs.len();
    let dim = gs[0].len();
    if k == 1 {
        return gs[0].clone();
    }
    let gram: Vec<f64> = (0..k * k)
        .map(|p| gs[p / k].iter().zip(&gs[p % k]).map(|(a, b)| a * b).sum())
        .collect();
    if k == 2 {
        let den = gram[0] - 2.0 * gram[1] + gram[3];
        let t = if den > 0.0 { ((gram[3] - gram[1]) / den).clamp(0.0, 1.0) } else { 0.5 };
        return (0..dim).map(|j| t * gs[0][j] + (1.0 - t) * gs[1][j]).collect();
    }
    let lip = (0..k).map(|p| gram[p * k + p]).sum::<f64>().max(1e-300);
    let mut lam = vec![1.0 / k as f64; k];
    for _ in 0..5000 {
        let grad: Vec<f64> = (0..k).map(|p| (0..k).map(|q| gram[p * k + q] * lam[q]).sum()).collect();
        let y: Vec<f64> = (0..k).map(|p| lam[p] - grad[p] / lip).collect();
        lam = project_simplex(&y);
    }
    (0..dim).map(|j| (0..k).map(|p| lam[p] * gs[p][j]).sum()).collect()
}

fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut s = y.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, v) in s.iter().enumerate() {
        acc += v;
        let t = (acc - 1.0) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

fn signed_rows(x: &Tensor, y: &[f64]) -> Result<Tensor, Error> {
    if x.rank() != 2 || x.rows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "expected (n, dim) inputs with n = {} labels, got {:?}",
            y.len(),
            x.shape()
        )));
    }
    let mut z = x.clone();
    let w = x.row_len();
    for (i, &yi) in y.iter().enumerate() {
        z.data_mut()[i * w..(i + 1) * w].iter_mut().for_each(|v| *v *= yi);
    }
    Ok(z)
}

fn violated(z: &Tensor, w: &[f64]) -> Vec<usize> {
    (0..z.rows()).filter(|&i| z.row(i).iter().zip(w).map(|(a, b)| a * b).sum::<f64>() < -1e-12).collect()
}

/// Projection onto the sign cone, solved on a working set grown by the most
/// violated rows. Once the subset solution satisfies every row it is the
/// projection onto the full cone.
fn project_cone(z: &Tensor, w: &[f64], qp: QpOptions) -> Result<Vec<f64>, Error> {
    const BATCH: usize = 64;
    let dim = z.row_len();
    let mut rows: Vec<usize> = Vec::new();
    let mut p = w.to_vec();
    loop {
        let mut extra: Vec<(usize, f64)> = violated(z, &p)
            .into_iter()
            .map(|i| (i, z.row(i).iter().zip(&p).map(|(a, b)| a * b).sum()))
            .collect();
        if extra.is_empty() {
            return Ok(p);
        }
        extra.sort_by(|a, b| a.1.total_cmp(&b.1));
        rows.extend(extra.iter().take(BATCH).map(|e| e.0));
        let data: Vec<f64> = rows.iter().flat_map(|&i| z.row(i).iter().copied()).collect();
        p = project_onto_halfspaces(&Tensor::from_vec(&[rows.len(), dim], data), 0.0, w, qp)?;
    }
}

/// Minimizes the largest per-coordinate reconstruction residual through the
/// logit, subject to `y <w, x> >= 0` on every sample.
///
/// The decoder is eliminated in closed form, which leaves a max of smooth
/// scale-invariant functions of `w`. Each iteration takes the min-norm
/// element of the epsilon-active gradients as a descent direction, line
/// searches on the unit sphere, and projects back onto the sign cone when a
/// step leaves it.
pub fn frr_constrained_solve(x: &Tensor, y: &[f64], opts: FrrOptions) -> Result<FrrSolution, Error> {
    let z = signed_rows(x, y)?;
    let dim = x.row_len();
    let m = second_moments(x);
    let res = Residuals { m: &m, dim };
    let mut w = vec![1.0; dim];
    normalize(&mut w);
    if !violated(&z, &w).is_empty() {
        w = project_cone(&z, &w, opts.qp)?;
        normalize(&mut w);
    }
    let mut j = res.max(&w);
    let mut eps = 1e-2;
    let mut step: f64 = 1.0;
    let mut history = vec![j];
    let mut converged = false;
    let mut iters = 0;
    while iters < opts.max_iters {
        iters += 1;
        let h = res.values(&w);
        let mut gs: Vec<Vec<f64>> = Vec::new();
        for i in (0..dim).filter(|&i| h[i] >= j - eps) {
            let g = res.gradient(&w, i);
            let dup = gs
                .iter()
                .any(|o| o.iter().zip(&g).all(|(a, b)| (a - b).abs() <= 1e-14 * (1.0 + a.abs())));
            if !dup {
                gs.push(g);
            }
        }
        let d = min_norm_hull(&gs);
        let dn2: f64 = d.iter().map(|v| v * v).sum();
        let mut accepted = false;
        if dn2 > 1e-30 {
            let mut t = (step * 2.0).min(1e3);
            while t > 1e-18 {
                let mut cand: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a - t * b).collect();
                normalize(&mut cand);
                if !violated(&z, &cand).is_empty() {
                    cand = project_cone(&z, &cand, opts.qp)?;
                    normalize(&mut cand);
                }
                let jc = res.max(&cand);
                if jc < j - 1e-4 * t * dn2 {
                    w = cand;
                    j = jc;
                    step = t;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
        }
        if !accepted {
            if eps < 1e-15 {
                converged = true;
                break;
            }
            eps *= 0.1;
        }
        history.push(j);
        if history.len() > opts.stall_window {
            let old = history[history.len() - 1 - opts.stall_window];
            if (old - j).abs() < opts.stall_tol && eps < 1e-8 {
                converged = true;
                break;
            }
        }
    }
    let phi = optimal_linear_decoder(&w, x)?;
    Ok(FrrSolution {
        w,
        phi,
        objective: j,
        converged,
        iterations: iters,
    })
}

/// The alternative ordering: minimizes `E[max_i (x_i - phi_i s)^2]` jointly
/// over `w` and `phi` with Adam (subgradient through the max), keeping `w`
/// on the unit sphere. Sign constraints are not enforced; callers check them.
pub fn frr_expected_max_solve(x: &Tensor, steps: usize, learning_rate: f64) -> Result<FrrSolution, Error> {
    let dim = x.row_len();
    let mut w = vec![1.0; dim];
    normalize(&mut w);
    let mut phi = optimal_linear_decoder(&w, x)?;
    let mut adam = Adam::new(AdamConfig::new(learning_rate));
    let mut objective = f64::INFINITY;
    for step in 0..steps {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let wn = g.param(Tensor::from_vec(&[dim, 1], w.clone()));
        let pn = g.param(Tensor::from_vec(&[dim, 1], phi.clone()));
        let s = g.matmul(xn, wn)?;
        let rec = g.matmul_t(s, pn)?;
        let r = g.sub(xn, rec)?;
        let worst = g.row_norm(r, NormKind::Linf)?;
        let sq = g.mul(worst, worst)?;
        let loss = g.mean(sq)?;
        objective = g.value(loss).item();
        let grads = g.gradients(loss)?;
        // Cosine decay to 1% of the initial rate.
        let frac = step as f64 / steps.max(1) as f64;
        let lr = learning_rate * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()));
        adam.tick();
        adam.update_with_lr(0, &mut w, grads[&wn].data(), lr);
        adam.update_with_lr(1, &mut phi, grads[&pn].data(), lr);
        // Keep the product w phi^T fixed while renormalizing w.
        let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        w.iter_mut().for_each(|v| *v /= n);
        phi.iter_mut().for_each(|v| *v *= n);
    }
    Ok(FrrSolution {
        w,
        phi,
        objective,
        converged: true,
        iterations: steps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub coordinate: usize,
    pub in_group: bool,
    pub monte_carlo: f64,
    /// Value given by the printed closed form.
    pub printed: f64,
    /// Direct expansion including the cross term `E[x_1 x_2] = 1`.
    pub expanded: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentAudit {
    pub d: usize,
    pub samples: usize,
    pub group_sum: f64,
    pub last: f64,
    pub rows: Vec<MomentRow>,
    pub max_gap_printed: f64,
    pub max_gap_expanded: f64,
}

impl MomentAudit {
    pub fn summary(&self) -> String {
        format!(
            "moment audit d={} n={} (group sum {:.4}, last {:.4}): max |MC - printed| = {:.4}, max |MC - expanded| = {:.4}",
            self.d, self.samples, self.group_sum, self.last, self.max_gap_printed, self.max_gap_expanded
        )
    }
}

/// Monte-Carlo estimate of `E[<w, x> x_i]` under first-axis replication,
/// compared with the printed value `13/12 * (group sum)` (resp. `13/12 * last`)
/// and with the direct expansion `13/12 a + b` (resp. `a + 13/12 b`).
pub fn moment_audit(d: usize, w: &[f64], samples: usize, seed: u64) -> Result<MomentAudit, Error> {
    let map = ReplicationMap::new(d, super::toy::Axis::First);
    if w.len() != map.output_dim() {
        return Err(Error::InvalidInput(format!(
            "audit weights of length {} for dimension {}",
            w.len(),
            map.output_dim()
        )));
    }
    let dim = w.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; dim];
    for _ in 0..samples {
        let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let x = [y + rng.random_range(-0.5..=0.5), y + rng.random_range(-0.5..=0.5)];
        let xt = map.apply(x);
        let s: f64 = xt.iter().zip(w).map(|(a, b)| a * b).sum();
        for (a, v) in acc.iter_mut().zip(&xt) {
            *a += s * v;
        }
    }
    let a: f64 = (0..dim).filter(|&i| map.in_group(i)).map(|i| w[i]).sum();
    let b = w[dim - 1];
    let rows: Vec<MomentRow> = (0..dim)
        .map(|i| {
            let g = map.in_group(i);
            MomentRow {
                coordinate: i + 1,
                in_group: g,
                monte_carlo: acc[i] / samples as f64,
                printed: if g { 13.0 / 12.0 * a } else { 13.0 / 12.0 * b },
                expanded: if g { 13.0 / 12.0 * a + b } else { a + 13.0 / 12.0 * b },
            }
        })
        .collect();
    let gap = |f: fn(&MomentRow) -> f64| rows.iter().map(|r| (r.monte_carlo - f(r)).abs()).fold(0.0, f64::max);
    Ok(MomentAudit {
        d,
        samples,
        group_sum: a,
        last: b,
        max_gap_printed: gap(|r| r.printed),
        max_gap_expanded: gap(|r| r.expanded),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_loss_values() {
        assert!((frr_population_loss(1.0, 0.0).unwrap() - 13.0 / 12.0).abs() < 1e-15);
        assert!((frr_population_loss(1.0, 1.0).unwrap() - 247.0 / 300.0).abs() < 1e-15);
        assert_eq!(frr_population_loss(0.3, 2.0).unwrap(), frr_population_loss(2.0, 0.3).unwrap());
        assert!(frr_population_loss(0.0, 0.0).is_err());
    }

    #[test]
    fn scalar_decoder_inverts_weight() {
        let x = Tensor::from_vec(&[3, 1], vec![1.0, -2.0, 0.5]);
        let phi = optimal_linear_decoder(&[4.0], &x).unwrap();
        assert!((phi[0] - 0.25).abs() < 1e-15);
        assert!(optimal_linear_decoder(&[0.0], &x).is_err());
    }

    #[test]
    fn simplex_projection_sums_to_one() {
        let p = project_simplex(&[0.3, 2.0, -1.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn hull_of_opposite_vectors_is_origin() {
        let d = min_norm_hull(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 5.0]]);
        assert!(d.iter().all(|v| v.abs() < 1e-6), "{d:?}");
    }
}
