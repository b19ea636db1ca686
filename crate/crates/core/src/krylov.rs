//! Matrix-free restarted GMRES with optional left preconditioning.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub restart: usize,
    pub max_iters: usize,
    /// A solve whose residual stops decreasing is accepted once it is below
    /// `stall_tol ||M^{-1} b||`.
    pub stall_tol: f64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-15,
            restart: 40,
            max_iters: 2000,
            stall_tol: 1e-9,
        }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.stall_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "GMRES tolerances must be positive (rel {}, abs {})",
                self.rel_tol, self.abs_tol
            )));
        }
        if self.restart < 2 {
            return Err(Error::InvalidParameter(format!(
                "GMRES restart {} < 2",
                self.restart
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "GMRES max_iters must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct SolveStats {
    pub iterations: usize,
    /// `||b - A x||` of the returned iterate.
    pub final_residual: f64,
    /// Residual that the stopping test was applied to (preconditioned if a
    /// preconditioner was supplied).
    pub monitored_residual: f64,
    pub target: f64,
    pub converged: bool,
    pub breakdown: bool,
    /// Accepted at the round-off floor rather than at `target`.
    pub stagnated: bool,
    pub restarts: usize,
    pub wall_time: Duration,
    /// Monitored residual after every inner iteration, starting with the
    /// initial one.
    pub history: Vec<f64>,
}

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Approximate inverse `z ~ A^{-1} r`.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// Wraps a closure as an operator.
pub struct FnOperator<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnOperator<F> {
    pub fn new(n: usize, f: F) -> Self {
        FnOperator { n, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

/// Dense row-major matrix, mainly for tests and small oracles.
pub struct DenseMatrix {
    pub n: usize,
    pub a: Vec<f64>,
}

impl LinearOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

// Fixed chunking keeps reductions bit-identical for any thread count.
const CHUNK: usize = 4096;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= CHUNK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    partial.iter().sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a x`
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    if y.len() <= CHUNK {
        y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
    } else {
        y.par_chunks_mut(CHUNK)
            .zip(x.par_chunks(CHUNK))
            .for_each(|(yc, xc)| yc.iter_mut().zip(xc).for_each(|(yi, xi)| *yi += a * xi));
    }
}

fn scale(a: f64, x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v *= a);
}

/// Left-preconditioned `z = M^{-1}(b - A x)` and its raw residual norm.
fn residual(
    op: &dyn LinearOperator,
    pc: Option<&dyn Preconditioner>,
    b: &[f64],
    x: &[f64],
    r: &mut [f64],
    z: &mut [f64],
) -> f64 {
    op.apply(x, r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let raw = norm(r);
    match pc {
        Some(m) => m.apply(r, z),
        None => z.copy_from_slice(r),
    }
    raw
}

/// Solves `A x = b` by restarted GMRES(m) with modified Gram-Schmidt and
/// Givens rotations. With a preconditioner `M` the iteration runs on
/// `M^{-1} A x = M^{-1} b` and stops when
/// `||M^{-1} r|| <= max(rel_tol ||M^{-1} r_0||, abs_tol)` with `r_0` the
/// residual of the initial guess; without one the unpreconditioned residual
/// is used. If a whole restart cycle fails to halve the residual and it is
/// already below `stall_tol ||M^{-1} b||`, the iterate is accepted as
/// converged with `stagnated` set.
pub fn gmres(
    op: &dyn LinearOperator,
    pc: Option<&dyn Preconditioner>,
    b: &[f64],
    x0: &[f64],
    cfg: &KrylovConfig,
) -> (Vec<f64>, SolveStats) {
    let start = Instant::now();
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x0.len(), n);
    let mut stats = SolveStats::default();

    let bnorm_raw = norm(b);
    if bnorm_raw == 0.0 {
        stats.converged = true;
        stats.wall_time = start.elapsed();
        stats.history.push(0.0);
        return (vec![0.0; n], stats);
    }
    let bnorm = match pc {
        Some(m) => {
            let mut z = vec![0.0; n];
            m.apply(b, &mut z);
            norm(&z)
        }
        None => bnorm_raw,
    };
    let stall_level = cfg.stall_tol * bnorm;

    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = cfg.restart;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    // Hessenberg columns, each of length m + 1.
    let mut hess = vec![vec![0.0; m + 1]; m];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];

    let mut raw = residual(op, pc, b, &x, &mut r, &mut z);
    let mut beta = norm(&z);
    stats.history.push(beta);
    let target = (cfg.rel_tol * beta).max(cfg.abs_tol);
    stats.target = target;

    loop {
        if beta <= target {
            stats.converged = true;
            break;
        }
        if stats.iterations >= cfg.max_iters || !beta.is_finite() {
            break;
        }
        basis.clear();
        let mut v0 = z.clone();
        scale(1.0 / beta, &mut v0);
        basis.push(v0);
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;

        let mut cols = 0;
        let mut happy = false;
        for j in 0..m {
            op.apply(&basis[j], &mut r);
            match pc {
                Some(p) => p.apply(&r, &mut w),
                None => w.copy_from_slice(&r),
            }
            let h = &mut hess[j];
            h.iter_mut().for_each(|v| *v = 0.0);
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                h[i] = hij;
                axpy(-hij, v, &mut w);
            }
            let mut wn = norm(&w);
            // One extra pass if the new direction is not orthogonal enough.
            if wn > 0.0 {
                let loss = basis.iter().map(|v| dot(&w, v).abs()).fold(0.0, f64::max) / wn;
                if loss > 1e-8 {
                    for (i, v) in basis.iter().enumerate() {
                        let c = dot(&w, v);
                        h[i] += c;
                        axpy(-c, v, &mut w);
                    }
                    wn = norm(&w);
                }
            }
            h[j + 1] = wn;

            for i in 0..j {
                let t = cs[i] * h[i] + sn[i] * h[i + 1];
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
                h[i] = t;
            }
            let d = h[j].hypot(h[j + 1]);
            if d == 0.0 {
                stats.breakdown = true;
                break;
            }
            cs[j] = h[j] / d;
            sn[j] = h[j + 1] / d;
            h[j] = d;
            h[j + 1] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];

            cols = j + 1;
            stats.iterations += 1;
            let est = g[j + 1].abs();
            stats.history.push(est);

            let hcol_scale = d.max(1.0);
            if wn <= 1e-14 * hcol_scale {
                happy = true;
                stats.breakdown = true;
                break;
            }
            if est <= target || stats.iterations >= cfg.max_iters {
                break;
            }
            let mut vn = w.clone();
            scale(1.0 / wn, &mut vn);
            basis.push(vn);
        }

        if cols > 0 {
            let mut y = vec![0.0; cols];
            for i in (0..cols).rev() {
                let mut s = g[i];
                for (k, yk) in y.iter().enumerate().skip(i + 1) {
                    s -= hess[k][i] * yk;
                }
                y[i] = s / hess[i][i];
            }
            for (i, yi) in y.iter().enumerate() {
                axpy(*yi, &basis[i], &mut x);
            }
        }
        let prev = beta;
        raw = residual(op, pc, b, &x, &mut r, &mut z);
        beta = norm(&z);
        if beta <= target {
            stats.converged = true;
            break;
        }
        // No further progress is possible from this Krylov space.
        let exhausted = cols == 0 || (happy && stats.breakdown && cols < m);
        if (exhausted || beta > 0.5 * prev) && beta <= stall_level {
            stats.converged = true;
            stats.stagnated = true;
            break;
        }
        if exhausted {
            break;
        }
        stats.restarts += 1;
    }

    stats.final_residual = raw;
    stats.monitored_residual = beta;
    stats.wall_time = start.elapsed();
    (x, stats)
}
