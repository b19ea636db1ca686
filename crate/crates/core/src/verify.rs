//! Manufactured-solution problems and convergence / efficiency studies.
//!
//! The exact solution is
//! `m_e = (cos u sin t, sin u sin t, cos t)` with `u = cos(pi x)` in 1D and
//! `u = cos(pi x) cos(pi y) cos(pi z)` in 3D, on the unit interval / cube,
//! with `eps = 1`, no anisotropy and no fields. The forcing
//! `g = dm/dt - alpha Lap m - alpha |grad m|^2 m + m x Lap m` makes it exact.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::{error_norms, GridSpec, NormTriple, SpatialOrder, VectorField};
use crate::krylov::KrylovConfig;
use crate::physics::MaterialParams;
use crate::spectral::PreconditionerKind;
use crate::stepper::{BootstrapMode, Forcing, SchemeKind, Stepper, StepperConfig};
use crate::vec3::Vec3;

use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManufacturedCase {
    pub dim: usize,
    pub alpha: f64,
    pub t_end: f64,
}

/// `u`, `grad u` and `Lap u` at `x`.
fn profile(dim: usize, x: [f64; 3]) -> (f64, [f64; 3], f64) {
    if dim == 1 {
        let u = (PI * x[0]).cos();
        (u, [-PI * (PI * x[0]).sin(), 0.0, 0.0], -PI * PI * u)
    } else {
        let (cx, cy, cz) = ((PI * x[0]).cos(), (PI * x[1]).cos(), (PI * x[2]).cos());
        let (sx, sy, sz) = ((PI * x[0]).sin(), (PI * x[1]).sin(), (PI * x[2]).sin());
        let u = cx * cy * cz;
        (
            u,
            [-PI * sx * cy * cz, -PI * cx * sy * cz, -PI * cx * cy * sz],
            -3.0 * PI * PI * u,
        )
    }
}

impl ManufacturedCase {
    pub fn new(dim: usize, alpha: f64, t_end: f64) -> Result<Self> {
        if dim != 1 && dim != 3 {
            return Err(Error::InvalidParameter(format!(
                "manufactured dim {dim} (1 or 3)"
            )));
        }
        if !(alpha.is_finite() && alpha >= 0.0 && t_end.is_finite() && t_end > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha {alpha}, T {t_end}")));
        }
        Ok(ManufacturedCase { dim, alpha, t_end })
    }

    /// `alpha = 0.01`, `T = 0.1`.
    pub fn standard(dim: usize) -> Self {
        ManufacturedCase::new(dim, 0.01, 0.1).expect("valid constants")
    }

    /// `n` cells per active axis on the unit domain.
    pub fn grid(&self, n: usize) -> Result<GridSpec> {
        let h = 1.0 / n as f64;
        if self.dim == 1 {
            GridSpec::line(n, h)
        } else {
            GridSpec::cube(n, h)
        }
    }

    pub fn params(&self) -> MaterialParams {
        MaterialParams::dimensionless(1.0, 0.0, self.alpha).expect("valid constants")
    }

    pub fn exact(&self, x: [f64; 3], t: f64) -> Vec3 {
        let (u, _, _) = profile(self.dim, x);
        let s = t.sin();
        Vec3::new(u.cos() * s, u.sin() * s, t.cos())
    }

    pub fn forcing(&self, x: [f64; 3], t: f64) -> Vec3 {
        let (u, gu, lu) = profile(self.dim, x);
        let (st, ct) = (t.sin(), t.cos());
        let (cu, su) = (u.cos(), u.sin());
        let gu2 = gu[0] * gu[0] + gu[1] * gu[1] + gu[2] * gu[2];
        let m = Vec3::new(cu * st, su * st, ct);
        let mt = Vec3::new(cu * ct, su * ct, -st);
        let lap = Vec3::new(-cu * gu2 - su * lu, -su * gu2 + cu * lu, 0.0) * st;
        let grad_sq = st * st * gu2;
        mt - lap * self.alpha - m * (self.alpha * grad_sq) + m.cross(lap)
    }

    pub fn exact_field(&self, grid: GridSpec, t: f64) -> VectorField {
        VectorField::from_fn(grid, |x| self.exact(x, t))
    }

    pub fn forcing_fn(&self) -> Forcing {
        let case = *self;
        Arc::new(move |x, t| case.forcing(x, t))
    }
}

pub fn exact_solution(case: &ManufacturedCase, x: [f64; 3], t: f64) -> Vec3 {
    case.exact(x, t)
}

pub fn forcing(case: &ManufacturedCase, x: [f64; 3], t: f64) -> Vec3 {
    case.forcing(x, t)
}

/// Solver and bookkeeping options for manufactured runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    /// `None` uses the scheme default.
    pub spatial_order: Option<SpatialOrder>,
    pub krylov: KrylovConfig,
    pub preconditioner: PreconditionerKind,
    pub bootstrap: BootstrapMode,
    /// Timed repetitions; the median wall time is reported.
    pub repeats: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            spatial_order: None,
            krylov: KrylovConfig {
                rel_tol: 1e-12,
                ..Default::default()
            },
            preconditioner: PreconditionerKind::Spectral,
            bootstrap: BootstrapMode::Exact,
            repeats: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOutcome {
    pub norms: NormTriple,
    /// Median wall time of the time loop.
    pub seconds: f64,
    pub gmres_iters: usize,
    pub steps: usize,
    pub max_unit_defect: f64,
}

fn steps_for(t_end: f64, k: f64) -> Result<usize> {
    let n = (t_end / k).round();
    if n < 1.0 || ((n * k - t_end) / t_end).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "T = {t_end} is not a multiple of k = {k}"
        )));
    }
    Ok(n as usize)
}

/// Runs the manufactured problem on `grid` with step `k` up to `T`.
pub fn run_manufactured(
    scheme: SchemeKind,
    case: &ManufacturedCase,
    grid: GridSpec,
    k: f64,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let steps = steps_for(case.t_end, k)?;
    let mut times = Vec::with_capacity(opts.repeats.max(1));
    let mut last = None;
    for _ in 0..opts.repeats.max(1) {
        let mut cfg = StepperConfig::new(scheme, k);
        cfg.spatial_order = opts.spatial_order.unwrap_or(scheme.default_spatial_order());
        cfg.krylov = opts.krylov;
        cfg.preconditioner = opts.preconditioner;
        let m0 = case.exact_field(grid, 0.0);
        let mut st = Stepper::new(cfg, case.params(), &m0, 0.0)?.with_forcing(case.forcing_fn());
        match opts.bootstrap {
            BootstrapMode::Exact => {
                for lvl in 1..scheme.order() {
                    st.push_exact_level(&case.exact_field(grid, lvl as f64 * k))?;
                }
            }
            mode => st.bootstrap(mode)?,
        }
        let boot_iters = st.total_iterations();
        let start = Instant::now();
        while st.t_index() < steps {
            st.step()?;
        }
        times.push(start.elapsed().as_secs_f64());
        let exact = case.exact_field(grid, st.time());
        let norms = error_norms(&st.magnetization(), &exact)?;
        last = Some(RunOutcome {
            norms,
            seconds: 0.0,
            gmres_iters: st.total_iterations() - boot_iters,
            steps,
            max_unit_defect: st.max_unit_defect(),
        });
    }
    times.sort_by(|a, b| a.total_cmp(b));
    let mut out = last.expect("at least one repeat");
    out.seconds = times[times.len() / 2];
    Ok(out)
}

/// What a study refines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Refinement {
    Time,
    Space,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub scheme: SchemeKind,
    pub dim: usize,
    pub k: f64,
    pub h: f64,
    pub norms: NormTriple,
    pub seconds: f64,
    pub gmres_iters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub refinement: Refinement,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares log-log slopes for (inf, L2, H1); `None` with fewer
    /// than three rows.
    pub orders: Option<[f64; 3]>,
}

pub const CSV_HEADER: &str = "scheme,dim,k,h,err_inf,err_l2,err_h1,seconds,gmres_iters_total";

impl ConvergenceReport {
    pub fn new(refinement: Refinement, rows: Vec<ConvergenceRow>) -> Self {
        let orders = if rows.len() >= 3 {
            let xs: Vec<f64> = rows
                .iter()
                .map(|r| match refinement {
                    Refinement::Time => r.k,
                    Refinement::Space => r.h,
                })
                .collect();
            let mut o = [0.0; 3];
            for (c, slot) in o.iter_mut().enumerate() {
                let ys: Vec<f64> = rows.iter().map(|r| r.norms.as_array()[c]).collect();
                *slot = fit_order(&xs, &ys);
            }
            Some(o)
        } else {
            None
        };
        ConvergenceReport {
            refinement,
            rows,
            orders,
        }
    }

    /// CSV with one row per level; floats carry 17 significant digits.
    /// With `with_seconds = false` the timing column is left empty, which
    /// makes the output reproducible bit for bit.
    pub fn to_csv(&self, with_seconds: bool) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let secs = if with_seconds {
                format!("{:.16e}", r.seconds)
            } else {
                String::new()
            };
            let _ = writeln!(
                s,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                r.scheme,
                r.dim,
                r.k,
                r.h,
                r.norms.linf,
                r.norms.l2,
                r.norms.h1,
                secs,
                r.gmres_iters
            );
        }
        s
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_order(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// One level of a study: `k = T / denom` on `n` cells per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Level {
    pub denom: usize,
    pub n: usize,
}

/// Time-step denominators of the 1D temporal tables.
pub fn standard_temporal_1d(scheme: SchemeKind) -> Vec<usize> {
    match scheme {
        SchemeKind::Bdf3 => vec![12, 16, 24, 32, 36],
        _ => vec![8, 12, 16, 24, 32],
    }
}

/// 3D coordinated refinement: `k = T/N0` with `k = h^2` (BDF1), `k = h`
/// (BDF2), `k = h^{4/3}` (BDF3); `n` is `1/h` rounded.
pub fn standard_temporal_3d(scheme: SchemeKind, t_end: f64) -> Vec<Level> {
    let (denoms, power): (&[usize], f64) = match scheme {
        SchemeKind::Bdf1 => (&[40, 57, 78, 102, 129], 2.0),
        SchemeKind::Bdf2 => (&[2, 3, 4, 5, 6], 1.0),
        SchemeKind::Bdf3 => (&[6, 7, 8, 9, 11], 4.0 / 3.0),
    };
    denoms
        .iter()
        .map(|&d| {
            let k = t_end / d as f64;
            Level {
                denom: d,
                n: k.powf(-1.0 / power).round() as usize,
            }
        })
        .collect()
}

/// Cell counts of the 1D spatial tables.
pub fn standard_spatial_1d() -> Vec<usize> {
    vec![16, 32, 64, 128, 256]
}

pub fn temporal_study(
    scheme: SchemeKind,
    case: &ManufacturedCase,
    levels: &[Level],
    opts: &RunOptions,
) -> Result<ConvergenceReport> {
    let mut rows = Vec::with_capacity(levels.len());
    for lv in levels {
        let grid = case.grid(lv.n)?;
        let k = case.t_end / lv.denom as f64;
        let out = run_manufactured(scheme, case, grid, k, opts)?;
        rows.push(ConvergenceRow {
            scheme,
            dim: case.dim,
            k,
            h: 1.0 / lv.n as f64,
            norms: out.norms,
            seconds: out.seconds,
            gmres_iters: out.gmres_iters,
        });
    }
    Ok(ConvergenceReport::new(Refinement::Time, rows))
}

pub fn spatial_study(
    scheme: SchemeKind,
    case: &ManufacturedCase,
    cells: &[usize],
    k: f64,
    opts: &RunOptions,
) -> Result<ConvergenceReport> {
    let mut rows = Vec::with_capacity(cells.len());
    for &n in cells {
        let grid = case.grid(n)?;
        let out = run_manufactured(scheme, case, grid, k, opts)?;
        rows.push(ConvergenceRow {
            scheme,
            dim: case.dim,
            k,
            h: 1.0 / n as f64,
            norms: out.norms,
            seconds: out.seconds,
            gmres_iters: out.gmres_iters,
        });
    }
    Ok(ConvergenceReport::new(Refinement::Space, rows))
}

/// Wall time against max-norm error for several schemes. Each entry of
/// `sweeps` is a scheme with the levels to run.
pub fn efficiency_study(
    case: &ManufacturedCase,
    sweeps: &[(SchemeKind, Vec<Level>)],
    refinement: Refinement,
    opts: &RunOptions,
) -> Result<Vec<ConvergenceReport>> {
    sweeps
        .iter()
        .map(|(scheme, levels)| {
            let mut rep = temporal_study(*scheme, case, levels, opts)?;
            rep.refinement = refinement;
            Ok(ConvergenceReport::new(refinement, rep.rows))
        })
        .collect()
}

/// Wall time needed for max-norm error `target`, by log-log interpolation
/// between measured rows. `None` if `target` is outside the measured range.
pub fn time_at_error(rows: &[ConvergenceRow], target: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.norms.linf, r.seconds)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in pts.windows(2) {
        let ((e0, t0), (e1, t1)) = (w[0], w[1]);
        if target >= e0 && target <= e1 && e1 > e0 {
            let s = (target.ln() - e0.ln()) / (e1.ln() - e0.ln());
            return Some((t0.ln() + s * (t1.ln() - t0.ln())).exp());
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::grad_sq_4th;
    use crate::physics::{compose_source, llg_rhs, ExternalField};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_solution_examples() {
        let c = ManufacturedCase::standard(1);
        for x in [0.1, 0.5, 0.9] {
            assert_eq!(c.exact([x, 0.5, 0.5], 0.0), Vec3::new(0.0, 0.0, 1.0));
        }
        let v = c.exact([0.5, 0.5, 0.5], std::f64::consts::FRAC_PI_2);
        assert!((v - Vec3::new(1.0, 0.0, 0.0)).max_abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c3 = ManufacturedCase::standard(3);
        for _ in 0..10_000 {
            let x = [rng.gen(), rng.gen(), rng.gen()];
            let t = rng.gen_range(0.0..10.0);
            assert!((c3.exact(x, t).norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_cases_rejected() {
        assert!(ManufacturedCase::new(2, 0.01, 0.1).is_err());
        assert!(ManufacturedCase::new(1, -1.0, 0.1).is_err());
    }

    /// Eighth-order central difference of `f` at `s` with step `h`.
    fn d1_fd(f: impl Fn(f64) -> Vec3, s: f64, h: f64) -> Vec3 {
        const W: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
        let mut acc = Vec3::ZERO;
        for (j, w) in W.iter().enumerate() {
            let o = (j + 1) as f64 * h;
            acc += (f(s + o) - f(s - o)) * *w;
        }
        acc * (1.0 / h)
    }

    fn d2_fd(f: impl Fn(f64) -> Vec3, s: f64, h: f64) -> Vec3 {
        const W: [f64; 4] = [8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];
        let mut acc = f(s) * (-205.0 / 72.0);
        for (j, w) in W.iter().enumerate() {
            let o = (j + 1) as f64 * h;
            acc += (f(s + o) + f(s - o)) * *w;
        }
        acc * (1.0 / (h * h))
    }

    #[test]
    fn forcing_closes_the_equation_numerically() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [1, 3] {
            let c = ManufacturedCase::new(dim, 0.3, 1.0).unwrap();
            for _ in 0..20 {
                let x = [
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.1..0.9),
                ];
                let t = rng.gen_range(0.1..2.0);
                let m = c.exact(x, t);
                let mt = d1_fd(|s| c.exact(x, s), t, 1e-2);
                let mut lap = Vec3::ZERO;
                let mut g2 = 0.0;
                for a in 0..dim {
                    let along = |s: f64| {
                        let mut y = x;
                        y[a] = s;
                        c.exact(y, t)
                    };
                    lap += d2_fd(along, x[a], 1e-2);
                    g2 += d1_fd(along, x[a], 1e-3).norm_sq();
                }
                let g = c.forcing(x, t);
                let residual = mt - (lap * c.alpha + m * (c.alpha * g2) - m.cross(lap) + g);
                assert!(residual.max_abs() < 1e-8, "dim {dim}: {residual:?}");
            }
        }
    }

    #[test]
    fn forcing_at_initial_time() {
        // sin 0 = 0 removes every spatial term
        let c = ManufacturedCase::standard(1);
        for x in [0.2, 0.7] {
            let u = (PI * x).cos();
            let g = c.forcing([x, 0.5, 0.5], 0.0);
            assert!((g - Vec3::new(u.cos(), u.sin(), 0.0)).max_abs() < 1e-15);
        }
    }

    #[test]
    fn forcing_without_damping_where_profile_vanishes() {
        let c = ManufacturedCase::new(1, 0.0, 1.0).unwrap();
        let t: f64 = 0.7;
        let x = [0.5, 0.5, 0.5];
        // u = 0, u' = -pi, u'' = 0: Lap m = sin t (-pi^2, 0, 0)
        let m = Vec3::new(t.sin(), 0.0, t.cos());
        let lap = Vec3::new(-PI * PI, 0.0, 0.0) * t.sin();
        let expected = Vec3::new(t.cos(), 0.0, -t.sin()) + m.cross(lap);
        assert!((c.forcing(x, t) - expected).max_abs() < 1e-13);
    }

    #[test]
    fn discrete_residual_at_sample_point_converges() {
        // m_t - rhs - g at (x, t) = (0.3, 0.05) shrinks at the stencil order
        let c = ManufacturedCase::new(1, 0.01, 0.1).unwrap();
        let p = c.params();
        let t: f64 = 0.05;
        let mut errs = vec![];
        for n in [50usize, 100, 200] {
            let g = c.grid(n).unwrap();
            let m = c.exact_field(g, t);
            let f = compose_source(&m, None, ExternalField::zero(), &p).unwrap();
            let rhs = llg_rhs(&m, &f, &p).unwrap();
            let i = (0.3 * n as f64 - 0.5).round() as usize;
            let x = g.center(i, 0, 0);
            let u = (PI * x[0]).cos();
            let mt = Vec3::new(u.cos() * t.cos(), u.sin() * t.cos(), -t.sin());
            let r = mt - rhs.get(i, 0, 0) - c.forcing(x, t);
            errs.push(r.max_abs());
        }
        let rate = (errs[0] / errs[2]).log2() / 2.0;
        assert!(rate > 3.7, "rate {rate}, {errs:?}");
    }

    #[test]
    fn exact_gradient_matches_discrete() {
        let c = ManufacturedCase::standard(1);
        let g = c.grid(128).unwrap();
        let t: f64 = 0.8;
        let gs = grad_sq_4th(&c.exact_field(g, t));
        for i in [10, 64, 100] {
            let x = g.center(i, 0, 0)[0];
            let exact = t.sin().powi(2) * (PI * (PI * x).sin()).powi(2);
            assert!((gs.get(i, 0, 0) - exact).abs() < 1e-5);
        }
    }

    #[test]
    fn schedules() {
        let l = standard_temporal_3d(SchemeKind::Bdf1, 0.1);
        assert_eq!(
            l.iter().map(|v| v.n).collect::<Vec<_>>(),
            vec![20, 24, 28, 32, 36]
        );
        let l = standard_temporal_3d(SchemeKind::Bdf2, 0.1);
        assert_eq!(
            l.iter().map(|v| v.n).collect::<Vec<_>>(),
            vec![20, 30, 40, 50, 60]
        );
        let l = standard_temporal_3d(SchemeKind::Bdf3, 0.1);
        assert_eq!(
            l.iter().map(|v| v.n).collect::<Vec<_>>(),
            vec![22, 24, 27, 29, 34]
        );
    }

    #[test]
    fn order_fit() {
        let xs = [0.1, 0.05, 0.025];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(3)).collect();
        assert!((fit_order(&xs, &ys) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_row_report_has_no_fit() {
        let row = ConvergenceRow {
            scheme: SchemeKind::Bdf1,
            dim: 1,
            k: 0.01,
            h: 0.1,
            norms: NormTriple {
                linf: 1.0,
                l2: 1.0,
                h1: 1.0,
            },
            seconds: 0.1,
            gmres_iters: 3,
        };
        let r = ConvergenceReport::new(Refinement::Time, vec![row]);
        assert!(r.orders.is_none());
        assert_eq!(r.to_csv(true).lines().count(), 2);
    }

    #[test]
    fn time_interpolation() {
        let mk = |e: f64, s: f64| ConvergenceRow {
            scheme: SchemeKind::Bdf2,
            dim: 1,
            k: 0.0,
            h: 0.0,
            norms: NormTriple {
                linf: e,
                l2: e,
                h1: e,
            },
            seconds: s,
            gmres_iters: 0,
        };
        let rows = [mk(1e-4, 1.0), mk(1e-6, 100.0)];
        assert!((time_at_error(&rows, 1e-5).unwrap() - 10.0).abs() < 1e-9);
        assert!(time_at_error(&rows, 1e-7).is_none());
    }

    #[test]
    fn short_bdf3_run_is_accurate() {
        let c = ManufacturedCase::standard(1);
        let out = run_manufactured(
            SchemeKind::Bdf3,
            &c,
            c.grid(400).unwrap(),
            0.1 / 12.0,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(out.steps, 12);
        assert!(out.norms.linf < 1e-7, "{:?}", out.norms);
        assert!(out.max_unit_defect <= 1e-14);
    }

    #[test]
    fn error_field_is_permutation_symmetric_in_3d() {
        let c = ManufacturedCase::standard(3);
        let g = c.grid(8).unwrap();
        let mut cfg = StepperConfig::new(SchemeKind::Bdf2, 0.01);
        cfg.krylov.rel_tol = 1e-13;
        let m0 = c.exact_field(g, 0.0);
        let mut st = Stepper::new(cfg, c.params(), &m0, 0.0)
            .unwrap()
            .with_forcing(c.forcing_fn());
        st.push_exact_level(&c.exact_field(g, 0.01)).unwrap();
        for _ in 0..3 {
            st.step().unwrap();
        }
        let e = st
            .magnetization()
            .lin_comb(1.0, &c.exact_field(g, st.time()), -1.0)
            .unwrap();
        for [i, j, l] in g.cells() {
            let a = e.get(i, j, l);
            for b in [e.get(j, i, l), e.get(l, j, i), e.get(i, l, j)] {
                assert!((a - b).max_abs() < 1e-11);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn exact_solution_is_unit(x in 0.0..1.0f64, y in 0.0..1.0f64, z in 0.0..1.0f64, t in -5.0..5.0f64) {
            let c = ManufacturedCase::standard(3);
            prop_assert!((c.exact([x, y, z], t).norm() - 1.0).abs() < 1e-15);
        }
    }
}
