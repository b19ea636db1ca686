//! Device-scale runs: thin-film stability and energy decay over damping,
//! and head-to-head wall motion in a Permalloy strip under an applied field.
//!
//! Lengths in configs are nanometres, times picoseconds or nanoseconds and
//! fields millitesla. The characteristic length `L` is the largest extent.

use std::sync::Arc;

use rayon::prelude::*;

use crate::demag::DemagOperator;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, SpatialOrder, VectorField};
use crate::krylov::KrylovConfig;
use crate::physics::{ExternalField, MaterialParams};
use crate::spectral::PreconditionerKind;
use crate::stepper::{BootstrapMode, SchemeKind, Stepper, StepperConfig};
use crate::vec3::{Vec3, E1};

/// Solver settings shared by the device runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    /// `None` picks the scheme default.
    pub spatial_order: Option<SpatialOrder>,
    pub krylov: KrylovConfig,
    pub preconditioner: PreconditionerKind,
    pub bootstrap: BootstrapMode,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            spatial_order: None,
            // Wall velocities agree to nine digits with 1e-10 at half the cost.
            krylov: KrylovConfig {
                rel_tol: 1e-6,
                ..KrylovConfig::default()
            },
            preconditioner: PreconditionerKind::Spectral,
            bootstrap: BootstrapMode::Substep {
                n_sub: 10,
                richardson: true,
            },
        }
    }
}

impl SolverSettings {
    fn stepper_config(&self, scheme: SchemeKind, k: f64) -> StepperConfig {
        let mut cfg = StepperConfig::new(scheme, k);
        cfg.spatial_order = self.spatial_order.unwrap_or(scheme.default_spatial_order());
        cfg.krylov = self.krylov;
        cfg.preconditioner = self.preconditioner;
        cfg
    }
}

fn check_box(extents_nm: [f64; 3], cells: [usize; 3]) -> Result<()> {
    for a in 0..3 {
        if !(extents_nm[a].is_finite() && extents_nm[a] > 0.0) || cells[a] == 0 {
            return Err(Error::InvalidParameter(format!(
                "extent {} nm with {} cells on axis {a}",
                extents_nm[a], cells[a]
            )));
        }
    }
    Ok(())
}

fn box_grid(extents_nm: [f64; 3], cells: [usize; 3]) -> Result<GridSpec> {
    let l = extents_nm.iter().cloned().fold(0.0, f64::max);
    GridSpec::new(
        cells,
        std::array::from_fn(|a| extents_nm[a] / cells[a] as f64 / l),
    )
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} = {v} must be positive"
        )))
    }
}

/// Builds the stray-field operator of a box grid.
pub fn build_demag(
    grid: GridSpec,
    cache_dir: Option<&std::path::Path>,
) -> Result<Arc<DemagOperator>> {
    let op = match cache_dir {
        Some(dir) => DemagOperator::build_cached(grid, grid.h(), dir)?,
        None => DemagOperator::new(grid, grid.h())?,
    };
    Ok(Arc::new(op))
}

// ---------------------------------------------------------------------------
// Thin film

#[derive(Clone, Debug, PartialEq)]
pub struct FilmConfig {
    pub extents_nm: [f64; 3],
    pub cells: [usize; 3],
    pub k_ps: f64,
    pub alphas: Vec<f64>,
    /// Applied field (mT), uniform.
    pub he_mt: [f64; 3],
    pub t_end_ns: f64,
    /// Energy samples are taken every this many steps.
    pub sample_every: usize,
    pub demag: bool,
    pub solver: SolverSettings,
}

impl Default for FilmConfig {
    fn default() -> Self {
        FilmConfig {
            extents_nm: [480.0, 480.0, 20.0],
            cells: [100, 100, 4],
            k_ps: 1.0,
            alphas: vec![0.0, 0.01, 0.1, 1.0, 5.0, 10.0, 40.0, 100.0],
            he_mt: [0.0; 3],
            t_end_ns: 2.0,
            sample_every: 1,
            demag: true,
            solver: SolverSettings::default(),
        }
    }
}

impl FilmConfig {
    /// 240x240x20 nm on 50x50x2 cells for 0.5 ns.
    pub fn downscaled() -> Self {
        FilmConfig {
            extents_nm: [240.0, 240.0, 20.0],
            cells: [50, 50, 2],
            t_end_ns: 0.5,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_box(self.extents_nm, self.cells)?;
        positive("k_ps", self.k_ps)?;
        positive("t_end_ns", self.t_end_ns)?;
        if self.sample_every == 0 {
            return Err(Error::InvalidParameter(
                "sample_every must be positive".into(),
            ));
        }
        for &a in &self.alphas {
            MaterialParams::permalloy(1.0, a)?;
        }
        self.solver.krylov.validate()
    }

    pub fn length_m(&self) -> f64 {
        self.extents_nm.iter().cloned().fold(0.0, f64::max) * 1e-9
    }

    pub fn grid(&self) -> Result<GridSpec> {
        box_grid(self.extents_nm, self.cells)
    }

    pub fn params(&self, alpha: f64) -> Result<MaterialParams> {
        MaterialParams::permalloy(self.length_m(), alpha)
    }

    pub fn steps(&self) -> usize {
        (self.t_end_ns * 1e3 / self.k_ps).round() as usize
    }
}

/// Outcome class of a film run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Verdict {
    Stable,
    NonFinite {
        step: usize,
    },
    Rejected {
        step: usize,
    },
    /// Energy exceeded ten times its initial value.
    EnergyBlowup {
        step: usize,
    },
}

impl Verdict {
    pub fn is_stable(self) -> bool {
        matches!(self, Verdict::Stable)
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::NonFinite { .. } => "non-finite",
            Verdict::Rejected { .. } => "rejected",
            Verdict::EnergyBlowup { .. } => "energy-blowup",
        }
    }
}

/// In-plane angle `atan2(m2, m1)` per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleMap {
    pub grid: GridSpec,
    pub angles: Vec<f64>,
}

impl AngleMap {
    pub fn from_field(m: &VectorField) -> Self {
        AngleMap {
            grid: *m.grid(),
            angles: m.interior().iter().map(|v| v[1].atan2(v[0])).collect(),
        }
    }

    /// Normalized histogram over `[-pi, pi)`.
    pub fn histogram(&self, bins: usize) -> Vec<f64> {
        angle_histogram(&self.angles, bins)
    }
}

pub fn angle_histogram(angles: &[f64], bins: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let mut h = vec![0.0; bins];
    for a in angles {
        let t = (a + PI).rem_euclid(2.0 * PI) / (2.0 * PI);
        h[((t * bins as f64) as usize).min(bins - 1)] += 1.0;
    }
    let n = angles.len().max(1) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Half the L1 distance between two normalized histograms.
pub fn histogram_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilmOutcome {
    pub scheme: SchemeKind,
    pub alpha: f64,
    pub k_ps: f64,
    pub verdict: Verdict,
    pub steps: usize,
    pub final_energy: f64,
    /// `(t_ns, F)` with dimensionless `F`.
    pub energy: Vec<(f64, f64)>,
    pub angles: AngleMap,
    pub final_state: VectorField,
    pub max_unit_defect: f64,
    pub gmres_iters: usize,
}

impl FilmOutcome {
    pub fn energy_trace(&self) -> &[(f64, f64)] {
        &self.energy
    }
}

/// One film run at damping `alpha` from the uniform `e1` state.
pub fn film_run(
    cfg: &FilmConfig,
    scheme: SchemeKind,
    alpha: f64,
    demag: Option<Arc<DemagOperator>>,
) -> Result<FilmOutcome> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let p = cfg.params(alpha)?;
    let k = p.seconds_to_time(cfg.k_ps * 1e-12);
    let m0 = VectorField::constant(grid, E1);
    let b = Vec3(cfg.he_mt);
    let he = if b.norm() == 0.0 {
        ExternalField::zero()
    } else {
        ExternalField::from_millitesla(b, b.norm(), &p)
    };
    let mut st =
        Stepper::new(cfg.solver.stepper_config(scheme, k), p, &m0, 0.0)?.with_external_field(he);
    if let Some(op) = demag {
        st = st.with_demag(op)?;
    }
    let e0 = st.energy();
    let mut energy = vec![(0.0, e0)];
    let to_ns = |t: f64| p.time_to_seconds(t) * 1e9;
    let total = cfg.steps();

    let classify = |e: Error, step: usize| -> Result<Verdict> {
        match e {
            Error::NonFinite { .. } | Error::ProjectionSingularity { .. } => {
                Ok(Verdict::NonFinite { step })
            }
            Error::StepRejected { .. } => Ok(Verdict::Rejected { step }),
            other => Err(other),
        }
    };

    let mut verdict = Verdict::Stable;
    if let Err(e) = st.bootstrap(cfg.solver.bootstrap) {
        verdict = classify(e, st.t_index() + 1)?;
    }
    while verdict.is_stable() && st.t_index() < total {
        if let Err(e) = st.step() {
            verdict = classify(e, st.t_index() + 1)?;
            break;
        }
        let idx = st.t_index();
        if idx % cfg.sample_every == 0 || idx == total {
            let e = st.energy();
            energy.push((to_ns(st.time()), e));
            if !e.is_finite() {
                verdict = Verdict::NonFinite { step: idx };
            } else if e > 10.0 * e0.abs() && e0 != 0.0 {
                verdict = Verdict::EnergyBlowup { step: idx };
            }
        }
    }
    let final_state = st.magnetization();
    if verdict.is_stable() && !final_state.all_finite() {
        verdict = Verdict::NonFinite { step: st.t_index() };
    }
    Ok(FilmOutcome {
        scheme,
        alpha,
        k_ps: cfg.k_ps,
        verdict,
        steps: st.t_index(),
        final_energy: energy.last().map(|v| v.1).unwrap_or(e0),
        energy,
        angles: AngleMap::from_field(&final_state),
        final_state,
        max_unit_defect: st.max_unit_defect(),
        gmres_iters: st.total_iterations(),
    })
}

/// Film runs for every damping value of `cfg`, sharing one stray-field
/// operator.
pub fn stability_run(cfg: &FilmConfig, scheme: SchemeKind) -> Result<Vec<FilmOutcome>> {
    cfg.validate()?;
    let demag = if cfg.demag {
        Some(build_demag(cfg.grid()?, None)?)
    } else {
        None
    };
    stability_run_with(cfg, scheme, demag)
}

pub fn stability_run_with(
    cfg: &FilmConfig,
    scheme: SchemeKind,
    demag: Option<Arc<DemagOperator>>,
) -> Result<Vec<FilmOutcome>> {
    cfg.alphas
        .par_iter()
        .map(|&a| film_run(cfg, scheme, a, demag.clone()))
        .collect()
}

/// First time at which `F - e_ref` drops to `fraction` of `F(0) - e_ref`.
pub fn dissipation_time(trace: &[(f64, f64)], e_ref: f64, fraction: f64) -> Option<f64> {
    let (_, e0) = *trace.first()?;
    let excess = e0 - e_ref;
    if excess <= 0.0 {
        return Some(0.0);
    }
    trace
        .iter()
        .find(|(_, e)| e - e_ref <= fraction * excess)
        .map(|(t, _)| *t)
}

// ---------------------------------------------------------------------------
// Strip and wall motion

#[derive(Clone, Debug, PartialEq)]
pub struct StripConfig {
    pub extents_nm: [f64; 3],
    pub cells: [usize; 3],
    pub k_ps: f64,
    /// Applied fields along +x (mT).
    pub fields_mt: Vec<f64>,
    pub alphas: Vec<f64>,
    pub t_end_ns: f64,
    /// Initial wall width; `None` uses `sqrt(eps / q)`.
    pub wall_width_nm: Option<f64>,
    /// Initial wall centre; `None` is the middle of the strip.
    pub wall_center_nm: Option<f64>,
    /// Zero-field relaxation before the field is applied.
    pub relax_ns: f64,
    pub relax_alpha: f64,
    /// Runs stop once the wall is this close to the far end.
    pub stop_margin_nm: f64,
    /// Wall position is sampled every this many steps.
    pub sample_every: usize,
    /// Fraction of the trace (from the end) used for the velocity fit.
    pub fit_window: f64,
    /// Average `m1` over the whole cross-section instead of the centre line.
    pub average_width: bool,
    pub demag: bool,
    pub solver: SolverSettings,
}

impl Default for StripConfig {
    fn default() -> Self {
        StripConfig {
            extents_nm: [800.0, 100.0, 4.0],
            cells: [128, 64, 4],
            k_ps: 1.0,
            fields_mt: vec![5.0, 6.0, 7.0, 8.0, 9.0],
            alphas: vec![0.1, 0.4, 0.8, 1.0, 2.0, 3.0, 5.0],
            t_end_ns: 1.6,
            wall_width_nm: None,
            wall_center_nm: None,
            relax_ns: 0.5,
            relax_alpha: 5.0,
            stop_margin_nm: 100.0,
            sample_every: 10,
            fit_window: 0.5,
            average_width: false,
            demag: true,
            solver: SolverSettings::default(),
        }
    }
}

impl StripConfig {
    /// 64x32x2 cells on the same strip.
    pub fn fallback() -> Self {
        StripConfig {
            cells: [64, 32, 2],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_box(self.extents_nm, self.cells)?;
        positive("k_ps", self.k_ps)?;
        positive("t_end_ns", self.t_end_ns)?;
        if !(self.relax_ns.is_finite() && self.relax_ns >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "relax_ns = {}",
                self.relax_ns
            )));
        }
        if let Some(w) = self.wall_width_nm {
            positive("wall_width_nm", w)?;
        }
        if !(self.fit_window > 0.0 && self.fit_window <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "fit_window = {}",
                self.fit_window
            )));
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidParameter(
                "sample_every must be positive".into(),
            ));
        }
        for &a in self.alphas.iter().chain([&self.relax_alpha]) {
            MaterialParams::permalloy(1.0, a)?;
        }
        for &h in &self.fields_mt {
            if !h.is_finite() {
                return Err(Error::InvalidParameter(format!("field {h} mT")));
            }
        }
        self.solver.krylov.validate()
    }

    pub fn length_m(&self) -> f64 {
        self.extents_nm.iter().cloned().fold(0.0, f64::max) * 1e-9
    }

    pub fn grid(&self) -> Result<GridSpec> {
        box_grid(self.extents_nm, self.cells)
    }

    pub fn params(&self, alpha: f64) -> Result<MaterialParams> {
        MaterialParams::permalloy(self.length_m(), alpha)
    }

    /// Initial wall width in nm.
    pub fn wall_width(&self) -> Result<f64> {
        match self.wall_width_nm {
            Some(w) => Ok(w),
            None => {
                let p = self.params(1.0)?;
                Ok((p.epsilon / p.q).sqrt() * self.length_m() * 1e9)
            }
        }
    }
}

/// Head-to-head wall along x: `m1 = -tanh(s)`, `m2 = sech(s)`,
/// `s = (x - center) / width`, then projected.
pub fn init_neel_wall(
    grid: GridSpec,
    extents_nm: [f64; 3],
    center_nm: f64,
    width_nm: f64,
) -> VectorField {
    let scale = extents_nm[0] / grid.extent()[0];
    VectorField::from_fn(grid, |x| {
        let s = (x[0] * scale - center_nm) / width_nm;
        Vec3::new(-s.tanh(), 1.0 / s.cosh(), 0.0).unit()
    })
}

/// Zero crossing of `m1` along x in nm, linearly interpolated. Uses the
/// middle row(s) of the cross-section, or all of it with `average_width`.
pub fn wall_position(m: &VectorField, extents_nm: [f64; 3], average_width: bool) -> Result<f64> {
    let g = m.grid();
    let [nx, ny, nz] = g.n();
    let mid = |n: usize| {
        if n % 2 == 0 {
            vec![n / 2 - 1, n / 2]
        } else {
            vec![n / 2]
        }
    };
    let (js, ls) = if average_width {
        ((0..ny).collect::<Vec<_>>(), (0..nz).collect::<Vec<_>>())
    } else {
        (mid(ny), mid(nz))
    };
    let profile: Vec<f64> = (0..nx)
        .map(|i| {
            let mut s = 0.0;
            for &j in &js {
                for &l in &ls {
                    s += m.get(i, j, l)[0];
                }
            }
            s / (js.len() * ls.len()) as f64
        })
        .collect();
    let hx = extents_nm[0] / nx as f64;
    for i in 0..nx.saturating_sub(1) {
        let (a, b) = (profile[i], profile[i + 1]);
        if a == 0.0 {
            return Ok((i as f64 + 0.5) * hx);
        }
        if a * b < 0.0 {
            return Ok((i as f64 + 0.5 + a / (a - b)) * hx);
        }
    }
    Err(Error::WallLost)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WallFit {
    /// m/s
    pub velocity: f64,
    pub r2: f64,
    /// `r2 >= 0.9`; otherwise the motion is flagged as non-steady.
    pub steady: bool,
}

/// Least-squares line `y = a + b x`, with R^2.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let b = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (my - b * mx, b, r2)
}

/// Velocity from `(t_ns, x_nm)` samples over the trailing `window` fraction.
pub fn wall_velocity(samples: &[(f64, f64)], window: f64) -> Result<WallFit> {
    let start = ((1.0 - window) * samples.len() as f64).floor() as usize;
    let tail = &samples[start.min(samples.len())..];
    if tail.len() < 10 {
        return Err(Error::InvalidParameter(format!(
            "{} samples in the fit window, need at least 10",
            tail.len()
        )));
    }
    let ts: Vec<f64> = tail.iter().map(|s| s.0).collect();
    let xs: Vec<f64> = tail.iter().map(|s| s.1).collect();
    let (_, b, r2) = linear_fit(&ts, &xs);
    // nm/ns is m/s
    Ok(WallFit {
        velocity: b,
        r2,
        steady: r2 >= 0.9,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WallTrace {
    pub alpha: f64,
    pub field_mt: f64,
    /// `(t_ns, x_w in nm)`
    pub samples: Vec<(f64, f64)>,
    pub fit: WallFit,
    /// The run ended early because the wall neared the end of the strip.
    pub stopped_early: bool,
    pub max_unit_defect: f64,
    pub gmres_iters: usize,
    pub steps: usize,
}

/// Initial wall relaxed at zero field.
pub fn relaxed_wall(
    cfg: &StripConfig,
    scheme: SchemeKind,
    demag: Option<Arc<DemagOperator>>,
) -> Result<VectorField> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let center = cfg.wall_center_nm.unwrap_or(0.5 * cfg.extents_nm[0]);
    let m0 = init_neel_wall(grid, cfg.extents_nm, center, cfg.wall_width()?);
    if cfg.relax_ns == 0.0 {
        return Ok(m0);
    }
    let p = cfg.params(cfg.relax_alpha)?;
    let k = p.seconds_to_time(cfg.k_ps * 1e-12);
    let mut st = Stepper::new(cfg.solver.stepper_config(scheme, k), p, &m0, 0.0)?;
    if let Some(op) = demag {
        st = st.with_demag(op)?;
    }
    st.bootstrap(cfg.solver.bootstrap)?;
    let steps = (cfg.relax_ns * 1e3 / cfg.k_ps).round() as usize;
    while st.t_index() < steps {
        st.step()?;
    }
    Ok(st.magnetization())
}

/// Drives the wall in `m0` with a field of `field_mt` along +x.
pub fn wall_run(
    cfg: &StripConfig,
    scheme: SchemeKind,
    alpha: f64,
    field_mt: f64,
    m0: &VectorField,
    demag: Option<Arc<DemagOperator>>,
) -> Result<WallTrace> {
    let p = cfg.params(alpha)?;
    let k = p.seconds_to_time(cfg.k_ps * 1e-12);
    let he = ExternalField::from_millitesla(E1, field_mt, &p);
    let mut st =
        Stepper::new(cfg.solver.stepper_config(scheme, k), p, m0, 0.0)?.with_external_field(he);
    if let Some(op) = demag {
        st = st.with_demag(op)?;
    }
    let to_ns = |t: f64| p.time_to_seconds(t) * 1e9;
    let mut samples = vec![(0.0, wall_position(m0, cfg.extents_nm, cfg.average_width)?)];
    st.bootstrap(cfg.solver.bootstrap)?;
    let total = (cfg.t_end_ns * 1e3 / cfg.k_ps).round() as usize;
    let mut stopped_early = false;
    while st.t_index() < total {
        st.step()?;
        if st.t_index() % cfg.sample_every == 0 {
            let x = wall_position(&st.magnetization(), cfg.extents_nm, cfg.average_width)?;
            samples.push((to_ns(st.time()), x));
            if x > cfg.extents_nm[0] - cfg.stop_margin_nm {
                stopped_early = true;
                break;
            }
        }
    }
    let fit = wall_velocity(&samples, cfg.fit_window)?;
    Ok(WallTrace {
        alpha,
        field_mt,
        samples,
        fit,
        stopped_early,
        max_unit_defect: st.max_unit_defect(),
        gmres_iters: st.total_iterations(),
        steps: st.t_index(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityTable {
    pub alphas: Vec<f64>,
    pub fields_mt: Vec<f64>,
    /// `traces[a][f]`
    pub traces: Vec<Vec<WallTrace>>,
    /// Per damping: V = a + b h_e, `(a, b in (m/s)/mT, R^2)`.
    pub linear: Vec<(f64, f64, f64)>,
    /// Per damping: slope of ln V against ln h_e.
    pub log_slopes: Vec<f64>,
    /// Per field: V = c0 + c1 alpha + c2 alpha^2.
    pub quadratic: Vec<[f64; 3]>,
}

impl VelocityTable {
    pub fn velocity(&self, a: usize, f: usize) -> f64 {
        self.traces[a][f].fit.velocity
    }
}

/// Least-squares quadratic through `(x, y)`.
pub fn quadratic_fit(xs: &[f64], ys: &[f64]) -> [f64; 3] {
    let mut s = [0.0; 5];
    let mut t = [0.0; 3];
    for (x, y) in xs.iter().zip(ys) {
        let mut p = 1.0;
        for (i, si) in s.iter_mut().enumerate() {
            *si += p;
            if i < 3 {
                t[i] += p * y;
            }
            p *= x;
        }
    }
    let a = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    std::array::from_fn(|c| {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = t[r];
        }
        det(m) / d
    })
}

/// Relaxes one wall, then runs every (alpha, field) pair from it.
pub fn field_sweep(cfg: &StripConfig, scheme: SchemeKind) -> Result<VelocityTable> {
    cfg.validate()?;
    let demag = if cfg.demag {
        Some(build_demag(cfg.grid()?, None)?)
    } else {
        None
    };
    field_sweep_with(cfg, scheme, demag)
}

pub fn field_sweep_with(
    cfg: &StripConfig,
    scheme: SchemeKind,
    demag: Option<Arc<DemagOperator>>,
) -> Result<VelocityTable> {
    let m0 = relaxed_wall(cfg, scheme, demag.clone())?;
    let cells: Vec<(usize, usize)> = (0..cfg.alphas.len())
        .flat_map(|a| (0..cfg.fields_mt.len()).map(move |f| (a, f)))
        .collect();
    let flat: Vec<WallTrace> = cells
        .par_iter()
        .map(|&(a, f)| {
            wall_run(
                cfg,
                scheme,
                cfg.alphas[a],
                cfg.fields_mt[f],
                &m0,
                demag.clone(),
            )
        })
        .collect::<Result<_>>()?;
    let nf = cfg.fields_mt.len();
    let traces: Vec<Vec<WallTrace>> = flat.chunks(nf).map(|c| c.to_vec()).collect();
    let linear = traces
        .iter()
        .map(|row| {
            let v: Vec<f64> = row.iter().map(|t| t.fit.velocity).collect();
            linear_fit(&cfg.fields_mt, &v)
        })
        .collect();
    let log_slopes = traces
        .iter()
        .map(|row| {
            let lx: Vec<f64> = cfg.fields_mt.iter().map(|h| h.ln()).collect();
            let ly: Vec<f64> = row.iter().map(|t| t.fit.velocity.abs().ln()).collect();
            linear_fit(&lx, &ly).1
        })
        .collect();
    let quadratic = (0..nf)
        .map(|f| {
            let v: Vec<f64> = traces.iter().map(|row| row[f].fit.velocity).collect();
            quadratic_fit(&cfg.alphas, &v)
        })
        .collect();
    Ok(VelocityTable {
        alphas: cfg.alphas.clone(),
        fields_mt: cfg.fields_mt.clone(),
        traces,
        linear,
        log_slopes,
        quadratic,
    })
}
