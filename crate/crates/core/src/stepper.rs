//! Semi-implicit projection BDF1/BDF2/BDF3 steppers.
//!
//! Each step solves one linear system for `mt` with the exchange term
//! implicit and all coefficients extrapolated from the history,
//!
//! ```text
//! (c0/k) mt - alpha eps Lap mt + mhat x (eps Lap mt)
//!     = H/k + alpha fhat + alpha (eps |grad mhat|^2 - mhat.fhat) mhat - mhat x fhat + g
//! ```
//!
//! then projects `m = mt/|mt|` and refreshes the stray field and source term.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use crate::demag::DemagOperator;
use crate::error::{Error, Result};
use crate::grid::{grad_sq_into, laplacian_into, GridSpec, SpatialOrder, VectorField};
use crate::krylov::{gmres, KrylovConfig, LinearOperator, Preconditioner};
use crate::physics::{compose_source_slice, energy_from_parts, ExternalField, MaterialParams};
use crate::spectral::{BlockJacobi, DctLaplacian, PreconditionerKind, SpectralPreconditioner};
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Bdf1,
    Bdf2,
    Bdf3,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::Bdf1, SchemeKind::Bdf2, SchemeKind::Bdf3];

    /// Number of history levels the scheme consumes.
    pub fn order(self) -> usize {
        match self {
            SchemeKind::Bdf1 => 1,
            SchemeKind::Bdf2 => 2,
            SchemeKind::Bdf3 => 3,
        }
    }

    /// Leading BDF coefficient.
    pub fn c0(self) -> f64 {
        match self {
            SchemeKind::Bdf1 => 1.0,
            SchemeKind::Bdf2 => 1.5,
            SchemeKind::Bdf3 => 11.0 / 6.0,
        }
    }

    /// Weights of the history combination on the right-hand side, newest first.
    pub fn history_weights(self) -> &'static [f64] {
        match self {
            SchemeKind::Bdf1 => &[1.0],
            SchemeKind::Bdf2 => &[2.0, -0.5],
            SchemeKind::Bdf3 => &[3.0, -1.5, 1.0 / 3.0],
        }
    }

    /// Extrapolation weights, newest first.
    pub fn extrapolation_weights(self) -> &'static [f64] {
        extrapolation_weights(self.order())
    }

    /// Spatial accuracy matched to the scheme's temporal order.
    pub fn default_spatial_order(self) -> SpatialOrder {
        match self {
            SchemeKind::Bdf3 => SpatialOrder::Fourth,
            _ => SpatialOrder::Second,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Bdf1 => "bdf1",
            SchemeKind::Bdf2 => "bdf2",
            SchemeKind::Bdf3 => "bdf3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bdf1" | "1" => Some(SchemeKind::Bdf1),
            "bdf2" | "2" => Some(SchemeKind::Bdf2),
            "bdf3" | "3" => Some(SchemeKind::Bdf3),
            _ => None,
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn extrapolation_weights(order: usize) -> &'static [f64] {
    match order {
        1 => &[1.0],
        2 => &[2.0, -1.0],
        _ => &[3.0, -3.0, 1.0],
    }
}

fn combine(levels: &[&[Vec3]], weights: &[f64], out: &mut [Vec3]) {
    for (c, o) in out.iter_mut().enumerate() {
        let mut v = Vec3::ZERO;
        for (lvl, w) in levels.iter().zip(weights) {
            v += lvl[c] * *w;
        }
        *o = v;
    }
}

/// Polynomial extrapolation of order 1..=3 from `history` (newest first).
pub fn extrapolate(history: &[&VectorField], order: usize) -> Result<VectorField> {
    if !(1..=3).contains(&order) {
        return Err(Error::InvalidParameter(format!(
            "extrapolation order {order}"
        )));
    }
    if history.len() < order {
        return Err(Error::InsufficientHistory {
            needed: order,
            have: history.len(),
        });
    }
    let grid = *history[0].grid();
    for h in &history[1..order] {
        grid.check_same(h.grid())?;
    }
    let vals: Vec<Vec<Vec3>> = history[..order].iter().map(|f| f.interior()).collect();
    let refs: Vec<&[Vec3]> = vals.iter().map(|v| v.as_slice()).collect();
    let mut out = vec![Vec3::ZERO; grid.cell_count()];
    combine(&refs, extrapolation_weights(order), &mut out);
    VectorField::from_interior(grid, &out)
}

/// Pointwise normalization `mt/|mt|`.
pub fn project(mt: &VectorField) -> Result<VectorField> {
    let grid = *mt.grid();
    let mut vals = mt.interior();
    project_slice(&grid, &mut vals)?;
    VectorField::from_interior(grid, &vals)
}

fn project_slice(grid: &GridSpec, vals: &mut [Vec3]) -> Result<()> {
    for (c, v) in vals.iter_mut().enumerate() {
        let n = v.norm();
        if !n.is_finite() {
            return Err(Error::NonFinite {
                cell: cell_of(grid, c),
            });
        }
        if n == 0.0 {
            return Err(Error::ProjectionSingularity {
                cell: cell_of(grid, c),
            });
        }
        *v = *v * (1.0 / n);
    }
    Ok(())
}

fn cell_of(grid: &GridSpec, c: usize) -> [usize; 3] {
    let n = grid.n();
    [c % n[0], (c / n[0]) % n[1], c / (n[0] * n[1])]
}

/// `y -> shift y - alpha eps Lap_h y + mhat x (eps Lap_h y)` on flat vectors.
pub struct ImplicitOperator {
    grid: GridSpec,
    order: SpatialOrder,
    shift: f64,
    eps: f64,
    alpha: f64,
    mhat: Vec<Vec3>,
    scratch: Mutex<(VectorField, Vec<Vec3>)>,
}

impl ImplicitOperator {
    pub fn new(
        grid: GridSpec,
        order: SpatialOrder,
        shift: f64,
        eps: f64,
        alpha: f64,
        mhat: Vec<Vec3>,
    ) -> Self {
        assert_eq!(mhat.len(), grid.cell_count());
        ImplicitOperator {
            grid,
            order,
            shift,
            eps,
            alpha,
            mhat,
            scratch: Mutex::new((
                VectorField::zeros(grid),
                vec![Vec3::ZERO; grid.cell_count()],
            )),
        }
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }
}

/// Implicit operator of `scheme` at step size `k` around `mhat`.
pub fn implicit_operator(
    scheme: SchemeKind,
    k: f64,
    eps: f64,
    alpha: f64,
    mhat: &VectorField,
    order: SpatialOrder,
) -> ImplicitOperator {
    ImplicitOperator::new(
        *mhat.grid(),
        order,
        scheme.c0() / k,
        eps,
        alpha,
        mhat.interior(),
    )
}

impl LinearOperator for ImplicitOperator {
    fn dim(&self) -> usize {
        3 * self.grid.cell_count()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut guard = self.scratch.lock().unwrap_or_else(|e| e.into_inner());
        let (field, lap) = &mut *guard;
        field.load_flat(x);
        laplacian_into(field, self.order, lap);
        for (c, l) in lap.iter().enumerate() {
            let xc = Vec3::new(x[3 * c], x[3 * c + 1], x[3 * c + 2]);
            let el = *l * self.eps;
            let v = xc * self.shift - el * self.alpha + self.mhat[c].cross(el);
            y[3 * c..3 * c + 3].copy_from_slice(&v.0);
        }
    }
}

/// Space-time forcing added to the right-hand side, `g(x, t)`.
pub type Forcing = Arc<dyn Fn([f64; 3], f64) -> Vec3 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepperConfig {
    pub scheme: SchemeKind,
    /// Dimensionless time step.
    pub k: f64,
    pub spatial_order: SpatialOrder,
    pub krylov: KrylovConfig,
    pub preconditioner: PreconditionerKind,
}

impl StepperConfig {
    pub fn new(scheme: SchemeKind, k: f64) -> Self {
        StepperConfig {
            scheme,
            k,
            spatial_order: scheme.default_spatial_order(),
            krylov: KrylovConfig::default(),
            preconditioner: PreconditionerKind::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::InvalidParameter(format!("time step k = {}", self.k)));
        }
        self.krylov.validate()
    }
}

/// How the extra history levels of BDF2/BDF3 are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BootstrapMode {
    /// Levels supplied by the caller (e.g. sampled from an exact solution).
    Exact,
    /// BDF1 with `n_sub` substeps per coarse step. With `richardson`, the
    /// run is repeated at `2 n_sub` substeps and `2 fine - coarse` is
    /// projected, which removes the leading first-order error.
    Substep { n_sub: usize, richardson: bool },
}

impl Default for BootstrapMode {
    fn default() -> Self {
        BootstrapMode::Substep {
            n_sub: 100,
            richardson: true,
        }
    }
}

#[derive(Clone, Debug)]
struct Level {
    m: Vec<Vec3>,
    hs: Vec<Vec3>,
    f: Vec<Vec3>,
}

/// Per-step solver diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    pub residual: f64,
    pub unit_defect: f64,
}

/// Time-marching state: physics, configuration and up to three levels of
/// projected magnetization with their stray fields and sources.
pub struct Stepper {
    cfg: StepperConfig,
    params: MaterialParams,
    grid: GridSpec,
    he: ExternalField,
    demag: Option<Arc<DemagOperator>>,
    forcing: Option<Forcing>,
    history: VecDeque<Level>,
    t0: f64,
    t_index: usize,
    dct: Option<Arc<DctLaplacian>>,
    field: VectorField,
    total_iterations: usize,
    max_unit_defect: f64,
}

impl std::fmt::Debug for Stepper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stepper")
            .field("cfg", &self.cfg)
            .field("grid", &self.grid)
            .field("t", &self.time())
            .field("levels", &self.history.len())
            .finish()
    }
}

impl Stepper {
    /// Starts from `m0` at time `t0`. `m0` is normalized pointwise.
    pub fn new(
        cfg: StepperConfig,
        params: MaterialParams,
        m0: &VectorField,
        t0: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        let grid = *m0.grid();
        let dct = match cfg.preconditioner {
            PreconditionerKind::Spectral => {
                Some(Arc::new(DctLaplacian::new(grid, cfg.spatial_order)))
            }
            _ => None,
        };
        let mut s = Stepper {
            cfg,
            params,
            grid,
            he: ExternalField::zero(),
            demag: None,
            forcing: None,
            history: VecDeque::with_capacity(4),
            t0,
            t_index: 0,
            dct,
            field: VectorField::zeros(grid),
            total_iterations: 0,
            max_unit_defect: 0.0,
        };
        let mut m = m0.interior();
        project_slice(&grid, &mut m)?;
        let level = s.make_level(m);
        s.history.push_back(level);
        Ok(s)
    }

    pub fn with_external_field(mut self, he: ExternalField) -> Self {
        self.he = he;
        self.refresh_sources();
        self
    }

    pub fn with_demag(mut self, op: Arc<DemagOperator>) -> Result<Self> {
        self.grid.check_same(op.grid())?;
        self.demag = Some(op);
        self.refresh_sources();
        Ok(self)
    }

    pub fn with_forcing(mut self, g: Forcing) -> Self {
        self.forcing = Some(g);
        self
    }

    /// Changes the applied field; sources of stored levels are recomputed.
    pub fn set_external_field(&mut self, he: ExternalField) {
        self.he = he;
        self.refresh_sources();
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        self.params = self.params.with_alpha(alpha)?;
        Ok(())
    }

    fn refresh_sources(&mut self) {
        let levels: Vec<Vec<Vec3>> = self.history.iter().map(|l| l.m.clone()).collect();
        self.history = levels.into_iter().map(|m| self.make_level(m)).collect();
    }

    fn make_level(&self, m: Vec<Vec3>) -> Level {
        let n = m.len();
        let hs = match &self.demag {
            Some(op) => {
                let mut hs = vec![Vec3::ZERO; n];
                op.apply(&m, &mut hs);
                hs
            }
            None => Vec::new(),
        };
        let mut f = vec![Vec3::ZERO; n];
        compose_source_slice(&m, &hs, self.he.0, self.params.q, &mut f);
        Level { m, hs, f }
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    pub fn params(&self) -> &MaterialParams {
        &self.params
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Time of the newest level.
    pub fn time(&self) -> f64 {
        self.t0 + self.t_index as f64 * self.cfg.k
    }

    pub fn t_index(&self) -> usize {
        self.t_index
    }

    pub fn levels(&self) -> usize {
        self.history.len()
    }

    pub fn total_iterations(&self) -> usize {
        self.total_iterations
    }

    /// Largest `| |m| - 1 |` seen on any accepted level.
    pub fn max_unit_defect(&self) -> f64 {
        self.max_unit_defect
    }

    /// Newest magnetization.
    pub fn magnetization(&self) -> VectorField {
        let lvl = self.history.back().expect("history is never empty");
        VectorField::from_interior(self.grid, &lvl.m).expect("grid-consistent history")
    }

    pub fn magnetization_values(&self) -> &[Vec3] {
        &self.history.back().expect("history is never empty").m
    }

    /// Stray field of the newest level, if demag is enabled.
    pub fn stray_field(&self) -> Option<VectorField> {
        let lvl = self.history.back()?;
        if lvl.hs.is_empty() {
            None
        } else {
            VectorField::from_interior(self.grid, &lvl.hs).ok()
        }
    }

    /// Dimensionless free energy of the newest level.
    pub fn energy(&mut self) -> f64 {
        let lvl = self.history.back().expect("history is never empty");
        self.field.set_interior(&lvl.m);
        self.field.fill_ghosts();
        let mut g2 = vec![0.0; self.grid.cell_count()];
        grad_sq_into(&self.field, SpatialOrder::Fourth, &mut g2);
        energy_from_parts(&lvl.m, &g2, &lvl.hs, self.he.0, &self.params) * self.grid.cell_volume()
    }

    /// Appends caller-supplied levels (exact bootstrap). Each is one step `k`
    /// after the previous newest level.
    pub fn push_exact_level(&mut self, m: &VectorField) -> Result<()> {
        self.grid.check_same(m.grid())?;
        let mut vals = m.interior();
        project_slice(&self.grid, &mut vals)?;
        self.push_level(vals);
        Ok(())
    }

    fn push_level(&mut self, m: Vec<Vec3>) {
        let defect = m.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
        self.max_unit_defect = self.max_unit_defect.max(defect);
        let level = self.make_level(m);
        self.history.push_back(level);
        while self.history.len() > self.cfg.scheme.order() {
            self.history.pop_front();
        }
        self.t_index += 1;
    }

    /// Fills the history up to the scheme order with substepped BDF1.
    pub fn bootstrap(&mut self, mode: BootstrapMode) -> Result<()> {
        let (n_sub, richardson) = match mode {
            BootstrapMode::Exact => {
                return if self.history.len() >= self.cfg.scheme.order() {
                    Ok(())
                } else {
                    Err(Error::InsufficientHistory {
                        needed: self.cfg.scheme.order(),
                        have: self.history.len(),
                    })
                }
            }
            BootstrapMode::Substep { n_sub, richardson } => (n_sub.max(1), richardson),
        };
        while self.history.len() < self.cfg.scheme.order() {
            let coarse = self.bdf1_advance(n_sub)?;
            let next = if richardson {
                let fine = self.bdf1_advance(2 * n_sub)?;
                let mut v: Vec<Vec3> = fine
                    .iter()
                    .zip(&coarse)
                    .map(|(f, c)| *f * 2.0 - *c)
                    .collect();
                project_slice(&self.grid, &mut v)?;
                v
            } else {
                coarse
            };
            self.push_level(next);
        }
        Ok(())
    }

    fn bdf1_advance(&self, n: usize) -> Result<Vec<Vec3>> {
        let mut cfg = self.cfg;
        cfg.scheme = SchemeKind::Bdf1;
        cfg.k = self.cfg.k / n as f64;
        let m0 = self.magnetization();
        let mut sub = Stepper::new(cfg, self.params, &m0, self.time())?;
        sub.he = self.he;
        sub.demag = self.demag.clone();
        sub.forcing = self.forcing.clone();
        sub.refresh_sources();
        for _ in 0..n {
            sub.step()?;
        }
        Ok(sub.magnetization_values().to_vec())
    }

    /// Advances one step of size `k`.
    pub fn step(&mut self) -> Result<StepReport> {
        let scheme = self.cfg.scheme;
        let order = scheme.order();
        if self.history.len() < order {
            return Err(Error::InsufficientHistory {
                needed: order,
                have: self.history.len(),
            });
        }
        let n = self.grid.cell_count();
        let k = self.cfg.k;
        let p = self.params;
        let newest_first: Vec<&Level> = self.history.iter().rev().collect();

        let mut mhat = vec![Vec3::ZERO; n];
        let mut fhat = vec![Vec3::ZERO; n];
        let mut hist = vec![Vec3::ZERO; n];
        let ms: Vec<&[Vec3]> = newest_first.iter().map(|l| l.m.as_slice()).collect();
        let fs: Vec<&[Vec3]> = newest_first.iter().map(|l| l.f.as_slice()).collect();
        combine(&ms, extrapolation_weights(order), &mut mhat);
        combine(&fs, extrapolation_weights(order), &mut fhat);
        combine(&ms, scheme.history_weights(), &mut hist);

        self.field.set_interior(&mhat);
        self.field.fill_ghosts();
        let mut g2 = vec![0.0; n];
        grad_sq_into(&self.field, self.cfg.spatial_order, &mut g2);

        let t_new = self.time() + k;
        let mut b = vec![0.0; 3 * n];
        for c in 0..n {
            let (m, f) = (mhat[c], fhat[c]);
            let mut r =
                hist[c] * (1.0 / k) + f * p.alpha + m * (p.alpha * (p.epsilon * g2[c] - m.dot(f)))
                    - m.cross(f);
            if let Some(g) = &self.forcing {
                let [i, j, l] = cell_of(&self.grid, c);
                r += g(self.grid.center(i, j, l), t_new);
            }
            b[3 * c..3 * c + 3].copy_from_slice(&r.0);
        }

        let shift = scheme.c0() / k;
        let x0: Vec<f64> = mhat.iter().flat_map(|v| v.0).collect();
        let mbar = mhat.iter().fold(Vec3::ZERO, |a, v| a + *v) * (1.0 / n as f64);
        let pc: Option<Box<dyn Preconditioner>> = match self.cfg.preconditioner {
            PreconditionerKind::None => None,
            PreconditionerKind::Spectral => Some(Box::new(SpectralPreconditioner::new(
                self.dct.clone().expect("planned at construction"),
                shift,
                p.epsilon,
                p.alpha,
                mbar,
            ))),
            PreconditionerKind::BlockJacobi => Some(Box::new(BlockJacobi::new(
                &self.grid,
                self.cfg.spatial_order,
                shift,
                p.epsilon,
                p.alpha,
                mhat.clone(),
            ))),
        };
        let op = ImplicitOperator::new(
            self.grid,
            self.cfg.spatial_order,
            shift,
            p.epsilon,
            p.alpha,
            mhat,
        );
        let (x, stats) = gmres(&op, pc.as_deref(), &b, &x0, &self.cfg.krylov);
        self.total_iterations += stats.iterations;
        if !stats.converged {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { cell: [0, 0, 0] });
            }
            return Err(Error::StepRejected {
                step: self.t_index + 1,
                iterations: stats.iterations,
                residual: stats.monitored_residual,
                target: stats.target,
            });
        }
        let mut m: Vec<Vec3> = x
            .chunks_exact(3)
            .map(|c| Vec3([c[0], c[1], c[2]]))
            .collect();
        project_slice(&self.grid, &mut m)?;
        let defect = m.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
        self.push_level(m);
        Ok(StepReport {
            iterations: stats.iterations,
            residual: stats.final_residual,
            unit_defect: defect,
        })
    }

    /// Steps until `time() >= t_end - k/2`.
    pub fn run_until(&mut self, t_end: f64) -> Result<()> {
        while self.time() < t_end - 0.5 * self.cfg.k {
            self.step()?;
        }
        Ok(())
    }
}
