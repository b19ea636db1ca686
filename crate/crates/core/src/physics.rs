//! Dimensionless LLG model: material constants, composite source term,
//! effective field, explicit right-hand side and the free energy.
//!
//! Time is measured in units of `1/(mu0 gamma Ms)`, lengths in units of the
//! specimen size `L`, fields in units of `Ms`.

use crate::error::{Error, Result};
use crate::grid::{grad_sq_into, laplacian_into, ScalarField, SpatialOrder, VectorField};
use crate::vec3::Vec3;

/// Vacuum permeability (H/m).
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
/// Gyromagnetic ratio (1/(T s)).
pub const GAMMA: f64 = 1.76086e11;

/// Permalloy exchange constant (J/m).
pub const PERMALLOY_CEX: f64 = 1.3e-11;
/// Permalloy uniaxial anisotropy (J/m^3).
pub const PERMALLOY_KU: f64 = 1.0e2;
/// Permalloy saturation magnetization (A/m).
pub const PERMALLOY_MS: f64 = 8.0e5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams {
    pub epsilon: f64,
    pub q: f64,
    pub alpha: f64,
    pub mu0: f64,
    pub ms: f64,
    pub cex: f64,
    pub ku: f64,
    /// Characteristic length (m).
    pub length: f64,
    pub gamma: f64,
    /// Seconds per dimensionless time unit.
    pub t_unit: f64,
}

impl MaterialParams {
    pub fn from_physical(cex: f64, ku: f64, ms: f64, length: f64, alpha: f64) -> Result<Self> {
        for (name, v) in [("Cex", cex), ("Ms", ms), ("L", length)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} must be positive"
                )));
            }
        }
        if !(ku.is_finite() && ku >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Ku = {ku} must be non-negative"
            )));
        }
        check_alpha(alpha)?;
        let scale = MU0 * ms * ms;
        Ok(MaterialParams {
            epsilon: cex / (scale * length * length),
            q: ku / scale,
            alpha,
            mu0: MU0,
            ms,
            cex,
            ku,
            length,
            gamma: GAMMA,
            t_unit: 1.0 / (MU0 * GAMMA * ms),
        })
    }

    /// Permalloy with characteristic length `length` (m).
    pub fn permalloy(length: f64, alpha: f64) -> Result<Self> {
        Self::from_physical(PERMALLOY_CEX, PERMALLOY_KU, PERMALLOY_MS, length, alpha)
    }

    /// Purely dimensionless parameters, as used by the manufactured problems.
    /// The physical fields are filled with Permalloy values at unit length
    /// so that unit conversions stay defined.
    pub fn dimensionless(epsilon: f64, q: f64, alpha: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0 && q.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon = {epsilon}, q = {q}"
            )));
        }
        check_alpha(alpha)?;
        let mut p = Self::permalloy(1.0, alpha)?;
        p.epsilon = epsilon;
        p.q = q;
        Ok(p)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        self.alpha = alpha;
        Ok(self)
    }

    /// Applied flux density in tesla to a dimensionless field.
    pub fn tesla_to_field(&self, b: f64) -> f64 {
        b / (self.mu0 * self.ms)
    }

    pub fn seconds_to_time(&self, s: f64) -> f64 {
        s / self.t_unit
    }

    pub fn time_to_seconds(&self, t: f64) -> f64 {
        t * self.t_unit
    }

    /// Joules per unit of dimensionless energy.
    pub fn energy_scale(&self) -> f64 {
        0.5 * self.mu0 * self.ms * self.ms * self.length.powi(3)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "alpha = {alpha} must be >= 0"
        )))
    }
}

/// Uniform applied field, dimensionless.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExternalField(pub Vec3);

impl ExternalField {
    pub fn zero() -> Self {
        ExternalField(Vec3::ZERO)
    }

    /// Field along `dir` with flux density `mt` in millitesla.
    pub fn from_millitesla(dir: Vec3, mt: f64, p: &MaterialParams) -> Self {
        let n = dir.norm();
        ExternalField(dir * (p.tesla_to_field(mt * 1e-3) / n))
    }
}

/// Composite source `f = -q (m2 e2 + m3 e3) + h_s + h_e`.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceTerm {
    pub f: VectorField,
}

/// Pointwise source on interior slices; `hs` may be empty for "no stray field".
pub(crate) fn compose_source_slice(m: &[Vec3], hs: &[Vec3], he: Vec3, q: f64, out: &mut [Vec3]) {
    for (c, o) in out.iter_mut().enumerate() {
        let mc = m[c];
        let mut v = Vec3::new(0.0, -q * mc[1], -q * mc[2]) + he;
        if !hs.is_empty() {
            v += hs[c];
        }
        *o = v;
    }
}

pub fn compose_source(
    m: &VectorField,
    hs: Option<&VectorField>,
    he: ExternalField,
    p: &MaterialParams,
) -> Result<SourceTerm> {
    let grid = *m.grid();
    let hs_vals = match hs {
        Some(h) => {
            grid.check_same(h.grid())?;
            h.interior()
        }
        None => Vec::new(),
    };
    let mut out = vec![Vec3::ZERO; grid.cell_count()];
    compose_source_slice(&m.interior(), &hs_vals, he.0, p.q, &mut out);
    Ok(SourceTerm {
        f: VectorField::from_interior(grid, &out)?,
    })
}

/// `h_eff = eps * Lap_h m + f`, using the fourth-order Laplacian.
pub fn effective_field(m: &VectorField, f: &SourceTerm, p: &MaterialParams) -> Result<VectorField> {
    effective_field_with(m, f, p, SpatialOrder::Fourth)
}

pub fn effective_field_with(
    m: &VectorField,
    f: &SourceTerm,
    p: &MaterialParams,
    order: SpatialOrder,
) -> Result<VectorField> {
    let grid = *m.grid();
    grid.check_same(f.f.grid())?;
    let mut lap = vec![Vec3::ZERO; grid.cell_count()];
    laplacian_into(m, order, &mut lap);
    let fv = f.f.interior();
    let h: Vec<Vec3> = lap
        .iter()
        .zip(&fv)
        .map(|(l, f)| *l * p.epsilon + *f)
        .collect();
    VectorField::from_interior(grid, &h)
}

/// Explicit right-hand side
/// `alpha h + alpha (eps |grad m|^2 - m.f) m - m x h` with `h = eps Lap m + f`.
pub fn llg_rhs(m: &VectorField, f: &SourceTerm, p: &MaterialParams) -> Result<VectorField> {
    llg_rhs_with(m, f, p, SpatialOrder::Fourth)
}

pub fn llg_rhs_with(
    m: &VectorField,
    f: &SourceTerm,
    p: &MaterialParams,
    order: SpatialOrder,
) -> Result<VectorField> {
    let grid = *m.grid();
    grid.check_same(f.f.grid())?;
    let n = grid.cell_count();
    let mut lap = vec![Vec3::ZERO; n];
    let mut g2 = vec![0.0; n];
    laplacian_into(m, order, &mut lap);
    grad_sq_into(m, order, &mut g2);
    let mv = m.interior();
    let fv = f.f.interior();
    let out: Vec<Vec3> = (0..n)
        .map(|c| {
            let h = lap[c] * p.epsilon + fv[c];
            h * p.alpha + mv[c] * (p.alpha * (p.epsilon * g2[c] - mv[c].dot(fv[c])))
                - mv[c].cross(h)
        })
        .collect();
    VectorField::from_interior(grid, &out)
}

/// Dimensionless free energy
/// `sum (eps |grad m|^2 + q (m2^2 + m3^2) - 2 he.m - hs.m) dV`.
pub fn energy_dimensionless(
    m: &VectorField,
    hs: Option<&VectorField>,
    he: ExternalField,
    p: &MaterialParams,
) -> Result<f64> {
    let grid = *m.grid();
    let hs_vals = match hs {
        Some(h) => {
            grid.check_same(h.grid())?;
            h.interior()
        }
        None => Vec::new(),
    };
    let mut g2 = vec![0.0; grid.cell_count()];
    grad_sq_into(m, SpatialOrder::Fourth, &mut g2);
    Ok(energy_from_parts(&m.interior(), &g2, &hs_vals, he.0, p) * grid.cell_volume())
}

/// Sum of energy densities without the cell volume.
pub(crate) fn energy_from_parts(
    m: &[Vec3],
    grad_sq: &[f64],
    hs: &[Vec3],
    he: Vec3,
    p: &MaterialParams,
) -> f64 {
    let mut sum = 0.0;
    for (c, mc) in m.iter().enumerate() {
        let mut e =
            p.epsilon * grad_sq[c] + p.q * (mc[1] * mc[1] + mc[2] * mc[2]) - 2.0 * he.dot(*mc);
        if !hs.is_empty() {
            e -= hs[c].dot(*mc);
        }
        sum += e;
    }
    sum
}

/// Free energy in joules.
pub fn energy(
    m: &VectorField,
    hs: Option<&VectorField>,
    he: ExternalField,
    p: &MaterialParams,
) -> Result<f64> {
    Ok(energy_dimensionless(m, hs, he, p)? * p.energy_scale())
}

/// `m . llg_rhs(m)` per cell, a measure of the tangency defect.
pub fn tangency_defect(m: &VectorField, f: &SourceTerm, p: &MaterialParams) -> Result<ScalarField> {
    let rhs = llg_rhs(m, f, p)?;
    let vals: Vec<f64> = m
        .interior()
        .iter()
        .zip(rhs.interior())
        .map(|(a, b)| a.dot(b))
        .collect();
    ScalarField::from_interior(*m.grid(), &vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::vec3::{E1, E2, E3};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn uniform(grid: GridSpec, v: Vec3) -> VectorField {
        VectorField::constant(grid, v)
    }

    #[test]
    fn permalloy_constants() {
        let p = MaterialParams::permalloy(800e-9, 0.1).unwrap();
        assert!((p.q - 1.2434e-4).abs() < 1e-8, "q = {}", p.q);
        assert!(
            (p.t_unit - 5.65e-12).abs() < 0.02e-12,
            "t_unit = {}",
            p.t_unit
        );
        let eps = 1.3e-11 / (MU0 * 6.4e11 * 6.4e-13);
        assert!((p.epsilon - eps).abs() < 1e-15);
        let h5 = p.tesla_to_field(5e-3);
        assert!((h5 - 4.9736e-3).abs() < 1e-7, "5 mT -> {h5}");
    }

    #[test]
    fn parameter_validation() {
        assert!(MaterialParams::permalloy(-1.0, 0.1).is_err());
        assert!(MaterialParams::permalloy(1e-6, -0.1).is_err());
        assert!(MaterialParams::dimensionless(f64::NAN, 0.0, 0.1).is_err());
    }

    #[test]
    fn source_examples() {
        let g = GridSpec::line(8, 0.125).unwrap();
        let p = MaterialParams::dimensionless(1.0, 0.0, 0.1).unwrap();
        let m = uniform(g, E1);
        let f = compose_source(&m, None, ExternalField::zero(), &p).unwrap();
        assert_eq!(f.f.max_abs(), 0.0);

        let p = MaterialParams::dimensionless(1.0, 0.5, 0.1).unwrap();
        let m = uniform(g, E2);
        let f = compose_source(&m, None, ExternalField::zero(), &p).unwrap();
        assert_eq!(f.f.get(3, 0, 0), Vec3::new(0.0, -0.5, 0.0));
    }

    #[test]
    fn effective_field_examples() {
        let g = GridSpec::cube(6, 1.0 / 6.0).unwrap();
        let p = MaterialParams::dimensionless(1.0, 0.0, 0.1).unwrap();
        let m = uniform(g, Vec3::new(0.6, 0.8, 0.0));
        let f = compose_source(&m, None, ExternalField::zero(), &p).unwrap();
        assert!(effective_field(&m, &f, &p).unwrap().max_abs() < 1e-12);

        let p0 = MaterialParams::dimensionless(0.0, 0.0, 0.1).unwrap();
        let m = VectorField::from_fn(g, |x| Vec3::new(x[0].cos(), x[0].sin(), 0.0));
        let f = SourceTerm {
            f: VectorField::from_fn(g, |x| Vec3::new(x[1], 1.0, -x[2])),
        };
        assert_eq!(effective_field(&m, &f, &p0).unwrap(), f.f);
    }

    #[test]
    fn effective_field_matches_analytic_laplacian() {
        // m = (cos u, sin u, 0) with u = cos(pi x):
        // Lap m = (-cos u u'^2 - sin u u'', -sin u u'^2 + cos u u'', 0).
        let p = MaterialParams::dimensionless(1.0, 0.0, 0.1).unwrap();
        let mut errs = vec![];
        for n in [32, 64, 128] {
            let g = GridSpec::line(n, 1.0 / n as f64).unwrap();
            let m = VectorField::from_fn(g, |x| {
                let u = (PI * x[0]).cos();
                Vec3::new(u.cos(), u.sin(), 0.0)
            });
            let f = SourceTerm {
                f: VectorField::zeros(g),
            };
            let h = effective_field(&m, &f, &p).unwrap();
            let mut e: f64 = 0.0;
            for i in 0..n {
                let x = g.center(i, 0, 0)[0];
                let u = (PI * x).cos();
                let up2 = (PI * (PI * x).sin()).powi(2);
                let upp = -PI * PI * u;
                let exact = Vec3::new(
                    -u.cos() * up2 - u.sin() * upp,
                    -u.sin() * up2 + u.cos() * upp,
                    0.0,
                );
                e = e.max((h.get(i, 0, 0) - exact).max_abs());
            }
            errs.push(e);
        }
        for w in errs.windows(2) {
            let r = (w[0] / w[1]).log2();
            assert!((3.7..4.3).contains(&r), "order {r}");
        }
    }

    #[test]
    fn aligned_equilibrium_is_stationary() {
        let g = GridSpec::cube(5, 0.2).unwrap();
        let p = MaterialParams::dimensionless(0.7, 0.0, 0.3).unwrap();
        let dir = Vec3::new(1.0, 2.0, -2.0) * (1.0 / 3.0);
        let m = uniform(g, dir);
        let he = ExternalField(dir * 0.4);
        let f = compose_source(&m, None, he, &p).unwrap();
        assert!(llg_rhs(&m, &f, &p).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn precession_only_case() {
        let g = GridSpec::line(4, 0.25).unwrap();
        let p = MaterialParams::dimensionless(0.0, 0.0, 0.0).unwrap();
        let m = uniform(g, E1);
        let f = SourceTerm { f: uniform(g, E2) };
        let r = llg_rhs(&m, &f, &p).unwrap();
        assert_eq!(r.get(2, 0, 0), -E3);
    }

    #[test]
    fn energy_examples() {
        let g = GridSpec::cube(5, 0.2).unwrap();
        let p = MaterialParams::dimensionless(1.0, 1.0, 0.1).unwrap();
        let scale = p.energy_scale();

        let e = energy(&uniform(g, E1), None, ExternalField::zero(), &p).unwrap();
        assert_eq!(e, 0.0);

        let e = energy(&uniform(g, E2), None, ExternalField::zero(), &p).unwrap();
        assert!((e / scale - 1.0).abs() < 1e-12);

        let p0 = MaterialParams::dimensionless(1.0, 0.0, 0.1).unwrap();
        let v = Vec3::new(0.0, 0.6, 0.8);
        let e = energy(&uniform(g, v), None, ExternalField(v), &p0).unwrap();
        assert!((e / scale + 2.0).abs() < 1e-12);
        // mu0 Ms^2 L^3 at L = 1
        assert!((2.0 * scale - MU0 * PERMALLOY_MS * PERMALLOY_MS).abs() < 1e-6);
    }

    #[test]
    fn tangency_defect_converges() {
        let p = MaterialParams::dimensionless(1.0, 0.0, 0.2).unwrap();
        let mut errs = vec![];
        for n in [32, 64, 128] {
            let g = GridSpec::line(n, 1.0 / n as f64).unwrap();
            let m = VectorField::from_fn(g, |x| {
                let u = (PI * x[0]).cos();
                let s = 0.9f64;
                Vec3::new(u.cos() * s, u.sin() * s, (1.0 - s * s).sqrt())
            });
            let f = SourceTerm {
                f: VectorField::zeros(g),
            };
            errs.push(tangency_defect(&m, &f, &p).unwrap().max_abs());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2]);
        assert!((errs[1] / errs[2]).log2() > 3.5);
    }

    #[test]
    fn explicit_flow_decreases_energy() {
        // Projected forward Euler with tiny steps on a 1D exchange+anisotropy problem.
        let n = 24;
        let g = GridSpec::line(n, 1.0 / n as f64).unwrap();
        let p = MaterialParams::dimensionless(0.02, 0.5, 1.0).unwrap();
        let mut m = VectorField::from_fn(g, |x| {
            let a = 2.0 * PI * x[0];
            Vec3::new(a.cos(), a.sin() * 0.5, 0.3).unit()
        });
        let he = ExternalField::zero();
        let mut prev = energy_dimensionless(&m, None, he, &p).unwrap();
        let k = 0.005;
        for _ in 0..400 {
            let f = compose_source(&m, None, he, &p).unwrap();
            let r = llg_rhs(&m, &f, &p).unwrap();
            let next = m.lin_comb(1.0, &r, k).unwrap().map_interior(|v| v.unit());
            m = next;
            let e = energy_dimensionless(&m, None, he, &p).unwrap();
            assert!(e <= prev + 1e-12, "energy rose {prev} -> {e}");
            prev = e;
        }
    }

    proptest! {
        #[test]
        fn source_and_field_are_affine_in_fields(
            a in -2.0..2.0f64, b in -2.0..2.0f64,
            h1 in prop::array::uniform3(-1.0..1.0f64),
            h2 in prop::array::uniform3(-1.0..1.0f64),
        ) {
            let g = GridSpec::new([5, 4, 1], [0.2, 0.25, 1.0]).unwrap();
            let p = MaterialParams::dimensionless(0.3, 0.2, 0.1).unwrap();
            let m = VectorField::from_fn(g, |x| Vec3::new(x[0].cos(), x[1].sin(), 0.5).unit());
            let hs1 = VectorField::from_fn(g, |x| Vec3::new(x[0], x[1], 1.0));
            let hs2 = VectorField::from_fn(g, |x| Vec3::new(-x[1], 0.5, x[0] * x[1]));
            let he1 = ExternalField(Vec3(h1));
            let he2 = ExternalField(Vec3(h2));
            let base = compose_source(&m, None, ExternalField::zero(), &p).unwrap().f;
            let f1 = compose_source(&m, Some(&hs1), he1, &p).unwrap().f.lin_comb(1.0, &base, -1.0).unwrap();
            let f2 = compose_source(&m, Some(&hs2), he2, &p).unwrap().f.lin_comb(1.0, &base, -1.0).unwrap();
            let hs = hs1.lin_comb(a, &hs2, b).unwrap();
            let he = ExternalField(Vec3(h1) * a + Vec3(h2) * b);
            let f = compose_source(&m, Some(&hs), he, &p).unwrap().f.lin_comb(1.0, &base, -1.0).unwrap();
            let expect = f1.lin_comb(a, &f2, b).unwrap();
            prop_assert!(f.lin_comb(1.0, &expect, -1.0).unwrap().max_abs() < 1e-13);
        }
    }
}
