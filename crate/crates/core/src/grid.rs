//! Cell-centered Cartesian grids with two reflection ghost layers per side,
//! long-stencil difference operators and discrete error norms.
//!
//! Interior cells are indexed `0..n` per axis; cell `i` sits at `(i + 1/2) h`.
//! Storage covers `-2..n+2` on every active axis. Axes with a single cell
//! are inactive: they carry no ghosts and stencils and norms skip them.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Ghost layers per side.
pub const GHOST: usize = 2;

/// Values that can live on a grid and be combined by linear stencils.
pub trait Sample:
    Copy + Default + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn sq(self) -> f64;
    fn max_abs(self) -> f64;
}

impl Sample for f64 {
    #[inline]
    fn sq(self) -> f64 {
        self * self
    }
    #[inline]
    fn max_abs(self) -> f64 {
        self.abs()
    }
}

impl Sample for Vec3 {
    #[inline]
    fn sq(self) -> f64 {
        self.norm_sq()
    }
    #[inline]
    fn max_abs(self) -> f64 {
        Vec3::max_abs(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Accuracy of the difference operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpatialOrder {
    /// Three-point Laplacian and centered first difference.
    Second,
    /// Five-point long-stencil operators.
    Fourth,
}

impl SpatialOrder {
    /// Second-difference weights on offsets -2..=2, to be divided by h^2.
    #[inline]
    pub(crate) fn d2_weights(self) -> [f64; 5] {
        match self {
            SpatialOrder::Second => [0.0, 1.0, -2.0, 1.0, 0.0],
            SpatialOrder::Fourth => [
                -1.0 / 12.0,
                16.0 / 12.0,
                -30.0 / 12.0,
                16.0 / 12.0,
                -1.0 / 12.0,
            ],
        }
    }

    /// First-difference weights on offsets -2..=2, to be divided by h.
    #[inline]
    pub(crate) fn d1_weights(self) -> [f64; 5] {
        match self {
            SpatialOrder::Second => [0.0, -0.5, 0.0, 0.5, 0.0],
            SpatialOrder::Fourth => [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0],
        }
    }

    /// Eigenvalue of the one-dimensional second difference (reflection ghosts)
    /// on the cosine mode `cos(pi * mode * (i + 1/2) / n)`.
    pub fn d2_eigenvalue(self, mode: usize, n: usize, h: f64) -> f64 {
        let theta = std::f64::consts::PI * mode as f64 / n as f64;
        match self {
            SpatialOrder::Second => (2.0 * theta.cos() - 2.0) / (h * h),
            SpatialOrder::Fourth => {
                (-2.0 * (2.0 * theta).cos() + 32.0 * theta.cos() - 30.0) / (12.0 * h * h)
            }
        }
    }

    pub fn laplacian(self, m: &VectorField) -> VectorField {
        let mut out = VectorField::zeros(*m.grid());
        let mut buf = vec![Vec3::ZERO; m.grid().cell_count()];
        laplacian_into(m, self, &mut buf);
        out.set_interior(&buf);
        out
    }

    pub fn grad_sq(self, m: &VectorField) -> ScalarField {
        let mut out = ScalarField::zeros(*m.grid());
        let mut buf = vec![0.0; m.grid().cell_count()];
        grad_sq_into(m, self, &mut buf);
        out.set_interior(&buf);
        out
    }
}

/// Uniform cell-centered grid description.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    n: [usize; 3],
    h: [f64; 3],
}

impl GridSpec {
    /// Axes with a single cell are inactive. Active axes need at least two
    /// cells so that the reflection rules only reference interior data.
    pub fn new(n: [usize; 3], h: [f64; 3]) -> Result<Self> {
        for a in 0..3 {
            if n[a] == 0 {
                return Err(Error::InvalidGrid(format!("axis {a} has zero cells")));
            }
            if !(h[a].is_finite() && h[a] > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} has mesh size {}",
                    h[a]
                )));
            }
        }
        Ok(GridSpec { n, h })
    }

    /// One-dimensional grid of `n` cells of size `h` along x.
    pub fn line(n: usize, h: f64) -> Result<Self> {
        GridSpec::new([n, 1, 1], [h, 1.0, 1.0])
    }

    /// `n^3` cubic cells of size `h`.
    pub fn cube(n: usize, h: f64) -> Result<Self> {
        GridSpec::new([n; 3], [h; 3])
    }

    #[inline]
    pub fn n(&self) -> [usize; 3] {
        self.n
    }

    #[inline]
    pub fn h(&self) -> [f64; 3] {
        self.h
    }

    #[inline]
    pub fn is_active(&self, axis: Axis) -> bool {
        self.n[axis.index()] > 1
    }

    pub fn active_axes(&self) -> impl Iterator<Item = Axis> + '_ {
        Axis::ALL.into_iter().filter(|a| self.is_active(*a))
    }

    /// Number of active axes.
    pub fn dim(&self) -> usize {
        self.active_axes().count()
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    /// Quadrature weight of one cell: product of mesh sizes over active axes.
    pub fn cell_volume(&self) -> f64 {
        self.active_axes().map(|a| self.h[a.index()]).product()
    }

    #[inline]
    pub fn storage_dims(&self) -> [usize; 3] {
        [
            self.n[0] + 2 * self.ghost(0),
            self.n[1] + 2 * self.ghost(1),
            self.n[2] + 2 * self.ghost(2),
        ]
    }

    /// Ghost layers on axis `a`; inactive axes carry none.
    #[inline]
    pub fn ghost(&self, a: usize) -> usize {
        if self.n[a] > 1 {
            GHOST
        } else {
            0
        }
    }

    #[inline]
    pub fn storage_len(&self) -> usize {
        let s = self.storage_dims();
        s[0] * s[1] * s[2]
    }

    /// Storage strides along x, y, z.
    #[inline]
    pub fn strides(&self) -> [usize; 3] {
        let s = self.storage_dims();
        [1, s[0], s[0] * s[1]]
    }

    /// Storage offset of a (possibly ghost) cell.
    #[inline]
    pub fn storage_index(&self, i: isize, j: isize, l: isize) -> usize {
        let s = self.storage_dims();
        let g = |a: usize| self.ghost(a) as isize;
        ((i + g(0)) as usize) + s[0] * (((j + g(1)) as usize) + s[1] * ((l + g(2)) as usize))
    }

    /// Linear index of an interior cell, x fastest.
    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, l: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * l)
    }

    /// Dimensionless cell-center coordinates.
    #[inline]
    pub fn center(&self, i: usize, j: usize, l: usize) -> [f64; 3] {
        [
            (i as f64 + 0.5) * self.h[0],
            (j as f64 + 0.5) * self.h[1],
            (l as f64 + 0.5) * self.h[2],
        ]
    }

    /// Domain extent along each axis.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.n[0] as f64 * self.h[0],
            self.n[1] as f64 * self.h[1],
            self.n[2] as f64 * self.h[2],
        ]
    }

    /// Interior cells in linear-index order.
    pub fn cells(&self) -> impl Iterator<Item = [usize; 3]> {
        let [nx, ny, nz] = self.n;
        (0..nz).flat_map(move |l| (0..ny).flat_map(move |j| (0..nx).map(move |i| [i, j, l])))
    }

    pub(crate) fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Grid function with ghost layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    grid: GridSpec,
    data: Vec<T>,
}

pub type ScalarField = Field<f64>;
pub type VectorField = Field<Vec3>;

impl<T: Sample> Field<T> {
    pub fn zeros(grid: GridSpec) -> Self {
        Field {
            grid,
            data: vec![T::default(); grid.storage_len()],
        }
    }

    pub fn constant(grid: GridSpec, value: T) -> Self {
        Field {
            grid,
            data: vec![value; grid.storage_len()],
        }
    }

    /// Samples `f` at cell centers and fills ghosts.
    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> T) -> Self {
        let mut out = Field::zeros(grid);
        for [i, j, l] in grid.cells() {
            let s = grid.storage_index(i as isize, j as isize, l as isize);
            out.data[s] = f(grid.center(i, j, l));
        }
        out.fill_ghosts();
        out
    }

    /// Builds a field from interior values in linear-index order; ghosts filled.
    pub fn from_interior(grid: GridSpec, values: &[T]) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        let mut out = Field::zeros(grid);
        out.set_interior(values);
        out.fill_ghosts();
        Ok(out)
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Raw storage including ghosts.
    #[inline]
    pub fn storage(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn storage_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Value at a possibly ghost position.
    #[inline]
    pub fn at(&self, i: isize, j: isize, l: isize) -> T {
        self.data[self.grid.storage_index(i, j, l)]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, l: usize) -> T {
        self.at(i as isize, j as isize, l as isize)
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, l: usize, v: T) {
        let s = self.grid.storage_index(i as isize, j as isize, l as isize);
        self.data[s] = v;
    }

    /// Interior values in linear-index order.
    pub fn interior(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.grid.cell_count());
        let [nx, ny, nz] = self.grid.n;
        for l in 0..nz {
            for j in 0..ny {
                let s0 = self.grid.storage_index(0, j as isize, l as isize);
                out.extend_from_slice(&self.data[s0..s0 + nx]);
            }
        }
        out
    }

    /// Overwrites interior values (linear-index order). Ghosts are not touched.
    pub fn set_interior(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.grid.cell_count());
        let [nx, ny, nz] = self.grid.n;
        for l in 0..nz {
            for j in 0..ny {
                let s0 = self.grid.storage_index(0, j as isize, l as isize);
                let c0 = self.grid.cell_index(0, j, l);
                self.data[s0..s0 + nx].copy_from_slice(&values[c0..c0 + nx]);
            }
        }
    }

    /// Applies `f` to every interior value.
    pub fn map_interior(&self, f: impl Fn(T) -> T) -> Self {
        let mut out = self.clone();
        for [i, j, l] in self.grid.cells() {
            let s = self.grid.storage_index(i as isize, j as isize, l as isize);
            out.data[s] = f(self.data[s]);
        }
        out.fill_ghosts();
        out
    }

    /// Interior-wise `a * self + b * other`, ghosts refilled.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let mut out = self.clone();
        for (o, (x, y)) in out.data.iter_mut().zip(self.data.iter().zip(&other.data)) {
            *o = *x * a + *y * b;
        }
        Ok(out)
    }

    /// Even reflection across every boundary face: ghost -1 mirrors cell 0,
    /// ghost -2 mirrors cell 1, ghost n mirrors n-1, ghost n+1 mirrors n-2.
    /// Inactive axes copy their single interior layer.
    pub fn fill_ghosts(&mut self) {
        let n = self.grid.n;
        let stride = self.grid.strides();
        // Sweep axes in order; each sweep covers the ghost ranges already
        // filled on earlier axes, so edges and corners come out consistent.
        for a in 0..3 {
            if n[a] == 1 {
                continue;
            }
            let na = n[a] as isize;
            let (b, c) = match a {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let range = |ax: usize| -> std::ops::Range<isize> {
                let g = if ax < a {
                    self.grid.ghost(ax) as isize
                } else {
                    0
                };
                -g..n[ax] as isize + g
            };
            let pairs = [(-1, 0), (-2, 1), (na, na - 1), (na + 1, na - 2)];
            for pc in range(c) {
                for pb in range(b) {
                    let mut pos = [0isize; 3];
                    pos[b] = pb;
                    pos[c] = pc;
                    let base = self.grid.storage_index(pos[0], pos[1], pos[2]) as isize;
                    for (dst, src) in pairs {
                        let d = (base + dst * stride[a] as isize) as usize;
                        let s = (base + src * stride[a] as isize) as usize;
                        self.data[d] = self.data[s];
                    }
                }
            }
        }
    }

    /// Largest interior magnitude.
    pub fn max_abs(&self) -> f64 {
        self.interior()
            .into_iter()
            .map(Sample::max_abs)
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool
    where
        T: Finite,
    {
        self.data.iter().all(|v| v.finite())
    }
}

pub trait Finite {
    fn finite(&self) -> bool;
}

impl Finite for f64 {
    fn finite(&self) -> bool {
        self.is_finite()
    }
}

impl Finite for Vec3 {
    fn finite(&self) -> bool {
        self.is_finite()
    }
}

impl VectorField {
    /// Flattened interior as `[m0x, m0y, m0z, m1x, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.grid.cell_count());
        for v in self.interior() {
            out.extend_from_slice(&v.0);
        }
        out
    }

    /// Inverse of [`VectorField::to_flat`]; ghosts filled.
    pub fn from_flat(grid: GridSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != 3 * grid.cell_count() {
            return Err(Error::GridMismatch(format!(
                "flat vector of length {} for {} cells",
                flat.len(),
                grid.cell_count()
            )));
        }
        let vals: Vec<Vec3> = flat
            .chunks_exact(3)
            .map(|c| Vec3([c[0], c[1], c[2]]))
            .collect();
        VectorField::from_interior(grid, &vals)
    }

    /// Writes the flat vector into the interior and refills ghosts.
    pub fn load_flat(&mut self, flat: &[f64]) {
        let [nx, ny, nz] = self.grid.n;
        assert_eq!(flat.len(), 3 * nx * ny * nz);
        for l in 0..nz {
            for j in 0..ny {
                let s0 = self.grid.storage_index(0, j as isize, l as isize);
                let c0 = 3 * self.grid.cell_index(0, j, l);
                for i in 0..nx {
                    let c = c0 + 3 * i;
                    self.data[s0 + i] = Vec3([flat[c], flat[c + 1], flat[c + 2]]);
                }
            }
        }
        self.fill_ghosts();
    }

    /// Component `c` as a scalar field.
    pub fn component(&self, c: usize) -> ScalarField {
        Field {
            grid: self.grid,
            data: self.data.iter().map(|v| v[c]).collect(),
        }
    }

    /// Interior mean vector.
    pub fn mean(&self) -> Vec3 {
        let vals = self.interior();
        let n = vals.len() as f64;
        vals.into_iter().fold(Vec3::ZERO, |acc, v| acc + v) * (1.0 / n)
    }

    /// max over cells of | |m| - 1 |.
    pub fn unit_norm_defect(&self) -> f64 {
        self.interior()
            .into_iter()
            .map(|v| (v.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Applies a five-point stencil along `axis` at every interior cell.
fn apply_stencil<T: Sample>(f: &Field<T>, axis: Axis, w: [f64; 5], scale: f64) -> Result<Field<T>> {
    let grid = f.grid;
    if !grid.is_active(axis) {
        return Err(Error::InactiveAxis(axis));
    }
    let st = grid.strides()[axis.index()] as isize;
    let mut out = Field::zeros(grid);
    for [i, j, l] in grid.cells() {
        let s = grid.storage_index(i as isize, j as isize, l as isize) as isize;
        let mut acc = T::default();
        for (k, wk) in w.iter().enumerate() {
            if *wk != 0.0 {
                acc = acc + f.data[(s + (k as isize - 2) * st) as usize] * *wk;
            }
        }
        out.data[s as usize] = acc * scale;
    }
    Ok(out)
}

/// Fourth-order first derivative `(f[i-2] - 8f[i-1] + 8f[i+1] - f[i+2]) / 12h`.
/// Ghosts of `f` must be filled; ghosts of the result are zero.
pub fn d1_4th<T: Sample>(f: &Field<T>, axis: Axis) -> Result<Field<T>> {
    let h = f.grid.h[axis.index()];
    apply_stencil(f, axis, SpatialOrder::Fourth.d1_weights(), 1.0 / h)
}

/// Fourth-order second derivative `(-f[i-2] + 16f[i-1] - 30f[i] + 16f[i+1] - f[i+2]) / 12h^2`.
pub fn d2_4th<T: Sample>(f: &Field<T>, axis: Axis) -> Result<Field<T>> {
    let h = f.grid.h[axis.index()];
    apply_stencil(f, axis, SpatialOrder::Fourth.d2_weights(), 1.0 / (h * h))
}

/// Centered first difference `(f[i+1] - f[i-1]) / 2h`.
pub fn d1_2nd<T: Sample>(f: &Field<T>, axis: Axis) -> Result<Field<T>> {
    let h = f.grid.h[axis.index()];
    apply_stencil(f, axis, SpatialOrder::Second.d1_weights(), 1.0 / h)
}

/// Three-point second difference `(f[i-1] - 2f[i] + f[i+1]) / h^2`.
pub fn d2_2nd<T: Sample>(f: &Field<T>, axis: Axis) -> Result<Field<T>> {
    let h = f.grid.h[axis.index()];
    apply_stencil(f, axis, SpatialOrder::Second.d2_weights(), 1.0 / (h * h))
}

/// Sum of fourth-order second differences over active axes, per component.
pub fn laplacian_4th(m: &VectorField) -> VectorField {
    SpatialOrder::Fourth.laplacian(m)
}

/// Pointwise `sum_axes sum_components (d1_4th m)^2`.
pub fn grad_sq_4th(m: &VectorField) -> ScalarField {
    SpatialOrder::Fourth.grad_sq(m)
}

/// Discrete Laplacian of a ghost-filled field, written to `out` in
/// linear-index order.
pub fn laplacian_into(m: &VectorField, order: SpatialOrder, out: &mut [Vec3]) {
    let grid = m.grid;
    assert_eq!(out.len(), grid.cell_count());
    let w = order.d2_weights();
    let strides = grid.strides();
    let mut axes: Vec<(isize, f64)> = Vec::with_capacity(3);
    for a in grid.active_axes() {
        let h = grid.h[a.index()];
        axes.push((strides[a.index()] as isize, 1.0 / (h * h)));
    }
    let [nx, ny, nz] = grid.n;
    let data = &m.data;
    let wide = order == SpatialOrder::Fourth;
    for l in 0..nz {
        for j in 0..ny {
            let s0 = grid.storage_index(0, j as isize, l as isize) as isize;
            let c0 = grid.cell_index(0, j, l);
            for i in 0..nx {
                let s = s0 + i as isize;
                let centre = data[s as usize];
                let mut acc = Vec3::ZERO;
                for &(st, inv_h2) in &axes {
                    let near = data[(s - st) as usize] + data[(s + st) as usize];
                    let mut v = near * w[1] + centre * w[2];
                    if wide {
                        v += (data[(s - 2 * st) as usize] + data[(s + 2 * st) as usize]) * w[0];
                    }
                    acc += v * inv_h2;
                }
                out[c0 + i] = acc;
            }
        }
    }
}

/// Pointwise squared gradient norm of a ghost-filled field.
pub fn grad_sq_into(m: &VectorField, order: SpatialOrder, out: &mut [f64]) {
    let grid = m.grid;
    assert_eq!(out.len(), grid.cell_count());
    let w = order.d1_weights();
    let strides = grid.strides();
    let axes: Vec<(isize, f64)> = grid
        .active_axes()
        .map(|a| (strides[a.index()] as isize, 1.0 / grid.h[a.index()]))
        .collect();
    let data = &m.data;
    for [i, j, l] in grid.cells() {
        let s = grid.storage_index(i as isize, j as isize, l as isize) as isize;
        let mut acc = 0.0;
        for &(st, inv_h) in &axes {
            let d = (data[(s + st) as usize] - data[(s - st) as usize]) * w[3]
                + (data[(s + 2 * st) as usize] - data[(s - 2 * st) as usize]) * w[4];
            acc += (d * inv_h).norm_sq();
        }
        out[grid.cell_index(i, j, l)] = acc;
    }
}

/// Discrete max, L2 and H1 error norms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NormTriple {
    pub linf: f64,
    pub l2: f64,
    pub h1: f64,
}

impl NormTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.linf, self.l2, self.h1]
    }
}

/// Error norms of `num - exact` over interior cells. The H1 norm is the full
/// norm `sqrt(|e|_2^2 + |grad_h e|_2^2)` with fourth-order first differences
/// applied to the reflection-extended error.
pub fn error_norms(num: &VectorField, exact: &VectorField) -> Result<NormTriple> {
    num.grid.check_same(&exact.grid)?;
    let grid = num.grid;
    let mut e = num.lin_comb(1.0, exact, -1.0)?;
    e.fill_ghosts();
    let w = grid.cell_volume();
    let mut linf: f64 = 0.0;
    let mut sum2 = 0.0;
    for v in e.interior() {
        linf = linf.max(v.max_abs());
        sum2 += v.norm_sq();
    }
    let mut g = vec![0.0; grid.cell_count()];
    grad_sq_into(&e, SpatialOrder::Fourth, &mut g);
    let grad2: f64 = g.iter().sum();
    let l2sq = w * sum2;
    Ok(NormTriple {
        linf,
        l2: l2sq.sqrt(),
        h1: (l2sq + w * grad2).sqrt(),
    })
}
