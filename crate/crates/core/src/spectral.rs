//! Preconditioners for the implicit operator
//! `y -> s y - alpha eps Lap_h y + mhat x (eps Lap_h y)`.
//!
//! Reflection ghosts are the symmetric extension behind the type-II cosine
//! transform, so `Lap_h` is diagonal in that basis. Freezing `mhat` at its
//! spatial mean turns the whole operator into independent 3x3 blocks per mode.

use std::cell::RefCell;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

use crate::grid::{GridSpec, SpatialOrder};
use crate::krylov::Preconditioner;
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum PreconditionerKind {
    None,
    /// Per-cell inverse of the stencil-center block.
    BlockJacobi,
    /// Cosine-transform inverse with the mean magnetization frozen.
    #[default]
    Spectral,
}

impl PreconditionerKind {
    pub fn name(self) -> &'static str {
        match self {
            PreconditionerKind::None => "none",
            PreconditionerKind::BlockJacobi => "block-jacobi",
            PreconditionerKind::Spectral => "spectral",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(PreconditionerKind::None),
            "block-jacobi" | "jacobi" | "diagonal" => Some(PreconditionerKind::BlockJacobi),
            "spectral" | "dct" => Some(PreconditionerKind::Spectral),
            _ => None,
        }
    }
}

/// Solves `(a I + b [u x]) y = r` in closed form (a != 0).
#[inline]
pub(crate) fn solve_block(a: f64, b: f64, u: Vec3, r: Vec3) -> Vec3 {
    let uu = u.norm_sq();
    let det = a * (a * a + b * b * uu);
    (r * (a * a) - u.cross(r) * (a * b) + u * (b * b * u.dot(r))) * (1.0 / det)
}

/// Cosine-transform diagonalization of the discrete Laplacian.
pub struct DctLaplacian {
    grid: GridSpec,
    plans: [Option<Arc<dyn TransformType2And3<f64>>>; 3],
    eig: [Vec<f64>; 3],
}

impl std::fmt::Debug for DctLaplacian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DctLaplacian")
            .field("grid", &self.grid)
            .finish()
    }
}

impl DctLaplacian {
    pub fn new(grid: GridSpec, order: SpatialOrder) -> Self {
        let mut planner = DctPlanner::new();
        let n = grid.n();
        let h = grid.h();
        let mut plans: [Option<Arc<dyn TransformType2And3<f64>>>; 3] = [None, None, None];
        let mut eig: [Vec<f64>; 3] = [vec![0.0], vec![0.0], vec![0.0]];
        for a in grid.active_axes() {
            let ax = a.index();
            plans[ax] = Some(planner.plan_dct2(n[ax]));
            eig[ax] = (0..n[ax])
                .map(|k| order.d2_eigenvalue(k, n[ax], h[ax]))
                .collect();
        }
        DctLaplacian { grid, plans, eig }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Laplacian eigenvalue of mode `(kx, ky, kz)`.
    #[inline]
    pub fn eigenvalue(&self, k: [usize; 3]) -> f64 {
        self.eig[0][k[0]] + self.eig[1][k[1]] + self.eig[2][k[2]]
    }

    fn transform(&self, data: &mut [f64], inverse: bool) {
        thread_local! {
            static BUFFERS: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
        }
        BUFFERS
            .with_borrow_mut(|(line, scratch)| self.transform_with(data, inverse, line, scratch));
    }

    fn transform_with(
        &self,
        data: &mut [f64],
        inverse: bool,
        line: &mut Vec<f64>,
        scratch: &mut Vec<f64>,
    ) {
        let n = self.grid.n();
        let stride = [1, n[0], n[0] * n[1]];
        for ax in 0..3 {
            let Some(plan) = &self.plans[ax] else {
                continue;
            };
            let len = n[ax];
            line.resize(len, 0.0);
            if scratch.len() < plan.get_scratch_len() {
                scratch.resize(plan.get_scratch_len(), 0.0);
            }
            let scratch = &mut scratch[..plan.get_scratch_len()];
            let (b, c) = match ax {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let norm = 2.0 / len as f64;
            for pc in 0..n[c] {
                for pb in 0..n[b] {
                    let base = pb * stride[b] + pc * stride[c];
                    for (t, v) in line.iter_mut().enumerate() {
                        *v = data[base + t * stride[ax]];
                    }
                    if inverse {
                        plan.process_dct3_with_scratch(line, scratch);
                        for (t, v) in line.iter().enumerate() {
                            data[base + t * stride[ax]] = v * norm;
                        }
                    } else {
                        plan.process_dct2_with_scratch(line, scratch);
                        for (t, v) in line.iter().enumerate() {
                            data[base + t * stride[ax]] = *v;
                        }
                    }
                }
            }
        }
    }

    /// Forward transform of one scalar component (linear-index order).
    pub fn forward(&self, data: &mut [f64]) {
        self.transform(data, false)
    }

    /// Exact inverse of [`DctLaplacian::forward`].
    pub fn inverse(&self, data: &mut [f64]) {
        self.transform(data, true)
    }
}

/// Inverse of the implicit operator with `mhat` replaced by a constant `mbar`.
pub struct SpectralPreconditioner {
    lap: Arc<DctLaplacian>,
    shift: f64,
    eps: f64,
    alpha: f64,
    mbar: Vec3,
}

impl SpectralPreconditioner {
    pub fn new(lap: Arc<DctLaplacian>, shift: f64, eps: f64, alpha: f64, mbar: Vec3) -> Self {
        SpectralPreconditioner {
            lap,
            shift,
            eps,
            alpha,
            mbar,
        }
    }
}

impl Preconditioner for SpectralPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let grid = self.lap.grid;
        let cells = grid.cell_count();
        let mut comp: [Vec<f64>; 3] = [vec![0.0; cells], vec![0.0; cells], vec![0.0; cells]];
        for c in 0..cells {
            for (d, buf) in comp.iter_mut().enumerate() {
                buf[c] = r[3 * c + d];
            }
        }
        for buf in comp.iter_mut() {
            self.lap.forward(buf);
        }
        for [i, j, l] in grid.cells() {
            let c = grid.cell_index(i, j, l);
            let lam = self.lap.eigenvalue([i, j, l]);
            let a = self.shift - self.eps * self.alpha * lam;
            let b = self.eps * lam;
            let y = solve_block(
                a,
                b,
                self.mbar,
                Vec3::new(comp[0][c], comp[1][c], comp[2][c]),
            );
            for (d, buf) in comp.iter_mut().enumerate() {
                buf[c] = y[d];
            }
        }
        for buf in comp.iter_mut() {
            self.lap.inverse(buf);
        }
        for c in 0..cells {
            for (d, buf) in comp.iter().enumerate() {
                z[3 * c + d] = buf[c];
            }
        }
    }
}

/// Per-cell inverse of the diagonal block `(s - alpha eps d) I + eps d [mhat x]`,
/// `d` being the stencil-center weight of the Laplacian.
pub struct BlockJacobi {
    a: f64,
    b: f64,
    mhat: Vec<Vec3>,
}

impl BlockJacobi {
    pub fn new(
        grid: &GridSpec,
        order: SpatialOrder,
        shift: f64,
        eps: f64,
        alpha: f64,
        mhat: Vec<Vec3>,
    ) -> Self {
        let w = order.d2_weights()[2];
        let h = grid.h();
        let d: f64 = grid
            .active_axes()
            .map(|a| w / (h[a.index()] * h[a.index()]))
            .sum();
        BlockJacobi {
            a: shift - alpha * eps * d,
            b: eps * d,
            mhat,
        }
    }
}

impl Preconditioner for BlockJacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for (c, m) in self.mhat.iter().enumerate() {
            let y = solve_block(
                self.a,
                self.b,
                *m,
                Vec3::new(r[3 * c], r[3 * c + 1], r[3 * c + 2]),
            );
            z[3 * c..3 * c + 3].copy_from_slice(&y.0);
        }
    }
}
