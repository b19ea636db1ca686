//! Stray field by zero-padded FFT convolution with the cell-averaged
//! demagnetization tensor of rectangular prisms.
//!
//! `h_s = -N * m`, with `N` the Newell tensor for near offsets and a
//! quadrature-averaged point dipole beyond `FAR_FIELD_CELLS` cell sizes, where
//! the 27-term Newell differences lose accuracy to cancellation.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, VectorField};
use crate::vec3::Vec3;

const PI4: f64 = 4.0 * std::f64::consts::PI;

/// Offsets farther than this many (largest) cell sizes use the dipole form.
pub const FAR_FIELD_CELLS: f64 = 20.0;

const CACHE_MAGIC: &[u8; 8] = b"SIPMDMAG";
const CACHE_VERSION: u32 = 1;

/// Tensor components in storage order.
pub const COMPONENTS: [&str; 6] = ["xx", "xy", "xz", "yy", "yz", "zz"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum KernelKind {
    /// Exact cell-averaged prism tensor (dipole only in the far field).
    #[default]
    Newell,
    /// Cell-averaged point dipole at every offset except the self term,
    /// which keeps the cube value 1/3 on the diagonal. For cross-checks only.
    Dipole,
}

fn f_newell(x: f64, y: f64, z: f64) -> f64 {
    let (x, y, z) = (x.abs(), y.abs(), z.abs());
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let r = (x2 + y2 + z2).sqrt();
    let mut t = (2.0 * x2 - y2 - z2) * r / 6.0;
    if y > 0.0 {
        let d = (x2 + z2).sqrt();
        if d > 0.0 {
            t += 0.5 * y * (z2 - x2) * (y / d).asinh();
        }
    }
    if z > 0.0 {
        let d = (x2 + y2).sqrt();
        if d > 0.0 {
            t += 0.5 * z * (y2 - x2) * (z / d).asinh();
        }
    }
    if x > 0.0 && y > 0.0 && z > 0.0 {
        t -= x * y * z * (y * z / (x * r)).atan();
    }
    t
}

fn g_newell(x: f64, y: f64, z: f64) -> f64 {
    let sign = if x == 0.0 || y == 0.0 {
        return 0.0;
    } else {
        x.signum() * y.signum()
    };
    let (x, y, z) = (x.abs(), y.abs(), z.abs());
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let r = (x2 + y2 + z2).sqrt();
    let mut t = -x * y * r / 3.0;
    if z > 0.0 {
        t += x * y * z * (z / (x2 + y2).sqrt()).asinh();
        t -= z * z2 / 6.0 * (x * y / (z * r)).atan();
        t -= 0.5 * z * y2 * (x * z / (y * r)).atan();
        t -= 0.5 * z * x2 * (y * z / (x * r)).atan();
    }
    t += y / 6.0 * (3.0 * z2 - y2) * (x / (y2 + z2).sqrt()).asinh();
    t += x / 6.0 * (3.0 * z2 - x2) * (y / (x2 + z2).sqrt()).asinh();
    sign * t
}

/// 27-point second difference `sum c_i c_j c_k phi(x + i dx, y + j dy, z + k dz)`
/// with `c_0 = 2`, `c_{+-1} = -1`.
fn newell_stencil(phi: impl Fn(f64, f64, f64) -> f64, p: [f64; 3], d: [f64; 3]) -> f64 {
    const C: [(f64, f64); 3] = [(-1.0, -1.0), (0.0, 2.0), (1.0, -1.0)];
    let mut s = 0.0;
    for (oi, ci) in C {
        for (oj, cj) in C {
            for (ok, ck) in C {
                s += ci * cj * ck * phi(p[0] + oi * d[0], p[1] + oj * d[1], p[2] + ok * d[2]);
            }
        }
    }
    s
}

fn newell_tensor(p: [f64; 3], d: [f64; 3]) -> [f64; 6] {
    let [x, y, z] = p;
    let [dx, dy, dz] = d;
    let pre = 1.0 / (PI4 * dx * dy * dz);
    [
        pre * newell_stencil(f_newell, [x, y, z], [dx, dy, dz]),
        pre * newell_stencil(g_newell, [x, y, z], [dx, dy, dz]),
        pre * newell_stencil(g_newell, [x, z, y], [dx, dz, dy]),
        pre * newell_stencil(f_newell, [y, x, z], [dy, dx, dz]),
        pre * newell_stencil(g_newell, [y, z, x], [dy, dz, dx]),
        pre * newell_stencil(f_newell, [z, y, x], [dz, dy, dx]),
    ]
}

fn dipole_point(r: [f64; 3], vol: f64) -> [f64; 6] {
    let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let rn = r2.sqrt();
    let c = vol / (PI4 * r2 * rn);
    let e = |a: usize, b: usize| {
        let delta = if a == b { 1.0 } else { 0.0 };
        c * (delta - 3.0 * r[a] * r[b] / r2)
    };
    [e(0, 0), e(0, 1), e(0, 2), e(1, 1), e(1, 2), e(2, 2)]
}

/// Point dipole averaged over source and target cells. Per axis, the offset
/// distribution of two uniform cells is triangular on `[-d, d]`; the three
/// point rule below integrates it exactly up to degree five.
fn dipole_averaged(p: [f64; 3], d: [f64; 3]) -> [f64; 6] {
    const NODES: [(f64, f64); 3] = [
        (-0.632_455_532_033_675_9, 5.0 / 24.0),
        (0.0, 7.0 / 12.0),
        (0.632_455_532_033_675_9, 5.0 / 24.0),
    ];
    let vol = d[0] * d[1] * d[2];
    let mut out = [0.0; 6];
    for (a, wa) in NODES {
        for (b, wb) in NODES {
            for (c, wc) in NODES {
                let t = dipole_point([p[0] + a * d[0], p[1] + b * d[1], p[2] + c * d[2]], vol);
                let w = wa * wb * wc;
                for (o, v) in out.iter_mut().zip(t) {
                    *o += w * v;
                }
            }
        }
    }
    out
}

/// Demagnetization tensor `(Nxx, Nxy, Nxz, Nyy, Nyz, Nzz)` between two cells of
/// size `d` whose centers differ by `p`.
pub fn tensor_entry(p: [f64; 3], d: [f64; 3], kind: KernelKind) -> [f64; 6] {
    let dmax = d[0].max(d[1]).max(d[2]);
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    match kind {
        KernelKind::Newell if r <= FAR_FIELD_CELLS * dmax => newell_tensor(p, d),
        KernelKind::Dipole if r == 0.0 => newell_tensor(p, d),
        _ => dipole_averaged(p, d),
    }
}

fn check_cell(cell: [f64; 3]) -> Result<[f64; 3]> {
    if cell.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::DegenerateCell(cell));
    }
    // Only ratios matter; rescale so the largest side is 1.
    let s = cell[0].max(cell[1]).max(cell[2]);
    Ok([cell[0] / s, cell[1] / s, cell[2] / s])
}

/// Real-space tensor on all offsets `-(n-1)..=(n-1)`, laid out x fastest with
/// dims `2n-1`. Only the non-negative octant is evaluated; the rest follows
/// from parity (diagonal entries even, `N_ab` odd in `a` and `b`).
pub fn kernel_offsets(grid: &GridSpec, cell: [f64; 3], kind: KernelKind) -> Result<Vec<[f64; 6]>> {
    let d = check_cell(cell)?;
    let n = grid.n();
    let dims = [2 * n[0] - 1, 2 * n[1] - 1, 2 * n[2] - 1];
    let mut out = vec![[0.0; 6]; dims[0] * dims[1] * dims[2]];
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let p = [i as f64 * d[0], j as f64 * d[1], k as f64 * d[2]];
                let t = tensor_entry(p, d, kind);
                for (si, sj, sk) in octants(i, j, k) {
                    let ii = (n[0] as isize - 1 + si * i as isize) as usize;
                    let jj = (n[1] as isize - 1 + sj * j as isize) as usize;
                    let kk = (n[2] as isize - 1 + sk * k as isize) as usize;
                    let s = [
                        1.0,
                        (si * sj) as f64,
                        (si * sk) as f64,
                        1.0,
                        (sj * sk) as f64,
                        1.0,
                    ];
                    let e = &mut out[ii + dims[0] * (jj + dims[1] * kk)];
                    for c in 0..6 {
                        e[c] = s[c] * t[c];
                    }
                }
            }
        }
    }
    Ok(out)
}

fn octants(i: usize, j: usize, k: usize) -> impl Iterator<Item = (isize, isize, isize)> {
    let si: &'static [isize] = if i == 0 { &[1] } else { &[1, -1] };
    let sj: &'static [isize] = if j == 0 { &[1] } else { &[1, -1] };
    let sk: &'static [isize] = if k == 0 { &[1] } else { &[1, -1] };
    si.iter().flat_map(move |a| {
        sj.iter()
            .flat_map(move |b| sk.iter().map(move |c| (*a, *b, *c)))
    })
}

/// Smallest `2^a 3^b 5^c >= n`.
pub fn fft_friendly(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

struct Fft3 {
    dims: [usize; 3],
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = dims.map(|n| planner.plan_fft_forward(n));
        let inv = dims.map(|n| planner.plan_fft_inverse(n));
        Fft3 { dims, fwd, inv }
    }

    /// In-place unnormalized transform over all axes of length > 1.
    fn run(&self, data: &mut [Complex<f64>], inverse: bool, scratch: &mut Vec<Complex<f64>>) {
        let [px, py, pz] = self.dims;
        let plans = if inverse { &self.inv } else { &self.fwd };
        if px > 1 {
            plans[0].process(data);
        }
        if py > 1 {
            scratch.resize(data.len(), Complex::default());
            // gather y-lines, contiguous per (x, z)
            for z in 0..pz {
                for x in 0..px {
                    let dst = (z * px + x) * py;
                    for y in 0..py {
                        scratch[dst + y] = data[x + px * (y + py * z)];
                    }
                }
            }
            plans[1].process(scratch);
            for z in 0..pz {
                for x in 0..px {
                    let src = (z * px + x) * py;
                    for y in 0..py {
                        data[x + px * (y + py * z)] = scratch[src + y];
                    }
                }
            }
        }
        if pz > 1 {
            scratch.resize(data.len(), Complex::default());
            let plane = px * py;
            for c in 0..plane {
                for z in 0..pz {
                    scratch[c * pz + z] = data[c + plane * z];
                }
            }
            plans[2].process(scratch);
            for c in 0..plane {
                for z in 0..pz {
                    data[c + plane * z] = scratch[c * pz + z];
                }
            }
        }
    }
}

/// Precomputed spectral demagnetization operator for one grid.
pub struct DemagOperator {
    grid: GridSpec,
    cell: [f64; 3],
    kind: KernelKind,
    padded: [usize; 3],
    spectra: [Vec<Complex<f64>>; 6],
    fft: Fft3,
}

impl std::fmt::Debug for DemagOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DemagOperator")
            .field("grid", &self.grid)
            .field("cell", &self.cell)
            .field("kind", &self.kind)
            .field("padded", &self.padded)
            .finish()
    }
}

impl DemagOperator {
    /// Builds the operator; `cell` holds the physical cell sizes (any unit).
    pub fn new(grid: GridSpec, cell: [f64; 3]) -> Result<Self> {
        Self::with_kernel(grid, cell, KernelKind::Newell)
    }

    pub fn with_kernel(grid: GridSpec, cell: [f64; 3], kind: KernelKind) -> Result<Self> {
        let n = grid.n();
        let padded = n.map(|v| if v == 1 { 1 } else { fft_friendly(2 * v - 1) });
        let kernel = kernel_offsets(&grid, cell, kind)?;
        let kd = [2 * n[0] - 1, 2 * n[1] - 1, 2 * n[2] - 1];
        let total = padded[0] * padded[1] * padded[2];
        let fft = Fft3::new(padded);
        let mut spectra: [Vec<Complex<f64>>; 6] = Default::default();
        let mut scratch = Vec::new();
        for (c, spec) in spectra.iter_mut().enumerate() {
            let mut buf = vec![Complex::default(); total];
            for kk in 0..kd[2] {
                for jj in 0..kd[1] {
                    for ii in 0..kd[0] {
                        // offset o = idx - (n-1) wraps to (o mod P)
                        let wrap = |idx: usize, a: usize| {
                            let o = idx as isize - (n[a] as isize - 1);
                            o.rem_euclid(padded[a] as isize) as usize
                        };
                        let p = wrap(ii, 0) + padded[0] * (wrap(jj, 1) + padded[1] * wrap(kk, 2));
                        buf[p].re = kernel[ii + kd[0] * (jj + kd[1] * kk)][c];
                    }
                }
            }
            fft.run(&mut buf, false, &mut scratch);
            *spec = buf;
        }
        Ok(DemagOperator {
            grid,
            cell,
            kind,
            padded,
            spectra,
            fft,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn padded_dims(&self) -> [usize; 3] {
        self.padded
    }

    pub fn cell(&self) -> [f64; 3] {
        self.cell
    }

    /// `h_s = -N * m` on interior values (linear-index order).
    pub fn apply(&self, m: &[Vec3], out: &mut [Vec3]) {
        let n = self.grid.n();
        let p = self.padded;
        let total = p[0] * p[1] * p[2];
        assert_eq!(m.len(), self.grid.cell_count());
        assert_eq!(out.len(), m.len());
        let mut scratch = Vec::new();
        let mut mk: [Vec<Complex<f64>>; 3] = Default::default();
        for (comp, buf) in mk.iter_mut().enumerate() {
            buf.resize(total, Complex::default());
            for l in 0..n[2] {
                for j in 0..n[1] {
                    for i in 0..n[0] {
                        buf[i + p[0] * (j + p[1] * l)].re = m[self.grid.cell_index(i, j, l)][comp];
                    }
                }
            }
            self.fft.run(buf, false, &mut scratch);
        }
        let [sxx, sxy, sxz, syy, syz, szz] = &self.spectra;
        let mut h: [Vec<Complex<f64>>; 3] = [
            vec![Complex::default(); total],
            vec![Complex::default(); total],
            vec![Complex::default(); total],
        ];
        for q in 0..total {
            let (a, b, c) = (mk[0][q], mk[1][q], mk[2][q]);
            h[0][q] = -(sxx[q] * a + sxy[q] * b + sxz[q] * c);
            h[1][q] = -(sxy[q] * a + syy[q] * b + syz[q] * c);
            h[2][q] = -(sxz[q] * a + syz[q] * b + szz[q] * c);
        }
        let norm = 1.0 / total as f64;
        for (comp, buf) in h.iter_mut().enumerate() {
            self.fft.run(buf, true, &mut scratch);
            for l in 0..n[2] {
                for j in 0..n[1] {
                    for i in 0..n[0] {
                        out[self.grid.cell_index(i, j, l)][comp] =
                            buf[i + p[0] * (j + p[1] * l)].re * norm;
                    }
                }
            }
        }
    }

    pub fn stray_field(&self, m: &VectorField) -> Result<VectorField> {
        self.grid.check_same(m.grid())?;
        let mut out = vec![Vec3::ZERO; self.grid.cell_count()];
        self.apply(&m.interior(), &mut out);
        VectorField::from_interior(self.grid, &out)
    }

    fn cache_name(grid: &GridSpec, cell: [f64; 3], kind: KernelKind) -> String {
        let n = grid.n();
        let mut h = crc32fast::Hasher::new();
        for c in cell {
            h.update(&c.to_le_bytes());
        }
        h.update(&[kind as u8]);
        format!("demag_{}x{}x{}_{:08x}.bin", n[0], n[1], n[2], h.finalize())
    }

    /// Loads the operator from `dir` if a matching cache file exists,
    /// otherwise builds it and writes the cache.
    pub fn build_cached(grid: GridSpec, cell: [f64; 3], dir: &Path) -> Result<Self> {
        let path: PathBuf = dir.join(Self::cache_name(&grid, cell, KernelKind::Newell));
        if path.exists() {
            if let Ok(op) = Self::load(&path, grid, cell) {
                return Ok(op);
            }
        }
        let op = Self::new(grid, cell)?;
        fs::create_dir_all(dir)?;
        op.save(&path)?;
        Ok(op)
    }

    /// Binary cache layout (little endian): magic `SIPMDMAG`, u32 version,
    /// u8 kernel kind, 3 x u64 cell counts, 3 x u64 padded dims, 3 x f64 cell
    /// sizes, u32 CRC-32 of the payload, then the payload: the six spectra in
    /// `COMPONENTS` order, each as (re, im) f64 pairs.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::with_capacity(6 * 16 * self.spectra[0].len());
        for s in &self.spectra {
            for v in s {
                payload.extend_from_slice(&v.re.to_le_bytes());
                payload.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(CACHE_MAGIC)?;
        f.write_all(&CACHE_VERSION.to_le_bytes())?;
        f.write_all(&[self.kind as u8])?;
        for v in self.grid.n() {
            f.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in self.padded {
            f.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in self.cell {
            f.write_all(&v.to_le_bytes())?;
        }
        f.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
        f.write_all(&payload)?;
        Ok(())
    }

    pub fn load(path: &Path, grid: GridSpec, cell: [f64; 3]) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |m: &str| Error::Cache(format!("{}: {m}", path.display()));
        let mut pos = 0usize;
        let mut take = |len: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + len).ok_or_else(|| bad("truncated"))?;
            pos += len;
            Ok(s)
        };
        if take(8)? != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(bad("unsupported version"));
        }
        let kind = match take(1)?[0] {
            0 => KernelKind::Newell,
            1 => KernelKind::Dipole,
            _ => return Err(bad("unknown kernel kind")),
        };
        let mut u = [0usize; 6];
        for v in u.iter_mut() {
            *v = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        }
        let mut c = [0.0; 3];
        for v in c.iter_mut() {
            *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        let crc = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let n = [u[0], u[1], u[2]];
        let padded = [u[3], u[4], u[5]];
        if n != grid.n() || c != cell {
            return Err(bad("grid signature mismatch"));
        }
        let expect = n.map(|v| if v == 1 { 1 } else { fft_friendly(2 * v - 1) });
        if padded != expect {
            return Err(bad("padded dims mismatch"));
        }
        let total = padded[0] * padded[1] * padded[2];
        let payload = take(6 * 16 * total)?;
        if crc32fast::hash(payload) != crc {
            return Err(bad("checksum mismatch"));
        }
        let mut spectra: [Vec<Complex<f64>>; 6] = Default::default();
        for (k, s) in spectra.iter_mut().enumerate() {
            let base = k * 16 * total;
            *s = (0..total)
                .map(|q| {
                    let o = base + 16 * q;
                    Complex::new(
                        f64::from_le_bytes(payload[o..o + 8].try_into().unwrap()),
                        f64::from_le_bytes(payload[o + 8..o + 16].try_into().unwrap()),
                    )
                })
                .collect();
        }
        Ok(DemagOperator {
            grid,
            cell,
            kind,
            padded,
            spectra,
            fft: Fft3::new(padded),
        })
    }
}

/// Brute-force `h_s = -N * m` by direct summation over all cell pairs.
pub fn stray_field_direct(
    m: &VectorField,
    cell: [f64; 3],
    kind: KernelKind,
) -> Result<VectorField> {
    let grid = *m.grid();
    let n = grid.n();
    let kernel = kernel_offsets(&grid, cell, kind)?;
    let kd = [2 * n[0] - 1, 2 * n[1] - 1, 2 * n[2] - 1];
    let mv = m.interior();
    let mut out = vec![Vec3::ZERO; grid.cell_count()];
    for [i, j, l] in grid.cells() {
        let mut h = Vec3::ZERO;
        for [a, b, c] in grid.cells() {
            let ii = i + n[0] - 1 - a;
            let jj = j + n[1] - 1 - b;
            let kk = l + n[2] - 1 - c;
            let t = kernel[ii + kd[0] * (jj + kd[1] * kk)];
            let s = mv[grid.cell_index(a, b, c)];
            h += Vec3::new(
                t[0] * s[0] + t[1] * s[1] + t[2] * s[2],
                t[1] * s[0] + t[3] * s[1] + t[4] * s[2],
                t[2] * s[0] + t[4] * s[1] + t[5] * s[2],
            );
        }
        out[grid.cell_index(i, j, l)] = -h;
    }
    VectorField::from_interior(grid, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec3::{E1, E3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: GridSpec, seed: u64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<Vec3> = (0..g.cell_count())
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        VectorField::from_interior(g, &vals).unwrap()
    }

    fn sum_dot(a: &VectorField, b: &VectorField) -> f64 {
        a.interior()
            .iter()
            .zip(b.interior())
            .map(|(x, y)| x.dot(y))
            .sum()
    }

    #[test]
    fn single_cube_self_term() {
        let t = tensor_entry([0.0; 3], [1.0; 3], KernelKind::Newell);
        for c in [0, 3, 5] {
            assert!((t[c] - 1.0 / 3.0).abs() < 1e-14, "{t:?}");
        }
        for c in [1, 2, 4] {
            assert!(t[c].abs() < 1e-15);
        }
    }

    #[test]
    fn prism_self_term_has_unit_trace() {
        let t = tensor_entry([0.0; 3], [1.0, 0.4, 0.15], KernelKind::Newell);
        assert!((t[0] + t[3] + t[5] - 1.0).abs() < 1e-13);
        assert!(t[5] > t[3] && t[3] > t[0]);
    }

    /// Tanh-sinh nodes and weights on [-1, 1].
    fn tanh_sinh(level: usize) -> Vec<(f64, f64)> {
        let h = 1.0 / (1 << level) as f64;
        let mut out = vec![];
        let kmax = (4.0 / h) as i64;
        for k in -kmax..=kmax {
            let t = k as f64 * h;
            let s = std::f64::consts::FRAC_PI_2 * t.sinh();
            let x = s.tanh();
            let w = h * std::f64::consts::FRAC_PI_2 * t.cosh() / s.cosh().powi(2);
            if 1.0 - x.abs() > 1e-14 {
                out.push((x, w));
            }
        }
        out
    }

    /// Field of the x-faces of a unit-magnetized (along x) prism centered at
    /// the origin with sides `d`, from the closed-form face integrals.
    fn face_field(r: [f64; 3], d: [f64; 3]) -> Vec3 {
        let mut h = Vec3::ZERO;
        for (a, sigma) in [(0.5 * d[0], 1.0), (-0.5 * d[0], -1.0)] {
            let x = r[0] - a;
            let us = [-0.5 * d[1] - r[1], 0.5 * d[1] - r[1]];
            let vs = [-0.5 * d[2] - r[2], 0.5 * d[2] - r[2]];
            let mut ix = 0.0;
            let mut iy = 0.0;
            for (su, u) in [(-1.0, us[0]), (1.0, us[1])] {
                for (sv, v) in [(-1.0, vs[0]), (1.0, vs[1])] {
                    let rr = (x * x + u * u + v * v).sqrt();
                    ix += su * sv * (u * v / (x * rr)).atan();
                    iy += su * sv * (v / (x * x + u * u).sqrt()).asinh();
                }
            }
            h += Vec3::new(ix, iy, 0.0) * (sigma / PI4);
        }
        h
    }

    fn averaged_tensor_oracle(offset: [f64; 3], d: [f64; 3]) -> (f64, f64) {
        let nodes = tanh_sinh(4);
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (a, wa) in &nodes {
            for (b, wb) in &nodes {
                for (c, wc) in &nodes {
                    let r = [
                        offset[0] + 0.5 * d[0] * a,
                        offset[1] + 0.5 * d[1] * b,
                        offset[2] + 0.5 * d[2] * c,
                    ];
                    let h = face_field(r, d);
                    let w = wa * wb * wc / 8.0;
                    sxx += w * h[0];
                    sxy += w * h[1];
                }
            }
        }
        (-sxx, -sxy)
    }

    #[test]
    fn adjacent_cells_match_quadrature_oracle() {
        let d = [1.0, 1.0, 1.0];
        let t = tensor_entry([1.0, 0.0, 0.0], d, KernelKind::Newell);
        let (nxx, _) = averaged_tensor_oracle([1.0, 0.0, 0.0], d);
        assert!((t[0] - nxx).abs() < 1e-10, "Nxx {} vs {}", t[0], nxx);

        let t = tensor_entry([1.0, 1.0, 0.0], d, KernelKind::Newell);
        let (nxx, nxy) = averaged_tensor_oracle([1.0, 1.0, 0.0], d);
        assert!((t[0] - nxx).abs() < 1e-10, "Nxx {} vs {}", t[0], nxx);
        assert!((t[1] - nxy).abs() < 1e-10, "Nxy {} vs {}", t[1], nxy);
    }

    #[test]
    fn oblong_neighbour_matches_oracle() {
        let d = [1.0, 0.5, 0.25];
        let off = [0.0, 0.5, 0.5];
        let t = tensor_entry(off, d, KernelKind::Newell);
        let (nxx, nxy) = averaged_tensor_oracle(off, d);
        assert!((t[0] - nxx).abs() < 1e-10, "Nxx {} vs {}", t[0], nxx);
        assert!((t[1] - nxy).abs() < 1e-10, "Nxy {} vs {}", t[1], nxy);
    }

    #[test]
    fn near_and_far_forms_agree_at_switch() {
        let d = [1.0, 0.7, 0.3];
        let p = [14.0, 11.9, 6.6];
        let a = newell_tensor(p, d);
        let b = dipole_averaged(p, d);
        let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for c in 0..6 {
            assert!(
                (a[c] - b[c]).abs() < 1e-6 * scale,
                "component {c}: {} vs {}",
                a[c],
                b[c]
            );
        }
    }

    #[test]
    fn uniform_cube_mean_field() {
        let g = GridSpec::cube(16, 1.0 / 16.0).unwrap();
        let op = DemagOperator::new(g, [1.0; 3]).unwrap();
        for (dir, c) in [(E1, 0), (crate::vec3::E2, 1), (E3, 2)] {
            let h = op.stray_field(&VectorField::constant(g, dir)).unwrap();
            let mean = h.mean();
            assert!((mean[c] + 1.0 / 3.0).abs() < 1e-2, "mean {mean:?}");
        }
    }

    #[test]
    fn thin_film_normal_factor() {
        let g = GridSpec::new([40, 40, 1], [1.0; 3]).unwrap();
        let op = DemagOperator::new(g, [1.0, 1.0, 0.05]).unwrap();
        let h = op.stray_field(&VectorField::constant(g, E3)).unwrap();
        // centre cell of a wide film sees nearly the full -m_z
        assert!(
            (h.get(20, 20, 0)[2] + 1.0).abs() < 0.01,
            "{:?}",
            h.get(20, 20, 0)
        );
    }

    #[test]
    fn long_column_axial_factor() {
        let g = GridSpec::new([1, 1, 64], [1.0; 3]).unwrap();
        let op = DemagOperator::new(g, [1.0, 1.0, 1.0]).unwrap();
        let h = op.stray_field(&VectorField::constant(g, E3)).unwrap();
        assert!(h.get(0, 0, 32)[2].abs() < 1e-3, "{:?}", h.get(0, 0, 32));
        let hx = op.stray_field(&VectorField::constant(g, E1)).unwrap();
        assert!((hx.get(0, 0, 32)[0] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn fft_matches_direct_sum() {
        let g = GridSpec::new([8, 8, 8], [1.0; 3]).unwrap();
        let cell = [2.0, 1.5, 1.0];
        let m = random_field(g, 3);
        let op = DemagOperator::new(g, cell).unwrap();
        let a = op.stray_field(&m).unwrap();
        let b = stray_field_direct(&m, cell, KernelKind::Newell).unwrap();
        let scale = b.max_abs();
        let diff = a.lin_comb(1.0, &b, -1.0).unwrap().max_abs();
        assert!(diff < 1e-10 * scale, "diff {diff}");
    }

    #[test]
    fn fft_matches_direct_sum_on_film_and_far_offsets() {
        // long axis reaches the dipole region
        let g = GridSpec::new([30, 3, 2], [1.0; 3]).unwrap();
        let cell = [1.0, 1.0, 0.5];
        let m = random_field(g, 4);
        let op = DemagOperator::new(g, cell).unwrap();
        let a = op.stray_field(&m).unwrap();
        let b = stray_field_direct(&m, cell, KernelKind::Newell).unwrap();
        let diff = a.lin_comb(1.0, &b, -1.0).unwrap().max_abs();
        assert!(diff < 1e-10 * b.max_abs(), "diff {diff}");
    }

    #[test]
    fn dipole_kernel_is_close_for_distant_cells() {
        let d = [1.0; 3];
        let a = tensor_entry([4.0, 1.0, 2.0], d, KernelKind::Newell);
        let b = tensor_entry([4.0, 1.0, 2.0], d, KernelKind::Dipole);
        for c in 0..6 {
            assert!((a[c] - b[c]).abs() < 1e-4 * a[0].abs().max(1e-3));
        }
    }

    #[test]
    fn zero_field_and_reciprocity() {
        let g = GridSpec::new([6, 5, 4], [1.0; 3]).unwrap();
        let op = DemagOperator::new(g, [1.0, 1.2, 0.8]).unwrap();
        assert_eq!(
            op.stray_field(&VectorField::zeros(g)).unwrap().max_abs(),
            0.0
        );
        let m1 = random_field(g, 10);
        let m2 = random_field(g, 11);
        let a = sum_dot(&m1, &op.stray_field(&m2).unwrap());
        let b = sum_dot(&m2, &op.stray_field(&m1).unwrap());
        assert!((a - b).abs() < 1e-10 * a.abs().max(b.abs()));
    }

    #[test]
    fn degenerate_cell_is_rejected() {
        let g = GridSpec::cube(2, 1.0).unwrap();
        assert!(matches!(
            DemagOperator::new(g, [1.0, 0.0, 1.0]),
            Err(Error::DegenerateCell(_))
        ));
    }

    #[test]
    fn padding_sizes() {
        assert_eq!(fft_friendly(255), 256);
        assert_eq!(fft_friendly(99), 100);
        assert_eq!(fft_friendly(7), 8);
        assert_eq!(fft_friendly(3), 3);
        assert_eq!(fft_friendly(121), 125);
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::new([5, 4, 2], [1.0; 3]).unwrap();
        let cell = [1.0, 1.0, 0.5];
        let op = DemagOperator::build_cached(g, cell, dir.path()).unwrap();
        let files: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
        let path = files[0].as_ref().unwrap().path();
        let loaded = DemagOperator::load(&path, g, cell).unwrap();
        let m = random_field(g, 1);
        assert_eq!(op.stray_field(&m).unwrap(), loaded.stray_field(&m).unwrap());

        let other = GridSpec::new([5, 4, 3], [1.0; 3]).unwrap();
        assert!(matches!(
            DemagOperator::load(&path, other, cell),
            Err(Error::Cache(_))
        ));

        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x55;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            DemagOperator::load(&path, g, cell),
            Err(Error::Cache(_))
        ));
        // a corrupt cache is rebuilt transparently
        assert!(DemagOperator::build_cached(g, cell, dir.path()).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn linear_and_energy_non_negative(seed in 0u64..10_000, a in -3.0..3.0f64, b in -3.0..3.0f64) {
            let g = GridSpec::new([4, 3, 2], [1.0; 3]).unwrap();
            let op = DemagOperator::new(g, [1.0, 0.6, 0.4]).unwrap();
            let m1 = random_field(g, seed);
            let m2 = random_field(g, seed + 1);
            let lhs = op.stray_field(&m1.lin_comb(a, &m2, b).unwrap()).unwrap();
            let rhs = op.stray_field(&m1).unwrap().lin_comb(a, &op.stray_field(&m2).unwrap(), b).unwrap();
            prop_assert!(lhs.lin_comb(1.0, &rhs, -1.0).unwrap().max_abs() < 1e-12 * (1.0 + rhs.max_abs()));
            let e = -sum_dot(&m1, &op.stray_field(&m1).unwrap());
            prop_assert!(e >= -1e-12);
        }
    }
}
