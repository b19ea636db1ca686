//! CSV tables and field snapshots.
//!
//! Snapshot layout (little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 8     | magic `SIPMSNAP`                          |
//! | 4     | format version, `u32` = 1                 |
//! | 24    | cell counts `nx, ny, nz` as `u64`         |
//! | 24    | cell sizes in nm as `f64`                 |
//! | 24 N  | `m1, m2, m3` per cell as `f64`, x fastest |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::{FilmOutcome, VelocityTable};
use crate::grid::{GridSpec, VectorField};
use crate::vec3::Vec3;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"SIPMSNAP";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a header line and rows of pre-formatted fields.
pub fn write_csv<P: AsRef<Path>>(path: P, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`] into header and rows.
pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<(String, Vec<Vec<String>>)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let rows = lines
        .map(|l| l.map(|l| l.split(',').map(str::to_owned).collect()))
        .collect::<std::io::Result<_>>()?;
    Ok((header, rows))
}

pub const STABILITY_HEADER: &str = "scheme,alpha,k_ps,stable,steps,final_energy";

pub fn stability_rows(outcomes: &[FilmOutcome]) -> Vec<Vec<String>> {
    outcomes
        .iter()
        .map(|o| {
            vec![
                o.scheme.name().to_owned(),
                fmt_f64(o.alpha),
                fmt_f64(o.k_ps),
                o.verdict.is_stable().to_string(),
                o.steps.to_string(),
                fmt_f64(o.final_energy),
            ]
        })
        .collect()
}

pub const ENERGY_HEADER: &str = "t_ns,F_dimensionless";
pub const WALL_HEADER: &str = "t_ns,x_w_nm";

/// Two-column rows from `(x, y)` pairs.
pub fn pair_rows(samples: &[(f64, f64)]) -> Vec<Vec<String>> {
    samples
        .iter()
        .map(|(a, b)| vec![fmt_f64(*a), fmt_f64(*b)])
        .collect()
}

/// Velocities with damping down the rows and fields across, followed by
/// the linear slope, the log-log slope and R^2 of the linear fit.
pub fn velocity_table_csv(t: &VelocityTable) -> (String, Vec<Vec<String>>) {
    let mut header = vec!["alpha".to_owned()];
    header.extend(t.fields_mt.iter().map(|h| format!("v_{h}mT_m_per_s")));
    header.extend(["slope_m_per_s_per_mT", "log_slope", "r2"].map(String::from));
    let rows = t
        .alphas
        .iter()
        .enumerate()
        .map(|(a, alpha)| {
            let mut r = vec![fmt_f64(*alpha)];
            r.extend(t.traces[a].iter().map(|tr| fmt_f64(tr.fit.velocity)));
            let (_, slope, r2) = t.linear[a];
            r.extend([fmt_f64(slope), fmt_f64(t.log_slopes[a]), fmt_f64(r2)]);
            r
        })
        .collect();
    (header.join(","), rows)
}

pub fn write_snapshot<P: AsRef<Path>>(path: P, m: &VectorField, cell_nm: [f64; 3]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    for n in m.grid().n() {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for c in cell_nm {
        w.write_all(&c.to_le_bytes())?;
    }
    for v in m.interior() {
        for c in v.0 {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Returns the field on a grid with spacing in nm, and the cell sizes.
pub fn read_snapshot<P: AsRef<Path>>(path: P) -> Result<(VectorField, [f64; 3])> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            msg.to_owned(),
        ))
    };
    if bytes.len() < 60 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(bad("not a snapshot file"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32::from_le_bytes(bytes[8..12].try_into().unwrap()) != SNAPSHOT_VERSION {
        return Err(bad("unsupported snapshot version"));
    }
    let n: [usize; 3] = std::array::from_fn(|a| u64_at(12 + 8 * a) as usize);
    let cell: [f64; 3] = std::array::from_fn(|a| f64_at(36 + 8 * a));
    let count = n.iter().product::<usize>();
    if bytes.len() != 60 + 24 * count {
        return Err(bad("snapshot length does not match its dimensions"));
    }
    let values: Vec<Vec3> = (0..count)
        .map(|i| Vec3(std::array::from_fn(|c| f64_at(60 + 24 * i + 8 * c))))
        .collect();
    let grid = GridSpec::new(n, cell)?;
    Ok((VectorField::from_interior(grid, &values)?, cell))
}

/// Legacy VTK structured-points file with one vector attribute `m`.
pub fn write_vtk<P: AsRef<Path>>(path: P, m: &VectorField, cell_nm: [f64; 3]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let [nx, ny, nz] = m.grid().n();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "magnetization")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {nx} {ny} {nz}")?;
    writeln!(
        w,
        "ORIGIN {} {} {}",
        0.5 * cell_nm[0],
        0.5 * cell_nm[1],
        0.5 * cell_nm[2]
    )?;
    writeln!(w, "SPACING {} {} {}", cell_nm[0], cell_nm[1], cell_nm[2])?;
    writeln!(w, "POINT_DATA {}", nx * ny * nz)?;
    writeln!(w, "VECTORS m double")?;
    for v in m.interior() {
        writeln!(w, "{} {} {}", v[0], v[1], v[2])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_field() -> VectorField {
        let g = GridSpec::new([4, 3, 2], [0.25, 0.2, 0.1]).unwrap();
        VectorField::from_fn(g, |x| Vec3::new(x[0].cos(), x[1].sin(), x[2]).unit())
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.snap");
        let m = sample_field();
        write_snapshot(&path, &m, [5.0, 4.0, 2.0]).unwrap();
        let (back, cell) = read_snapshot(&path).unwrap();
        assert_eq!(cell, [5.0, 4.0, 2.0]);
        assert_eq!(back.grid().n(), [4, 3, 2]);
        assert_eq!(back.interior(), m.interior());
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 60 + 24 * 24);
    }

    #[test]
    fn snapshot_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.snap");
        std::fs::write(
            &path,
            b"not a snapshot at all, just some bytes to pad it out beyond sixty",
        )
        .unwrap();
        assert!(read_snapshot(&path).is_err());
    }

    #[test]
    fn vtk_has_header_and_one_line_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vtk");
        write_vtk(&path, &sample_field(), [1.0, 1.0, 1.0]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert!(lines.contains(&"DIMENSIONS 4 3 2"));
        assert_eq!(lines.len(), 9 + 24);
    }

    #[test]
    fn csv_round_trip_and_float_format() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = pair_rows(&[(0.0, 1.5), (2.0, -3.0)]);
        write_csv(&path, WALL_HEADER, &rows).unwrap();
        let (h, back) = read_csv(&path).unwrap();
        assert_eq!(h, WALL_HEADER);
        assert_eq!(back, rows);
    }
}
