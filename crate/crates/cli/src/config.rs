//! Run configuration. Every physical quantity carries its unit in the key
//! name; unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sipm_core::experiments::{FilmConfig, SolverSettings, StripConfig};
use sipm_core::krylov::KrylovConfig;
use sipm_core::spectral::PreconditionerKind;
use sipm_core::stepper::{BootstrapMode, SchemeKind};
use sipm_core::verify::{standard_spatial_1d, ManufacturedCase, RunOptions};
use sipm_core::SpatialOrder;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schemes: Vec<String>,
    pub output_dir: String,
    /// Unused by the deterministic runs; kept for randomized extensions.
    pub seed: u64,
    /// 0 uses every core.
    pub threads: usize,
    pub preconditioner: String,
    /// 2 or 4; absent picks the scheme default.
    pub spatial_order: Option<u8>,
    pub krylov: KrylovSection,
    pub manufactured: ManufacturedSection,
    pub efficiency: EfficiencySection,
    pub film: FilmSection,
    pub strip: StripSection,
    pub demag_check: DemagCheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schemes: vec!["bdf1".into(), "bdf2".into(), "bdf3".into()],
            output_dir: "out".into(),
            seed: 0,
            threads: 0,
            preconditioner: "spectral".into(),
            spatial_order: None,
            krylov: KrylovSection::default(),
            manufactured: ManufacturedSection::default(),
            efficiency: EfficiencySection::default(),
            film: FilmSection::default(),
            strip: StripSection::default(),
            demag_check: DemagCheckSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrylovSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub restart: usize,
    pub max_iters: usize,
    pub stall_tol: f64,
}

impl Default for KrylovSection {
    fn default() -> Self {
        let k = KrylovConfig::default();
        KrylovSection {
            rel_tol: k.rel_tol,
            abs_tol: k.abs_tol,
            restart: k.restart,
            max_iters: k.max_iters,
            stall_tol: k.stall_tol,
        }
    }
}

impl KrylovSection {
    pub fn to_core(&self) -> KrylovConfig {
        KrylovConfig {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            restart: self.restart,
            max_iters: self.max_iters,
            stall_tol: self.stall_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManufacturedSection {
    pub dim: usize,
    pub alpha: f64,
    /// Dimensionless final time.
    pub t_end: f64,
    /// Cells of the 1D temporal study (h = 1/cells).
    pub cells_temporal_1d: usize,
    /// `k = t_end / d`; absent uses the standard schedule.
    pub denominators: Option<Vec<usize>>,
    /// Dimensionless step of the spatial study.
    pub k_spatial: f64,
    /// Absent uses 16..256 in 1D and 4..12 in 3D.
    pub cells_spatial: Option<Vec<usize>>,
    /// Timing repeats; the median is reported.
    pub repeats: usize,
}

impl Default for ManufacturedSection {
    fn default() -> Self {
        ManufacturedSection {
            dim: 1,
            alpha: 0.01,
            t_end: 0.1,
            cells_temporal_1d: 10_000,
            denominators: None,
            k_spatial: 1e-5,
            cells_spatial: None,
            repeats: 3,
        }
    }
}

impl ManufacturedSection {
    pub fn case(&self) -> sipm_core::Result<ManufacturedCase> {
        ManufacturedCase::new(self.dim, self.alpha, self.t_end)
    }

    pub fn spatial_cells(&self) -> Vec<usize> {
        match (&self.cells_spatial, self.dim) {
            (Some(c), _) => c.clone(),
            (None, 1) => standard_spatial_1d(),
            (None, _) => vec![4, 6, 8, 10, 12],
        }
    }
}

/// Step denominators per scheme for the wall-time comparison (1D,
/// `h = 1 / manufactured.cells_temporal_1d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EfficiencySection {
    pub bdf1_denominators: Vec<usize>,
    pub bdf2_denominators: Vec<usize>,
    pub bdf3_denominators: Vec<usize>,
    /// Max-norm errors at which wall times are compared.
    pub targets_linf: Vec<f64>,
}

impl Default for EfficiencySection {
    fn default() -> Self {
        EfficiencySection {
            bdf1_denominators: vec![2048, 4096, 8192],
            bdf2_denominators: vec![48, 96, 192, 384],
            bdf3_denominators: vec![3, 4, 6],
            targets_linf: vec![3e-8, 4e-8],
        }
    }
}

impl EfficiencySection {
    pub fn denominators(&self, s: SchemeKind) -> &[usize] {
        match s {
            SchemeKind::Bdf1 => &self.bdf1_denominators,
            SchemeKind::Bdf2 => &self.bdf2_denominators,
            SchemeKind::Bdf3 => &self.bdf3_denominators,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilmSection {
    pub extents_nm: [f64; 3],
    pub cells: [usize; 3],
    pub k_ps: f64,
    pub alphas: Vec<f64>,
    #[serde(rename = "he_mT")]
    pub he_mt: [f64; 3],
    pub t_end_ns: f64,
    pub sample_every: usize,
    pub demag: bool,
    /// BDF1 substeps per bootstrap step.
    pub bootstrap_substeps: usize,
    /// Write the final states as snapshots and VTK files.
    pub snapshots: bool,
}

impl Default for FilmSection {
    fn default() -> Self {
        let f = FilmConfig::default();
        FilmSection {
            extents_nm: f.extents_nm,
            cells: f.cells,
            k_ps: f.k_ps,
            alphas: f.alphas,
            he_mt: f.he_mt,
            t_end_ns: f.t_end_ns,
            sample_every: f.sample_every,
            demag: f.demag,
            bootstrap_substeps: 10,
            snapshots: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StripSection {
    pub extents_nm: [f64; 3],
    pub cells: [usize; 3],
    pub k_ps: f64,
    #[serde(rename = "fields_mT")]
    pub fields_mt: Vec<f64>,
    pub alphas: Vec<f64>,
    pub t_end_ns: f64,
    pub wall_width_nm: Option<f64>,
    pub wall_center_nm: Option<f64>,
    pub relax_ns: f64,
    pub relax_alpha: f64,
    pub stop_margin_nm: f64,
    pub sample_every: usize,
    pub fit_window: f64,
    pub average_width: bool,
    pub demag: bool,
    pub bootstrap_substeps: usize,
    pub snapshots: bool,
}

impl Default for StripSection {
    fn default() -> Self {
        let s = StripConfig::default();
        StripSection {
            extents_nm: s.extents_nm,
            cells: s.cells,
            k_ps: s.k_ps,
            fields_mt: s.fields_mt,
            alphas: s.alphas,
            t_end_ns: s.t_end_ns,
            wall_width_nm: s.wall_width_nm,
            wall_center_nm: s.wall_center_nm,
            relax_ns: s.relax_ns,
            relax_alpha: s.relax_alpha,
            stop_margin_nm: s.stop_margin_nm,
            sample_every: s.sample_every,
            fit_window: s.fit_window,
            average_width: s.average_width,
            demag: s.demag,
            bootstrap_substeps: 10,
            snapshots: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemagCheckSection {
    /// Cells per side of the uniformly magnetized cube.
    pub grid: usize,
}

impl Default for DemagCheckSection {
    fn default() -> Self {
        DemagCheckSection { grid: 16 }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn scheme_kinds(&self) -> Result<Vec<SchemeKind>, String> {
        if self.schemes.is_empty() {
            return Err("no scheme selected".into());
        }
        self.schemes
            .iter()
            .map(|s| SchemeKind::parse(s).ok_or_else(|| format!("unknown scheme '{s}'")))
            .collect()
    }

    pub fn preconditioner_kind(&self) -> Result<PreconditionerKind, String> {
        PreconditionerKind::parse(&self.preconditioner)
            .ok_or_else(|| format!("unknown preconditioner '{}'", self.preconditioner))
    }

    pub fn spatial_order_kind(&self) -> Result<Option<SpatialOrder>, String> {
        match self.spatial_order {
            None => Ok(None),
            Some(2) => Ok(Some(SpatialOrder::Second)),
            Some(4) => Ok(Some(SpatialOrder::Fourth)),
            Some(o) => Err(format!("spatial_order must be 2 or 4, got {o}")),
        }
    }

    /// Checks everything that can be checked before computing.
    pub fn validate(&self) -> Result<(), String> {
        self.scheme_kinds()?;
        self.preconditioner_kind()?;
        self.spatial_order_kind()?;
        self.krylov
            .to_core()
            .validate()
            .map_err(|e| e.to_string())?;
        self.manufactured.case().map_err(|e| e.to_string())?;
        if self.manufactured.repeats == 0 {
            return Err("manufactured.repeats must be positive".into());
        }
        self.film_config()?.validate().map_err(|e| e.to_string())?;
        self.strip_config()?.validate().map_err(|e| e.to_string())?;
        if self.film.bootstrap_substeps == 0 || self.strip.bootstrap_substeps == 0 {
            return Err("bootstrap_substeps must be positive".into());
        }
        if self.demag_check.grid == 0 {
            return Err("demag_check.grid must be positive".into());
        }
        Ok(())
    }

    pub fn run_options(&self) -> Result<RunOptions, String> {
        let mut o = RunOptions::default();
        o.spatial_order = self.spatial_order_kind()?;
        o.krylov = self.krylov.to_core();
        o.preconditioner = self.preconditioner_kind()?;
        o.repeats = self.manufactured.repeats;
        Ok(o)
    }

    fn solver(&self, substeps: usize) -> Result<SolverSettings, String> {
        Ok(SolverSettings {
            spatial_order: self.spatial_order_kind()?,
            krylov: self.krylov.to_core(),
            preconditioner: self.preconditioner_kind()?,
            bootstrap: BootstrapMode::Substep {
                n_sub: substeps,
                richardson: true,
            },
        })
    }

    pub fn film_config(&self) -> Result<FilmConfig, String> {
        let f = &self.film;
        Ok(FilmConfig {
            extents_nm: f.extents_nm,
            cells: f.cells,
            k_ps: f.k_ps,
            alphas: f.alphas.clone(),
            he_mt: f.he_mt,
            t_end_ns: f.t_end_ns,
            sample_every: f.sample_every,
            demag: f.demag,
            solver: self.solver(f.bootstrap_substeps)?,
        })
    }

    pub fn strip_config(&self) -> Result<StripConfig, String> {
        let s = &self.strip;
        Ok(StripConfig {
            extents_nm: s.extents_nm,
            cells: s.cells,
            k_ps: s.k_ps,
            fields_mt: s.fields_mt.clone(),
            alphas: s.alphas.clone(),
            t_end_ns: s.t_end_ns,
            wall_width_nm: s.wall_width_nm,
            wall_center_nm: s.wall_center_nm,
            relax_ns: s.relax_ns,
            relax_alpha: s.relax_alpha,
            stop_margin_nm: s.stop_margin_nm,
            sample_every: s.sample_every,
            fit_window: s.fit_window,
            average_width: s.average_width,
            demag: s.demag,
            solver: self.solver(s.bootstrap_substeps)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn dotted_keys_and_unit_suffixes() {
        let c = RunConfig::parse(
            "schemes = [\"bdf3\"]\nfilm.k_ps = 0.1\nfilm.he_mT = [1.0, 0.0, 0.0]\nstrip.fields_mT = [5.0]\n",
        )
        .unwrap();
        assert_eq!(c.film.k_ps, 0.1);
        assert_eq!(c.film.he_mt, [1.0, 0.0, 0.0]);
        assert_eq!(c.strip.fields_mt, vec![5.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("film.k = 1.0").is_err());
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("[strip]\nfields = [5.0]").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        c.schemes = vec!["rk4".into()];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.film.k_ps = -1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.spatial_order = Some(3);
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.manufactured.dim = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let mut c = RunConfig::default();
        c.strip.wall_width_nm = Some(30.0);
        c.spatial_order = Some(4);
        c.manufactured.denominators = Some(vec![8, 16]);
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }
}
