mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sipm_core::demag::DemagOperator;
use sipm_core::experiments::{self, dissipation_time, FilmOutcome};
use sipm_core::io::{self, fmt_f64};
use sipm_core::stepper::SchemeKind;
use sipm_core::verify::{self, ConvergenceReport, Level, Refinement};
use sipm_core::{GridSpec, Vec3, VectorField};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "sipm",
    version,
    about = "Semi-implicit projection BDF runs for the LLG equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides `schemes` (repeatable).
    #[arg(long = "scheme")]
    schemes: Vec<String>,
    /// Overrides `output_dir`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "SIPM_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Manufactured-solution temporal convergence.
    ConvergeTime {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Manufactured-solution spatial convergence.
    ConvergeSpace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Wall time against error for the 1D manufactured problem.
    Efficiency {
        #[command(flatten)]
        common: Common,
    },
    /// Thin-film runs over the damping list with stability verdicts.
    Stability {
        #[command(flatten)]
        common: Common,
    },
    /// Thin-film energy traces and dissipation times.
    Energy {
        #[command(flatten)]
        common: Common,
    },
    /// Field-driven wall motion in a strip and the velocity table.
    DomainWall {
        #[command(flatten)]
        common: Common,
    },
    /// Mean stray field of a uniformly magnetized cube.
    DemagCheck {
        #[command(flatten)]
        common: Common,
        /// Cells per side.
        #[arg(long)]
        grid: Option<usize>,
    },
}

enum Failure {
    Io(String),
    Validation(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::Validation(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<sipm_core::Error> for Failure {
    fn from(e: sipm_core::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else if matches!(e, sipm_core::Error::Io(_) | sipm_core::Error::Cache(_)) {
            Failure::Io(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn load_config(common: &Common) -> Res<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::Validation(format!("cannot read config {}: {e}", path.display()))
            })?;
            RunConfig::parse(&text)
                .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if !common.schemes.is_empty() {
        cfg.schemes = common.schemes.clone();
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.display().to_string();
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

/// Metadata written next to every output: the run, then the full config.
struct Meta {
    command: &'static str,
    extra: Vec<(String, toml::Value)>,
}

impl Meta {
    fn new(command: &'static str) -> Self {
        Meta {
            command,
            extra: Vec::new(),
        }
    }

    fn set(&mut self, key: &str, v: impl Into<toml::Value>) {
        self.extra.push((key.to_owned(), v.into()));
    }

    fn write(self, dir: &Path, cfg: &RunConfig, started: Instant) -> Res<()> {
        let mut run = toml::Table::new();
        run.insert("command".into(), self.command.into());
        run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        let t_unit = sipm_core::physics::MaterialParams::permalloy(1.0, 0.0)?.t_unit;
        run.insert("t_unit_s".into(), t_unit.into());
        for (k, v) in self.extra {
            run.insert(k, v);
        }
        run.insert(
            "wall_seconds".into(),
            started.elapsed().as_secs_f64().into(),
        );
        let mut doc = toml::Table::new();
        doc.insert("run".into(), run.into());
        let echo = toml::Value::try_from(cfg).map_err(|e| Failure::Io(e.to_string()))?;
        doc.insert("config".into(), echo);
        let text = toml::to_string(&doc).map_err(|e| Failure::Io(e.to_string()))?;
        std::fs::write(dir.join("metadata.toml"), text)?;
        Ok(())
    }
}

fn prepare(common: &Common) -> Res<(RunConfig, PathBuf)> {
    let cfg = load_config(common)?;
    cfg.validate().map_err(Failure::Validation)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Failure::Validation(e.to_string()))?;
    let dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&dir)?;
    Ok((cfg, dir))
}

fn schemes(cfg: &RunConfig) -> Vec<SchemeKind> {
    cfg.scheme_kinds().expect("validated")
}

fn report_orders(rep: &ConvergenceReport, scheme: SchemeKind) {
    match rep.orders {
        Some([a, b, c]) => println!("{scheme}: orders linf {a:.2} l2 {b:.2} h1 {c:.2}"),
        None => println!("{scheme}: too few levels for an order fit"),
    }
}

fn converge_time(common: &Common, dim: Option<usize>) -> Res<()> {
    let started = Instant::now();
    let (mut cfg, dir) = prepare(common)?;
    if let Some(d) = dim {
        cfg.manufactured.dim = d;
        cfg.validate().map_err(Failure::Validation)?;
    }
    let case = cfg.manufactured.case()?;
    let opts = cfg.run_options().map_err(Failure::Validation)?;
    let mut meta = Meta::new("converge-time");
    for scheme in schemes(&cfg) {
        let levels: Vec<Level> = match (&cfg.manufactured.denominators, case.dim) {
            (Some(d), 1) => d
                .iter()
                .map(|&denom| Level {
                    denom,
                    n: cfg.manufactured.cells_temporal_1d,
                })
                .collect(),
            (None, 1) => verify::standard_temporal_1d(scheme)
                .into_iter()
                .map(|denom| Level {
                    denom,
                    n: cfg.manufactured.cells_temporal_1d,
                })
                .collect(),
            (Some(d), _) => d
                .iter()
                .map(|&denom| Level {
                    denom,
                    n: (denom as f64).round() as usize,
                })
                .collect(),
            (None, _) => verify::standard_temporal_3d(scheme, case.t_end),
        };
        let rep = verify::temporal_study(scheme, &case, &levels, &opts)?;
        report_orders(&rep, scheme);
        std::fs::write(
            dir.join(format!("converge_time_{scheme}_{}d.csv", case.dim)),
            rep.to_csv(true),
        )?;
        if let Some(o) = rep.orders {
            meta.set(&format!("orders_{scheme}"), o.to_vec());
        }
    }
    meta.write(&dir, &cfg, started)
}

fn converge_space(common: &Common, dim: Option<usize>) -> Res<()> {
    let started = Instant::now();
    let (mut cfg, dir) = prepare(common)?;
    if let Some(d) = dim {
        cfg.manufactured.dim = d;
        cfg.validate().map_err(Failure::Validation)?;
    }
    let case = cfg.manufactured.case()?;
    let opts = cfg.run_options().map_err(Failure::Validation)?;
    let cells = cfg.manufactured.spatial_cells();
    let mut meta = Meta::new("converge-space");
    for scheme in schemes(&cfg) {
        let rep = verify::spatial_study(scheme, &case, &cells, cfg.manufactured.k_spatial, &opts)?;
        report_orders(&rep, scheme);
        std::fs::write(
            dir.join(format!("converge_space_{scheme}_{}d.csv", case.dim)),
            rep.to_csv(true),
        )?;
        if let Some(o) = rep.orders {
            meta.set(&format!("orders_{scheme}"), o.to_vec());
        }
    }
    meta.write(&dir, &cfg, started)
}

fn efficiency(common: &Common) -> Res<()> {
    let started = Instant::now();
    let (cfg, dir) = prepare(common)?;
    let case = verify::ManufacturedCase::new(1, cfg.manufactured.alpha, cfg.manufactured.t_end)?;
    let opts = cfg.run_options().map_err(Failure::Validation)?;
    let n = cfg.manufactured.cells_temporal_1d;
    let sweeps: Vec<(SchemeKind, Vec<Level>)> = schemes(&cfg)
        .into_iter()
        .map(|s| {
            let levels = cfg
                .efficiency
                .denominators(s)
                .iter()
                .map(|&denom| Level { denom, n })
                .collect();
            (s, levels)
        })
        .collect();
    let reports = verify::efficiency_study(&case, &sweeps, Refinement::Time, &opts)?;
    let mut csv = String::from(verify::CSV_HEADER);
    csv.push('\n');
    for r in &reports {
        csv.extend(r.to_csv(true).lines().skip(1).map(|l| format!("{l}\n")));
    }
    std::fs::write(dir.join("efficiency.csv"), csv)?;
    let mut rows = Vec::new();
    for &target in &cfg.efficiency.targets_linf {
        for r in &reports {
            let secs = verify::time_at_error(&r.rows, target);
            let scheme = r.rows.first().map(|row| row.scheme.name()).unwrap_or("");
            println!(
                "{scheme}: error {target:e} reached in {}",
                secs.map_or("n/a".into(), |s| format!("{s:.3} s"))
            );
            rows.push(vec![
                scheme.to_owned(),
                fmt_f64(target),
                secs.map(fmt_f64).unwrap_or_default(),
            ]);
        }
    }
    io::write_csv(
        dir.join("efficiency_targets.csv"),
        "scheme,target_linf,seconds",
        &rows,
    )?;
    Meta::new("efficiency").write(&dir, &cfg, started)
}

fn alpha_tag(a: f64) -> String {
    format!("{a}").replace('.', "p")
}

fn film_outcomes(cfg: &RunConfig) -> Res<(Vec<FilmOutcome>, f64)> {
    let film = cfg.film_config().map_err(Failure::Validation)?;
    let demag = if film.demag {
        Some(experiments::build_demag(film.grid()?, None)?)
    } else {
        None
    };
    let mut all = Vec::new();
    for scheme in schemes(cfg) {
        let out = experiments::stability_run_with(&film, scheme, demag.clone())?;
        for o in &out {
            println!(
                "{scheme} alpha {}: {} after {} steps",
                o.alpha,
                o.verdict.label(),
                o.steps
            );
        }
        all.extend(out);
    }
    Ok((all, film.length_m()))
}

fn write_film_snapshots(cfg: &RunConfig, dir: &Path, outcomes: &[FilmOutcome]) -> Res<()> {
    if !cfg.film.snapshots {
        return Ok(());
    }
    let cell: [f64; 3] = std::array::from_fn(|a| cfg.film.extents_nm[a] / cfg.film.cells[a] as f64);
    for o in outcomes {
        let stem = format!("film_{}_a{}", o.scheme, alpha_tag(o.alpha));
        io::write_snapshot(dir.join(format!("{stem}.snap")), &o.final_state, cell)?;
        io::write_vtk(dir.join(format!("{stem}.vtk")), &o.final_state, cell)?;
    }
    Ok(())
}

fn stability(common: &Common) -> Res<()> {
    let started = Instant::now();
    let (cfg, dir) = prepare(common)?;
    let (outcomes, length) = film_outcomes(&cfg)?;
    io::write_csv(
        dir.join("stability.csv"),
        io::STABILITY_HEADER,
        &io::stability_rows(&outcomes),
    )?;
    write_film_snapshots(&cfg, &dir, &outcomes)?;
    let mut meta = Meta::new("stability");
    meta.set("length_m", length);
    meta.write(&dir, &cfg, started)
}

fn energy(common: &Common) -> Res<()> {
    let started = Instant::now();
    let (cfg, dir) = prepare(common)?;
    let (outcomes, length) = film_outcomes(&cfg)?;
    let mut rows = Vec::new();
    for scheme in schemes(&cfg) {
        let mine: Vec<&FilmOutcome> = outcomes.iter().filter(|o| o.scheme == scheme).collect();
        // Common reference: the lowest final energy this scheme reached.
        let e_ref = mine
            .iter()
            .filter(|o| o.verdict.is_stable())
            .map(|o| o.final_energy)
            .fold(f64::INFINITY, f64::min);
        for o in mine {
            io::write_csv(
                dir.join(format!("energy_{scheme}_a{}.csv", alpha_tag(o.alpha))),
                io::ENERGY_HEADER,
                &io::pair_rows(o.energy_trace()),
            )?;
            let t90 = if e_ref.is_finite() {
                dissipation_time(o.energy_trace(), e_ref, 0.1)
            } else {
                None
            };
            rows.push(vec![
                scheme.name().to_owned(),
                fmt_f64(o.alpha),
                o.verdict.is_stable().to_string(),
                t90.map(fmt_f64).unwrap_or_default(),
                fmt_f64(o.final_energy),
            ]);
        }
    }
    io::write_csv(
        dir.join("dissipation.csv"),
        "scheme,alpha,stable,t90_ns,final_energy",
        &rows,
    )?;
    write_film_snapshots(&cfg, &dir, &outcomes)?;
    let mut meta = Meta::new("energy");
    meta.set("length_m", length);
    meta.write(&dir, &cfg, started)
}

fn domain_wall(common: &Common) -> Res<()> {
    let started = Instant::now();
    let (cfg, dir) = prepare(common)?;
    let strip = cfg.strip_config().map_err(Failure::Validation)?;
    let demag = if strip.demag {
        Some(experiments::build_demag(strip.grid()?, None)?)
    } else {
        None
    };
    let mut meta = Meta::new("domain-wall");
    meta.set("length_m", strip.length_m());
    meta.set("initial_wall_width_nm", strip.wall_width()?);
    for scheme in schemes(&cfg) {
        let table = experiments::field_sweep_with(&strip, scheme, demag.clone())?;
        let (header, rows) = io::velocity_table_csv(&table);
        io::write_csv(dir.join(format!("velocity_{scheme}.csv")), &header, &rows)?;
        let mut quad = Vec::new();
        for (f, h) in table.fields_mt.iter().enumerate() {
            let c = table.quadratic[f];
            quad.push(vec![
                fmt_f64(*h),
                fmt_f64(c[0]),
                fmt_f64(c[1]),
                fmt_f64(c[2]),
            ]);
        }
        io::write_csv(
            dir.join(format!("velocity_quadratic_{scheme}.csv")),
            "field_mT,c0,c1,c2",
            &quad,
        )?;
        for row in &table.traces {
            for tr in row {
                let name = format!(
                    "wall_{scheme}_a{}_h{}.csv",
                    alpha_tag(tr.alpha),
                    alpha_tag(tr.field_mt)
                );
                io::write_csv(dir.join(name), io::WALL_HEADER, &io::pair_rows(&tr.samples))?;
                let flag = if tr.fit.steady { "" } else { " (non-steady)" };
                println!(
                    "{scheme} alpha {} field {} mT: {:.1} m/s, R2 {:.4}{flag}",
                    tr.alpha, tr.field_mt, tr.fit.velocity, tr.fit.r2
                );
            }
        }
    }
    if cfg.strip.snapshots {
        let m0 = experiments::relaxed_wall(&strip, schemes(&cfg)[0], demag)?;
        let cell: [f64; 3] = std::array::from_fn(|a| strip.extents_nm[a] / strip.cells[a] as f64);
        io::write_snapshot(dir.join("strip_relaxed.snap"), &m0, cell)?;
        io::write_vtk(dir.join("strip_relaxed.vtk"), &m0, cell)?;
    }
    meta.write(&dir, &cfg, started)
}

fn demag_check(common: &Common, grid: Option<usize>) -> Res<()> {
    let started = Instant::now();
    let (mut cfg, dir) = prepare(common)?;
    if let Some(n) = grid {
        cfg.demag_check.grid = n;
        cfg.validate().map_err(Failure::Validation)?;
    }
    let n = cfg.demag_check.grid;
    let g = GridSpec::new([n; 3], [1.0 / n as f64; 3])?;
    let op = DemagOperator::new(g, g.h())?;
    let mut out = String::from("grid,axis,mean_field\n");
    let mut means = Vec::new();
    for (a, dir_vec) in [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    ]
    .into_iter()
    .enumerate()
    {
        let hs = op.stray_field(&VectorField::constant(g, dir_vec))?;
        let mean = hs.mean()[a];
        println!("uniform cube {n}^3, m along axis {a}: mean field {mean:.6}");
        let _ = writeln!(out, "{n},{a},{}", fmt_f64(mean));
        means.push(mean);
    }
    std::fs::write(dir.join("demag_check.csv"), out)?;
    let mut meta = Meta::new("demag-check");
    meta.set("mean_field", means);
    meta.write(&dir, &cfg, started)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::ConvergeTime { common, dim } => converge_time(common, *dim),
        Command::ConvergeSpace { common, dim } => converge_space(common, *dim),
        Command::Efficiency { common } => efficiency(common),
        Command::Stability { common } => stability(common),
        Command::Energy { common } => energy(common),
        Command::DomainWall { common } => domain_wall(common),
        Command::DemagCheck { common, grid } => demag_check(common, *grid),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
