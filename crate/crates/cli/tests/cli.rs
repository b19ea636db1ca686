use std::path::Path;
use std::process::Command;

fn sipm() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sipm"));
    c.env("SIPM_THREADS", "1");
    c
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn missing_config_exits_with_validation_code() {
    let out = sipm()
        .args(["demag-check", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn unknown_key_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "film.kps = 1.0\n");
    let out = sipm()
        .args(["stability", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_scheme_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = sipm()
        .args(["converge-time", "--scheme", "rk4", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn demag_check_reports_one_third() {
    let dir = tempfile::tempdir().unwrap();
    let out = sipm()
        .args(["demag-check", "--grid", "8", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("demag_check.csv")).unwrap();
    let means: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(means.len(), 3);
    for m in means {
        assert!((m + 1.0 / 3.0).abs() < 1e-2, "{m}");
    }
}

#[test]
fn metadata_echo_reparses_to_the_same_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "schemes = [\"bdf2\"]\nspatial_order = 4\nstrip.wall_width_nm = 25.0\ndemag_check.grid = 6\n",
    );
    let out_dir = dir.path().join("out");
    let out = sipm()
        .args(["demag-check", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let meta: toml::Table = std::fs::read_to_string(out_dir.join("metadata.toml"))
        .unwrap()
        .parse()
        .unwrap();
    let run = meta["run"].as_table().unwrap();
    assert_eq!(run["command"].as_str(), Some("demag-check"));
    assert!(run["t_unit_s"].as_float().unwrap() > 5e-12);
    let echo = toml::to_string(&meta["config"]).unwrap();
    let again = out_dir.join("again.toml");
    std::fs::write(&again, &echo).unwrap();
    // The echo is itself a valid config that reproduces the run.
    let out2 = sipm()
        .args(["demag-check", "--config"])
        .arg(&again)
        .arg("--out")
        .arg(dir.path().join("out2"))
        .output()
        .unwrap();
    assert!(out2.status.success());
    let meta2: toml::Table = std::fs::read_to_string(dir.path().join("out2/metadata.toml"))
        .unwrap()
        .parse()
        .unwrap();
    let mut c1 = meta["config"].as_table().unwrap().clone();
    let mut c2 = meta2["config"].as_table().unwrap().clone();
    c1.remove("output_dir");
    c2.remove("output_dir");
    assert_eq!(c1, c2);
    assert_eq!(c1["spatial_order"].as_integer(), Some(4));
}

#[test]
fn converge_time_writes_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "manufactured.cells_temporal_1d = 200\nmanufactured.denominators = [8, 12, 16]\nmanufactured.repeats = 1\n",
    );
    let run = |sub: &str| {
        let out = sipm()
            .args([
                "converge-time",
                "--scheme",
                "bdf2",
                "--dim",
                "1",
                "--config",
            ])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = std::fs::read_to_string(dir.path().join(sub).join("converge_time_bdf2_1d.csv"))
            .unwrap();
        // drop the timing column
        text.lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(7);
                f.join(",")
            })
            .collect::<Vec<_>>()
    };
    let a = run("a");
    assert_eq!(a.len(), 4);
    assert_eq!(a, run("b"));
}
