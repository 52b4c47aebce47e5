use std::path::PathBuf;
use std::process::Command;

use nearpoints::asymptotics::{sweep_and_fit, DeltaRule};
use nearpoints::cli::{
    check_suite, check_suite_with, export_report, format_report, render, run, with_workers, CheckLevel, DeltaSpec,
    ExperimentConfig, GridSpec, Mode, ReportFormat,
};
use nearpoints::homfun::HomogeneousSurface;
use nearpoints::Error;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nearpoints"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nearpoints-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn count_config() -> ExperimentConfig {
    ExperimentConfig {
        delta: DeltaSpec::Value(0.25),
        q: GridSpec::Value(2.0),
        ..ExperimentConfig::default()
    }
}

fn column(header: &str, row: &str, name: &str) -> String {
    let i = header.split(',').position(|h| h == name).unwrap();
    row.split(',').nth(i).unwrap().to_string()
}

#[test]
fn count_row_for_small_circle_case() {
    let out = render(&count_config()).unwrap();
    let lines: Vec<&str> = out.text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(column(lines[0], lines[1], "count"), "6");
    assert_eq!(column(lines[0], lines[1], "mode"), "sharp");
    assert_eq!(run(&count_config()), 0);
}

#[test]
fn smooth_cutoff_dominates_sharp() {
    let sharp = render(&count_config()).unwrap().text;
    let smooth = render(&ExperimentConfig { cutoff: nearpoints::cli::Cutoff::Smooth, ..count_config() }).unwrap().text;
    let (hs, rs) = sharp.split_once('\n').unwrap();
    let (hm, rm) = smooth.split_once('\n').unwrap();
    let s: f64 = column(hs, rs.trim(), "count").parse().unwrap();
    let m: f64 = column(hm, rm.trim(), "count").parse().unwrap();
    assert!(m >= s, "{m} < {s}");
}

#[test]
fn out_of_range_delta_exits_two() {
    let c = ExperimentConfig { delta: DeltaSpec::Value(0.9), ..count_config() };
    match render(&c) {
        Err(e) => assert!(e.to_string().contains("delta"), "{e}"),
        Ok(_) => panic!("accepted delta=0.9"),
    }
    assert_eq!(run(&c), 2);

    let out = bin().args(["count", "--delta", "0.9", "-Q", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta"));
}

#[test]
fn budget_exhaustion_exits_three() {
    let out = bin().args(["count", "--delta", "0.1", "-Q", "512", "--budget", "1000"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_config_key_is_rejected() {
    let path = scratch("bad.json");
    std::fs::write(&path, r#"{"mode": "count", "dleta": 0.1}"#).unwrap();
    let out = bin().args(["count", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dleta"));
}

#[test]
fn config_file_drives_binary() {
    let path = scratch("count.json");
    std::fs::write(&path, r#"{"surface": {"kind": "radial", "n": 3, "d": 2}, "delta": 0.25, "Q": 2}"#).unwrap();
    let out = bin().args(["count", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(column(header, lines.next().unwrap(), "count"), "6");
}

#[test]
fn bootstrap_table_has_closed_form() {
    let c = ExperimentConfig { mode: Mode::Bootstrap, eps: 0.2, ..ExperimentConfig::default() };
    let text = render(&c).unwrap().text;
    assert!(text.lines().any(|l| l == "# K=5"), "{text}");
    let row = text.lines().find(|l| l.starts_with("3,")).unwrap();
    let beta: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((beta - 7.0 / 3.0).abs() < 1e-12);
}

#[test]
fn fast_check_passes() {
    let s = check_suite(CheckLevel::Fast);
    assert!(s.passed(), "{}", s.render());
    assert_eq!(s.exit_code(), 0);
}

#[test]
fn misprinted_beta_breaks_partition() {
    let beta = |u: f64| (1.0 - (-1.0 / (1.0 - u / 2.0)).exp()) * ((1.0 - u / 2.0) / (1.0 - u)).exp();
    // exponent of the second factor inverted on the rising edge only
    let misprint = |u: f64| (1.0 - (-1.0 / (1.0 - u / 2.0)).exp()) * ((1.0 - u) / (1.0 - u / 2.0)).exp();
    let omega = move |x: f64| {
        let a = x.abs();
        if a <= 1.0 || a >= 4.0 {
            0.0
        } else if a <= 2.0 {
            misprint(a)
        } else {
            1.0 - beta(a / 2.0)
        }
    };
    let s = check_suite_with(CheckLevel::Fast, &omega);
    assert_eq!(s.exit_code(), 1);
    assert_eq!(s.first_failure().unwrap().name, "partition identity");
}

#[test]
fn full_check_independent_of_workers() {
    let one = with_workers(1, || check_suite(CheckLevel::Full)).unwrap();
    let eight = with_workers(8, || check_suite(CheckLevel::Full)).unwrap();
    assert!(one.passed(), "{}", one.render());
    let counts = |s: &nearpoints::cli::CheckSummary| {
        s.outcomes.iter().find(|o| o.name == "counting oracle").unwrap().detail.clone()
    };
    assert_eq!(counts(&one), counts(&eight));
    assert_eq!(one.render(), eight.render());
}

#[test]
fn seeded_output_identical_across_workers() {
    let configs = [
        ExperimentConfig {
            mode: Mode::Sweep,
            delta: DeltaSpec::parse("0.1,0.2").unwrap(),
            q: GridSpec::parse("2^5..2^7", "Q").unwrap(),
            ..ExperimentConfig::default()
        },
        ExperimentConfig { mode: Mode::DualCheck, samples: 200, seed: 7, ..ExperimentConfig::default() },
    ];
    for c in configs {
        let a = render(&ExperimentConfig { workers: Some(1), ..c.clone() }).unwrap();
        let b = render(&ExperimentConfig { workers: Some(6), ..c.clone() }).unwrap();
        assert_eq!(a.text, b.text);
        assert_eq!(a.fit, b.fit);
    }
}

fn three_point_sweep() -> nearpoints::asymptotics::SweepReport {
    let f = HomogeneousSurface::radial(3, 2.0).unwrap();
    sweep_and_fit(&f, DeltaRule::Fixed(0.2), &[16.0, 32.0, 64.0], 1e9).unwrap()
}

#[test]
fn export_csv_rows() {
    let path = scratch("sweep.csv");
    let files = export_report(&[three_point_sweep()], ReportFormat::Csv, &path).unwrap();
    assert_eq!(files.len(), 2);
    let text = std::fs::read_to_string(&files[0]).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("n,d,p,delta,Q,ell,r,mode,count,term_prob,term_geom,elapsed_s\n"));
    let fit = std::fs::read_to_string(&files[1]).unwrap();
    assert!(fit.contains("slope="), "{fit}");
}

#[test]
fn plot_data_carries_both_terms() {
    let text = format_report(&[three_point_sweep()], ReportFormat::PlotData).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("log_term_prob") && header.contains("log_term_geom"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let p: f64 = column(header, r, "log_term_prob").parse().unwrap();
        let g: f64 = column(header, r, "log_term_geom").parse().unwrap();
        assert!(p.is_finite() && g.is_finite());
        assert_eq!(column(header, r, "regime"), "probabilistic");
    }
}

#[test]
fn empty_export_is_validation_error() {
    let mut r = three_point_sweep();
    r.grid.clear();
    let e = format_report(&[r], ReportFormat::Csv).unwrap_err();
    assert_eq!(nearpoints::cli::exit_code(&e), 2);
    assert!(format_report(&[], ReportFormat::PlotData).is_err());
}

#[test]
fn unwritable_output_names_path() {
    let path = PathBuf::from("/nonexistent-dir/out.csv");
    match export_report(&[three_point_sweep()], ReportFormat::Csv, &path) {
        Err(e @ Error::Io { .. }) => assert!(e.to_string().contains("/nonexistent-dir/out.csv")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn subcommands_smoke() {
    for args in [
        vec!["series", "--series", "first"],
        vec!["audit", "--delta", "0.25", "-Q", "2"],
        vec!["oscint", "--t", "1", "--lambda", "2^7..2^9"],
        vec!["dual-check", "--samples", "50"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stdout.is_empty());
    }
}
