//! Command-line configuration and report output.
//!
//! Exit codes: 0 all hard assertions passed, 1 an assertion or the run failed,
//! 2 usage error, 3 I/O error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::breaking::{detect_breaking, events_to_csv, predict_backward, predict_forward, EPS_BREAK};
use crate::coords::{to_lagrangian, EulerianState};
use crate::cuspon::{CusponParams, CusponProfile};
use crate::dynamics::{evolve, IntegratorOptions, Trajectory};
use crate::error::{Error, Result};
use crate::experiments::{
    audit_positive_yxi, run_accumulation, run_cuspon, AccumulationConfig, CusponConfig, ExperimentReport, GridMeta,
    AUDIT_EPS,
};
use crate::grid::GridSpec;
use crate::profiles::{accumulating_profile, piecewise_linear, PiecewiseLinearProfile};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "chlab",
    version,
    about = "Conservative Camassa-Holm solutions in Lagrangian coordinates"
)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an initial profile and its Lagrangian state.
    Profile {
        #[command(flatten)]
        source: ProfileSource,
        #[arg(long, default_value_t = 4096)]
        grid: usize,
        #[arg(long, default_value = "runs/profile")]
        out: PathBuf,
    },
    /// Evolve a profile and store snapshots and breaking events.
    Simulate {
        #[command(flatten)]
        source: ProfileSource,
        #[arg(long, default_value_t = 4096)]
        grid: usize,
        #[arg(long = "t-end", default_value_t = 1.0, allow_negative_numbers = true)]
        t_end: f64,
        #[arg(long, default_value_t = 20)]
        snapshots: usize,
        #[command(flatten)]
        integrator: IntegratorArgs,
        #[arg(long, default_value = "runs/simulate")]
        out: PathBuf,
    },
    /// Predicted breaking time for a minimum slope and total energy.
    Predict {
        #[arg(long, allow_negative_numbers = true)]
        slope: f64,
        #[arg(long)]
        energy: f64,
        /// Predict the backward breaking time instead.
        #[arg(long)]
        backward: bool,
    },
    /// Build the cuspon and check its travelling-wave properties.
    Cuspon {
        #[arg(long, allow_negative_numbers = true)]
        m: f64,
        #[arg(long, allow_negative_numbers = true)]
        s: f64,
        #[arg(long, allow_negative_numbers = true)]
        mmax: f64,
        #[arg(long, default_value_t = 8192)]
        grid: usize,
        #[arg(long = "t-end", default_value_t = 0.5)]
        t_end: f64,
        #[arg(long, default_value_t = 10)]
        snapshots: usize,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Only export the profile `x,phi,phi_x` on [-x-max, x-max].
        #[arg(long)]
        profile_only: bool,
        #[arg(long = "x-max", default_value_t = 5.0)]
        x_max: f64,
        #[arg(long, default_value_t = 1001)]
        samples: usize,
        #[command(flatten)]
        integrator: IntegratorArgs,
        #[arg(long, default_value = "runs/cuspon")]
        out: PathBuf,
    },
    /// Accumulating breaking times for the q-profile.
    Accumulate {
        #[arg(long, default_value_t = 0.8)]
        q: f64,
        #[arg(long, default_value_t = 6)]
        segments: usize,
        #[arg(long, default_value_t = 4096)]
        grid: usize,
        #[arg(long = "t-end", default_value_t = 2.5)]
        t_end: f64,
        #[arg(long = "dt-out", default_value_t = 2.5e-3)]
        dt_out: f64,
        #[arg(long, default_value_t = 2.0)]
        inflation: f64,
        /// Run backward in time and track the ascents.
        #[arg(long)]
        backward: bool,
        #[command(flatten)]
        integrator: IntegratorArgs,
        #[arg(long, default_value = "runs/accumulate")]
        out: PathBuf,
    },
    /// Positivity audit of a stored trajectory.
    Audit {
        #[arg(long)]
        trajectory: PathBuf,
        /// Threshold relative to the median initial y_ξ.
        #[arg(long, default_value_t = AUDIT_EPS)]
        eps: f64,
        #[arg(long, default_value = "runs/audit")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ProfileSource {
    /// Piecewise-linear profile through `x:u` points, comma separated.
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["q", "file"])]
    pub points: Option<String>,
    /// Accumulating profile with this q.
    #[arg(long, conflicts_with = "file")]
    pub q: Option<f64>,
    #[arg(long, default_value_t = 6)]
    pub segments: usize,
    /// Profile JSON written by `profile`.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct IntegratorArgs {
    #[arg(long = "tol-step")]
    pub tol_step: Option<f64>,
    #[arg(long = "tol-energy")]
    pub tol_energy: Option<f64>,
    #[arg(long = "dt-max")]
    pub dt_max: Option<f64>,
}

impl IntegratorArgs {
    fn options(&self) -> std::result::Result<IntegratorOptions, String> {
        let mut o = IntegratorOptions::default();
        for (flag, v, slot) in [
            ("--tol-step", self.tol_step, &mut o.tol_step),
            ("--tol-energy", self.tol_energy, &mut o.tol_energy),
            ("--dt-max", self.dt_max, &mut o.dt_max),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(format!("{flag} must be positive, got {v}"));
                }
                *slot = v;
            }
        }
        o.dt_init = o.dt_init.min(o.dt_max);
        Ok(o)
    }
}

pub fn parse_args<I, T>(argv: I) -> std::result::Result<RunConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    RunConfig::try_parse_from(argv)
}

fn usage(msg: impl Into<String>) -> Outcome {
    Outcome::Usage(msg.into())
}

enum Outcome {
    Report(ExperimentReport),
    Printed,
    Usage(String),
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), Outcome> {
    if cond {
        Ok(())
    } else {
        Err(usage(msg()))
    }
}

fn parse_points(text: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    text.split(',')
        .map(|pair| {
            let (x, u) = pair
                .split_once(':')
                .ok_or_else(|| format!("--points entry `{pair}` is not x:u"))?;
            let x: f64 = x.trim().parse().map_err(|_| format!("--points: bad x in `{pair}`"))?;
            let u: f64 = u.trim().parse().map_err(|_| format!("--points: bad u in `{pair}`"))?;
            Ok((x, u))
        })
        .collect()
}

fn load_profile(src: &ProfileSource) -> std::result::Result<PiecewiseLinearProfile, Outcome> {
    if let Some(pts) = &src.points {
        let pts = parse_points(pts).map_err(usage)?;
        return piecewise_linear(&pts).map_err(|e| usage(format!("--points: {e}")));
    }
    if let Some(q) = src.q {
        check(q > 0.0 && q < 1.0, || format!("--q must lie in (0, 1), got {q}"))?;
        check(src.segments >= 1, || "--segments must be at least 1".into())?;
        return accumulating_profile(q, src.segments).map_err(|e| usage(format!("--q/--segments: {e}")));
    }
    if let Some(path) = &src.file {
        let text = fs::read_to_string(path).map_err(|e| Outcome::Usage(format!("--file {}: {e}", path.display())))?;
        return PiecewiseLinearProfile::from_json(&text).map_err(|e| usage(format!("--file: {e}")));
    }
    Err(usage("one of --points, --q or --file is required"))
}

fn grid_spec(nodes: usize) -> std::result::Result<GridSpec, Outcome> {
    check(nodes >= 16, || format!("--grid must be at least 16, got {nodes}"))?;
    Ok(GridSpec::with_nodes(nodes))
}

/// Write `report.json` and every companion table into `dir`.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report.to_json()? + "\n")?;
    for (name, text) in &report.tables {
        fs::write(dir.join(name), text)?;
    }
    Ok(())
}

fn write_timing(dir: &Path, seconds: f64) -> Result<()> {
    fs::write(
        dir.join("timing.json"),
        serde_json::to_string_pretty(&json!({ "wall_seconds": seconds }))? + "\n",
    )?;
    Ok(())
}

fn execute(cfg: &RunConfig) -> Result<(Outcome, Option<PathBuf>)> {
    macro_rules! tri {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(o) => return Ok((o, None)),
            }
        };
    }
    match &cfg.command {
        Command::Profile { source, grid, out } => {
            let p = tri!(load_profile(source));
            let spec = tri!(grid_spec(*grid));
            let e = EulerianState::from_profile(p.clone())?;
            let x = to_lagrangian(&e, &spec)?;
            let mut rep = ExperimentReport::new("profile", json!({ "grid": spec }));
            rep.grid = Some(GridMeta::of(x.xi()));
            rep.results = json!({ "h1_norm_sq": p.h1_norm_sq(), "energy": e.energy(), "support": p.support() });
            let inv = x.invariants();
            rep.check(
                "constraint",
                "y_xi h = U_xi^2",
                "1e-12",
                format!("{:e}", inv.max_constraint_defect),
                inv.max_constraint_defect <= 1e-12,
            );
            rep.tables.insert("profile.json".into(), p.to_json()? + "\n");
            rep.tables.insert("lagrangian.csv".into(), x.to_csv());
            let mut s = String::from("x,u\n");
            for b in p.breakpoints() {
                s.push_str(&format!("{},{}\n", b, p.eval(*b)));
            }
            rep.tables.insert("profile.csv".into(), s);
            Ok((Outcome::Report(rep), Some(out.clone())))
        }
        Command::Simulate {
            source,
            grid,
            t_end,
            snapshots,
            integrator,
            out,
        } => {
            let p = tri!(load_profile(source));
            let spec = tri!(grid_spec(*grid));
            tri!(check(t_end.is_finite() && *t_end != 0.0, || format!(
                "--t-end must be finite and nonzero, got {t_end}"
            )));
            tri!(check(*snapshots >= 1, || "--snapshots must be at least 1".into()));
            let opts = tri!(integrator.options().map_err(usage));
            let x = to_lagrangian(&EulerianState::from_profile(p)?, &spec)?;
            let traj = evolve(&x, *t_end, *snapshots, &opts)?;
            traj.export(&out.join("trajectory"))?;
            let events = detect_breaking(&traj, EPS_BREAK);
            let defect = traj
                .states
                .iter()
                .fold(0.0f64, |m, s| m.max(s.invariants().max_constraint_defect));
            let mut rep = ExperimentReport::new(
                "simulate",
                json!({ "grid": spec, "t_end": t_end, "snapshots": snapshots, "integrator": opts }),
            );
            rep.grid = Some(GridMeta::of(x.xi()));
            rep.check(
                "constraint_preserved",
                "y_xi h = U_xi^2 along the flow",
                "1e-8",
                format!("{defect:e}"),
                defect <= 1e-8,
            );
            let drift = traj.relative_energy_drift();
            rep.note(
                "energy_conservation",
                "conservative solutions keep ||u||^2 + mu(R)",
                "1e-6",
                format!("{drift:e}"),
                drift <= 1e-6,
            );
            rep.results = json!({ "events": events.len(), "energy_drift": drift, "integration": traj.stats });
            rep.tables.insert("events.csv".into(), events_to_csv(&events));
            Ok((Outcome::Report(rep), Some(out.clone())))
        }
        Command::Predict {
            slope,
            energy,
            backward,
        } => {
            tri!(check(slope.is_finite(), || format!(
                "--slope must be finite, got {slope}"
            )));
            tri!(check(*energy >= 0.0 && energy.is_finite(), || format!(
                "--energy must be >= 0, got {energy}"
            )));
            let t = if *backward {
                predict_backward(*slope, *energy)
            } else {
                predict_forward(*slope, *energy)
            };
            match tri!(t.map_err(|e| usage(format!("--slope/--energy: {e}")))) {
                Some(t) => println!("{t}"),
                None => println!("none"),
            }
            Ok((Outcome::Printed, None))
        }
        Command::Cuspon {
            m,
            s,
            mmax,
            grid,
            t_end,
            snapshots,
            delta,
            profile_only,
            x_max,
            samples,
            integrator,
            out,
        } => {
            let p = tri!(CusponParams::new(*m, *s, *mmax).map_err(|_| usage(format!(
                "--m, --s, --mmax must satisfy m < s < mmax, got {m}, {s}, {mmax}"
            ))));
            if *profile_only {
                tri!(check(*x_max > 0.0 && x_max.is_finite(), || format!(
                    "--x-max must be positive, got {x_max}"
                )));
                tri!(check(*samples >= 2, || "--samples must be at least 2".into()));
                let prof = CusponProfile::new(p)?;
                let xs: Vec<f64> = (0..*samples)
                    .map(|k| -x_max + 2.0 * x_max * k as f64 / (*samples - 1) as f64)
                    .collect();
                fs::create_dir_all(out)?;
                fs::write(out.join("cuspon_profile.csv"), prof.to_csv(&xs))?;
                fs::write(out.join("cuspon_params.json"), serde_json::to_string_pretty(&p)? + "\n")?;
                return Ok((Outcome::Printed, None));
            }
            let spec = tri!(grid_spec(*grid));
            tri!(check(*t_end > 0.0 && t_end.is_finite(), || format!(
                "--t-end must be positive, got {t_end}"
            )));
            tri!(check(*delta > 0.0, || format!("--delta must be positive, got {delta}")));
            tri!(check(*snapshots >= 1, || "--snapshots must be at least 1".into()));
            let cfg = CusponConfig {
                m: *m,
                s: *s,
                m_max: *mmax,
                grid: spec,
                integrator: tri!(integrator.options().map_err(usage)),
                t_end: *t_end,
                snapshots: *snapshots,
                delta: *delta,
                ..Default::default()
            };
            Ok((Outcome::Report(run_cuspon(&cfg)?.report), Some(out.clone())))
        }
        Command::Accumulate {
            q,
            segments,
            grid,
            t_end,
            dt_out,
            inflation,
            backward,
            integrator,
            out,
        } => {
            tri!(check(*q > 0.0 && *q < 1.0, || format!(
                "--q must lie in (0, 1), got {q}"
            )));
            tri!(check(*segments >= 1, || "--segments must be at least 1".into()));
            tri!(check(*t_end > 0.0 && t_end.is_finite(), || format!(
                "--t-end must be positive, got {t_end}"
            )));
            tri!(check(*dt_out > 0.0, || format!(
                "--dt-out must be positive, got {dt_out}"
            )));
            tri!(check(*inflation >= 1.0, || format!(
                "--inflation must be >= 1, got {inflation}"
            )));
            let mut cfg = AccumulationConfig {
                q: *q,
                segments: *segments,
                grid: tri!(grid_spec(*grid)),
                integrator: tri!(integrator.options().map_err(usage)),
                t_end: *t_end,
                dt_out: *dt_out,
                inflation: *inflation,
                ..Default::default()
            };
            if *backward {
                cfg = cfg.backward();
            }
            let run = tri!(run_accumulation(&cfg).map_err(|e| match e {
                Error::Domain(msg) => usage(format!("--q/--segments: {msg}")),
                other => usage(other.to_string()),
            }));
            Ok((Outcome::Report(run.report), Some(out.clone())))
        }
        Command::Audit { trajectory, eps, out } => {
            tri!(check(*eps > 0.0, || format!("--eps must be positive, got {eps}")));
            let traj = Trajectory::import(trajectory)?;
            let Some(first) = traj.states.first() else {
                return Ok((usage("--trajectory holds no snapshots"), None));
            };
            let mut yx = first.y_xi().to_vec();
            yx.sort_by(f64::total_cmp);
            let threshold = eps * yx[yx.len() / 2];
            Ok((Outcome::Report(audit_positive_yxi(&traj, threshold)), Some(out.clone())))
        }
    }
}

/// Parse, run and write outputs; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match parse_args(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_PASS,
                _ => EXIT_USAGE,
            };
        }
    };
    let start = Instant::now();
    match execute(&cfg) {
        Ok((Outcome::Printed, _)) => EXIT_PASS,
        Ok((Outcome::Usage(msg), _)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Ok((Outcome::Report(rep), dir)) => {
            for a in &rep.assertions {
                let tag = match (a.passed, a.hard) {
                    (true, _) => "PASS",
                    (false, true) => "FAIL",
                    (false, false) => "WARN",
                };
                println!("{tag} {}: {} (tolerance {})", a.name, a.observed, a.tolerance);
            }
            if let Some(dir) = dir {
                let written = write_outputs(&rep, &dir).and_then(|_| write_timing(&dir, start.elapsed().as_secs_f64()));
                if let Err(e) = written {
                    eprintln!("error: {e}");
                    return EXIT_IO;
                }
            }
            if rep.passed() {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) | Error::Json(_) | Error::Parse(_) => EXIT_IO,
                Error::Domain(_) => EXIT_USAGE,
                Error::Integration { .. } => EXIT_FAIL,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_accumulate() {
        let c = parse_args([
            "chlab",
            "accumulate",
            "--q",
            "0.8",
            "--segments",
            "6",
            "--grid",
            "16384",
            "--out",
            "runs/a1",
        ])
        .unwrap();
        match c.command {
            Command::Accumulate {
                q,
                segments,
                grid,
                out,
                backward,
                ..
            } => {
                assert_eq!((q, segments, grid, backward), (0.8, 6, 16384, false));
                assert_eq!(out, PathBuf::from("runs/a1"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parses_cuspon() {
        let c = parse_args(["chlab", "cuspon", "--m", "1", "--s", "3", "--mmax", "5"]).unwrap();
        assert!(matches!(c.command, Command::Cuspon { m, s, mmax, .. } if (m, s, mmax) == (1.0, 3.0, 5.0)));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["chlab", "accumulate", "--bogus", "1", "--out", "x"]), EXIT_USAGE);
        assert_eq!(run(["chlab", "accumulate", "--q", "abc", "--out", "x"]), EXIT_USAGE);
        assert_eq!(run(["chlab", "accumulate", "--q", "1.5", "--out", "x"]), EXIT_USAGE);
        assert_eq!(
            run(["chlab", "cuspon", "--m", "3", "--s", "1", "--mmax", "5", "--out", "x"]),
            EXIT_USAGE
        );
        assert_eq!(run(["chlab"]), EXIT_USAGE);
    }

    #[test]
    fn predict_exits_0() {
        assert_eq!(run(["chlab", "predict", "--slope", "-6", "--energy", "1"]), EXIT_PASS);
        assert_eq!(run(["chlab", "predict", "--slope", "1", "--energy", "1"]), EXIT_PASS);
        assert_eq!(run(["chlab", "predict", "--slope", "-6", "--energy", "-1"]), EXIT_USAGE);
    }

    #[test]
    fn points_parse() {
        assert_eq!(
            parse_points("0:0, 1:1,2:0").unwrap(),
            vec![(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]
        );
        assert!(parse_points("0:0,1").is_err());
    }

    #[test]
    fn empty_report_writes_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let rep = ExperimentReport::new("empty", json!({}));
        write_outputs(&rep, dir.path()).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![OsString::from("report.json")]);
    }
}
