use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::json;

use isac_core::conic::{assemble, write_subproblem};
use isac_core::detector::{
    alpha_for_pd, matched_filter_rate, monte_carlo_pd, validate_cell, MatchedFilterRun, MonteCarloSettings, PriorSampler,
};
use isac_core::io::{
    write_beamformer, write_beampattern_csv, write_histogram_csv, write_sweep_csv, write_trace_csv, write_validation_csv,
    BeampatternRow, SweepRow, ValidationRow,
};
use isac_core::metrics::{beampattern, expected_pd};
use isac_core::optimizer::{baseline, design, initialize, sca_sdr, BaselineKind, Scheme, Termination};
use isac_core::scene::draw_channels;
use isac_core::verify::check_beamformer;
use isac_core::{Beamformer, IsacError, SceneConfig, TargetPriors};

use crate::manifest::RunManifest;
use crate::{Axis, Cli, Command, Exit, ValidateArgs};

/// Angular step of the beampattern grid, in degrees.
const PATTERN_STEP_DEG: f64 = 0.5;

pub fn exit_for(e: &IsacError) -> Exit {
    match e {
        IsacError::Config(_) | IsacError::Domain { .. } | IsacError::Io(_) => Exit::Usage,
        IsacError::Infeasible(_) | IsacError::DegenerateUser { .. } => Exit::Partial,
        IsacError::Numerical(_) | IsacError::InvalidCovariance(_) | IsacError::OrderViolation { .. } => Exit::Numerical,
    }
}

/// Short status for tables: `infeasible`, `numerical_failure` or `error`.
fn status_for(e: &IsacError) -> &'static str {
    match exit_for(e) {
        Exit::Partial => "infeasible",
        Exit::Numerical => "numerical_failure",
        _ => "error",
    }
}

fn load_config(cli: &Cli) -> Result<SceneConfig, IsacError> {
    let mut cfg = match &cli.common.config {
        Some(path) => SceneConfig::from_path(path)?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.rng_seed = seed;
    }
    if let Some(iters) = cli.common.max_iters {
        cfg.optimizer.max_iters = iters;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Exit {
    if let Command::DumpConfigDefaults = cli.command {
        print!("{}", SceneConfig::default().to_toml_string());
        return Exit::Success;
    }
    let cfg = match load_config(cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return Exit::Usage;
        }
    };
    let out = &cli.common.out;
    if let Err(e) = std::fs::create_dir_all(out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return Exit::Usage;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.common.jobs.unwrap_or(0)).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return Exit::Usage;
        }
    };
    let name = command_name(&cli.command);
    let mut manifest = RunManifest::new(name, cfg.rng_seed, cfg.to_toml_string());
    let result = pool.install(|| match &cli.command {
        Command::Optimize { dump_subproblem } => optimize(&cfg, out, dump_subproblem.as_deref(), &mut manifest),
        Command::Sweep { axis, values } => sweep(&cfg, out, *axis, values, &mut manifest),
        Command::Beampattern => beampattern_cmd(&cfg, out, &mut manifest),
        Command::Montecarlo { trials, bins, schemes, signal_trials, block_len, pf } => {
            let settings = MonteCarloSettings {
                trials: *trials,
                bins: *bins,
                seed: cfg.rng_seed,
                signal_trials: *signal_trials,
                block_len: *block_len,
                pf: *pf,
            };
            montecarlo(&cfg, out, schemes, &settings, &mut manifest)
        }
        Command::ValidatePd(args) => validate_pd(&cfg, out, args, &mut manifest),
        Command::DumpConfigDefaults => unreachable!("handled above"),
    });
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            manifest.statuses.insert("error".into(), e.to_string());
            exit_for(&e)
        }
    };
    if let Err(e) = manifest.write(out, code as i32) {
        eprintln!("error: cannot write manifest: {e}");
        return Exit::Usage;
    }
    code
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Optimize { .. } => "optimize",
        Command::Sweep { .. } => "sweep",
        Command::Beampattern => "beampattern",
        Command::Montecarlo { .. } => "montecarlo",
        Command::ValidatePd(_) => "validate-pd",
        Command::DumpConfigDefaults => "dump-config-defaults",
    }
}

fn create(dir: &Path, manifest: &mut RunManifest, name: &str) -> Result<BufWriter<File>, IsacError> {
    let rel = manifest.output(name);
    Ok(BufWriter::new(File::create(dir.join(rel))?))
}

fn optimize(cfg: &SceneConfig, out: &Path, dump: Option<&Path>, manifest: &mut RunManifest) -> Result<Exit, IsacError> {
    let channels = draw_channels(cfg);
    let priors = TargetPriors::from_config(cfg);
    if let Some(path) = dump {
        let start = initialize(cfg, &channels, &priors)?;
        let sp = assemble(&start.covariance(), &priors, &channels, cfg)?;
        let mut f = BufWriter::new(File::create(path)?);
        write_subproblem(&mut f, &sp)?;
        f.flush()?;
        manifest.outputs.push(path.display().to_string());
    }
    let outcome = sca_sdr(cfg, &channels, &priors, &cfg.optimizer)?;
    let mut f = create(out, manifest, "trace.csv")?;
    write_trace_csv(&mut f, &outcome.trace)?;
    f.flush()?;
    let mut f = create(out, manifest, "beamformer.txt")?;
    write_beamformer(&mut f, &outcome.beamformer)?;
    f.flush()?;

    let check = check_beamformer(
        &outcome.beamformer,
        &channels,
        cfg.sinr_threshold_linear(),
        cfg.total_power_w(),
        cfg.comm_noise_w(),
    );
    manifest.statuses.insert("proposed".into(), outcome.termination.to_string());
    manifest.summary = json!({
        "initial_epd": outcome.trace.initial_epd,
        "epd": outcome.epd,
        "iterations": outcome.trace.records.len(),
        "final_residual": outcome.trace.records.last().map(|r| r.residual),
        "constraint_check": check,
    });
    if !check.ok() {
        return Err(IsacError::Numerical(format!("final design violates constraints: {:?}", check.violations)));
    }
    Ok(if outcome.termination == Termination::Converged { Exit::Success } else { Exit::Partial })
}

/// Design with `scheme` and report a status: the outer loop's termination
/// for the proposed scheme, `optimal` for the convex baselines.
fn design_with_status(
    scheme: Scheme,
    cfg: &SceneConfig,
    priors: &TargetPriors,
) -> Result<(Beamformer, String), IsacError> {
    let channels = draw_channels(cfg);
    match scheme {
        Scheme::Proposed => {
            let outcome = sca_sdr(cfg, &channels, priors, &cfg.optimizer)?;
            Ok((outcome.beamformer, outcome.termination.to_string()))
        }
        other => Ok((design(other, cfg, &channels, priors)?, "optimal".into())),
    }
}

fn sweep(cfg: &SceneConfig, out: &Path, axis: Axis, values: &[f64], manifest: &mut RunManifest) -> Result<Exit, IsacError> {
    let points: Vec<(f64, Scheme)> = values.iter().flat_map(|&v| Scheme::ALL.map(|s| (v, s))).collect();
    let rows: Vec<SweepRow> = points
        .par_iter()
        .map(|&(value, scheme)| {
            let mut point = cfg.clone();
            match axis {
                Axis::GammaDb => point.sinr_threshold_db = value,
                Axis::PowerDbm => point.total_power_dbm = value,
            }
            let priors = TargetPriors::from_config(&point);
            let result = design_with_status(scheme, &point, &priors)
                .and_then(|(bf, status)| Ok((expected_pd(&bf.covariance(), &priors, &point)?, status)));
            let (epd, status) = match result {
                Ok((epd, status)) => (Some(epd), status),
                Err(e) => {
                    log::warn!("{} = {value}, {scheme}: {e}", axis.name());
                    (None, status_for(&e).to_string())
                }
            };
            SweepRow { axis_value: value, scheme: scheme.name().into(), epd, status }
        })
        .collect();
    let mut f = create(out, manifest, "sweep.csv")?;
    write_sweep_csv(&mut f, &rows)?;
    f.flush()?;
    for row in &rows {
        manifest.statuses.insert(format!("{}={}/{}", axis.name(), row.axis_value, row.scheme), row.status.clone());
    }
    let succeeded = rows.iter().filter(|r| r.epd.is_some()).count();
    manifest.summary = json!({ "axis": axis.name(), "points": rows.len(), "succeeded": succeeded });
    Ok(if succeeded > 0 { Exit::Success } else { Exit::Partial })
}

fn beampattern_cmd(cfg: &SceneConfig, out: &Path, manifest: &mut RunManifest) -> Result<Exit, IsacError> {
    let steps = (180.0 / PATTERN_STEP_DEG).round() as usize;
    let angles_deg: Vec<f64> = (0..=steps).map(|i| -90.0 + PATTERN_STEP_DEG * i as f64).collect();
    let angles_rad: Vec<f64> = angles_deg.iter().map(|d| d.to_radians()).collect();
    let priors = TargetPriors::from_config(cfg);
    let designs: Vec<(Scheme, Result<(Beamformer, String), IsacError>)> =
        Scheme::ALL.par_iter().map(|&s| (s, design_with_status(s, cfg, &priors))).collect();
    let mut rows = Vec::new();
    let mut failed = false;
    for (scheme, result) in designs {
        match result {
            Ok((bf, status)) => {
                let pattern = beampattern(&bf.covariance(), &angles_rad, cfg);
                rows.extend(angles_deg.iter().zip(pattern).map(|(&angle_deg, power_w)| BeampatternRow {
                    angle_deg,
                    scheme: scheme.name().into(),
                    power_w,
                }));
                manifest.statuses.insert(scheme.name().into(), status);
            }
            Err(e) => {
                failed = true;
                manifest.statuses.insert(scheme.name().into(), format!("{}: {e}", status_for(&e)));
            }
        }
    }
    let mut f = create(out, manifest, "beampattern.csv")?;
    write_beampattern_csv(&mut f, &rows)?;
    f.flush()?;
    Ok(if failed { Exit::Partial } else { Exit::Success })
}

fn montecarlo(
    cfg: &SceneConfig,
    out: &Path,
    schemes: &[Scheme],
    settings: &MonteCarloSettings,
    manifest: &mut RunManifest,
) -> Result<Exit, IsacError> {
    let priors = TargetPriors::from_config(cfg);
    let sampler = PriorSampler::from_config(cfg);
    let mut summary = serde_json::Map::new();
    let mut failed = false;
    for &scheme in schemes {
        let bf = match design_with_status(scheme, cfg, &priors) {
            Ok((bf, status)) => {
                manifest.statuses.insert(scheme.name().into(), status);
                bf
            }
            Err(e) => {
                failed = true;
                manifest.statuses.insert(scheme.name().into(), format!("{}: {e}", status_for(&e)));
                continue;
            }
        };
        let report = monte_carlo_pd(&bf, &sampler, settings, cfg)?;
        let mut f = create(out, manifest, &format!("histogram_{}.csv", scheme.name()))?;
        write_histogram_csv(&mut f, &report.histogram)?;
        f.flush()?;
        summary.insert(
            scheme.name().into(),
            json!({
                "mean_pd": report.mean_pd,
                "std_error": report.std_error,
                "expected_pd": expected_pd(&bf.covariance(), &priors, cfg)?,
                "cross_check": report.cross_check,
            }),
        );
    }
    summary.insert("trials".into(), json!(settings.trials));
    manifest.summary = serde_json::Value::Object(summary);
    Ok(if failed { Exit::Partial } else { Exit::Success })
}

fn validate_pd(cfg: &SceneConfig, out: &Path, args: &ValidateArgs, manifest: &mut RunManifest) -> Result<Exit, IsacError> {
    let channels = draw_channels(cfg);
    let priors = TargetPriors::from_config(cfg);
    // Any feasible covariance works; Max-ESINR is a single convex solve.
    let bf = baseline(BaselineKind::MaxEsinr, cfg, &channels, &priors)?;
    let mean = cfg.target_prior.theta_mean_deg.to_radians();
    let std = cfg.target_prior.theta_std_deg.to_radians();
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for theta in [mean - std, mean, mean + std] {
        for target in [0.2, 0.5, 0.8] {
            let alpha = alpha_for_pd(&bf, theta, target, args.pf, args.block_len, cfg)?;
            let seed = cfg.rng_seed ^ (cell << 40);
            let report = validate_cell(&bf, alpha, theta, args.pf, args.block_len, args.trials, seed, cfg)?;
            rows.push(ValidationRow {
                alpha_abs: report.alpha_abs,
                theta_deg: report.theta_deg,
                analytic: report.analytic,
                empirical: report.empirical.rate,
                ci95: report.empirical.ci95,
                abs_error: report.abs_error,
            });
            cell += 1;
        }
    }
    let h0 = MatchedFilterRun {
        alpha: Complex64::new(0.0, 0.0),
        theta_true: mean,
        theta_probe: mean,
        pf: args.pf,
        block_len: args.block_len,
        trials: args.h0_trials,
        seed: cfg.rng_seed ^ (cell << 40),
    };
    let false_alarm = matched_filter_rate(&bf, &h0, cfg)?;
    let mut f = create(out, manifest, "validation.csv")?;
    write_validation_csv(&mut f, &rows)?;
    f.flush()?;

    let max_error = rows.iter().map(|r| r.abs_error).fold(0.0, f64::max);
    let pf_rel_error = (false_alarm.rate - args.pf).abs() / args.pf;
    let pass = max_error <= args.tolerance && pf_rel_error <= 0.2;
    manifest.statuses.insert("validation".into(), if pass { "pass" } else { "fail" }.into());
    manifest.summary = json!({
        "pf": args.pf,
        "block_len": args.block_len,
        "trials": args.trials,
        "max_abs_error": max_error,
        "tolerance": args.tolerance,
        "false_alarm": false_alarm,
        "false_alarm_rel_error": pf_rel_error,
    });
    Ok(if pass { Exit::Success } else { Exit::Partial })
}
