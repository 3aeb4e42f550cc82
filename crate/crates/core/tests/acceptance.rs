//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances are fixed here and not tuned to the results.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use isac_core::detector::{
    alpha_for_pd, matched_filter_rate, monte_carlo_pd, MatchedFilterRun, MonteCarloSettings, PriorSampler,
};
use isac_core::io::write_histogram_csv;
use isac_core::metrics::{beampattern, detection_probability, expected_pd, pd_gradient};
use isac_core::optimizer::{baseline, design, sca_sdr, BaselineKind, ScaOutcome, Scheme, Termination};
use isac_core::scene::draw_channels;
use isac_core::verify::check_beamformer;
use isac_core::{Beamformer, CMatrix, Covariance, SceneConfig, TargetPriors};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn random_psd(n: usize, power: f64, rng: &mut ChaCha8Rng) -> CMatrix {
    let b = CMatrix::from_fn(n, n, |_, _| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let r = &b * b.adjoint();
    let tr: f64 = (0..n).map(|i| r[(i, i)].re).sum();
    r.scale(power / tr)
}

/// Pointwise P_d against central differences along random PSD directions.
fn gradient_check() -> Verdict {
    let cfg = SceneConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let n = cfg.n_tx;
    let c = isac_core::specfun::erfc_inv(2.0 * cfg.false_alarm).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let r = random_psd(n, cfg.total_power_w(), &mut rng);
        let theta: f64 = rng.random_range(-60f64..60.0).to_radians();
        let a = isac_core::scene::steering_tx(theta, n);
        let s = cfg.n_rx as f64 * (a.adjoint() * &r * &a)[(0, 0)].re;
        // Place the operating point on the steep part of the curve.
        let alpha = c * cfg.sense_noise_w().sqrt() / s.sqrt() * rng.random_range(0.5..1.5);
        let d = random_psd(n, cfg.total_power_w(), &mut rng);
        let ds = cfg.n_rx as f64 * (a.adjoint() * &d * &a)[(0, 0)].re;
        let h = 1e-4 * s / ds;
        let pd = |m: CMatrix| detection_probability(alpha, theta, &Covariance::new(m), &cfg).unwrap();
        let fd = (pd(&r + d.scale(h)) - pd(&r - d.scale(h))) / (2.0 * h);
        let g = pd_gradient(alpha, theta, &Covariance::new(r.clone()), &cfg).unwrap();
        let an: f64 = g.matrix.iter().zip(d.iter()).map(|(x, y)| (x.conj() * y).re).sum();
        worst = worst.max((an - fd).abs() / fd.abs());
    }
    verdict(worst <= 1e-5, format!("max relative error {worst:.2e} over 100 covariances (tol 1e-5)"))
}

/// Matched-filter simulation against the closed form at a fixed design.
fn detector_oracle() -> Verdict {
    let cfg = SceneConfig { n_tx: 8, n_rx: 8, false_alarm: 1e-2, ..SceneConfig::default() };
    let (pf, l) = (1e-2, 64);
    let channels = draw_channels(&cfg);
    let priors = TargetPriors::from_config(&cfg);
    let bf = baseline(BaselineKind::MaxEsinr, &cfg, &channels, &priors).unwrap();
    let theta = 2f64.to_radians();
    let alpha = alpha_for_pd(&bf, theta, 0.5, pf, l, &cfg).unwrap();
    // Closed form on the block: L snapshots accumulate L · tr(F R).
    let block = Covariance::new(bf.covariance().matrix().scale(l as f64));
    let analytic = detection_probability(alpha, theta, &block, &cfg).unwrap();
    let run = |alpha: f64, trials: usize, seed: u64| MatchedFilterRun {
        alpha: Complex64::new(alpha, 0.0),
        theta_true: theta,
        theta_probe: theta,
        pf,
        block_len: l,
        trials,
        seed,
    };
    let h1 = matched_filter_rate(&bf, &run(alpha, 100_000, 7), &cfg).unwrap();
    let h0 = matched_filter_rate(&bf, &run(0.0, 1_000_000, 8), &cfg).unwrap();
    let err = (h1.rate - analytic).abs();
    let pf_rel = (h0.rate - pf).abs() / pf;
    verdict(
        err <= 0.02 && pf_rel <= 0.2,
        format!(
            "P_d analytic {analytic:.4} empirical {:.4} (|err| {err:.4}, tol 0.02); P_fa {:.5} (rel err {pf_rel:.3}, tol 0.2)",
            h1.rate, h0.rate
        ),
    )
}

fn convergence(outcome: &ScaOutcome) -> Verdict {
    let mut prev = outcome.trace.initial_epd;
    let mut drop = 0.0f64;
    for r in &outcome.trace.records {
        drop = drop.max(prev - r.epd);
        prev = r.epd;
    }
    let last = outcome.trace.records.last().map_or(f64::NAN, |r| r.residual);
    let iters = outcome.trace.records.len();
    verdict(
        drop <= 1e-9 && outcome.termination == Termination::Converged && last < 1e-4 && iters <= 50,
        format!("{} after {iters} iterations, residual {last:.2e}, largest EP_d drop {drop:.1e}", outcome.termination),
    )
}

fn rank_one_identities(outcome: &ScaOutcome) -> Verdict {
    let mut worst = [0.0f64; 4];
    for r in &outcome.trace.records {
        let d = &r.diagnostics;
        worst[0] = worst[0].max(d.max_second_eig_ratio);
        worst[1] = worst[1].max(d.max_gain_rel_err);
        worst[2] = worst[2].max(-d.order_min_eig_rel);
        worst[3] = worst[3].max(d.recovery_rel_err);
    }
    let pass = !outcome.trace.records.is_empty()
        && worst[0] <= 1e-8
        && worst[1] <= 1e-9
        && worst[2] <= 1e-7
        && worst[3] <= 1e-6;
    verdict(
        pass,
        format!(
            "over {} iterations: eig ratio {:.1e}, gain {:.1e}, order {:.1e}, recovery {:.1e}",
            outcome.trace.records.len(),
            worst[0],
            worst[1],
            worst[2],
            worst[3]
        ),
    )
}

struct Point {
    gamma_db: f64,
    designs: Vec<(Scheme, Result<Beamformer, String>, Option<f64>)>,
}

fn scheme_point(gamma_db: f64, proposed: Option<&ScaOutcome>) -> Point {
    let cfg = SceneConfig { sinr_threshold_db: gamma_db, ..SceneConfig::default() };
    let channels = draw_channels(&cfg);
    let priors = TargetPriors::from_config(&cfg);
    let designs = Scheme::ALL
        .into_iter()
        .map(|scheme| {
            let bf = match (scheme, proposed) {
                (Scheme::Proposed, Some(o)) => Ok(o.beamformer.clone()),
                _ => design(scheme, &cfg, &channels, &priors).map_err(|e| e.to_string()),
            };
            let epd = bf.as_ref().ok().map(|b| expected_pd(&b.covariance(), &priors, &cfg).unwrap());
            (scheme, bf, epd)
        })
        .collect();
    Point { gamma_db, designs }
}

fn constraint_fidelity(points: &[Point]) -> Verdict {
    let mut checked = 0;
    let mut failures = Vec::new();
    for p in points {
        let cfg = SceneConfig { sinr_threshold_db: p.gamma_db, ..SceneConfig::default() };
        let channels = draw_channels(&cfg);
        for (scheme, bf, _) in &p.designs {
            match bf {
                Ok(bf) => {
                    checked += 1;
                    let check = check_beamformer(
                        bf,
                        &channels,
                        cfg.sinr_threshold_linear(),
                        cfg.total_power_w(),
                        cfg.comm_noise_w(),
                    );
                    if !check.ok() {
                        failures.push(format!("{} at {} dB: {:?}", scheme.name(), p.gamma_db, check.violations));
                    }
                }
                Err(e) if *scheme == Scheme::Proposed => failures.push(format!("proposed at {} dB: {e}", p.gamma_db)),
                Err(_) => {}
            }
        }
    }
    verdict(failures.is_empty() && checked > 0, format!("{checked} designs checked; {failures:?}"))
}

fn scheme_ordering(points: &[Point]) -> Verdict {
    let mut detail = Vec::new();
    let mut pass = true;
    for p in points {
        let proposed = p.designs[0].2;
        let mut row = format!("{} dB: proposed {:.6}", p.gamma_db, proposed.unwrap_or(f64::NAN));
        for (scheme, _, epd) in &p.designs[1..] {
            match (proposed, epd) {
                (Some(a), Some(b)) => {
                    pass &= a >= b - 1e-3;
                    row += &format!(", {} {b:.6}", scheme.name());
                }
                (None, _) => pass = false,
                (Some(_), None) => row += &format!(", {} infeasible", scheme.name()),
            }
        }
        detail.push(row);
    }
    verdict(pass, detail.join("; "))
}

fn power_monotonicity(at_default: &ScaOutcome) -> Verdict {
    let powers = [14.0, 17.0, 20.0, 23.0, 26.0];
    let mut epds = Vec::new();
    for p in powers {
        let cfg = SceneConfig { total_power_dbm: p, ..SceneConfig::default() };
        let epd = if p == cfg_default_power() {
            Ok(at_default.epd)
        } else {
            let channels = draw_channels(&cfg);
            let priors = TargetPriors::from_config(&cfg);
            sca_sdr(&cfg, &channels, &priors, &cfg.optimizer).map(|o| o.epd).map_err(|e| e.to_string())
        };
        epds.push(epd);
    }
    let values: Vec<f64> = epds.iter().map(|e| *e.as_ref().unwrap_or(&f64::NAN)).collect();
    let pass = values.iter().all(|v| v.is_finite()) && values.windows(2).all(|w| w[1] >= w[0] - 1e-3);
    let shown: Vec<String> = powers.iter().zip(&values).map(|(p, v)| format!("{p} dBm {v:.6}")).collect();
    verdict(pass, shown.join(", "))
}

fn cfg_default_power() -> f64 {
    SceneConfig::default().total_power_dbm
}

fn quadrature(proposed: &Beamformer) -> Verdict {
    let cfg = SceneConfig::default();
    let mut fine = cfg.clone();
    fine.target_prior.grid_m *= 2;
    fine.target_prior.grid_n *= 2;
    let coarse_priors = TargetPriors::from_config(&cfg);
    let fine_priors = TargetPriors::from_config(&fine);
    let mut worst = 0.0f64;
    for cov in [proposed.covariance(), Covariance::isotropic(cfg.n_tx, cfg.total_power_w())] {
        let a = expected_pd(&cov, &coarse_priors, &cfg).unwrap();
        let b = expected_pd(&cov, &fine_priors, &fine).unwrap();
        worst = worst.max((a - b).abs());
    }
    verdict(worst < 1e-3, format!("largest change {worst:.2e} on doubling (M, N) (tol 1e-3)"))
}

fn trivial_anchors() -> Verdict {
    let cfg = SceneConfig::default();
    let priors = TargetPriors::from_config(&cfg);
    let zero = expected_pd(&Covariance::zeros(cfg.n_tx), &priors, &cfg).unwrap();
    let iso = Covariance::isotropic(cfg.n_tx, cfg.total_power_w());
    let no_target = detection_probability(0.0, 0.3, &iso, &cfg).unwrap();
    let mut empty = cfg.clone();
    empty.users.clear();
    let omni = baseline(BaselineKind::Omni, &empty, &[], &TargetPriors::from_config(&empty)).unwrap();
    let angles: Vec<f64> = (0..=360).map(|i| (-90.0 + 0.5 * i as f64).to_radians()).collect();
    let pattern = beampattern(&omni.covariance(), &angles, &empty);
    let (lo, hi) = pattern.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let flat = hi / lo;
    verdict(
        zero == cfg.false_alarm && no_target == cfg.false_alarm && flat <= 1.0 + 1e-6,
        format!("EP_d(0) = {zero:e}, P_d(alpha = 0) = {no_target:e}, omni max/min {flat:.9}"),
    )
}

fn histogram_bytes(bf: &Beamformer, cfg: &SceneConfig) -> (f64, Vec<u8>) {
    let settings = MonteCarloSettings { trials: 1000, seed: cfg.rng_seed, ..MonteCarloSettings::default() };
    let report = monte_carlo_pd(bf, &PriorSampler::from_config(cfg), &settings, cfg).unwrap();
    let mut bytes = Vec::new();
    write_histogram_csv(&mut bytes, &report.histogram).unwrap();
    (report.mean_pd, bytes)
}

fn monte_carlo(point: &Point) -> Verdict {
    let cfg = SceneConfig { sinr_threshold_db: point.gamma_db, ..SceneConfig::default() };
    let proposed = point.designs[0].1.as_ref().unwrap();
    let Ok(reference) = point.designs[1].1.as_ref() else {
        return verdict(false, "max_sinr_0deg design failed".into());
    };
    let (mean_p, first) = histogram_bytes(proposed, &cfg);
    let (_, second) = histogram_bytes(proposed, &cfg);
    let (mean_r, _) = histogram_bytes(reference, &cfg);
    verdict(
        mean_p > mean_r && first == second,
        format!(
            "mean P_d proposed {mean_p:.6} vs max_sinr_0deg {mean_r:.6}; histogram CSV {}",
            if first == second { "identical" } else { "differs" }
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |id: usize, name: &'static str, v: Verdict| {
        println!("{} {id:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };

    report(1, "gradient vs finite differences", gradient_check());
    report(2, "matched filter vs closed form", detector_oracle());

    let cfg = SceneConfig::default();
    let outcome = sca_sdr(&cfg, &draw_channels(&cfg), &TargetPriors::from_config(&cfg), &cfg.optimizer);
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            println!("FAIL  3 outer-loop convergence: {e}");
            std::process::exit(1);
        }
    };
    report(3, "outer-loop convergence", convergence(&outcome));
    report(4, "rank-one extraction identities", rank_one_identities(&outcome));

    let points: Vec<Point> = [16.0, 20.0, 24.0]
        .into_iter()
        .map(|g| scheme_point(g, (g == cfg.sinr_threshold_db).then_some(&outcome)))
        .collect();
    report(5, "constraint fidelity", constraint_fidelity(&points));
    report(6, "scheme ordering", scheme_ordering(&points));
    report(7, "power monotonicity", power_monotonicity(&outcome));
    report(8, "quadrature convergence", quadrature(&outcome.beamformer));
    report(9, "trivial anchors", trivial_anchors());
    report(10, "Monte-Carlo histogram", monte_carlo(&points[2]));

    let failed: Vec<usize> = results.iter().filter(|(_, _, v)| !v.pass).map(|(id, _, _)| *id).collect();
    println!("{} of {} criteria passed in {:.1} s", results.len() - failed.len(), results.len(), start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
