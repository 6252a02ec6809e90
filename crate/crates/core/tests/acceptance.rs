//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::process::{Command, ExitCode, Stdio};
use std::time::Instant;

use fso_sim::atmosphere::{fog_attenuation_db_per_km, kruse_exponent};
use fso_sim::channel_trace::{generate_trace, trace_stats, FadingKind, FadingModel};
use fso_sim::config::{presets, FadingSelection, NoiseMode};
use fso_sim::linkbudget::optical_loss_db;
use fso_sim::modem::Pam4Config;
use fso_sim::pat::{measured_snr, run_tracking_loop, PatConfig, QdGeometry};
use fso_sim::pipeline::{payload_roundtrip, run_endtoend, simulate_awgn};
use fso_sim::spatial_filter::{awgn_ber, filtered_snr, filtering_ber_demo, noise_for_ber, ApertureGrid, FilterConfig};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use statrs::distribution::{Binomial, Continuous, ContinuousCDF, DiscreteCDF, Gamma, LogNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn optical_loss() -> Outcome {
    let l_o = optical_loss_db(0.8125, 0.8).map_err(|e| e.to_string())?;
    check((l_o - 1.87).abs() <= 0.01 && (l_o - 2.0).abs() < 0.15, format!("L_o = {l_o:.4} dB"))
}

fn kruse_oracle(v_km: f64, lambda_nm: f64) -> f64 {
    let q = if v_km > 50.0 {
        1.6
    } else if v_km >= 6.0 {
        1.3
    } else {
        0.585 * v_km.cbrt()
    };
    (3.91 / v_km) * (lambda_nm / 550.0).powf(-q) * 10.0 * std::f64::consts::E.log10()
}

fn kruse() -> Outcome {
    let mut worst = 0.0f64;
    for v in [10.0, 3.0] {
        let got = fog_attenuation_db_per_km(v, 1550e-9).map_err(|e| e.to_string())?;
        let want = kruse_oracle(v, 1550.0);
        worst = worst.max((got - want).abs() / want);
    }
    let mut regimes = true;
    for v in [6.0, 6.5, 10.0, 30.0] {
        regimes &= kruse_exponent(v) == 1.3;
    }
    for v in [0.5, 3.0, 5.9, 5.999] {
        regimes &= (kruse_exponent(v) - 0.585 * v.cbrt()).abs() < 1e-15;
    }
    check(worst < 1e-9 && regimes, format!("max rel err {worst:.2e}, regimes ok = {regimes}"))
}

fn sqrt_m_gain() -> Outcome {
    let g = QdGeometry::default();
    let trials = 100_000;
    let base = measured_snr(1, trials, &g, 1.0, 0.05, 101).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for m in [2usize, 4, 10, 25] {
        let s = measured_snr(m, trials, &g, 1.0, 0.05, 101 + m as u64).map_err(|e| e.to_string())?;
        let ratio = s / base / (m as f64).sqrt();
        worst = worst.max((ratio - 1.0).abs());
        parts.push(format!("m={m}:{ratio:.3}"));
    }
    check(worst < 0.05, format!("ratio/sqrt(m) {}; max dev {:.3}", parts.join(" "), worst))
}

fn tracking_residual() -> Outcome {
    let seeds = 50u64;
    let mut wins = 0u64;
    let mut worst_m10 = 0.0f64;
    for seed in 0..seeds {
        let run = |m: usize| {
            let cfg = PatConfig { m, ..PatConfig::default() };
            run_tracking_loop(&cfg, seed).map(|r| r.summary.residual_rms_m)
        };
        let r1 = run(1).map_err(|e| e.to_string())?;
        let r10 = run(10).map_err(|e| e.to_string())?;
        if r10 < r1 {
            wins += 1;
        }
        worst_m10 = worst_m10.max(r10);
    }
    let null = Binomial::new(0.5, seeds).unwrap();
    let p_value = 1.0 - null.cdf(wins - 1);
    check(
        p_value < 0.05 && worst_m10 < 1e-3,
        format!("m=10 better in {wins}/{seeds} (p = {p_value:.2e}), worst m=10 residual {worst_m10:.3e} m"),
    )
}

fn spatial_filtering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=8usize);
        let cells: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..10.0)).collect();
        let noise = rng.random_range(0.01..5.0);
        let grid = ApertureGrid::new(n, cells.clone(), noise).map_err(|e| e.to_string())?;
        let snr = filtered_snr(&grid).map_err(|e| e.to_string())?;
        let mut max = f64::MIN;
        let mut sum = 0.0;
        for &c in &cells {
            max = max.max(c);
            sum += c;
        }
        let brute = (max / (noise / (n * n) as f64)) / (sum / noise);
        worst = worst.max((snr.gain - brute).abs() / brute);
    }
    let rep = filtering_ber_demo(&FilterConfig::default(), &Pam4Config::default(), 10_000_000, 2024)
        .map_err(|e| e.to_string())?;
    let (off, on) = (rep.unfiltered.ber_counted, rep.filtered.ber_counted);
    check(
        worst < 1e-12 && (5e-4..=5e-3).contains(&off) && on * 10.0 <= off,
        format!("BER {off:.3e} -> {on:.3e} (gain {:.3}); gain formula max rel err {worst:.1e}", rep.snr.gain),
    )
}

fn end_to_end() -> Outcome {
    let mut cfg = presets::clear();
    cfg.run.symbols = 10_000_000;
    let r = run_endtoend(&cfg).map_err(|e| e.to_string())?;
    let lognormal = r.fading.as_ref().map(|f| f.kind) == Some(FadingKind::LogNormal);
    let ber = r.ber.ber_counted;
    check(
        lognormal && (2e-5..=5e-4).contains(&ber) && r.ber.bit_errors >= 200,
        format!("BER {ber:.3e} with {} errors, log-normal = {lognormal}", r.ber.bit_errors),
    )
}

fn estimator_vs_counted() -> Outcome {
    let modem = Pam4Config::default();
    let mut worst = 0.0f64;
    for (k, target) in [1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2].into_iter().enumerate() {
        let sigma = noise_for_ber(&modem.levels, target).map_err(|e| e.to_string())?;
        let truth = awgn_ber(&modem.levels, sigma);
        if !(1e-5 * 0.999..=1e-2 * 1.001).contains(&truth) {
            return Err(format!("grid point {target:e} has true BER {truth:e}"));
        }
        let symbols = (1000.0 / truth).clamp(1e5, 1e7) as u64;
        let rep = simulate_awgn(&modem, symbols, sigma, 300 + k as u64).map_err(|e| e.to_string())?;
        let est = rep.ber_estimated.ok_or("no estimate")?;
        if rep.bit_errors == 0 {
            return Err(format!("no errors counted at BER {truth:e}"));
        }
        worst = worst.max((est.log10() - rep.ber_counted.log10()).abs());
    }
    check(worst <= 0.3, format!("max |log10 est - log10 counted| = {worst:.3}"))
}

/// CDF of the unit-mean gamma-gamma law by quadrature over the first factor.
fn gamma_gamma_cdf(x: f64, ga: &Gamma, gb: &Gamma) -> f64 {
    let (lo, hi) = (ga.inverse_cdf(1e-13).ln(), ga.inverse_cdf(1.0 - 1e-13).ln());
    let panels = 2000;
    let h = (hi - lo) / panels as f64;
    let f = |t: f64| {
        let y = t.exp();
        ga.pdf(y) * y * gb.cdf(x / y)
    };
    let mut s = f(lo) + f(hi);
    for i in 1..panels {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn ks_distance<F: Fn(f64) -> f64>(gains: &[f64], cdf: F) -> f64 {
    let mut sorted = gains.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let probes = 2000;
    let mut d = 0.0f64;
    for k in 0..probes {
        let i = k * (n - 1) / (probes - 1);
        let f = cdf(sorted[i]);
        d = d.max((f - i as f64 / n as f64).abs()).max((f - (i + 1) as f64 / n as f64).abs());
    }
    d
}

fn trace_statistics() -> Outcome {
    let (rate, tau, n) = (1000.0, 0.01, 1_000_000usize);
    let mut lines = Vec::new();
    let mut ok = true;
    for (kind, rytov) in [(FadingKind::LogNormal, 0.25), (FadingKind::GammaGamma, 0.67)] {
        let model = FadingModel::from_rytov(kind, rytov).map_err(|e| e.to_string())?;
        let trace = generate_trace(&model, tau, rate, n as f64 / rate, 77).map_err(|e| e.to_string())?;
        let stats = trace_stats(&trace.gains, rate).map_err(|e| e.to_string())?;
        let ks = match kind {
            FadingKind::LogNormal => {
                let var = model.sigma_i2.ln_1p();
                let ln = LogNormal::new(-0.5 * var, var.sqrt()).unwrap();
                ks_distance(&trace.gains, |x| ln.cdf(x))
            }
            FadingKind::GammaGamma => {
                let (a, b) = (model.alpha.unwrap(), model.beta.unwrap());
                let (ga, gb) = (Gamma::new(a, a).unwrap(), Gamma::new(b, b).unwrap());
                ks_distance(&trace.gains, |x| gamma_gamma_cdf(x, &ga, &gb))
            }
        };
        let tau_hat = stats.coherence_time_s.unwrap_or(f64::NAN);
        let tau_err = (tau_hat / tau - 1.0).abs();
        ok &= trace.gains.len() == n && (stats.mean - 1.0).abs() < 0.02 && ks < 0.01 && tau_err <= 0.15;
        lines.push(format!("{kind:?}: mean {:.4}, KS {ks:.4}, tau err {:.1}%", stats.mean, 100.0 * tau_err));
    }
    check(ok, lines.join("; "))
}

fn payload_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (src, dst) = (dir.path().join("in.bin"), dir.path().join("out.bin"));
    let mut data = vec![0u8; 10 << 20];
    ChaCha8Rng::seed_from_u64(9).fill_bytes(&mut data);
    std::fs::write(&src, &data).map_err(|e| e.to_string())?;
    let mut cfg = presets::clear();
    cfg.run.fading = FadingSelection::None;
    cfg.run.noise = NoiseMode::Fixed { std: 0.0 };
    let rep = payload_roundtrip(&src, &cfg, &dst).map_err(|e| e.to_string())?;
    let out = std::fs::read(&dst).map_err(|e| e.to_string())?;
    let (h_in, h_out) = (Sha256::digest(&data), Sha256::digest(&out));
    check(
        h_in == h_out && rep.ber.bit_errors == 0,
        format!("{} bytes, sha256 equal = {}", out.len(), h_in == h_out),
    )
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: [&[&str]; 3] = [
        &["transmit", "--scenario", "hazy", "--symbols", "300000", "--format", "json"],
        &["trace", "--scenario", "clear", "--duration", "2", "--rate", "10000", "--format", "csv"],
        &["sweep", "--scenario", "clear", "--axis", "weather.visibility_km", "--values", "2,5,10", "--set", "run.symbols=100000"],
    ];
    for (k, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for threads in ["1", "4"] {
            let path = dir.path().join(format!("run{k}_{threads}"));
            let status = Command::new(env!("CARGO_BIN_EXE_fso-sim"))
                .args(*args)
                .args(["--seed", "42", "--no-timestamp", "--threads", threads, "-o"])
                .arg(&path)
                .stdout(Stdio::null())
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("{} exited with {status}", args[0]));
            }
            outputs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            return Err(format!("{} output differs between 1 and 4 threads", args[0]));
        }
    }
    Ok("transmit, trace and sweep byte-identical across 1 and 4 threads".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("optical loss", optical_loss),
        ("kruse presets", kruse),
        ("sqrt(m) snr gain", sqrt_m_gain),
        ("tracking residual", tracking_residual),
        ("spatial filtering", spatial_filtering),
        ("end-to-end clear link", end_to_end),
        ("ber estimator vs counted", estimator_vs_counted),
        ("trace statistics", trace_statistics),
        ("payload round trip", payload_round_trip),
        ("cli determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("acceptance {:>2} PASS {name} ({secs:.1}s): {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("acceptance {:>2} FAIL {name} ({secs:.1}s): {d}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
