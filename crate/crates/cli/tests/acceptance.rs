//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the terminal; exits non-zero on any FAIL.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use dcstream::encoder::{init_weights, EncoderConfig, EncoderWeights};
use dcstream::features::{features_from_bytes, features_to_bytes, load_features, save_features, synthetic_features};
use dcstream::masking::{chunk_mask, window_mask, LeftContext};
use dcstream_cli::config::LeftMs;
use dcstream_cli::sweep::{run_sweep, SweepGrid, SweepInputs};
use dcstream_cli::verify::{self, Check};

struct Outcome {
    passed: bool,
    detail: String,
}

fn from_checks(checks: &[Check]) -> Outcome {
    Outcome {
        passed: checks.iter().all(|c| c.passed),
        detail: checks
            .iter()
            .map(|c| format!("{}{}: {}", if c.passed { "" } else { "FAILED " }, c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn within(limit: Duration, start: Instant, mut outcome: Outcome) -> Outcome {
    let took = start.elapsed();
    if took > limit {
        outcome.passed = false;
    }
    outcome.detail = format!("{} [{:.1}s of {}s]", outcome.detail, took.as_secs_f64(), limit.as_secs());
    outcome
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn desk() -> (EncoderConfig, EncoderWeights) {
    let cfg = EncoderConfig::default();
    let w = init_weights(&cfg, 11).expect("desk weights");
    (cfg, w)
}

fn masks() -> Outcome {
    let start = Instant::now();
    let chunk_ok = chunk_mask(20, 4, LeftContext::Frames(8)).to_ascii() == golden("chunk_mask_20_4_8.txt");
    let window_ok = window_mask(20, 3, 8).to_ascii() == golden("window_mask_20_3_8.txt");
    let mut checks = vec![
        Check::new("golden chunk(20,4,8)", chunk_ok, "file match"),
        Check::new("golden window(20,3,8)", window_ok, "file match"),
    ];
    checks.push(verify::mask_intervals(64, 16));
    within(Duration::from_secs(5), start, from_checks(&checks))
}

fn lookahead() -> Outcome {
    let start = Instant::now();
    let (cfg, w) = desk();
    let outcome = verify::lookahead_probes(&cfg, &w, 500, 2024);
    within(Duration::from_secs(60), start, from_checks(&verify::probe_checks(&outcome)))
}

fn dcconv() -> Outcome {
    from_checks(&[verify::dcconv_constants(), verify::dcconv_single_chunk(100, 7)])
}

fn equivalence() -> Outcome {
    let start = Instant::now();
    let (cfg, w) = desk();
    let d64 = verify::streaming_deviation::<f64>(&cfg, &w, 50, 256, 31).expect("f64 run");
    let d32 = verify::streaming_deviation::<f32>(&cfg, &w, 50, 256, 31).expect("f32 run");
    let checks = [
        Check::new("f64 stream vs offline", d64 <= 1e-10, format!("max dev {d64:.3e} (tol 1e-10)")),
        Check::new("f32 stream vs offline", d32 <= 1e-4, format!("max dev {d32:.3e} (tol 1e-4)")),
        verify::conservation(&cfg, &w, 100, 32),
    ];
    within(Duration::from_secs(120), start, from_checks(&checks))
}

fn latency() -> Outcome {
    from_checks(&[verify::latency_anchor(), verify::latency_monotone()])
}

fn ctc() -> Outcome {
    let start = Instant::now();
    let mut checks = verify::ctc_oracle(200, 5);
    checks.push(verify::ctc_chunking(100, 6));
    within(Duration::from_secs(60), start, from_checks(&checks))
}

fn sweep_trend() -> Outcome {
    let cfg = EncoderConfig {
        precision: dcstream::Precision::Double,
        ..EncoderConfig::default()
    };
    let weights: Vec<EncoderWeights> = (0..10).map(|s| init_weights(&cfg, 100 + s).unwrap()).collect();
    let utterances = synthetic_features(2, 512, cfg.input_dim, 9);
    let inputs = SweepInputs {
        config: &cfg,
        weights: &weights,
        utterances: &utterances,
        transcripts: None,
        beam_size: 1,
    };
    let by_chunk = SweepGrid {
        chunk_ms: vec![320.0, 640.0, 1280.0, 2560.0],
        overlaps: vec![0.5],
        left_ctx_ms: vec![LeftMs::Ms(1280.0)],
    };
    let by_left = SweepGrid {
        chunk_ms: vec![640.0],
        overlaps: vec![0.5],
        left_ctx_ms: vec![LeftMs::Ms(0.0), LeftMs::Ms(640.0), LeftMs::Ms(1280.0), LeftMs::Ms(2560.0)],
    };
    let div = |grid: &SweepGrid| -> Vec<f64> {
        run_sweep::<f64>(&inputs, &grid.specs(40.0).unwrap())
            .unwrap()
            .into_iter()
            .map(|r| r.out_divergence)
            .collect()
    };
    let c = div(&by_chunk);
    let l = div(&by_left);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" > ");
    from_checks(&[
        Check::new("divergence vs chunk", c.windows(2).all(|w| w[1] < w[0]), fmt(&c)),
        Check::new("divergence vs left context", l.windows(2).all(|w| w[1] <= w[0]), fmt(&l)),
    ])
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dcstream"))
        .args(args)
        .output()
        .expect("spawn dcstream")
}

fn determinism_and_formats() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let p = |name: &str| -> PathBuf { dir.path().join(name) };
    let s = |path: &PathBuf| path.to_str().unwrap().to_owned();
    let mut checks = Vec::new();

    let (a, b) = (p("a.dcwt"), p("b.dcwt"));
    let ok_a = cli(&["gen-weights", "--seed", "5", "--out", &s(&a)]).status.success();
    let ok_b = cli(&["gen-weights", "--seed", "5", "--out", &s(&b)]).status.success();
    let bytes_a = std::fs::read(&a).unwrap_or_default();
    let bytes_b = std::fs::read(&b).unwrap_or_default();
    checks.push(Check::new(
        "gen-weights reproducible",
        ok_a && ok_b && !bytes_a.is_empty() && bytes_a == bytes_b,
        format!("{} bytes", bytes_a.len()),
    ));

    let loaded = EncoderWeights::load(&a);
    let dcwt_ok = loaded.as_ref().is_ok_and(|w| {
        w.to_bytes() == bytes_a && *w == init_weights(&EncoderConfig::default(), 5).unwrap()
    });
    checks.push(Check::new("DCWT round-trip", dcwt_ok, "load -> identical tensors and bytes"));

    let utts = synthetic_features(3, 33, 80, 1);
    let f = p("x.dcft");
    save_features(&f, &utts).unwrap();
    let dcft_ok = load_features(&f).is_ok_and(|back| back == utts)
        && features_from_bytes(&features_to_bytes(&utts).unwrap()).is_ok_and(|back| back == utts);
    checks.push(Check::new("DCFT round-trip", dcft_ok, "3 utterances, bitwise equal"));

    let desk = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    let out = cli(&["verify", "--suite", "all", "--config", desk.to_str().unwrap()]);
    let summary = String::from_utf8_lossy(&out.stdout).lines().last().unwrap_or("").to_owned();
    checks.push(Check::new("verify --suite all", out.status.code() == Some(0), summary));
    from_checks(&checks)
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 mask goldens and intervals", masks),
        ("2 look-ahead enforcement", lookahead),
        ("3 dcconv constants", dcconv),
        ("4 streaming/offline equivalence", equivalence),
        ("5 latency anchor", latency),
        ("6 ctc oracle", ctc),
        ("7 sweep trend", sweep_trend),
        ("8 determinism and formats", determinism_and_formats),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = run();
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!("{tag}  criterion {name}: {}", outcome.detail);
        failed += usize::from(!outcome.passed);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
