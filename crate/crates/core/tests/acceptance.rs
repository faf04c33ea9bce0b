//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};

use arls::controller::{replay, LampBank};
use arls::detection::{centroid, ForegroundMask};
use arls::harness::{
    correlation_band_check, delta_v_pct, run_batch, run_trial, run_trials, FailureReason, Scenario,
};
use arls::imaging::SceneConfig;
use arls::kinematics::predict;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const TABLE: [(f64, f64, f64); 5] = [
    (0.93, 1.03, 10.75),
    (1.32, 1.63, 23.48),
    (1.41, 1.85, 31.21),
    (1.52, 2.19, 44.08),
    (2.03, 1.13, 44.33),
];

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scenario(speed: f64, blur: f64) -> Scenario {
    let scene = SceneConfig {
        true_speed: speed,
        blur_fraction: blur,
        ..SceneConfig::default()
    };
    Scenario::from_scene(scene).expect("valid scenario")
}

fn c1_delta_v() -> Outcome {
    let mut got = Vec::new();
    for (v_s, v_arls, want) in TABLE {
        let d = delta_v_pct(v_s, v_arls).map_err(|e| e.to_string())?;
        check((d - want).abs() <= 0.01, || format!("({v_s}, {v_arls}) gave {d:.4}, want {want}"))?;
        got.push(format!("{d:.2}"));
    }
    Ok(got.join(" "))
}

fn c2_band() -> Outcome {
    let pairs: Vec<(f64, f64)> = TABLE.iter().map(|&(s, a, _)| (s, a)).collect();
    let flags = correlation_band_check(&pairs, 45.0);
    check(flags.iter().all(|&f| f), || format!("table pairs {flags:?}"))?;
    let outside = correlation_band_check(&[(1.0, 1.5)], 45.0);
    check(outside == [false], || "(1.0, 1.5) accepted".into())?;
    Ok("5/5 inside, (1.0, 1.5) outside".into())
}

fn c3_centroid_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA815);
    let masks = 1500;
    for n in 0..masks {
        let w = rng.gen_range(1..=64);
        let h = rng.gen_range(1..=64);
        let density: f64 = rng.gen_range(0.0..1.0);
        let cells: Vec<u8> = (0..w * h).map(|_| u8::from(rng.gen_bool(density))).collect();
        let mask = ForegroundMask::from_cells(w, h, &cells, n).ok_or("bad mask")?;

        let (mut count, mut sx, mut sy) = (0usize, 0u64, 0u64);
        for y in 0..h {
            for x in 0..w {
                if cells[y * w + x] == 1 {
                    count += 1;
                    sx += x as u64;
                    sy += y as u64;
                }
            }
        }
        let d = centroid(&mask);
        check(d.area() == count, || format!("mask {n}: area {} vs {count}", d.area()))?;
        if count == 0 {
            check(!d.is_detected(), || format!("mask {n}: empty mask detected"))?;
        } else {
            let want = (sx as f64 / count as f64, sy as f64 / count as f64);
            check(d.centroid() == Some(want), || format!("mask {n}: {:?} vs {want:?}", d.centroid()))?;
        }
    }
    Ok(format!("{masks} masks exact"))
}

fn c4_rectangle() -> Outcome {
    let mut mask = ForegroundMask::empty(20, 10, 0);
    for y in 0..5 {
        for x in 0..10 {
            mask.set(x, y, true);
        }
    }
    let d = centroid(&mask);
    let (x, y) = d.centroid().ok_or("rectangle not detected")?;
    let one_based = (x + 1.0, y + 1.0);
    check(d.area() == 50, || format!("A = {}", d.area()))?;
    check(one_based == (5.5, 3.0), || format!("centroid {one_based:?}"))?;
    Ok("A = 50, centroid (5.5, 3.0)".into())
}

fn c5_clean_recovery() -> Outcome {
    let s = scenario(0.93, 0.0);
    check(s.controller.lead_time == 0.12 && s.controller.processing_latency == 0.0, || {
        "unexpected controller defaults".into()
    })?;
    let mut worst_dv: f64 = 0.0;
    let mut worst_offset = f64::NEG_INFINITY;
    for trial in 0..10 {
        let r = run_trial(&s, trial).map_err(|e| e.to_string())?;
        let v = r.v_arls.ok_or_else(|| format!("trial {trial}: no speed"))?;
        let dv = (v - 0.93).abs() / 0.93 * 100.0;
        check(dv <= 3.0, || format!("trial {trial}: v_mean {v:.4} off by {dv:.2}%"))?;
        worst_dv = worst_dv.max(dv);
        for (lamp, o) in r.offsets.iter().enumerate() {
            let o = o.ok_or_else(|| format!("trial {trial}: lamp {lamp} never lit"))?;
            check(o <= 0.0, || format!("trial {trial}: lamp {lamp} offset {o:.4} m"))?;
            worst_offset = worst_offset.max(o);
        }
    }
    Ok(format!("max dv {worst_dv:.2}%, max offset {worst_offset:.4} m over 10 phases"))
}

fn c6_performance() -> Outcome {
    let mut notes = Vec::new();
    for v in [0.93, 1.32] {
        let p = run_batch(&scenario(v, 0.0)).map_err(|e| e.to_string())?.performance_pct;
        check(p == 100.0, || format!("clean {v} m/s gave {p}%"))?;
        notes.push(format!("{v}: {p:.0}%"));
    }

    let mut perf = Vec::new();
    for b in [0.0, 0.25, 0.5] {
        perf.push(run_batch(&scenario(0.93, b)).map_err(|e| e.to_string())?.performance_pct);
    }
    check(perf.windows(2).all(|w| w[0] >= w[1]), || format!("blur sweep {perf:?}"))?;
    notes.push(format!("blur 0/25/50%: {:.0}/{:.0}/{:.0}%", perf[0], perf[1], perf[2]));

    let base = run_batch(&scenario(2.03, 0.0)).map_err(|e| e.to_string())?;
    let mut slow = scenario(2.03, 0.0);
    slow.controller.processing_latency = 0.5;
    let late = run_batch(&slow).map_err(|e| e.to_string())?;
    let late_switches = late
        .failures
        .iter()
        .find(|(r, _)| *r == FailureReason::LateSwitch)
        .map_or(0, |&(_, n)| n);
    check(late.performance_pct < base.performance_pct, || {
        format!("latency 0.5 s: {}% vs baseline {}%", late.performance_pct, base.performance_pct)
    })?;
    check(late_switches > 0, || "no LateSwitch failures".into())?;
    notes.push(format!(
        "2.03 m/s latency 0.5 s: {:.0}% vs {:.0}%, {late_switches} LateSwitch",
        late.performance_pct, base.performance_pct
    ));
    Ok(notes.join("; "))
}

fn c7_register() -> Outcome {
    let mut checked = 0;
    for (v, b) in [(0.93, 0.0), (1.41, 0.33), (2.03, 0.55)] {
        let mut s = scenario(v, b);
        s.trials = 20;
        for r in run_trials(&s).map_err(|e| e.to_string())? {
            let replayed = replay(&r.events);
            check(replayed == r.final_register, || {
                format!("v {v} trial {}: replay 0x{replayed:02X} vs 0x{:02X}", r.trial_index, r.final_register)
            })?;
            checked += 1;
        }
    }
    let mut bank = LampBank::new(arls::controller::default_positions(1.0)).map_err(|e| e.to_string())?;
    bank.trigger(0, 0).map_err(|e| e.to_string())?;
    bank.trigger(3, 0).map_err(|e| e.to_string())?;
    check(bank.port_register() == 0x09, || format!("lamps {{0,3}} gave 0x{:02X}", bank.port_register()))?;
    Ok(format!("{checked} trials replayed, {{0,3}} -> 0x09"))
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let path = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_arls"))
            .args(["simulate", "--trials", "40", "--speed", "1.41", "--blur", "0.33", "--noise", "6"])
            .args(["--seed", "7", "--out"])
            .arg(&path)
            .output()
            .map_err(|e| e.to_string())?;
        check(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        std::fs::read(&path).map_err(|e| e.to_string())
    };
    let a = run("a.csv")?;
    let b = run("b.csv")?;
    check(a == b, || "CSV outputs differ".into())?;
    Ok(format!("{} identical bytes", a.len()))
}

fn c9_prediction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let r = rng.gen_range(-5.0..5.0);
        let v = rng.gen_range(-3.0..3.0);
        let a = rng.gen_range(0.0..2.0);
        let b = rng.gen_range(0.0..2.0);
        let err = (predict(predict(r, v, a), v, b) - predict(r, v, a + b)).abs();
        check(err <= 1e-12, || format!("({r}, {v}, {a}, {b}) error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("max error {worst:e}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("speed error column", c1_delta_v),
        ("45% correlation band", c2_band),
        ("centroid vs brute force", c3_centroid_oracle),
        ("10x5 rectangle", c4_rectangle),
        ("clean speed recovery", c5_clean_recovery),
        ("performance protocol", c6_performance),
        ("event replay and register", c7_register),
        ("simulate determinism", c8_determinism),
        ("prediction linearity", c9_prediction),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = std::time::Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail} ({secs:.2} s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why} ({secs:.2} s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
