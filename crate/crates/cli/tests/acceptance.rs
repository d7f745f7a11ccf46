//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails. Training criteria run the real
//! desk-scale configurations, so a full pass takes tens of minutes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use sonic_core::gradients::{gradient_check, GRADCHECK_STEP};
use sonic_core::operator::{NetworkConfig, SonicNetwork};
use sonic_core::oracle::suite::{
    check_absorbed_identity, check_parameter_count, check_resolution_invariance, check_s4nd_reduction,
    check_stability_bound, check_symbol_convolution, Check,
};
use sonic_core::tasks::TaskKind;
use sonic_core::train::{generate_split, Split, TrainConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self { passed: false, detail: format!("error: {e}") }
    }
}

fn from_check(c: &Check) -> Outcome {
    Outcome::new(c.passed, format!("measured {:.3e} (bound {:.0e}) {}", c.measured, c.bound, c.detail))
}

fn within(c: Check, seconds: f64) -> Outcome {
    let mut o = from_check(&c);
    o.passed &= c.seconds < seconds;
    o.detail += &format!(" in {:.2}s (limit {seconds}s)", c.seconds);
    o
}

fn work_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Runs the CLI single-threaded; `Err` carries its stderr tail.
fn sonic(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sonic"))
        .args(args)
        .current_dir(dir)
        .env("SONIC_THREADS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        let err = String::from_utf8_lossy(&out.stderr);
        Err(format!("sonic {} failed: {}", args.join(" "), err.lines().last().unwrap_or("")))
    }
}

fn config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

/// `(kind, level) -> primary metric` from a robustness CSV.
fn robustness(path: &Path) -> Result<Vec<(String, f64, f64)>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .skip(1)
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            let num = |i: usize| cells.get(i).and_then(|c| c.parse::<f64>().ok()).ok_or(format!("bad row {l}"));
            Ok((cells[0].to_owned(), num(1)?, num(3)?))
        })
        .collect()
}

fn lookup(rows: &[(String, f64, f64)], kind: &str, level: f64) -> Result<f64, String> {
    rows.iter()
        .find(|r| r.0 == kind && r.1 == level)
        .map(|r| r.2)
        .ok_or(format!("no {kind} {level} row"))
}

// ------------------------------------------------------------------ criteria

fn gradcheck() -> Result<Outcome, String> {
    let t = Instant::now();
    let cfg = NetworkConfig {
        in_channels: 2,
        width: 2,
        modes: 2,
        depth: 2,
        out_channels: TaskKind::SynthShape.num_classes(),
        dim: 2,
        gain_normalize: true,
        mode_dropout_rate: 0.0,
    };
    let e = |e: sonic_core::SonicError| e.to_string();
    let net = SonicNetwork::init(&cfg, 0).map_err(e)?;
    let batch: Vec<_> = generate_split(TaskKind::SynthShape, 16, 0, Split::Train, 2)
        .map_err(e)?
        .iter()
        .map(|s| s.with_channels(2))
        .collect::<Result<_, _>>()
        .map_err(e)?;
    let loss = TrainConfig::default().loss_for(TaskKind::SynthShape, 16).map_err(e)?;
    let report = gradient_check(&net, &batch, &loss, GRADCHECK_STEP).map_err(e)?;
    let secs = t.elapsed().as_secs_f64();
    Ok(Outcome::new(
        report.max_rel < 1e-4 && secs < 60.0,
        format!("max relative error {:.3e} (bound 1e-4, h = {GRADCHECK_STEP:.0e}) in {secs:.2}s (limit 60s)", report.max_rel),
    ))
}

fn stability() -> Outcome {
    let c = check_stability_bound(100_000);
    Outcome::new(
        c.passed,
        format!("max |T| = {:.15} (bound 1 + 1e-12) over 100000 evaluations", c.measured),
    )
}

fn halligalli(dir: &Path) -> Result<Outcome, String> {
    let t = Instant::now();
    sonic(dir, &["train", "--task", "halligalli", "--size", "32", "--seed", "0", "--out", "hg_sonic"])?;
    let conv = config(dir, "conv.json", r#"{"model": "conv"}"#);
    sonic(dir, &["train", "--config", &conv, "--task", "halligalli", "--size", "32", "--seed", "0", "--out", "hg_conv"])?;
    let secs = t.elapsed().as_secs_f64();
    let sonic_acc = read_json(&dir.join("hg_sonic/summary.json"))?["best"]["accuracy"].as_f64().ok_or("no accuracy")?;
    let conv_summary = read_json(&dir.join("hg_conv/summary.json"))?;
    let conv_acc = conv_summary["best"]["accuracy"].as_f64().ok_or("no accuracy")?;
    let sonic_params = read_json(&dir.join("hg_sonic/summary.json"))?["parameters"].clone();
    Ok(Outcome::new(
        sonic_acc >= 0.90 && conv_acc <= 0.60 && secs < 1800.0,
        format!(
            "sonic val accuracy {sonic_acc:.4} (>= 0.90, {sonic_params} params), conv {conv_acc:.4} (<= 0.60, {} params), {secs:.0}s (limit 1800s)",
            conv_summary["parameters"]
        ),
    ))
}

/// 5-epoch moving average of the training loss never rises over the first 20 epochs.
fn loss_trend(metrics: &Path) -> Result<Outcome, String> {
    let text = fs::read_to_string(metrics).map_err(|e| e.to_string())?;
    let train: Vec<f64> = text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(1) == Some("train"))
        .take(20)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    if train.len() < 20 {
        return Err(format!("only {} training epochs logged", train.len()));
    }
    let ma: Vec<f64> = train.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    let worst = ma.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(Outcome::new(
        worst <= 0.0,
        format!("largest rise of the moving average {worst:.3e}, from {:.4} to {:.4}", ma[0], ma[ma.len() - 1]),
    ))
}

fn synthshape(dir: &Path) -> Result<(Outcome, Outcome), String> {
    sonic(dir, &["train", "--task", "synthshape", "--size", "32", "--seed", "0", "--out", "ss"])?;
    sonic(dir, &["eval", "--model", "ss/model.json"])?;
    let val = read_json(&dir.join("ss/summary.json"))?["best"]["mean_dice"].as_f64().ok_or("no dice")?;
    let rows = robustness(&dir.join("ss/eval/robustness.csv"))?;
    let clean = lookup(&rows, "clean", 0.0)?;
    let translate: Vec<f64> = rows.iter().filter(|r| r.0 == "translate").map(|r| r.2).collect();
    let worst_shift = translate.iter().map(|d| (clean - d).abs()).fold(0.0, f64::max);
    let noise = [lookup(&rows, "noise", 0.1)?, lookup(&rows, "noise", 0.2)?, lookup(&rows, "noise", 0.3)?];
    let monotone = noise[0] >= noise[1] && noise[1] >= noise[2];
    let ok = val >= 0.95 && !translate.is_empty() && worst_shift <= 0.10 && monotone;
    let detail = format!(
        "clean val Dice {val:.4} (>= 0.95); test clean {clean:.4}, translation rows {translate:.4?} within {worst_shift:.4} (<= 0.10); noise 0.1/0.2/0.3 Dice {:.4}/{:.4}/{:.4} (non-increasing)",
        noise[0], noise[1], noise[2]
    );
    Ok((Outcome::new(ok, detail), loss_trend(&dir.join("ss/metrics.csv"))?))
}

fn bench(dir: &Path) -> Result<Outcome, String> {
    let out = sonic(dir, &["bench", "--dims", "64,64", "--dims", "128,128", "--out", "bench"])?;
    let medians: Vec<f64> = out.lines().filter_map(|l| l.split(',').nth(2)?.parse().ok()).collect();
    let [small, large] = medians[..] else {
        return Err(format!("unexpected bench output: {out}"));
    };
    let ratio = large / small;
    Ok(Outcome::new(
        ratio < 5.0,
        format!("median block forward 64x64 {small:.3} ms, 128x128 {large:.3} ms, ratio {ratio:.3} (< 5.0)"),
    ))
}

fn determinism(dir: &Path) -> Result<Outcome, String> {
    let cfg = config(dir, "det.json", r#"{"samples": 200, "epochs": 5, "eval_samples": 16}"#);
    for out in ["det_a", "det_b"] {
        sonic(dir, &["train", "--config", &cfg, "--seed", "11", "--out", out])?;
        sonic(dir, &["eval", "--model", &format!("{out}/model.json")])?;
    }
    let files = ["model.json", "optimizer.json", "metrics.csv", "summary.json", "eval/robustness.csv", "eval/combined.csv"];
    let mut differing = Vec::new();
    for f in files {
        let a = fs::read(dir.join("det_a").join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(dir.join("det_b").join(f)).map_err(|e| e.to_string())?;
        if a != b {
            differing.push(f);
        }
    }
    let ma = read_json(&dir.join("det_a/manifest.json"))?;
    let mb = read_json(&dir.join("det_b/manifest.json"))?;
    let same_outputs = ma["config"] == mb["config"] && ma["outputs"] == mb["outputs"];
    Ok(Outcome::new(
        differing.is_empty() && same_outputs,
        if differing.is_empty() {
            format!("{} files bitwise identical across two runs, manifest hashes equal", files.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    ))
}

fn main() -> ExitCode {
    let dir = work_dir();
    let start = Instant::now();
    let mut failed = 0;
    let mut report = |id: &str, name: &str, o: Result<Outcome, String>| {
        let o = o.unwrap_or_else(Outcome::error);
        if !o.passed {
            failed += 1;
        }
        println!("{} [{id}] {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        let _ = std::io::stdout().flush();
    };

    report("1", "convolution theorem", Ok(within(check_symbol_convolution(50), 10.0)));
    report("2", "gradient check", gradcheck());
    report("3", "resolution invariance", Ok(from_check(&check_resolution_invariance())));
    report("4a", "axis-aligned reduction", Ok(from_check(&check_s4nd_reduction())));
    report("4b", "absorbed-parameter identity", Ok(from_check(&check_absorbed_identity(100))));
    report("5", "transfer magnitude bound", Ok(stability()));
    report("6", "parameter count", Ok(from_check(&check_parameter_count(10))));
    report("9", "complexity scaling", bench(&dir));
    report("10", "determinism", determinism(&dir));
    report("7", "HalliGalli long-range trend", halligalli(&dir));
    match synthshape(&dir) {
        Ok((main, trend)) => {
            report("8", "SynthShape segmentation", Ok(main));
            report("8+", "early training loss trend", Ok(trend));
        }
        Err(e) => report("8", "SynthShape segmentation", Err(e)),
    }
    println!(
        "{} criteria failed; artifacts in {} ({:.0}s)",
        failed,
        dir.display(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
