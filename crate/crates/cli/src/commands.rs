use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sonic_core::gradients::{gradient_check, LossSpec, Model, GRADCHECK_STEP};
use sonic_core::grid::{FrequencyGrid, Signal};
use sonic_core::operator::{
    block_forward, mode_responses, network_from_json, network_to_json, resample_to_grid, spectral_energy,
    NetworkConfig, SonicBlock, SonicNetwork,
};
use sonic_core::oracle::run_suite;
use sonic_core::rng::{stream, SeededRng};
use sonic_core::tasks::{write_mask_pgm, write_samples, TaskSample, Target};
use sonic_core::train::{
    epoch_log_csv, evaluate, evaluate_robustness, generate_split, train as train_model, ConvBaseline, Dataset,
    EpochRecord, Metrics, Preprocess, Split, TaskSpec, TrainConfig, CONV_FORMAT,
};

use crate::config::{Flags, ModelKind, RunConfig};
use crate::manifest::RunManifest;
use crate::CliError;

/// Layers of the local baseline, fixed so its receptive field stays small.
pub const BASELINE_DEPTH: usize = 4;
const GRADCHECK_SAMPLES: usize = 2;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("plain data serializes")
}

/// Drops image channels past `channels`.
fn keep_channels(samples: Vec<TaskSample>, channels: usize) -> Result<Vec<TaskSample>, CliError> {
    if channels == sonic_core::tasks::IMAGE_CHANNELS {
        return Ok(samples);
    }
    samples.iter().map(|s| s.with_channels(channels).map_err(CliError::from)).collect()
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        learning_rate: cfg.lr,
        weight_decay: cfg.wd,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        schedule: cfg.schedule,
        seed: cfg.seed,
        loss_weights: cfg.loss_weights,
        dice_smooth: cfg.dice_smooth,
        readout: cfg.readout,
        class_weight_samples: cfg.class_weight_samples,
    }
}

fn network_config(cfg: &RunConfig) -> NetworkConfig {
    NetworkConfig {
        in_channels: cfg.channels,
        width: cfg.width,
        modes: cfg.modes,
        depth: cfg.depth,
        out_channels: cfg.task.num_classes(),
        dim: 2,
        gain_normalize: cfg.gain_normalize,
        mode_dropout_rate: cfg.mode_dropout,
    }
}

fn grid_name(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn grid_for(cfg: &RunConfig, dims: &[usize]) -> Result<FrequencyGrid, CliError> {
    let spacing = cfg.spacing.clone().unwrap_or_else(|| vec![1.0; dims.len()]);
    Ok(FrequencyGrid::new(dims, &spacing)?)
}

// ---------------------------------------------------------------- gen

#[derive(Serialize)]
struct IndexEntry<'a> {
    index: usize,
    seed: u64,
    label: Option<usize>,
    shapes: &'a [sonic_core::tasks::Primitive],
}

fn write_png(path: &Path, image: &Signal) -> Result<(), CliError> {
    let dims = image.grid().dims();
    let (h, w) = (dims[0], dims[1]);
    let n = h * w;
    let mut rgb = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..3 {
            let v = if c < image.channels() { image.channel(c)[i] } else { 0.0 };
            rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    image::save_buffer(path, &rgb, w as u32, h as u32, image::ColorType::Rgb8)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

pub fn gen(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    create_dir(out)?;
    let mut manifest = RunManifest::begin(out, "gen", json!({ "run": to_value(cfg) }), cfg.seed)?;
    let samples = generate_split(cfg.task, cfg.size, cfg.seed, Split::Train, cfg.samples)?;
    write_samples(&out.join("dataset.bin"), &samples)?;
    manifest.record(out, "dataset", "dataset.bin")?;
    let index: Vec<IndexEntry> = samples
        .iter()
        .enumerate()
        .map(|(index, s)| IndexEntry { index, seed: s.seed, label: s.label(), shapes: &s.shapes })
        .collect();
    let text = serde_json::to_string_pretty(&json!({
        "task": cfg.task,
        "size": cfg.size,
        "classes": cfg.task.num_classes(),
        "samples": index,
    }))
    .map_err(|e| CliError::Usage(e.to_string()))?;
    write(&out.join("dataset.json"), text + "\n")?;
    manifest.record(out, "index", "dataset.json")?;
    for (i, s) in samples.iter().take(cfg.previews).enumerate() {
        let png = format!("image_{i:04}.png");
        write_png(&out.join(&png), &s.image)?;
        manifest.record(out, &png, &png)?;
        if let Target::Mask(m) = &s.target {
            let pgm = format!("mask_{i:04}.pgm");
            write_mask_pgm(&out.join(&pgm), m, cfg.size, cfg.size, cfg.task.num_classes())?;
            manifest.record(out, &pgm, &pgm)?;
        }
    }
    manifest.finish(out)?;
    eprintln!("wrote {} {} samples to {}", samples.len(), cfg.task.name(), out.display());
    Ok(())
}

// ---------------------------------------------------------------- models

/// A model file of either kind.
#[derive(Clone, Debug)]
pub enum LoadedModel {
    Sonic(SonicNetwork),
    Conv(ConvBaseline),
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        #[derive(Deserialize)]
        struct Tag {
            format: String,
        }
        let tag: Tag = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{} is not a model file: {e}", path.display())))?;
        if tag.format == CONV_FORMAT {
            Ok(LoadedModel::Conv(ConvBaseline::from_json(&text)?))
        } else {
            Ok(LoadedModel::Sonic(network_from_json(&text)?))
        }
    }

    fn sonic(self) -> Result<SonicNetwork, CliError> {
        match self {
            LoadedModel::Sonic(n) => Ok(n),
            LoadedModel::Conv(_) => Err(CliError::Usage("this command needs a spectral model, not the conv baseline".into())),
        }
    }
}

fn require_model(model: Option<&Path>) -> Result<&Path, CliError> {
    model.ok_or_else(|| CliError::Usage("--model <path> is required".into()))
}

// ---------------------------------------------------------------- train

/// Everything `eval` needs to reproduce the training-time input pipeline.
#[derive(Serialize, Deserialize)]
struct TrainRecord {
    run: RunConfig,
    preprocess: Preprocess,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    best_epoch: usize,
    best: &'a Metrics,
    parameters: usize,
}

fn model_json<M: Model + 'static>(m: &M) -> Result<String, CliError> {
    let any = m as &dyn std::any::Any;
    if let Some(n) = any.downcast_ref::<SonicNetwork>() {
        Ok(network_to_json(n)?)
    } else if let Some(c) = any.downcast_ref::<ConvBaseline>() {
        Ok(c.to_json()?)
    } else {
        unreachable!("only two model kinds exist")
    }
}

fn run_training<M: Model + 'static>(
    model: M,
    cfg: &RunConfig,
    data: &Dataset,
    loss: &LossSpec,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    let tc = train_config(cfg);
    let parameters = model.params().scalar_count();
    let kind = cfg.task;
    let start = Instant::now();
    let mut log: Vec<EpochRecord> = Vec::new();
    let mut best: Option<f64> = None;
    let mut persist_err: Option<CliError> = None;
    let result = train_model(model, data, loss, &tc, |row, m| {
        log.push(row.clone());
        if let Some(metrics) = &row.metrics {
            let score = metrics.primary(kind);
            eprintln!(
                "epoch {:>4}  train {:.5}  val {:.5}  {} {:.4}  ({:.1}s)",
                row.epoch,
                log[log.len() - 2].loss,
                row.loss,
                if kind.num_classes() == 3 { "acc" } else { "dice" },
                score,
                start.elapsed().as_secs_f64()
            );
            // keep the best checkpoint on disk so a later divergence loses nothing
            if best.is_none_or(|b| score > b) {
                best = Some(score);
                if let Err(e) = model_json(m).and_then(|t| write(&out.join("model.json"), t)) {
                    persist_err.get_or_insert(e);
                }
            }
            if let Err(e) = write(&out.join("metrics.csv"), epoch_log_csv(kind, &log)) {
                persist_err.get_or_insert(e);
            }
        }
    });
    if let Some(e) = persist_err {
        return Err(e);
    }
    let outcome = result?;
    write(&out.join("model.json"), model_json(&outcome.best)?)?;
    write(&out.join("metrics.csv"), epoch_log_csv(kind, &outcome.log))?;
    let opt = serde_json::to_string_pretty(&outcome.optimizer).map_err(|e| CliError::Usage(e.to_string()))?;
    write(&out.join("optimizer.json"), opt + "\n")?;
    // wall time stays out of the file so reruns are byte-identical
    let summary = TrainSummary { best_epoch: outcome.best_epoch, best: &outcome.best_metrics, parameters };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Usage(e.to_string()))?;
    write(&out.join("summary.json"), text + "\n")?;
    for (role, file) in [("model", "model.json"), ("optimizer", "optimizer.json"), ("metrics", "metrics.csv"), ("summary", "summary.json")] {
        manifest.record(out, role, file)?;
    }
    eprintln!(
        "best {} {:.4} at epoch {} ({parameters} parameters, {:.1}s)",
        if kind.num_classes() == 3 { "accuracy" } else { "dice" },
        outcome.best_metrics.primary(kind),
        outcome.best_epoch,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    create_dir(out)?;
    let spec = TaskSpec::with_total(cfg.task, cfg.size, cfg.samples);
    let mut pre = Preprocess::new(cfg.standardize);
    let data = Dataset::generate(&spec, cfg.seed, &mut pre)?;
    let data = Dataset {
        kind: data.kind,
        train: keep_channels(data.train, cfg.channels)?,
        val: keep_channels(data.val, cfg.channels)?,
    };
    let record = TrainRecord { run: cfg.clone(), preprocess: pre };
    let mut manifest = RunManifest::begin(out, "train", to_value(&record), cfg.seed)?;
    let loss = train_config(cfg).loss_for(cfg.task, cfg.size)?;
    let sonic = SonicNetwork::init(&network_config(cfg), cfg.seed)?;
    match cfg.model {
        ModelKind::Sonic => run_training(sonic, cfg, &data, &loss, out, &mut manifest)?,
        ModelKind::Conv => {
            let k = cfg.task.num_classes();
            let budget = sonic.params().scalar_count();
            let width = ConvBaseline::matched_width(cfg.channels, BASELINE_DEPTH, k, budget);
            let conv = ConvBaseline::init(cfg.channels, width, BASELINE_DEPTH, k, cfg.seed)?;
            eprintln!("conv baseline: width {width}, {} parameters (budget {budget})", conv.param_count());
            run_training(conv, cfg, &data, &loss, out, &mut manifest)?
        }
    }
    manifest.finish(out)?;
    Ok(())
}

// ---------------------------------------------------------------- eval

fn run_eval<M: Model>(
    model: &M,
    run: &RunConfig,
    pre: &Preprocess,
    size: usize,
    seed: u64,
    samples: usize,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    let loss = train_config(run).loss_for(run.task, run.size)?;
    let clean = keep_channels(generate_split(run.task, size, seed, Split::Val, samples)?, run.channels)?;
    let clean: Vec<TaskSample> = clean.iter().map(|s| pre.apply(s)).collect::<Result<_, _>>()?;
    let val = evaluate(model, &clean, &loss)?;
    // perturbations act on raw 3-channel images; channels are dropped after preprocessing
    let wrapped = ChannelSubset { inner: model, channels: run.channels };
    let table = evaluate_robustness(&wrapped, run.task, size, samples, seed, &loss, pre)?;
    write(&out.join("robustness.csv"), table.to_csv())?;
    write(&out.join("combined.csv"), table.combined_csv())?;
    let text = serde_json::to_string_pretty(&json!({ "validation": val, "test_clean": table.rows[0].metrics }))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    write(&out.join("eval.json"), text + "\n")?;
    for (role, file) in [("robustness", "robustness.csv"), ("combined", "combined.csv"), ("summary", "eval.json")] {
        manifest.record(out, role, file)?;
    }
    eprint!("{}", table.to_csv());
    Ok(())
}

/// Feeds only the first `channels` image channels to the wrapped model.
#[derive(Clone)]
struct ChannelSubset<'a, M> {
    inner: &'a M,
    channels: usize,
}

impl<M: Model> Model for ChannelSubset<'_, M> {
    fn params(&self) -> sonic_core::params::ParamMap {
        self.inner.params()
    }
    fn set_params(&mut self, _: &sonic_core::params::ParamMap) -> sonic_core::Result<()> {
        Err(sonic_core::SonicError::InvalidArgument("read-only model view".into()))
    }
    fn forward(&self, x: &Signal) -> sonic_core::Result<Signal> {
        if x.channels() == self.channels {
            return self.inner.forward(x);
        }
        let n = x.grid().len();
        let sub = Signal::new(self.channels, x.data()[..self.channels * n].to_vec(), x.grid().clone())?;
        self.inner.forward(&sub)
    }
    fn batch_backward(
        &self,
        _: &[&Signal],
        _: &sonic_core::gradients::OutputGrad<'_>,
        _: sonic_core::gradients::PassOptions,
    ) -> sonic_core::Result<(Vec<f64>, sonic_core::params::GradientVector)> {
        Err(sonic_core::SonicError::InvalidArgument("evaluation-only model view".into()))
    }
}

pub fn eval(cfg: &RunConfig, flags: &Flags, model: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let path = require_model(model)?;
    let source = RunManifest::for_model(path)?;
    let record: TrainRecord = serde_json::from_value(source.config.clone())
        .map_err(|e| CliError::Usage(format!("manifest lacks the training record: {e}")))?;
    let run = record.run;
    // the model's task and pipeline come from training; these may be overridden
    let size = flags.size.unwrap_or(run.size);
    let seed = flags.seed.unwrap_or(run.seed);
    let samples = cfg.eval_samples;
    let out: PathBuf = out.map_or_else(|| path.parent().unwrap_or(Path::new(".")).join("eval"), Path::to_path_buf);
    create_dir(&out)?;
    let config = json!({ "model": path, "size": size, "seed": seed, "eval_samples": samples, "training": to_value(&run) });
    let mut manifest = RunManifest::begin(&out, "eval", config, seed)?;
    match LoadedModel::load(path)? {
        LoadedModel::Sonic(m) => run_eval(&m, &run, &record.preprocess, size, seed, samples, &out, &mut manifest)?,
        LoadedModel::Conv(m) => run_eval(&m, &run, &record.preprocess, size, seed, samples, &out, &mut manifest)?,
    }
    manifest.finish(&out)?;
    Ok(())
}

// ---------------------------------------------------------------- gradcheck

pub fn gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let net = SonicNetwork::init(&network_config(cfg), cfg.seed)?;
    let batch = keep_channels(generate_split(cfg.task, cfg.size, cfg.seed, Split::Train, GRADCHECK_SAMPLES)?, cfg.channels)?;
    let loss = train_config(cfg).loss_for(cfg.task, cfg.size)?;
    let report = gradient_check(&net, &batch, &loss, GRADCHECK_STEP)?;
    print!("{}", report.to_csv());
    eprintln!(
        "max relative error {:.3e} (tolerance {:.0e}, h = {:.0e}) over {} parameters in {:.2}s",
        report.max_rel,
        report.tolerance,
        GRADCHECK_STEP,
        net.params().scalar_count(),
        start.elapsed().as_secs_f64()
    );
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Verification(format!("gradient check failed for {}", report.failing().join(", "))))
    }
}

// ---------------------------------------------------------------- verify

pub fn verify() -> Result<(), CliError> {
    let checks = run_suite();
    for c in &checks {
        println!("{c}");
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        println!("all {} properties hold", checks.len());
        Ok(())
    } else {
        Err(CliError::Verification(failed.join("; ")))
    }
}

// ---------------------------------------------------------------- resample

/// Shortest round-trip formatting: equal values print identically.
fn bits(v: f64) -> String {
    format!("{v:e}")
}

/// One row per (block, frequency, quantity): every mode response `T<m>`
/// and every entry `H<k>_<c>` of the symbol before gain normalization.
fn symbol_csv(net: &SonicNetwork, grid: &FrequencyGrid) -> Result<(String, String), CliError> {
    let d = grid.ndim();
    let axes: Vec<String> = (0..d).map(|a| format!("omega_{a}")).collect();
    let mut csv = format!("block,{},quantity,re,im\n", axes.join(","));
    let mut gains = String::from("block,output,gain\n");
    let mut omega = vec![0.0; d];
    for (b, block) in net.blocks.iter().enumerate() {
        let modes = mode_responses(block, grid)?;
        let raw_block = SonicBlock { gain_normalize: false, ..block.clone() };
        let raw = resample_to_grid(&raw_block, grid)?;
        let normalized = resample_to_grid(block, grid)?;
        for n in 0..grid.half_len() {
            grid.half_frequency(n, &mut omega);
            let freq: Vec<String> = omega.iter().map(|w| bits(*w)).collect();
            let freq = freq.join(",");
            for (m, field) in modes.iter().enumerate() {
                let _ = writeln!(csv, "{b},{freq},T{m},{},{}", bits(field[n].re), bits(field[n].im));
            }
            for k in 0..raw.outputs() {
                for c in 0..raw.inputs() {
                    let h = raw.get(k, c, n);
                    let _ = writeln!(csv, "{b},{freq},H{k}_{c},{},{}", bits(h.re), bits(h.im));
                }
            }
        }
        for k in 0..raw.outputs() {
            // ratio of raw to normalized on any bin where both are non-zero
            let g = (0..grid.half_len())
                .find_map(|n| {
                    let (r, s) = (raw.get(k, 0, n), normalized.get(k, 0, n));
                    (s.norm() > 0.0).then(|| r.norm() / s.norm())
                })
                .unwrap_or(1.0);
            let _ = writeln!(gains, "{b},{k},{}", bits(g));
        }
    }
    Ok((csv, gains))
}

pub fn resample(cfg: &RunConfig, model: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let path = require_model(model)?;
    let net = LoadedModel::load(path)?.sonic()?;
    if cfg.dims.is_empty() {
        return Err(CliError::Usage("resample needs at least one --dims".into()));
    }
    create_dir(out)?;
    let mut manifest = RunManifest::begin(out, "resample", json!({ "model": path, "run": to_value(cfg) }), cfg.seed)?;
    for dims in &cfg.dims {
        let grid = grid_for(cfg, dims)?;
        let (csv, gains) = symbol_csv(&net, &grid)?;
        let name = grid_name(dims);
        let (sym, gain) = (format!("symbol_{name}.csv"), format!("gains_{name}.csv"));
        write(&out.join(&sym), csv)?;
        write(&out.join(&gain), gains)?;
        manifest.record(out, &sym, &sym)?;
        manifest.record(out, &gain, &gain)?;
        eprintln!("wrote {} ({} bins)", out.join(&sym).display(), grid.half_len());
    }
    manifest.finish(out)?;
    Ok(())
}

// ---------------------------------------------------------------- export-spectrum

/// Decades of dynamic range shown in the spectrum images.
const SPECTRUM_DECADES: f64 = 6.0;

pub fn export_spectrum(cfg: &RunConfig, model: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let path = require_model(model)?;
    let net = LoadedModel::load(path)?.sonic()?;
    let dims = cfg.dims.first().cloned().unwrap_or_else(|| vec![cfg.size, cfg.size]);
    if dims.len() != 2 {
        return Err(CliError::Usage("export-spectrum needs a 2-D grid".into()));
    }
    let grid = grid_for(cfg, &dims)?;
    create_dir(out)?;
    let mut manifest =
        RunManifest::begin(out, "export-spectrum", json!({ "model": path, "run": to_value(cfg) }), cfg.seed)?;
    let (h, w) = (dims[0], dims[1]);
    let mut csv = String::from("block,k0,k1,energy,log_energy\n");
    for (b, block) in net.blocks.iter().enumerate() {
        let e = spectral_energy(block, &grid)?;
        let max = e.iter().copied().fold(0.0, f64::max);
        let norm = |v: f64| if max > 0.0 { v / max } else { 0.0 };
        let log = |v: f64| (1.0 + norm(v).max(1e-300).log10() / SPECTRUM_DECADES).clamp(0.0, 1.0);
        let mut pgm = format!("P5\n{w} {h}\n255\n").into_bytes();
        // centred layout: the zero frequency sits in the middle
        for r in 0..h {
            let i = (r + h.div_ceil(2)) % h;
            let k0 = i as i64 - if i >= h.div_ceil(2) { h as i64 } else { 0 };
            for c in 0..w {
                let j = (c + w.div_ceil(2)) % w;
                let k1 = j as i64 - if j >= w.div_ceil(2) { w as i64 } else { 0 };
                let v = e[i * w + j];
                pgm.push((log(v) * 255.0).round() as u8);
                let _ = writeln!(csv, "{b},{k0},{k1},{:.9e},{:.6}", norm(v), log(v));
            }
        }
        let name = format!("spectrum_block{b}.pgm");
        write(&out.join(&name), pgm)?;
        manifest.record(out, &name, &name)?;
    }
    write(&out.join("spectrum.csv"), csv)?;
    manifest.record(out, "spectrum", "spectrum.csv")?;
    manifest.finish(out)?;
    eprintln!("wrote spectra of {} blocks to {}", net.blocks.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------- bench

fn summarize(mut ms: Vec<f64>) -> (f64, f64, f64) {
    ms.sort_by(f64::total_cmp);
    let mid = ms.len() / 2;
    let median = if ms.len() % 2 == 0 { 0.5 * (ms[mid - 1] + ms[mid]) } else { ms[mid] };
    (median, ms[0], ms[ms.len() - 1])
}

/// Median, min and max milliseconds per input over `iters` rounds after
/// `warmup`. Each round times every input once, so slow drift of the
/// machine affects all sizes alike.
fn time_blocks(block: &SonicBlock, xs: &[Signal], warmup: usize, iters: usize) -> Result<Vec<(f64, f64, f64)>, CliError> {
    for x in xs {
        for _ in 0..warmup {
            std::hint::black_box(block_forward(block, x, false, 0)?);
        }
    }
    let mut ms = vec![Vec::with_capacity(iters); xs.len()];
    for _ in 0..iters {
        for (x, times) in xs.iter().zip(&mut ms) {
            let t = Instant::now();
            std::hint::black_box(block_forward(block, x, false, 0)?);
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(ms.into_iter().map(summarize).collect())
}

pub fn bench(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let dims = if cfg.dims.is_empty() {
        [32, 64, 128, 256].iter().map(|&n| vec![n, n]).collect()
    } else {
        cfg.dims.clone()
    };
    create_dir(out)?;
    let mut manifest = RunManifest::begin(out, "bench", json!({ "run": to_value(cfg), "dims": dims }), cfg.seed)?;
    let mut rng = SeededRng::new(cfg.seed, stream::INIT);
    let d = dims[0].len();
    let block = SonicBlock::init(cfg.modes, cfg.channels, cfg.width, d, cfg.gain_normalize, &mut rng);
    let mut xs = Vec::with_capacity(dims.len());
    for shape in &dims {
        let grid = grid_for(cfg, shape)?;
        let mut r = SeededRng::new(cfg.seed, stream::TEST);
        xs.push(Signal::new(cfg.channels, (0..cfg.channels * grid.len()).map(|_| r.normal()).collect(), grid)?);
    }
    if cfg.bench_iters == 0 {
        return Err(CliError::Usage("bench_iters must be positive".into()));
    }
    let timings = time_blocks(&block, &xs, cfg.bench_warmup, cfg.bench_iters)?;
    let mut csv = String::from("dims,points,median_ms,min_ms,max_ms\n");
    for ((shape, x), (median, min, max)) in dims.iter().zip(&xs).zip(timings) {
        let row = format!("{},{},{median:.4},{min:.4},{max:.4}", grid_name(shape), x.grid().len());
        println!("{row}");
        csv.push_str(&row);
        csv.push('\n');
    }
    write(&out.join("bench.csv"), csv)?;
    manifest.record(out, "bench", "bench.csv")?;
    manifest.finish(out)?;
    Ok(())
}
