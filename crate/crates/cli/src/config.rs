//! Run configuration: built-in defaults, then a JSON file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sonic_core::tasks::TaskKind;
use sonic_core::train::loss::{LossWeights, Readout};
use sonic_core::train::{Schedule, Standardize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sonic,
    /// The local 3×3 convolution baseline.
    Conv,
}

/// Every knob a subcommand can read. Unknown keys in a config file are errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub task: TaskKind,
    pub size: usize,
    /// Generated samples for training (20% go to validation) or for `gen`.
    pub samples: usize,
    /// Fresh test samples per robustness row.
    pub eval_samples: usize,
    pub dims: Vec<Vec<usize>>,
    pub spacing: Option<Vec<f64>>,
    pub modes: usize,
    /// Input channels fed to the model.
    pub channels: usize,
    pub width: usize,
    pub depth: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub wd: f64,
    pub schedule: Schedule,
    pub model: ModelKind,
    pub gain_normalize: bool,
    pub mode_dropout: f64,
    pub standardize: Standardize,
    pub loss_weights: LossWeights,
    pub dice_smooth: f64,
    pub readout: Readout,
    pub class_weight_samples: usize,
    /// `gen`: how many samples also get a PNG image and PGM mask.
    pub previews: usize,
    /// `bench`: timed and warm-up iterations.
    pub bench_iters: usize,
    pub bench_warmup: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: TaskKind::SynthShape,
            size: 32,
            samples: 1000,
            eval_samples: 64,
            dims: Vec::new(),
            spacing: None,
            modes: 4,
            channels: 3,
            width: 8,
            depth: 2,
            epochs: 200,
            batch_size: 32,
            lr: 1e-2,
            wd: 1e-4,
            schedule: Schedule::OneCycle,
            model: ModelKind::Sonic,
            gain_normalize: true,
            mode_dropout: 0.0,
            standardize: Standardize::Dataset,
            loss_weights: LossWeights::default(),
            dice_smooth: 1.0,
            readout: Readout::Centre(4),
            class_weight_samples: 1024,
            previews: 8,
            bench_iters: 20,
            bench_warmup: 3,
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("cannot parse '{p}' in '{s}'")))
        .collect()
}

fn parse_dims(s: &str) -> Result<Vec<usize>, String> {
    let v: Vec<usize> = parse_list(s)?;
    if v.is_empty() || v.contains(&0) {
        return Err(format!("dims must be positive, got '{s}'"));
    }
    Ok(v)
}

fn parse_spacing(s: &str) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = parse_list(s)?;
    if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(format!("spacings must be positive, got '{s}'"));
    }
    Ok(v)
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: sonic_core::SonicError| e.to_string())
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Flags {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub size: Option<usize>,
    /// Grid shape such as 32,32; repeat for several grids.
    #[arg(long, global = true, value_parser = parse_dims)]
    pub dims: Vec<Vec<usize>>,
    #[arg(long, global = true, value_parser = parse_spacing)]
    pub spacing: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub modes: Option<usize>,
    #[arg(long, global = true)]
    pub channels: Option<usize>,
    #[arg(long, global = true)]
    pub width: Option<usize>,
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub wd: Option<f64>,
    #[arg(long, global = true, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// JSON file overriding defaults; flags override it in turn.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults, then `flags.config`, then the flags themselves.
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        macro_rules! take {
            ($($f:ident => $t:ident),*) => {$(if let Some(v) = flags.$f.clone() { cfg.$t = v; })*};
        }
        take!(seed => seed, size => size, modes => modes, channels => channels, width => width, depth => depth,
              epochs => epochs, lr => lr, wd => wd, task => task);
        if !flags.dims.is_empty() {
            cfg.dims = flags.dims.clone();
        }
        if flags.spacing.is_some() {
            cfg.spacing = flags.spacing.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("size", self.size),
            ("samples", self.samples),
            ("eval_samples", self.eval_samples),
            ("modes", self.modes),
            ("channels", self.channels),
            ("width", self.width),
            ("depth", self.depth),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("bench_iters", self.bench_iters),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Usage(format!("{name} must be positive")));
        }
        if self.channels > sonic_core::tasks::IMAGE_CHANNELS {
            return Err(CliError::Usage(format!("channels must be at most {}", sonic_core::tasks::IMAGE_CHANNELS)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.wd >= 0.0 && self.wd.is_finite()) {
            return Err(CliError::Usage("lr and wd must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.mode_dropout) {
            return Err(CliError::Usage("mode_dropout must lie in [0, 1)".into()));
        }
        if let (Some(sp), Some(d)) = (&self.spacing, self.dims.first()) {
            if sp.len() != d.len() {
                return Err(CliError::Usage("spacing and dims disagree on dimension".into()));
            }
        }
        if self.dims.iter().any(|d| d.len() != self.dims[0].len()) {
            return Err(CliError::Usage("all --dims must share one dimension".into()));
        }
        Ok(())
    }
}
