//! JSON model files.
//!
//! Every real is written with 17 significant digits so a load/save cycle is
//! bit-exact.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use super::{Head, MixingMatrices, SonicBlock, SonicNetwork};
use crate::error::{invalid, Result};
use crate::modes::{ModeRaw, StabilityConfig};

const FORMAT: &str = "sonic-model";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
struct F17(f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom(format!("cannot serialize {}", self.0)));
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for F17 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(d).map(F17)
    }
}

fn row(v: &[f64]) -> Vec<F17> {
    v.iter().copied().map(F17).collect()
}

fn rows(v: &[f64], cols: usize) -> Vec<Vec<F17>> {
    v.chunks(cols.max(1)).map(row).collect()
}

fn flat(m: &[Vec<F17>], r: usize, c: usize, what: &str) -> Result<Vec<f64>> {
    if m.len() != r || m.iter().any(|x| x.len() != c) {
        return invalid(format!("{what} must be {r}x{c}"));
    }
    Ok(m.iter().flat_map(|x| x.iter().map(|v| v.0)).collect())
}

#[allow(non_snake_case)]
#[derive(Serialize, Deserialize)]
struct BlockFile {
    M: usize,
    C: usize,
    K: usize,
    D: usize,
    rho: F17,
    epsilon: F17,
    dropout: F17,
    gain: bool,
    sigma: Vec<F17>,
    alpha: Vec<F17>,
    beta: Vec<F17>,
    t: Vec<F17>,
    u: Vec<Vec<F17>>,
    B_re: Vec<Vec<F17>>,
    B_im: Vec<Vec<F17>>,
    C_re: Vec<Vec<F17>>,
    C_im: Vec<Vec<F17>>,
    W_s: Vec<Vec<F17>>,
}

#[derive(Serialize, Deserialize)]
struct HeadFile {
    inputs: usize,
    outputs: usize,
    weight: Vec<Vec<F17>>,
    bias: Vec<F17>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    blocks: Vec<BlockFile>,
    head: HeadFile,
}

fn block_to_file(b: &SonicBlock) -> BlockFile {
    let (m, c, k, d) = (b.num_modes(), b.in_channels(), b.out_channels(), b.dim());
    let re = |v: &[Complex64]| v.iter().map(|z| z.re).collect::<Vec<_>>();
    let im = |v: &[Complex64]| v.iter().map(|z| z.im).collect::<Vec<_>>();
    let u: Vec<f64> = b.modes.iter().flat_map(|r| r.u.iter().copied()).collect();
    BlockFile {
        M: m,
        C: c,
        K: k,
        D: d,
        rho: F17(b.stability.rho),
        epsilon: F17(b.stability.epsilon),
        dropout: F17(b.mode_dropout_rate),
        gain: b.gain_normalize,
        sigma: b.modes.iter().map(|r| F17(r.sigma)).collect(),
        alpha: b.modes.iter().map(|r| F17(r.alpha)).collect(),
        beta: b.modes.iter().map(|r| F17(r.beta)).collect(),
        t: b.modes.iter().map(|r| F17(r.t)).collect(),
        u: rows(&u, d),
        B_re: rows(&re(&b.mixing.b), c),
        B_im: rows(&im(&b.mixing.b), c),
        C_re: rows(&re(&b.mixing.c), m),
        C_im: rows(&im(&b.mixing.c), m),
        W_s: rows(&b.skip, c),
    }
}

fn block_from_file(f: &BlockFile) -> Result<SonicBlock> {
    let (m, c, k, d) = (f.M, f.C, f.K, f.D);
    for (name, v) in [("sigma", &f.sigma), ("alpha", &f.alpha), ("beta", &f.beta), ("t", &f.t)] {
        if v.len() != m {
            return invalid(format!("{name} must have {m} entries"));
        }
    }
    let u = flat(&f.u, m, d, "u")?;
    let modes = (0..m)
        .map(|i| ModeRaw {
            sigma: f.sigma[i].0,
            alpha: f.alpha[i].0,
            beta: f.beta[i].0,
            t: f.t[i].0,
            u: u[i * d..(i + 1) * d].to_vec(),
        })
        .collect();
    let zip = |re: Vec<f64>, im: Vec<f64>| -> Vec<Complex64> {
        re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect()
    };
    let b = zip(flat(&f.B_re, m, c, "B_re")?, flat(&f.B_im, m, c, "B_im")?);
    let cm = zip(flat(&f.C_re, k, m, "C_re")?, flat(&f.C_im, k, m, "C_im")?);
    let mixing = MixingMatrices::new(m, c, k, b, cm)?;
    SonicBlock::new(
        modes,
        StabilityConfig { rho: f.rho.0, epsilon: f.epsilon.0 },
        mixing,
        flat(&f.W_s, k, c, "W_s")?,
        f.gain,
        f.dropout.0,
    )
}

pub fn network_to_json(net: &SonicNetwork) -> Result<String> {
    let file = ModelFile {
        format: FORMAT.into(),
        version: VERSION,
        blocks: net.blocks.iter().map(block_to_file).collect(),
        head: HeadFile {
            inputs: net.head.inputs,
            outputs: net.head.outputs,
            weight: rows(&net.head.weight, net.head.inputs),
            bias: row(&net.head.bias),
        },
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn network_from_json(text: &str) -> Result<SonicNetwork> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format != FORMAT || file.version != VERSION {
        return invalid(format!("unsupported model file {} v{}", file.format, file.version));
    }
    let blocks = file.blocks.iter().map(block_from_file).collect::<Result<Vec<_>>>()?;
    let h = &file.head;
    let head = Head {
        inputs: h.inputs,
        outputs: h.outputs,
        weight: flat(&h.weight, h.outputs, h.inputs, "head.weight")?,
        bias: h.bias.iter().map(|v| v.0).collect(),
    };
    SonicNetwork::new(blocks, head)
}

pub fn save_network(net: &SonicNetwork, path: &Path) -> Result<()> {
    std::fs::write(path, network_to_json(net)?)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<SonicNetwork> {
    network_from_json(&std::fs::read_to_string(path)?)
}
