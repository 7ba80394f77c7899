//! Ground-truth signals, Gaussian noise, and variation functionals.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::GridShape;

/// Values over a grid in linear index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub shape: GridShape,
    pub values: Vec<f64>,
}

impl Signal {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.size() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a grid of {} points",
                values.len(),
                shape.size()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("signal value is not finite: {v}")));
        }
        Ok(Signal { shape, values })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Serialized by name (`pc1d`, `box2d`, ..; `file:<path>` for custom signals).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioId {
    /// `2·1[1/5,2/5] + 1[2/5,3/5] + 2·1[3/5,4/5]` at `x = i/n`.
    Pc1d,
    /// `6x` on `[0,1/3]`, `6 - 12x` on `[1/3,2/3]`, `x - 8/3` on `[2/3,1]`.
    Pl1d,
    /// `18x^2`, `-36(x - 1/2 - 1/sqrt12)(x - 1/2 + 1/sqrt12)`, `18(x-1)^2` on thirds.
    Pq1d,
    /// `sin(2 pi x) + cos(5 pi x)`.
    Sinusoid1d,
    /// 1 where `n/3 <= i1, i2 <= 2n/3`, else 0.
    Box2d,
    /// 1 where `|(i1, i2) - (n/2, n/2)| <= n/4`, else 0.
    Circle2d,
    /// `sin(pi i1/n) sin(pi i2/n)`.
    Sinusoid2d,
    /// Values loaded from a signal file.
    Custom(PathBuf),
}

impl ScenarioId {
    pub fn dimension(&self) -> Option<usize> {
        match self {
            ScenarioId::Pc1d | ScenarioId::Pl1d | ScenarioId::Pq1d | ScenarioId::Sinusoid1d => Some(1),
            ScenarioId::Box2d | ScenarioId::Circle2d | ScenarioId::Sinusoid2d => Some(2),
            ScenarioId::Custom(_) => None,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioId::Pc1d => write!(f, "pc1d"),
            ScenarioId::Pl1d => write!(f, "pl1d"),
            ScenarioId::Pq1d => write!(f, "pq1d"),
            ScenarioId::Sinusoid1d => write!(f, "sinusoid1d"),
            ScenarioId::Box2d => write!(f, "box2d"),
            ScenarioId::Circle2d => write!(f, "circle2d"),
            ScenarioId::Sinusoid2d => write!(f, "sinusoid2d"),
            ScenarioId::Custom(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "pc1d" => ScenarioId::Pc1d,
            "pl1d" => ScenarioId::Pl1d,
            "pq1d" => ScenarioId::Pq1d,
            "sinusoid1d" => ScenarioId::Sinusoid1d,
            "box2d" => ScenarioId::Box2d,
            "circle2d" => ScenarioId::Circle2d,
            "sinusoid2d" => ScenarioId::Sinusoid2d,
            _ => match s.strip_prefix("file:") {
                Some(path) => ScenarioId::Custom(PathBuf::from(path)),
                None => return Err(Error::Config(format!("unknown scenario `{s}`"))),
            },
        })
    }
}

impl Serialize for ScenarioId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScenarioId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn indicator(x: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&x) {
        1.0
    } else {
        0.0
    }
}

pub fn piecewise_constant(x: f64) -> f64 {
    2.0 * indicator(x, 0.2, 0.4) + indicator(x, 0.4, 0.6) + 2.0 * indicator(x, 0.6, 0.8)
}

pub fn piecewise_linear(x: f64) -> f64 {
    6.0 * x * indicator(x, 0.0, 1.0 / 3.0)
        + (-12.0 * x + 6.0) * indicator(x, 1.0 / 3.0, 2.0 / 3.0)
        + (x - 8.0 / 3.0) * indicator(x, 2.0 / 3.0, 1.0)
}

pub fn piecewise_quadratic(x: f64) -> f64 {
    let r = 1.0 / 12f64.sqrt();
    if x <= 1.0 / 3.0 {
        18.0 * x * x
    } else if x <= 2.0 / 3.0 {
        -36.0 * (x - 0.5 - r) * (x - 0.5 + r)
    } else {
        18.0 * (x - 1.0).powi(2)
    }
}

pub fn sinusoid_1d(x: f64) -> f64 {
    (2.0 * std::f64::consts::PI * x).sin() + (5.0 * std::f64::consts::PI * x).cos()
}

fn box_2d(n: usize, i1: usize, i2: usize) -> f64 {
    let (lo, hi) = (n as f64 / 3.0, 2.0 * n as f64 / 3.0);
    let inside = |i: usize| (lo..=hi).contains(&(i as f64));
    if inside(i1) && inside(i2) {
        1.0
    } else {
        0.0
    }
}

fn circle_2d(n: usize, i1: usize, i2: usize) -> f64 {
    let c = n as f64 / 2.0;
    if (i1 as f64 - c).hypot(i2 as f64 - c) <= n as f64 / 4.0 {
        1.0
    } else {
        0.0
    }
}

fn sinusoid_2d(n: usize, i1: usize, i2: usize) -> f64 {
    let pi = std::f64::consts::PI;
    (pi * i1 as f64 / n as f64).sin() * (pi * i2 as f64 / n as f64).sin()
}

pub fn generate_signal(id: &ScenarioId, shape: &GridShape) -> Result<Signal> {
    if let ScenarioId::Custom(path) = id {
        let signal = read_signal_file(path)?;
        if signal.shape != *shape {
            return Err(Error::Config(format!(
                "signal file {} is over {}, experiment over {shape}",
                path.display(),
                signal.shape
            )));
        }
        return Ok(signal);
    }
    let want = id.dimension().expect("builtin scenarios have a dimension");
    if shape.d() != want {
        return Err(Error::Config(format!(
            "scenario {id} is {want}-dimensional, grid is {}-dimensional",
            shape.d()
        )));
    }
    let n = shape.n();
    let values = match id {
        ScenarioId::Pc1d | ScenarioId::Pl1d | ScenarioId::Pq1d | ScenarioId::Sinusoid1d => {
            let f = match id {
                ScenarioId::Pc1d => piecewise_constant,
                ScenarioId::Pl1d => piecewise_linear,
                ScenarioId::Pq1d => piecewise_quadratic,
                _ => sinusoid_1d,
            };
            (1..=n).map(|i| f(i as f64 / n as f64)).collect()
        }
        _ => {
            let f = match id {
                ScenarioId::Box2d => box_2d,
                ScenarioId::Circle2d => circle_2d,
                _ => sinusoid_2d,
            };
            shape.points().map(|p| f(n, p.coords[0], p.coords[1])).collect()
        }
    };
    Signal::new(*shape, values)
}

/// Independent `N(0, sigma^2)` perturbations from a seeded generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
    /// Generator stream; distinct streams give independent draws under one seed.
    #[serde(default)]
    pub stream: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Self {
        NoiseModel { sigma, seed, stream: 0 }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }
}

pub fn add_noise(signal: &Signal, model: &NoiseModel) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(model.stream);
    let values = signal
        .values
        .iter()
        .map(|&v| {
            let e: f64 = rng.sample(StandardNormal);
            v + model.sigma * e
        })
        .collect();
    Signal {
        shape: signal.shape,
        values,
    }
}

/// Sum of `|theta_u - theta_v|` over the nearest-neighbour edges of the grid.
pub fn total_variation(signal: &Signal) -> f64 {
    let shape = signal.shape;
    let (d, n) = (shape.d(), shape.n());
    let mut total = 0.0;
    let mut stride = 1;
    for _ in 0..d {
        for i in 0..shape.size() {
            let coord = (i / stride) % n;
            if coord + 1 < n {
                total += (signal.values[i + stride] - signal.values[i]).abs();
            }
        }
        stride *= n;
    }
    total
}

/// `order`-th forward difference: `D^(1)(v) = (v_2 - v_1, ..)`, applied repeatedly.
pub fn discrete_difference(values: &[f64], order: usize) -> Vec<f64> {
    let mut cur = values.to_vec();
    for _ in 0..order {
        cur = cur.windows(2).map(|w| w[1] - w[0]).collect();
    }
    cur
}

/// `n^(m-1) * |D^(m)(theta)|_1` for a 1D signal.
pub fn higher_order_variation(signal: &Signal, m: usize) -> Result<f64> {
    if signal.shape.d() != 1 {
        return Err(Error::InvalidArgument(
            "higher-order variation is defined for 1D signals".into(),
        ));
    }
    sequence_variation(&signal.values, m)
}

/// Same functional on a raw sequence, with `n` its length.
pub fn sequence_variation(values: &[f64], m: usize) -> Result<f64> {
    let n = values.len();
    if m == 0 || n <= m {
        return Err(Error::InvalidArgument(format!("order m = {m} needs 1 <= m < n = {n}")));
    }
    let l1: f64 = discrete_difference(values, m).iter().map(|v| v.abs()).sum();
    Ok((n as f64).powi(m as i32 - 1) * l1)
}

const SIGNAL_MAGIC: &str = "dyadic-signal";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalEncoding {
    Text,
    Binary,
}

/// Writes a signal file: a header line
/// `dyadic-signal d=<d> n=<n> encoding=<text|binary>` followed either by one
/// decimal value per line or by little-endian `f64` values.
pub fn write_signal_file(path: &Path, signal: &Signal, encoding: SignalEncoding) -> Result<()> {
    let mut out = Vec::new();
    let enc = match encoding {
        SignalEncoding::Text => "text",
        SignalEncoding::Binary => "binary",
    };
    writeln!(
        out,
        "{SIGNAL_MAGIC} d={} n={} encoding={enc}",
        signal.shape.d(),
        signal.shape.n()
    )
    .expect("write to vec");
    match encoding {
        SignalEncoding::Text => {
            for v in &signal.values {
                writeln!(out, "{v}").expect("write to vec");
            }
        }
        SignalEncoding::Binary => {
            for v in &signal.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_signal_file(path: &Path) -> Result<Signal> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(SIGNAL_MAGIC) {
        return Err(bad(format!("header must start with `{SIGNAL_MAGIC}`")));
    }
    let (mut d, mut n, mut encoding) = (None, None, None);
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header field `{field}`")))?;
        match key {
            "d" => d = value.parse::<usize>().ok(),
            "n" => n = value.parse::<usize>().ok(),
            "encoding" => {
                encoding = match value {
                    "text" => Some(SignalEncoding::Text),
                    "binary" => Some(SignalEncoding::Binary),
                    _ => return Err(bad(format!("unknown encoding `{value}`"))),
                }
            }
            _ => return Err(bad(format!("unknown header key `{key}`"))),
        }
    }
    let (Some(d), Some(n), Some(encoding)) = (d, n, encoding) else {
        return Err(bad("header needs d, n and encoding".into()));
    };
    let shape = GridShape::new(d, n)?;
    let body = &bytes[header_end + 1..];
    let values: Vec<f64> = match encoding {
        SignalEncoding::Text => std::str::from_utf8(body)
            .map_err(|_| bad("body is not UTF-8".into()))?
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|_| bad(format!("bad value `{tok}`"))))
            .collect::<Result<_>>()?,
        SignalEncoding::Binary => {
            if body.len() % 8 != 0 {
                return Err(bad("binary body length is not a multiple of 8".into()));
            }
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        }
    };
    Signal::new(shape, values).map_err(|e| bad(e.to_string()))
}
