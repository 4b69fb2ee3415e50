//! Plain-text model checkpoints.
//!
//! Layout (one record per line, fields separated by single spaces):
//!
//! ```text
//! trilemma-model 1
//! activation relu|tanh
//! gn_groups none|<groups>
//! ws 0|1
//! seed <u64>
//! layers <count>
//! layer <in_dim> <out_dim>
//! w <in_dim values>          (out_dim lines, one weight row each)
//! b <out_dim values>
//! ...                        (repeated per layer)
//! end
//! ```
//!
//! Floats are written in shortest round-trip scientific notation, so a
//! save / load cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::network::{Activation, DenseLayer, ModelParams};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "trilemma-model";
const VERSION: u32 = 1;

fn join(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 24);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:e}");
    }
    s
}

pub fn write_checkpoint<W: Write>(model: &ModelParams, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC} {VERSION}")?;
    writeln!(out, "activation {}", model.activation.name())?;
    match model.gn_groups {
        Some(g) => writeln!(out, "gn_groups {g}")?,
        None => writeln!(out, "gn_groups none")?,
    }
    writeln!(out, "ws {}", u8::from(model.ws_enabled))?;
    writeln!(out, "seed {}", model.seed)?;
    writeln!(out, "layers {}", model.layers.len())?;
    for layer in &model.layers {
        writeln!(out, "layer {} {}", layer.in_dim, layer.out_dim)?;
        for row in layer.weight.chunks(layer.in_dim.max(1)) {
            writeln!(out, "w {}", join(row))?;
        }
        writeln!(out, "b {}", join(&layer.bias))?;
    }
    writeln!(out, "end")
}

struct Lines<R: BufRead> {
    inner: std::io::Lines<R>,
    number: u64,
}

impl<R: BufRead> Lines<R> {
    fn next_record(&mut self, key: &str) -> Result<Vec<String>> {
        self.number += 1;
        let line = match self.inner.next() {
            Some(Ok(l)) => l,
            Some(Err(e)) => return Err(Error::Parse { line: self.number, message: e.to_string() }),
            None => return Err(self.err(format!("unexpected end of checkpoint, expected {key:?}"))),
        };
        let mut fields = line.split(' ').map(str::to_owned);
        match fields.next() {
            Some(k) if k == key => Ok(fields.filter(|f| !f.is_empty()).collect()),
            other => Err(self.err(format!("expected {key:?}, found {:?}", other.unwrap_or_default()))),
        }
    }

    fn err(&self, message: String) -> Error {
        Error::Parse { line: self.number, message }
    }

    fn single<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let fields = self.next_record(key)?;
        match fields.as_slice() {
            [v] => v.parse().map_err(|_| self.err(format!("bad value {v:?} for {key}"))),
            _ => Err(self.err(format!("{key} takes exactly one value"))),
        }
    }

    fn floats(&mut self, key: &str, expected: usize) -> Result<Vec<f64>> {
        let fields = self.next_record(key)?;
        if fields.len() != expected {
            return Err(self.err(format!("{key} row has {} values, expected {expected}", fields.len())));
        }
        fields
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| self.err(format!("bad float {f:?}"))))
            .collect()
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<ModelParams> {
    let mut lines = Lines { inner: BufReader::new(input).lines(), number: 0 };
    let version: u32 = lines.single(CHECKPOINT_MAGIC)?;
    if version != VERSION {
        return Err(lines.err(format!("unsupported checkpoint version {version}")));
    }
    let activation: String = lines.single("activation")?;
    let activation: Activation = activation.parse()?;
    let gn: String = lines.single("gn_groups")?;
    let gn_groups = match gn.as_str() {
        "none" => None,
        g => Some(g.parse().map_err(|_| lines.err(format!("bad group count {g:?}")))?),
    };
    let ws: u8 = lines.single("ws")?;
    let seed: u64 = lines.single("seed")?;
    let count: usize = lines.single("layers")?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let dims = lines.next_record("layer")?;
        let parse_dim = |s: &String| s.parse::<usize>().ok();
        let (in_dim, out_dim) = match dims.as_slice() {
            [a, b] => match (parse_dim(a), parse_dim(b)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(lines.err("bad layer dimensions".into())),
            },
            _ => return Err(lines.err("layer takes two dimensions".into())),
        };
        let mut weight = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..out_dim {
            weight.extend(lines.floats("w", in_dim)?);
        }
        let bias = lines.floats("b", out_dim)?;
        layers.push(DenseLayer { in_dim, out_dim, weight, bias });
    }
    lines.next_record("end")?;
    ModelParams::new(layers, activation, gn_groups, ws == 1, seed)
}

pub fn save_checkpoint(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(model, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file)
}
