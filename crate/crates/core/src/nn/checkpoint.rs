//! Plain-text parameter checkpoints.
//!
//! Layout (whitespace separated, one record per line):
//!
//! ```text
//! laser-checkpoint 1
//! entries <count>
//! mlp <name> layers <n> slope <leaky-slope> output <identity|sigmoid>
//! dense <out> <in>
//! <out lines, each with `in` weights, row-major>
//! <one line with `out` biases>
//! ... (remaining dense layers, then remaining mlp entries)
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! reading a checkpoint back reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::mlp::{Dense, Mlp, OutputActivation};
use crate::error::{Error, Result};

const MAGIC: &str = "laser-checkpoint";
const VERSION: u32 = 1;

/// Named networks stored together in one file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<(String, Mlp)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, mlp: Mlp) {
        self.entries.push((name.into(), mlp));
    }

    pub fn get(&self, name: &str) -> Option<&Mlp> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{MAGIC} {VERSION}\nentries {}\n", self.entries.len()));
        for (name, mlp) in &self.entries {
            out.push_str(&format!(
                "mlp {name} layers {} slope {:e} output {}\n",
                mlp.layers().len(),
                mlp.leaky_slope(),
                mlp.output_activation().name()
            ));
            for layer in mlp.layers() {
                out.push_str(&format!("dense {} {}\n", layer.output_dim(), layer.input_dim()));
                for row in layer.weight.rows() {
                    push_row(&mut out, row.iter());
                }
                push_row(&mut out, layer.bias.iter());
            }
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
            origin,
            last: 0,
        };
        let header = lines.next_tokens()?;
        if header.len() != 2 || header[0] != MAGIC {
            return Err(lines.error("missing checkpoint header"));
        }
        if header[1] != VERSION.to_string() {
            return Err(lines.error(&format!("unsupported checkpoint version {}", header[1])));
        }
        let count_line = lines.next_tokens()?;
        let count: usize = match count_line.as_slice() {
            ["entries", n] => lines.number(n)?,
            _ => return Err(lines.error("expected 'entries <count>'")),
        };
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let head = lines.next_tokens()?;
            let (name, n_layers, slope, output) = match head.as_slice() {
                ["mlp", name, "layers", n, "slope", s, "output", act] => (
                    name.to_string(),
                    lines.number::<usize>(n)?,
                    lines.number::<f64>(s)?,
                    OutputActivation::parse(act)?,
                ),
                _ => return Err(lines.error("expected mlp record")),
            };
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let dims = lines.next_tokens()?;
                let (out_dim, in_dim) = match dims.as_slice() {
                    ["dense", o, i] => (lines.number::<usize>(o)?, lines.number::<usize>(i)?),
                    _ => return Err(lines.error("expected 'dense <out> <in>'")),
                };
                let mut weight = Array2::zeros((out_dim, in_dim));
                for r in 0..out_dim {
                    let row = lines.floats(in_dim)?;
                    for (c, v) in row.into_iter().enumerate() {
                        weight[[r, c]] = v;
                    }
                }
                let bias = Array2::from_shape_vec((1, out_dim), lines.floats(out_dim)?)
                    .expect("bias length checked");
                layers.push(Dense { weight, bias });
            }
            entries.push((name, Mlp::from_layers(layers, slope, output)?));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

fn push_row<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        out.push_str(&format!("{v:e}"));
    }
    out.push('\n');
}

struct Lines<'a, I> {
    inner: I,
    origin: &'a str,
    last: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Lines<'a, I> {
    fn error(&self, reason: &str) -> Error {
        Error::Parse {
            path: self.origin.to_string(),
            line: self.last,
            reason: reason.to_string(),
        }
    }

    fn next_tokens(&mut self) -> Result<Vec<&'a str>> {
        match self.inner.next() {
            Some((i, line)) => {
                self.last = i + 1;
                Ok(line.split_whitespace().collect())
            }
            None => Err(self.error("unexpected end of checkpoint")),
        }
    }

    fn number<T: std::str::FromStr>(&self, token: &str) -> Result<T> {
        token
            .parse()
            .map_err(|_| self.error(&format!("invalid number '{token}'")))
    }

    fn floats(&mut self, expected: usize) -> Result<Vec<f64>> {
        let tokens = self.next_tokens()?;
        if tokens.len() != expected {
            return Err(self.error(&format!("expected {expected} values, found {}", tokens.len())));
        }
        tokens.iter().map(|t| self.number(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Parameterized;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn text_round_trip_is_bit_exact(seed in any::<u64>(), hidden in 1usize..12, depth in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut widths = vec![2];
            widths.extend(std::iter::repeat(hidden).take(depth));
            widths.push(1);
            let mut mlp = Mlp::new(&widths, 0.01, OutputActivation::Sigmoid, &mut rng).unwrap();
            // Biases are zero at init; make them interesting.
            for p in mlp.params_mut() {
                p.mapv_inplace(|v| v * 1.000_000_1 + 1e-300);
            }
            let mut ck = Checkpoint::new();
            ck.push("net", mlp.clone());
            let back = Checkpoint::parse(&ck.to_text(), "mem").unwrap();
            prop_assert_eq!(back, ck);
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ck = Checkpoint::new();
        ck.push("a", Mlp::new(&[2, 3, 1], 0.01, OutputActivation::Identity, &mut rng).unwrap());
        let text = ck.to_text();
        let cut: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(matches!(Checkpoint::parse(&cut, "mem"), Err(Error::Parse { .. })));
        assert!(Checkpoint::parse("garbage", "mem").is_err());
    }
}
