//! Versioned line-oriented text format for [`ClassifierModel`].
//!
//! Floats are written with `Display`, which emits the shortest decimal that
//! parses back to the same bits, so a save/load cycle is exact.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::classifier::{ClassifierModel, EpochStats, TrainingConfig};
use super::mlp::{Activation, Layer, Mlp};
use super::InfonetError;
use crate::circuit::PhaseLabel;

pub const FORMAT_HEADER: &str = "phaseid-model 1";

fn join(values: impl Iterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

fn write_net(out: &mut String, name: &str, net: &Mlp) {
    writeln!(out, "network {name} {}", net.layers.len()).unwrap();
    for layer in &net.layers {
        writeln!(out, "layer {} {} {}", layer.input_dim(), layer.output_dim(), layer.activation).unwrap();
        writeln!(out, "{}", join(layer.weights.iter().copied())).unwrap();
        writeln!(out, "{}", join(layer.bias.iter().copied())).unwrap();
    }
}

impl ClassifierModel {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        writeln!(out, "{FORMAT_HEADER}").unwrap();
        writeln!(out, "beta {}", c.beta).unwrap();
        writeln!(out, "learning_rate {}", c.learning_rate).unwrap();
        writeln!(out, "epochs {}", c.epochs).unwrap();
        writeln!(out, "batch_size {}", c.batch_size).unwrap();
        writeln!(out, "hidden_width {}", c.hidden_width).unwrap();
        writeln!(out, "stat_hidden_width {}", c.stat_hidden_width).unwrap();
        writeln!(out, "encoder_noise_std {}", c.encoder_noise_std).unwrap();
        writeln!(out, "optimizer {}", c.optimizer).unwrap();
        writeln!(out, "seed {}", c.seed).unwrap();
        let vocab: Vec<&str> = self.vocabulary.iter().map(|l| l.as_str()).collect();
        writeln!(out, "vocabulary {}", vocab.join(" ")).unwrap();
        write_net(&mut out, "encoder", &self.encoder);
        write_net(&mut out, "head", &self.head);
        write_net(&mut out, "statnet", &self.statnet);
        writeln!(out, "trace {}", self.trace.len()).unwrap();
        for e in &self.trace {
            writeln!(out, "{} {} {} {}", e.epoch, e.cross_entropy, e.mutual_information, e.total).unwrap();
        }
        writeln!(out, "end").unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self, InfonetError> {
        let mut r = Reader { lines: text.lines().enumerate(), line_no: 0 };
        let header = r.next_line()?;
        if header != FORMAT_HEADER {
            return Err(InfonetError::Format(format!("unsupported header {header:?}")));
        }
        let config = TrainingConfig {
            beta: r.keyed("beta")?,
            learning_rate: r.keyed("learning_rate")?,
            epochs: r.keyed("epochs")?,
            batch_size: r.keyed("batch_size")?,
            hidden_width: r.keyed("hidden_width")?,
            stat_hidden_width: r.keyed("stat_hidden_width")?,
            encoder_noise_std: r.keyed("encoder_noise_std")?,
            optimizer: r.keyed_str("optimizer")?.parse()?,
            seed: r.keyed("seed")?,
        };
        let vocabulary = r
            .keyed_str("vocabulary")?
            .split_whitespace()
            .map(|s| s.parse::<PhaseLabel>().map_err(|e| InfonetError::Format(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let encoder = r.network("encoder")?;
        let head = r.network("head")?;
        let statnet = r.network("statnet")?;
        let count: usize = r.keyed("trace")?;
        let mut trace = Vec::with_capacity(count);
        for _ in 0..count {
            let line = r.next_line()?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(r.err("trace row needs four fields"));
            }
            trace.push(EpochStats {
                epoch: r.parse(f[0])?,
                cross_entropy: r.parse(f[1])?,
                mutual_information: r.parse(f[2])?,
                total: r.parse(f[3])?,
            });
        }
        if r.next_line()? != "end" {
            return Err(r.err("expected end"));
        }
        if head.output_dim() != vocabulary.len() {
            return Err(InfonetError::Format("head width differs from vocabulary size".into()));
        }
        Ok(ClassifierModel { encoder, head, statnet, vocabulary, config, trace })
    }

    pub fn save(&self, path: &Path) -> Result<(), InfonetError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, InfonetError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

struct Reader<'a, I: Iterator<Item = (usize, &'a str)>> {
    lines: I,
    line_no: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Reader<'a, I> {
    fn err(&self, msg: &str) -> InfonetError {
        InfonetError::Format(format!("line {}: {msg}", self.line_no))
    }

    fn next_line(&mut self) -> Result<&'a str, InfonetError> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line_no = i + 1;
                Ok(l)
            }
            None => Err(InfonetError::Format("unexpected end of model".into())),
        }
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T, InfonetError> {
        s.parse().map_err(|_| self.err(&format!("cannot parse {s:?}")))
    }

    fn keyed_str(&mut self, key: &str) -> Result<&'a str, InfonetError> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ if line == key => Ok(""),
            _ => Err(self.err(&format!("expected {key}"))),
        }
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, InfonetError> {
        let v = self.keyed_str(key)?;
        self.parse(v)
    }

    fn floats(&mut self, expected: usize) -> Result<Vec<f64>, InfonetError> {
        let line = self.next_line()?;
        let v = line.split_whitespace().map(|s| self.parse(s)).collect::<Result<Vec<f64>, _>>()?;
        if v.len() != expected {
            return Err(self.err(&format!("expected {expected} values, found {}", v.len())));
        }
        Ok(v)
    }

    fn network(&mut self, name: &str) -> Result<Mlp, InfonetError> {
        let head = self.keyed_str("network")?;
        let (n, count) = head.split_once(' ').ok_or_else(|| self.err("bad network line"))?;
        if n != name {
            return Err(self.err(&format!("expected network {name}")));
        }
        let count: usize = self.parse(count)?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let spec: Vec<&str> = self.keyed_str("layer")?.split_whitespace().collect();
            if spec.len() != 3 {
                return Err(self.err("layer line needs input, output and activation"));
            }
            let input: usize = self.parse(spec[0])?;
            let output: usize = self.parse(spec[1])?;
            let activation: Activation = spec[2].parse()?;
            let weights = Array2::from_shape_vec((output, input), self.floats(input * output)?)
                .map_err(|e| self.err(&e.to_string()))?;
            let bias = Array1::from(self.floats(output)?);
            layers.push(Layer { weights, bias, activation });
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(self.err("layer dimensions do not chain"));
            }
        }
        Ok(Mlp { layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infonet::classifier::train_classifier;
    use crate::numerics::IndexSet;
    use ndarray::Array2;

    fn tiny_model() -> ClassifierModel {
        let x = Array2::from_shape_fn((12, 3), |(i, j)| ((i * 7 + j * 3) % 5) as f64 / 3.0 - 0.4);
        let truth: Vec<PhaseLabel> = (0..12).map(|i| [PhaseLabel::A, PhaseLabel::BC, PhaseLabel::ABC][i % 3]).collect();
        let idx = IndexSet::new(vec![0, 1, 2, 3, 4, 5]).unwrap();
        let cfg = TrainingConfig {
            epochs: 3,
            batch_size: 4,
            hidden_width: 5,
            stat_hidden_width: 4,
            beta: 0.3,
            learning_rate: 0.01,
            encoder_noise_std: 0.1,
            seed: 17,
            ..TrainingConfig::default()
        };
        train_classifier(x.view(), &idx, &truth[..6], &cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut model = tiny_model();
        model.encoder.layers[0].weights[[0, 0]] = 0.1 + 0.2;
        model.encoder.layers[0].bias[0] = -1.0e-308;
        model.head.layers[0].bias[0] = 1.0 / 3.0;
        let back = ClassifierModel::from_text(&model.to_text()).unwrap();
        for (a, b) in model.encoder.layers.iter().zip(&back.encoder.layers) {
            assert!(a.weights.iter().zip(b.weights.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!(a.bias.iter().zip(b.bias.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back, model);
    }

    #[test]
    fn file_round_trip() {
        let model = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        model.save(&path).unwrap();
        assert_eq!(ClassifierModel::load(&path).unwrap(), model);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let text = tiny_model().to_text();
        assert!(ClassifierModel::from_text("nonsense").is_err());
        assert!(ClassifierModel::from_text(&text.replace("phaseid-model 1", "phaseid-model 9")).is_err());
        let truncated: String = text.lines().take(15).collect::<Vec<_>>().join("\n");
        assert!(ClassifierModel::from_text(&truncated).is_err());
    }
}
