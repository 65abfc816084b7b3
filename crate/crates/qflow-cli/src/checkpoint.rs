//! Versioned text checkpoints.
//!
//! Parameters are stored as raw IEEE-754 bit patterns in hexadecimal (16
//! digits per value), so save → load round-trips bit-exactly on every
//! platform. Metadata lines are `key value...` pairs; the parameter block
//! is preceded by `params <count>` and holds 8 values per line.

use std::fmt::Write as _;
use std::path::Path;

use qflow::nn::{Activation, Mlp, MlpSpec};
use qflow::ode::TimeGrid;

use crate::error::CliError;

pub const FORMAT_HEADER: &str = "qflow-checkpoint v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Flow,
    Classifier,
    Ratio,
}

impl ModelKind {
    fn name(&self) -> &'static str {
        match self {
            ModelKind::Flow => "flow",
            ModelKind::Classifier => "classifier",
            ModelKind::Ratio => "ratio",
        }
    }

    fn parse(s: &str) -> Result<ModelKind, CliError> {
        match s {
            "flow" => Ok(ModelKind::Flow),
            "classifier" => Ok(ModelKind::Classifier),
            "ratio" => Ok(ModelKind::Ratio),
            other => Err(CliError::Config(format!("unknown checkpoint kind '{other}'"))),
        }
    }
}

/// Everything needed to reconstruct a model.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub spec: MlpSpec,
    /// Transport grid (flow checkpoints).
    pub grid: Option<TimeGrid>,
    /// Ratio grid knots and quadrature substeps (ratio checkpoints).
    pub ratio_knots: Option<Vec<f64>>,
    pub substeps: Option<usize>,
    pub params: Vec<f64>,
    pub seed: u64,
    pub config_digest: String,
}

impl Checkpoint {
    pub fn for_flow(flow: &qflow::flow::FlowModel, seed: u64, digest: &str) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Flow,
            spec: flow.field.spec.clone(),
            grid: Some(flow.grid.clone()),
            ratio_knots: None,
            substeps: None,
            params: flow.field.params_flat(),
            seed,
            config_digest: digest.to_string(),
        }
    }

    pub fn for_ratio(model: &qflow::ratio::RatioModel, seed: u64, digest: &str) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Ratio,
            spec: model.net.spec.clone(),
            grid: None,
            ratio_knots: Some(model.knots.clone()),
            substeps: Some(model.substeps),
            params: model.net.params_flat(),
            seed,
            config_digest: digest.to_string(),
        }
    }

    pub fn for_classifier(mlp: &Mlp, seed: u64, digest: &str) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Classifier,
            spec: mlp.spec.clone(),
            grid: None,
            ratio_knots: None,
            substeps: None,
            params: mlp.params_flat(),
            seed,
            config_digest: digest.to_string(),
        }
    }

    pub fn mlp(&self) -> Result<Mlp, CliError> {
        Mlp::from_flat(self.spec.clone(), &self.params).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn flow_model(&self) -> Result<qflow::flow::FlowModel, CliError> {
        if self.kind != ModelKind::Flow {
            return Err(CliError::Config(format!("expected a flow checkpoint, found {}", self.kind.name())));
        }
        let grid = self.grid.clone().ok_or_else(|| CliError::Config("flow checkpoint missing grid".into()))?;
        let dim = self.spec.output_width();
        qflow::flow::FlowModel::new(self.mlp()?, grid, dim).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn ratio_model(&self) -> Result<qflow::ratio::RatioModel, CliError> {
        if self.kind != ModelKind::Ratio {
            return Err(CliError::Config(format!("expected a ratio checkpoint, found {}", self.kind.name())));
        }
        let knots =
            self.ratio_knots.clone().ok_or_else(|| CliError::Config("ratio checkpoint missing knots".into()))?;
        let substeps =
            self.substeps.ok_or_else(|| CliError::Config("ratio checkpoint missing substeps".into()))?;
        qflow::ratio::RatioModel::new(self.mlp()?, knots, substeps).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "kind {}", self.kind.name());
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "config_digest {}", self.config_digest);
        let widths: Vec<String> = self.spec.widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(out, "widths {}", widths.join(" "));
        match self.spec.activation {
            Activation::Softplus { beta } => {
                let _ = writeln!(out, "activation softplus {}", hex_f64(beta));
            }
            Activation::Relu => {
                let _ = writeln!(out, "activation relu");
            }
        }
        if let Some(grid) = &self.grid {
            let knots: Vec<String> = grid.knots().iter().map(|&k| hex_f64(k)).collect();
            let _ = writeln!(out, "grid_knots {}", knots.join(" "));
            let _ = writeln!(out, "subdivisions {}", grid.subdivisions());
        }
        if let Some(knots) = &self.ratio_knots {
            let rendered: Vec<String> = knots.iter().map(|&k| hex_f64(k)).collect();
            let _ = writeln!(out, "ratio_knots {}", rendered.join(" "));
        }
        if let Some(substeps) = self.substeps {
            let _ = writeln!(out, "substeps {substeps}");
        }
        let _ = writeln!(out, "params {}", self.params.len());
        for chunk in self.params.chunks(8) {
            let line: Vec<String> = chunk.iter().map(|&v| hex_f64(v)).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out.push_str("end\n");
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.render()).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Checkpoint, CliError> {
        let bad = |m: String| CliError::Config(m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty checkpoint".into()))?;
        if header != FORMAT_HEADER {
            return Err(bad(format!("unrecognized checkpoint version '{header}'")));
        }
        let mut kind = None;
        let mut seed = 0u64;
        let mut digest = String::new();
        let mut widths: Vec<usize> = Vec::new();
        let mut activation = None;
        let mut grid_knots: Option<Vec<f64>> = None;
        let mut subdivisions: Option<usize> = None;
        let mut ratio_knots: Option<Vec<f64>> = None;
        let mut substeps: Option<usize> = None;
        let mut params: Option<Vec<f64>> = None;

        while let Some(line) = lines.next() {
            let mut parts = line.split_whitespace();
            let Some(key) = parts.next() else { continue };
            match key {
                "kind" => kind = Some(ModelKind::parse(parts.next().unwrap_or(""))?),
                "seed" => {
                    seed = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad seed line".into()))?
                }
                "config_digest" => digest = parts.next().unwrap_or("").to_string(),
                "widths" => {
                    widths = parts
                        .map(|v| v.parse().map_err(|_| bad(format!("bad width '{v}'"))))
                        .collect::<Result<_, _>>()?
                }
                "activation" => match parts.next() {
                    Some("relu") => activation = Some(Activation::Relu),
                    Some("softplus") => {
                        let beta = parse_hex_f64(parts.next().unwrap_or(""))?;
                        activation = Some(Activation::Softplus { beta });
                    }
                    other => return Err(bad(format!("bad activation {other:?}"))),
                },
                "grid_knots" => {
                    grid_knots = Some(parts.map(parse_hex_f64).collect::<Result<_, _>>()?);
                }
                "subdivisions" => {
                    subdivisions =
                        Some(parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad subdivisions".into()))?)
                }
                "ratio_knots" => {
                    ratio_knots = Some(parts.map(parse_hex_f64).collect::<Result<_, _>>()?);
                }
                "substeps" => {
                    substeps =
                        Some(parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad substeps".into()))?)
                }
                "params" => {
                    let count: usize =
                        parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad params count".into()))?;
                    let mut values = Vec::with_capacity(count);
                    for line in lines.by_ref() {
                        if line == "end" {
                            break;
                        }
                        for tok in line.split_whitespace() {
                            values.push(parse_hex_f64(tok)?);
                        }
                    }
                    if values.len() != count {
                        return Err(bad(format!("expected {count} parameters, found {}", values.len())));
                    }
                    params = Some(values);
                }
                _ => return Err(bad(format!("unknown checkpoint key '{key}'"))),
            }
        }

        let kind = kind.ok_or_else(|| bad("missing kind".into()))?;
        let activation = activation.ok_or_else(|| bad("missing activation".into()))?;
        let params = params.ok_or_else(|| bad("missing params".into()))?;
        let spec = MlpSpec::new(widths, activation).map_err(|e| bad(e.to_string()))?;
        if params.len() != spec.param_count() {
            return Err(bad(format!(
                "parameter count {} does not match spec ({} expected)",
                params.len(),
                spec.param_count()
            )));
        }
        let grid = match (kind, grid_knots, subdivisions) {
            (ModelKind::Flow, Some(knots), Some(sub)) => {
                Some(TimeGrid::from_knots(knots, sub).map_err(|e| bad(e.to_string()))?)
            }
            (ModelKind::Flow, _, _) => return Err(bad("flow checkpoint missing grid".into())),
            _ => None,
        };
        Ok(Checkpoint { kind, spec, grid, ratio_knots, substeps, params, seed, config_digest: digest })
    }
}

fn hex_f64(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn parse_hex_f64(tok: &str) -> Result<f64, CliError> {
    u64::from_str_radix(tok, 16)
        .map(f64::from_bits)
        .map_err(|_| CliError::Config(format!("bad hex float '{tok}'")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use qflow::flow::FlowModel;
    use qflow::ratio::RatioModel;

    fn sample_flow() -> FlowModel {
        let spec = MlpSpec::new(vec![3, 8, 2], Activation::Softplus { beta: 20.0 }).unwrap();
        FlowModel::new(Mlp::init(spec, 42), TimeGrid::uniform(5, 4), 2).unwrap()
    }

    #[test]
    fn flow_round_trip_is_bit_exact() {
        let flow = sample_flow();
        let ckpt = Checkpoint::for_flow(&flow, 7, "deadbeefdeadbeef");
        let text = ckpt.render();
        let back = Checkpoint::parse(&text).unwrap();
        assert_eq!(back.params, ckpt.params);
        assert_eq!(back.seed, 7);
        assert_eq!(back.config_digest, "deadbeefdeadbeef");
        let restored = back.flow_model().unwrap();
        assert_eq!(restored.field.params_flat(), flow.field.params_flat());
        assert_eq!(restored.grid, flow.grid);
        // render again: identical bytes
        assert_eq!(back.render(), text);
    }

    #[test]
    fn ratio_round_trip() {
        let spec = MlpSpec::new(vec![3, 6, 1], Activation::Softplus { beta: 20.0 }).unwrap();
        let model = RatioModel::new(Mlp::init(spec, 3), vec![0.0, 0.25, 1.0], 2).unwrap();
        let ckpt = Checkpoint::for_ratio(&model, 1, "00");
        let back = Checkpoint::parse(&ckpt.render()).unwrap();
        let restored = back.ratio_model().unwrap();
        assert_eq!(restored.net.params_flat(), model.net.params_flat());
        assert_eq!(restored.knots, model.knots);
        assert_eq!(restored.substeps, 2);
    }

    #[test]
    fn subnormal_and_special_values_survive() {
        let spec = MlpSpec::new(vec![1, 1], Activation::Relu).unwrap();
        let mut mlp = Mlp::zeroed(spec);
        mlp.weights[0] = qflow::Array::scalar(f64::MIN_POSITIVE / 8.0);
        mlp.biases[0] = qflow::Array::scalar(-0.1 + 0.3 - 0.2); // a hair off zero
        let ckpt = Checkpoint::for_classifier(&mlp, 0, "");
        let back = Checkpoint::parse(&ckpt.render()).unwrap();
        assert_eq!(back.params[0].to_bits(), mlp.weights[0].data()[0].to_bits());
        assert_eq!(back.params[1].to_bits(), mlp.biases[0].data()[0].to_bits());
    }

    #[test]
    fn version_and_kind_mismatches_are_rejected() {
        assert!(Checkpoint::parse("qflow-checkpoint v99\n").is_err());
        let flow = sample_flow();
        let ckpt = Checkpoint::for_flow(&flow, 0, "");
        assert!(ckpt.ratio_model().is_err());
        // truncated parameter block
        let mut text = ckpt.render();
        let cut = text.len() - 40;
        text.truncate(cut);
        assert!(Checkpoint::parse(&text).is_err());
    }
}
