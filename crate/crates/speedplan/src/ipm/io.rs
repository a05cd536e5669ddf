//! Plain-text model file: the four protection curves and the classifier
//! (gate constants plus network layers).
//!
//! Layout, one item per line:
//!
//! ```text
//! ipm-model v1
//! protection
//! C1 <5 coefficients, highest degree first>
//! C2 <3 coefficients>
//! C3 <5 coefficients>
//! C4 <3 coefficients>
//! classifier
//! gate <slope> <offset> <cap> <pass threshold>
//! layer <rows> <cols> <activation>
//! <cols weights>            (one line per row, row-major)
//! <rows bias values>
//! ...
//! ```

use super::mlp::{Activation, Layer, Mlp};
use super::{IpmError, PriorityClassifier, ProtectionTimeModel};
use std::fmt::Write as _;
use std::path::Path;

pub const FORMAT_HEADER: &str = "ipm-model v1";

pub fn model_to_string(protection: &ProtectionTimeModel, classifier: &PriorityClassifier) -> String {
    let mut out = String::new();
    let join = |coeffs: &[f64]| {
        coeffs
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(out, "{FORMAT_HEADER}");
    let _ = writeln!(out, "protection");
    let _ = writeln!(out, "C1 {}", join(&protection.overtake_speed));
    let _ = writeln!(out, "C2 {}", join(&protection.overtake_angle));
    let _ = writeln!(out, "C3 {}", join(&protection.give_way_speed));
    let _ = writeln!(out, "C4 {}", join(&protection.give_way_angle));
    let _ = writeln!(out, "classifier");
    let _ = writeln!(
        out,
        "gate {} {} {} {}",
        classifier.gate_slope, classifier.gate_offset, classifier.gate_cap, classifier.pass_threshold
    );
    for layer in &classifier.mlp.layers {
        let _ = writeln!(
            out,
            "layer {} {} {}",
            layer.rows,
            layer.cols,
            layer.activation.name()
        );
        for r in 0..layer.rows {
            let _ = writeln!(out, "{}", join(&layer.weights[r * layer.cols..(r + 1) * layer.cols]));
        }
        let _ = writeln!(out, "{}", join(&layer.bias));
    }
    out
}

pub fn write_model(
    path: &Path,
    protection: &ProtectionTimeModel,
    classifier: &PriorityClassifier,
) -> Result<(), IpmError> {
    std::fs::write(path, model_to_string(protection, classifier))?;
    Ok(())
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, expecting: &str) -> Result<(usize, &'a str), IpmError> {
        for (i, line) in self.iter.by_ref() {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                return Ok((i + 1, trimmed));
            }
        }
        Err(IpmError::Parse {
            line: 0,
            message: format!("unexpected end of file, expected {expecting}"),
        })
    }
}

fn parse_floats(line: usize, text: &str, expected: usize, what: &str) -> Result<Vec<f64>, IpmError> {
    let values: Result<Vec<f64>, _> = text.split_whitespace().map(str::parse::<f64>).collect();
    let values = values.map_err(|e| IpmError::Parse {
        line,
        message: format!("{what}: {e}"),
    })?;
    if values.len() != expected {
        return Err(IpmError::Parse {
            line,
            message: format!("{what}: expected {expected} values, got {}", values.len()),
        });
    }
    Ok(values)
}

pub fn model_from_string(text: &str) -> Result<(ProtectionTimeModel, PriorityClassifier), IpmError> {
    let mut lines = Lines {
        iter: text.lines().enumerate(),
    };

    let (n, header) = lines.next("format header")?;
    if header != FORMAT_HEADER {
        return Err(IpmError::Parse {
            line: n,
            message: format!("expected `{FORMAT_HEADER}`, got `{header}`"),
        });
    }
    let (n, section) = lines.next("`protection` section")?;
    if section != "protection" {
        return Err(IpmError::Parse {
            line: n,
            message: format!("expected `protection`, got `{section}`"),
        });
    }

    let mut curve = |tag: &str, len: usize| -> Result<Vec<f64>, IpmError> {
        let (n, line) = lines.next("protection curve")?;
        let rest = line.strip_prefix(tag).ok_or_else(|| IpmError::Parse {
            line: n,
            message: format!("expected `{tag} ...`, got `{line}`"),
        })?;
        parse_floats(n, rest, len, tag)
    };
    let c1 = curve("C1", 5)?;
    let c2 = curve("C2", 3)?;
    let c3 = curve("C3", 5)?;
    let c4 = curve("C4", 3)?;
    // Sign invariants are enforced on load, not just on fit.
    let protection = ProtectionTimeModel::new(
        c1.try_into().unwrap(),
        c2.try_into().unwrap(),
        c3.try_into().unwrap(),
        c4.try_into().unwrap(),
    )?;

    let (n, section) = lines.next("`classifier` section")?;
    if section != "classifier" {
        return Err(IpmError::Parse {
            line: n,
            message: format!("expected `classifier`, got `{section}`"),
        });
    }
    let (n, gate_line) = lines.next("gate constants")?;
    let rest = gate_line.strip_prefix("gate").ok_or_else(|| IpmError::Parse {
        line: n,
        message: format!("expected `gate ...`, got `{gate_line}`"),
    })?;
    let gate = parse_floats(n, rest, 4, "gate")?;
    if gate[0] <= 0.0 {
        return Err(IpmError::Parse {
            line: n,
            message: format!("gate slope must be positive, got {}", gate[0]),
        });
    }
    if !(0.0 < gate[3] && gate[3] < 1.0) {
        return Err(IpmError::Parse {
            line: n,
            message: format!("pass threshold must be in (0, 1), got {}", gate[3]),
        });
    }

    let mut layers = Vec::new();
    let mut expected_inputs: Option<usize> = None;
    for _ in 0..3 {
        let (n, header) = lines.next("layer header")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "layer" {
            return Err(IpmError::Parse {
                line: n,
                message: format!("expected `layer <rows> <cols> <activation>`, got `{header}`"),
            });
        }
        let rows: usize = parts[1].parse().map_err(|e| IpmError::Parse {
            line: n,
            message: format!("rows: {e}"),
        })?;
        let cols: usize = parts[2].parse().map_err(|e| IpmError::Parse {
            line: n,
            message: format!("cols: {e}"),
        })?;
        let activation = Activation::from_name(parts[3]).ok_or_else(|| IpmError::Parse {
            line: n,
            message: format!("unknown activation `{}`", parts[3]),
        })?;
        if let Some(expected) = expected_inputs {
            if cols != expected {
                return Err(IpmError::Parse {
                    line: n,
                    message: format!("layer expects {cols} inputs but the previous layer produced {expected}"),
                });
            }
        }
        expected_inputs = Some(rows);
        let mut weights = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (n, line) = lines.next("weight row")?;
            weights.extend(parse_floats(n, line, cols, &format!("weight row {r}"))?);
        }
        let (n, line) = lines.next("bias line")?;
        let bias = parse_floats(n, line, rows, "bias")?;
        layers.push(Layer {
            rows,
            cols,
            weights,
            bias,
            activation,
        });
    }
    if layers[0].cols != 2 {
        return Err(IpmError::Parse {
            line: 0,
            message: format!("classifier must take 2 inputs, got {}", layers[0].cols),
        });
    }

    Ok((
        protection,
        PriorityClassifier {
            mlp: Mlp { layers },
            gate_slope: gate[0],
            gate_offset: gate[1],
            gate_cap: gate[2],
            pass_threshold: gate[3],
        },
    ))
}

pub fn read_model(path: &Path) -> Result<(ProtectionTimeModel, PriorityClassifier), IpmError> {
    let text = std::fs::read_to_string(path)?;
    model_from_string(&text)
}
