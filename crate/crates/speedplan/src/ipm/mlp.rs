//! Minimal dense network used by the priority classifier, with analytic
//! gradients and a seeded mini-batch trainer. Small enough that a dependency
//! would cost more than these loops.

use super::{
    arrival_bounds, priority_features, AbilityFeatures, InteractionPair, IpmError,
    PriorityClassifier, ProtectionTimeModel, FEATURE_CLAMP,
};
use crate::config::{GateParams, TrainParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        (1.0 + z.exp()).ln()
    }
}

/// One dense layer: `out = act(W x + b)` with `W` stored row-major.
#[derive(Debug, Clone)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.bias[r];
            out.push(z);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Xavier-uniform initialization with a fixed seed.
    pub fn random(sizes: &[usize], activations: &[Activation], seed: u64) -> Self {
        assert!(sizes.len() >= 2 && activations.len() == sizes.len() - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(dims, &activation)| {
                let (cols, rows) = (dims[0], dims[1]);
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                Layer {
                    rows,
                    cols,
                    weights: (0..rows * cols)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect(),
                    bias: vec![0.0; rows],
                    activation,
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers {
            layer.affine(&x, &mut z);
            x.clear();
            x.extend(z.iter().map(|&v| layer.activation.apply(v)));
        }
        x
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flattened parameters: per layer, weights row-major then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params());
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
    }

    /// Mean binary cross-entropy of a single-sigmoid-output network.
    ///
    /// Computed from the output pre-activation (`softplus(z) - y z`), which is
    /// exact and keeps the loss smooth for the finite-difference check.
    pub fn bce_loss(&self, inputs: &[[f64; 2]], labels: &[f64]) -> f64 {
        assert_eq!(inputs.len(), labels.len());
        assert_eq!(
            self.layers.last().unwrap().activation,
            Activation::Sigmoid,
            "cross-entropy training expects a sigmoid output"
        );
        let mut total = 0.0;
        let mut z = Vec::new();
        for (x, &y) in inputs.iter().zip(labels) {
            let mut h = x.to_vec();
            for (i, layer) in self.layers.iter().enumerate() {
                layer.affine(&h, &mut z);
                if i + 1 == self.layers.len() {
                    total += softplus(z[0]) - y * z[0];
                } else {
                    h.clear();
                    h.extend(z.iter().map(|&v| layer.activation.apply(v)));
                }
            }
        }
        total / inputs.len() as f64
    }

    /// Mean loss and its gradient with respect to [`Mlp::params`].
    pub fn bce_grad(&self, inputs: &[[f64; 2]], labels: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(inputs.len(), labels.len());
        assert!(!inputs.is_empty());
        let n_layers = self.layers.len();
        let mut grad_w: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| vec![0.0; l.weights.len()])
            .collect();
        let mut grad_b: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
        let mut total = 0.0;
        let inv_n = 1.0 / inputs.len() as f64;

        let mut z = Vec::new();
        for (x, &y) in inputs.iter().zip(labels) {
            // Forward pass keeping every layer's activation output.
            let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
            let mut out_z = 0.0;
            for (i, layer) in self.layers.iter().enumerate() {
                layer.affine(acts.last().unwrap(), &mut z);
                if i + 1 == n_layers {
                    out_z = z[0];
                }
                acts.push(z.iter().map(|&v| layer.activation.apply(v)).collect());
            }
            total += softplus(out_z) - y * out_z;

            // Backward pass: delta is dL/dz of the current layer.
            let mut delta = vec![sigmoid(out_z) - y];
            for i in (0..n_layers).rev() {
                let layer = &self.layers[i];
                let input = &acts[i];
                for r in 0..layer.rows {
                    let d = delta[r] * inv_n;
                    grad_b[i][r] += d;
                    let row = &mut grad_w[i][r * layer.cols..(r + 1) * layer.cols];
                    for (g, xi) in row.iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
                if i > 0 {
                    let below = &self.layers[i - 1];
                    let mut next = vec![0.0; layer.cols];
                    for (c, slot) in next.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (r, d) in delta.iter().enumerate() {
                            acc += d * layer.weights[r * layer.cols + c];
                        }
                        *slot = acc * below.activation.derivative_from_output(input[c]);
                    }
                    delta = next;
                }
            }
        }

        let mut flat = Vec::with_capacity(self.num_params());
        for i in 0..n_layers {
            flat.extend_from_slice(&grad_w[i]);
            flat.extend_from_slice(&grad_b[i]);
        }
        (total * inv_n, flat)
    }
}

/// Feature scale used during training; folded back into the first layer's
/// weights afterwards so stored networks consume raw seconds.
const TRAIN_INPUT_SCALE: f64 = 0.1;

/// Classifier inputs for one interaction pair: ability features from the
/// constant-acceleration arrival windows and the encounter's protection times.
pub fn pair_features(
    model: &ProtectionTimeModel,
    pair: &InteractionPair,
) -> Result<AbilityFeatures, IpmError> {
    let ego = arrival_bounds(
        pair.ego.speed,
        pair.ego.distance,
        pair.ego.accel_max,
        pair.ego.accel_min,
    )?;
    let agent = arrival_bounds(
        pair.agent.speed,
        pair.agent.distance,
        pair.agent.accel_max,
        pair.agent.accel_min,
    )?;
    let protection = model.protection_times(pair.rel_speed, pair.angle);
    Ok(priority_features(ego, agent, protection))
}

fn clamp_features(f: AbilityFeatures) -> [f64; 2] {
    [
        f.overtake_ability.clamp(-FEATURE_CLAMP, FEATURE_CLAMP),
        f.give_way_ability.clamp(-FEATURE_CLAMP, FEATURE_CLAMP),
    ]
}

/// Report of one training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainReport {
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// Trains the pass-first classifier on labeled interaction pairs.
///
/// Labels are `time_gap < 0` (the ego passed first). The network is a
/// 2-16-16-1 stack with saturating hidden units and a sigmoid output,
/// trained by seeded mini-batch gradient descent on cross-entropy.
pub fn train_classifier(
    model: &ProtectionTimeModel,
    pairs: &[InteractionPair],
    gate: GateParams,
    cfg: &TrainParams,
) -> Result<(PriorityClassifier, TrainReport), IpmError> {
    if pairs.is_empty() {
        return Err(IpmError::InsufficientData(
            "training needs a non-empty pair set".into(),
        ));
    }
    let mut inputs = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let f = clamp_features(pair_features(model, pair)?);
        inputs.push([f[0] * TRAIN_INPUT_SCALE, f[1] * TRAIN_INPUT_SCALE]);
        labels.push(if pair.ego_first() { 1.0 } else { 0.0 });
    }

    let mut net = Mlp::random(
        &[2, 16, 16, 1],
        &[Activation::Tanh, Activation::Tanh, Activation::Sigmoid],
        cfg.seed,
    );
    let mut velocity = vec![0.0; net.num_params()];
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let batch = cfg.batch_size.max(1);
    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        if epoch > 0 && epoch % (cfg.epochs / 4).max(1) == 0 {
            lr *= 0.5;
        }
        // Fisher-Yates with the seeded generator.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut params = net.params();
        for chunk in order.chunks(batch) {
            let bx: Vec<[f64; 2]> = chunk.iter().map(|&i| inputs[i]).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| labels[i]).collect();
            let (_, grad) = net.bce_grad(&bx, &by);
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - lr * g;
                *p += *v;
            }
            net.set_params(&params);
        }
    }

    let final_loss = net.bce_loss(&inputs, &labels);
    let correct = inputs
        .iter()
        .zip(&labels)
        .filter(|(x, &y)| (net.forward(*x)[0] >= 0.5) == (y >= 0.5))
        .count();
    let train_accuracy = correct as f64 / inputs.len() as f64;
    if train_accuracy < 0.98 {
        return Err(IpmError::NoConvergence {
            loss: final_loss,
            accuracy: train_accuracy,
        });
    }

    // Fold the input scale into the first layer so the stored network takes
    // raw features in seconds.
    for w in &mut net.layers[0].weights {
        *w *= TRAIN_INPUT_SCALE;
    }

    Ok((
        PriorityClassifier {
            mlp: net,
            gate_slope: gate.slope,
            gate_offset: gate.offset,
            gate_cap: gate.cap,
            pass_threshold: gate.pass_threshold,
        },
        TrainReport {
            final_loss,
            train_accuracy,
        },
    ))
}

/// Fraction of pairs whose pass-first prediction at `threshold` matches the
/// sign of the recorded time gap. The gate is bypassed here: accuracy
/// measures the network itself, as in held-out evaluation.
pub fn classifier_accuracy(
    clf: &PriorityClassifier,
    model: &ProtectionTimeModel,
    pairs: &[InteractionPair],
    threshold: f64,
) -> Result<f64, IpmError> {
    if pairs.is_empty() {
        return Err(IpmError::InsufficientData(
            "accuracy needs a non-empty pair set".into(),
        ));
    }
    let mut correct = 0usize;
    for pair in pairs {
        let x = clamp_features(pair_features(model, pair)?);
        let p = clf.mlp.forward(&x)[0];
        if (p >= threshold) == pair.ego_first() {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipm::AgentKinematics;
    use approx::assert_abs_diff_eq;

    #[test]
    fn forward_matches_hand_computation() {
        let net = Mlp {
            layers: vec![
                Layer {
                    rows: 2,
                    cols: 2,
                    weights: vec![1.0, 0.0, 0.0, 1.0],
                    bias: vec![0.5, -0.5],
                    activation: Activation::Tanh,
                },
                Layer {
                    rows: 1,
                    cols: 2,
                    weights: vec![2.0, -1.0],
                    bias: vec![0.1],
                    activation: Activation::Sigmoid,
                },
            ],
        };
        let out = net.forward(&[0.3, 0.7]);
        let h = [(0.3f64 + 0.5).tanh(), (0.7f64 - 0.5).tanh()];
        let z = 2.0 * h[0] - 1.0 * h[1] + 0.1;
        assert_abs_diff_eq!(out[0], 1.0 / (1.0 + (-z).exp()), epsilon = 1e-12);
    }

    #[test]
    fn params_round_trip() {
        let mut net = Mlp::random(
            &[2, 4, 1],
            &[Activation::Tanh, Activation::Sigmoid],
            7,
        );
        let p = net.params();
        let mut q = p.clone();
        q[3] = 0.1234;
        net.set_params(&q);
        assert_eq!(net.params(), q);
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut net = Mlp::random(
            &[2, 16, 16, 1],
            &[Activation::Tanh, Activation::Tanh, Activation::Sigmoid],
            123,
        );
        let inputs: Vec<[f64; 2]> = vec![
            [0.3, -0.2],
            [-1.0, 0.5],
            [0.8, 0.8],
            [-0.4, -0.9],
            [0.05, 0.3],
        ];
        let labels = vec![1.0, 0.0, 1.0, 0.0, 1.0];
        let (_, grad) = net.bce_grad(&inputs, &labels);
        let params = net.params();
        let eps = 1e-6;
        for k in (0..params.len()).step_by(17) {
            let mut plus = params.clone();
            plus[k] += eps;
            net.set_params(&plus);
            let lp = net.bce_loss(&inputs, &labels);
            let mut minus = params.clone();
            minus[k] -= eps;
            net.set_params(&minus);
            let lm = net.bce_loss(&inputs, &labels);
            net.set_params(&params);
            let fd = (lp - lm) / (2.0 * eps);
            let denom = fd.abs().max(grad[k].abs()).max(1e-8);
            assert!(
                ((grad[k] - fd) / denom).abs() < 1e-4,
                "param {k}: analytic {} vs fd {}",
                grad[k],
                fd
            );
        }
    }

    fn pair_with_gap(ego_d: f64, agent_d: f64, gap: f64) -> InteractionPair {
        InteractionPair {
            rel_speed: 0.0,
            angle: 1.2,
            time_gap: gap,
            ego: AgentKinematics {
                speed: 5.0,
                distance: ego_d,
                accel_max: 1.5,
                accel_min: -3.0,
            },
            agent: AgentKinematics {
                speed: 5.0,
                distance: agent_d,
                accel_max: 1.5,
                accel_min: -3.0,
            },
        }
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let model = ProtectionTimeModel::constant(-1.5, 2.0).unwrap();
        let err = train_classifier(
            &model,
            &[],
            GateParams {
                slope: 0.5,
                offset: 1.5,
                cap: 5.0,
                pass_threshold: 0.95,
            },
            &TrainParams {
                epochs: 1,
                learning_rate: 0.05,
                batch_size: 32,
                momentum: 0.9,
                seed: 1,
            },
        );
        assert!(matches!(err, Err(IpmError::InsufficientData(_))));
    }

    #[test]
    fn separable_by_overtake_ability_trains_to_high_accuracy() {
        // Labels follow the sign of the overtake ability exactly.
        let model = ProtectionTimeModel::constant(-1.5, 2.0).unwrap();
        let mut pairs = Vec::new();
        for i in 0..600 {
            let ego_d = 5.0 + (i % 40) as f64;
            let agent_d = 5.0 + ((i * 7) % 40) as f64;
            let probe = pair_with_gap(ego_d, agent_d, -1.0);
            let f = pair_features(&model, &probe).unwrap();
            let gap = if f.overtake_ability < 0.0 { -1.0 } else { 1.0 };
            pairs.push(pair_with_gap(ego_d, agent_d, gap));
        }
        let (held_out, train) = pairs.split_at(150);
        let (clf, report) = train_classifier(
            &model,
            train,
            GateParams {
                slope: 0.5,
                offset: 1.5,
                cap: 5.0,
                pass_threshold: 0.95,
            },
            &TrainParams {
                epochs: 200,
                learning_rate: 0.05,
                batch_size: 32,
                momentum: 0.9,
                seed: 3,
            },
        )
        .unwrap();
        assert!(report.train_accuracy >= 0.99);
        let acc = classifier_accuracy(&clf, &model, held_out, 0.5).unwrap();
        assert!(acc >= 0.99, "held-out accuracy {acc}");
    }
}
