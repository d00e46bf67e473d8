//! Desk-scale federated DP-SGD simulation.
//!
//! One round: the server broadcasts the model, each sampled device
//! computes a full-batch local gradient of the multinomial logistic loss,
//! clips it coordinate-wise, encodes each coordinate independently through
//! the configured mechanism, and ships the integer vector to a trusted
//! summing node. The server sees only the coordinate-wise sum, decodes the
//! mean gradient estimate, and takes an SGD step.
//!
//! Everything is keyed off the master seed: datasets, device sampling,
//! and every per-coordinate encoding stream. Device execution order never
//! affects the result.

use crate::error::{Error, Result};
use crate::mechanism::{clip_coordinatewise, decode_aggregate, rqm_sample, RqmParams};
use crate::pbm::{pbm_sample, PbmParams};
use crate::rng::{RngStream, StreamKey};
use serde::{Deserialize, Serialize};

// Stream purposes under the master seed.
const PURPOSE_DATA: u64 = 1;
const PURPOSE_SAMPLING: u64 = 2;

/// Gradient release mechanism plugged into the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SimMechanism {
    /// Clipped gradients released exactly; no privacy, the accuracy
    /// ceiling for the private runs.
    NoiseFree,
    Rqm(RqmParams),
    Pbm(PbmParams),
}

impl SimMechanism {
    pub fn name(&self) -> &'static str {
        match self {
            SimMechanism::NoiseFree => "noise_free",
            SimMechanism::Rqm(_) => "rqm",
            SimMechanism::Pbm(_) => "pbm",
        }
    }

    /// Output support size per coordinate for the integer encodings.
    fn support_size(&self) -> Option<usize> {
        match self {
            SimMechanism::NoiseFree => None,
            SimMechanism::Rqm(p) => Some(p.m()),
            SimMechanism::Pbm(p) => Some(p.support_size()),
        }
    }

    /// Bits needed to transmit one device update of dimension `f`:
    /// `f * ceil(log2 m)` for integer encodings, `f * 64` for raw floats.
    pub fn bits_per_device(&self, f: usize) -> u64 {
        match self.support_size() {
            Some(m) => f as u64 * (m as u64).next_power_of_two().trailing_zeros().max(1) as u64,
            None => f as u64 * 64,
        }
    }
}

/// Linear softmax classifier shape. The flat parameter dimension is
/// `classes * feature_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub feature_dim: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn param_dim(&self) -> usize {
        self.feature_dim * self.classes
    }
}

/// Synthetic federation shape: a seeded Gaussian mixture per class with
/// per-device class proportions skewed by the heterogeneity knob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub samples_per_device: usize,
    /// Distance scale between class means; larger is more separable.
    pub separation: f64,
    /// 0 = iid devices; larger values skew each device's class mix.
    pub heterogeneity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub total_devices: usize,
    pub devices_per_round: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub clipping: f64,
    pub mechanism: SimMechanism,
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    pub master_seed: u64,
    /// When set, each round also records the decode bias
    /// `max_j |g_hat_j - mean clipped gradient_j|`.
    pub diagnostic_mode: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.devices_per_round == 0 || self.devices_per_round > self.total_devices {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= devices_per_round <= total_devices, got {} of {}",
                self.devices_per_round, self.total_devices
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidParameter("need at least one round".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !self.clipping.is_finite() || self.clipping <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "clipping bound must be positive, got {}",
                self.clipping
            )));
        }
        if self.model.feature_dim == 0 || self.model.classes < 2 {
            return Err(Error::InvalidParameter(
                "model needs feature_dim >= 1 and classes >= 2".into(),
            ));
        }
        if self.dataset.samples_per_device == 0 {
            return Err(Error::InvalidParameter(
                "need at least one sample per device".into(),
            ));
        }
        Ok(())
    }
}

/// One device's local data.
#[derive(Debug, Clone)]
pub struct DeviceDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Model parameters plus the round counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub weights: Vec<f64>,
    pub round: usize,
}

impl ModelState {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            weights: vec![0.0; spec.param_dim()],
            round: 0,
        }
    }

    fn assert_finite(&self) -> Result<()> {
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InternalConsistency(format!(
                "non-finite model weight after round {}",
                self.round
            )));
        }
        Ok(())
    }
}

/// The per-device message crossing the device boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientMessage {
    /// Level indices, one per coordinate.
    Levels(Vec<u32>),
    /// Clipped gradient in the clear (noise-free baseline).
    Raw(Vec<f64>),
}

impl GradientMessage {
    pub fn len(&self) -> usize {
        match self {
            GradientMessage::Levels(v) => v.len(),
            GradientMessage::Raw(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-round record.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub bits_per_device: u64,
    pub decode_bias: Option<f64>,
}

/// Draws the class means (shared across devices) for the mixture.
fn class_means(config: &SimConfig) -> Vec<Vec<f64>> {
    let mut rng = RngStream::from_key(StreamKey::root(config.master_seed, PURPOSE_DATA));
    let d = config.model.feature_dim;
    (0..config.model.classes)
        .map(|_| {
            let raw: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            raw.iter()
                .map(|v| v / norm * config.dataset.separation)
                .collect()
        })
        .collect()
}

/// Generates the `total_devices` local datasets. Deterministic given the
/// master seed; device `i`'s data never depends on any other device.
pub fn generate_synthetic_federation(config: &SimConfig) -> Result<Vec<DeviceDataset>> {
    config.validate()?;
    let means = class_means(config);
    let k = config.model.classes;
    let d = config.model.feature_dim;
    let mut devices = Vec::with_capacity(config.total_devices);
    for device_id in 0..config.total_devices {
        let mut rng = RngStream::from_key(StreamKey::new(
            config.master_seed,
            device_id as u64,
            u64::MAX,
            PURPOSE_DATA,
        ));
        // Per-device class mix: logits skewed by the heterogeneity knob.
        let logits: Vec<f64> = (0..k)
            .map(|_| config.dataset.heterogeneity * rng.normal())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();

        let mut features = Vec::with_capacity(config.dataset.samples_per_device);
        let mut labels = Vec::with_capacity(config.dataset.samples_per_device);
        for _ in 0..config.dataset.samples_per_device {
            let mut u = rng.uniform() * total;
            let mut label = k - 1;
            for (c, w) in weights.iter().enumerate() {
                if u < *w {
                    label = c;
                    break;
                }
                u -= w;
            }
            let x: Vec<f64> = (0..d).map(|j| means[label][j] + rng.normal()).collect();
            features.push(x);
            labels.push(label);
        }
        devices.push(DeviceDataset { features, labels });
    }
    Ok(devices)
}

fn softmax_logits(weights: &[f64], x: &[f64], k: usize, d: usize) -> Vec<f64> {
    (0..k)
        .map(|c| {
            let row = &weights[c * d..(c + 1) * d];
            row.iter().zip(x).map(|(w, xi)| w * xi).sum()
        })
        .collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Full-batch gradient of the multinomial logistic loss on one device.
pub fn local_gradient(state: &ModelState, data: &DeviceDataset, model: &ModelSpec) -> Vec<f64> {
    let (k, d) = (model.classes, model.feature_dim);
    let mut grad = vec![0.0; k * d];
    let n = data.features.len() as f64;
    for (x, &y) in data.features.iter().zip(&data.labels) {
        let probs = softmax(&softmax_logits(&state.weights, x, k, d));
        for c in 0..k {
            let coeff = probs[c] - if c == y { 1.0 } else { 0.0 };
            for j in 0..d {
                grad[c * d + j] += coeff * x[j] / n;
            }
        }
    }
    grad
}

/// Mean loss and accuracy over a set of datasets.
pub fn evaluate(state: &ModelState, data: &[DeviceDataset], model: &ModelSpec) -> (f64, f64) {
    let (k, d) = (model.classes, model.feature_dim);
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut count = 0usize;
    for ds in data {
        for (x, &y) in ds.features.iter().zip(&ds.labels) {
            let probs = softmax(&softmax_logits(&state.weights, x, k, d));
            loss -= probs[y].max(1e-300).ln();
            let pred = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            if pred == y {
                correct += 1;
            }
            count += 1;
        }
    }
    (loss / count as f64, correct as f64 / count as f64)
}

/// Computes, clips, and encodes one device's gradient for one round.
/// Each coordinate owns the stream keyed by
/// `(master_seed, device_id, round, coordinate)`.
pub fn local_update(
    state: &ModelState,
    data: &DeviceDataset,
    config: &SimConfig,
    device_id: usize,
    round: usize,
) -> Result<GradientMessage> {
    let grad = local_gradient(state, data, &config.model);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::SimulationAbort {
            round,
            device: device_id,
            reason: "non-finite local gradient".into(),
        });
    }
    let clipped = clip_coordinatewise(&grad, config.clipping);
    match &config.mechanism {
        SimMechanism::NoiseFree => Ok(GradientMessage::Raw(clipped)),
        SimMechanism::Rqm(params) => {
            let mut z = Vec::with_capacity(clipped.len());
            for (coord, &g) in clipped.iter().enumerate() {
                let mut rng = RngStream::from_key(StreamKey::new(
                    config.master_seed,
                    device_id as u64,
                    round as u64,
                    coord as u64,
                ));
                z.push(rqm_sample(g, params, &mut rng)? as u32);
            }
            Ok(GradientMessage::Levels(z))
        }
        SimMechanism::Pbm(params) => {
            let mut z = Vec::with_capacity(clipped.len());
            for (coord, &g) in clipped.iter().enumerate() {
                let mut rng = RngStream::from_key(StreamKey::new(
                    config.master_seed,
                    device_id as u64,
                    round as u64,
                    coord as u64,
                ));
                z.push(pbm_sample(g, params, &mut rng)? as u32);
            }
            Ok(GradientMessage::Levels(z))
        }
    }
}

/// Aggregated view released by the trusted summing node. Individual
/// messages are consumed; only the sum survives.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregateMessage {
    LevelSums(Vec<u64>),
    RawSum(Vec<f64>),
}

/// Coordinate-wise sum of the device messages. The inputs are consumed:
/// nothing but the sum leaves this function.
pub fn secure_aggregate(messages: Vec<GradientMessage>) -> Result<AggregateMessage> {
    let first_len = messages
        .first()
        .ok_or_else(|| Error::InvalidParameter("no messages to aggregate".into()))?
        .len();
    if messages.iter().any(|m| m.len() != first_len) {
        return Err(Error::InvalidParameter(
            "message length mismatch in aggregation".into(),
        ));
    }
    match &messages[0] {
        GradientMessage::Levels(_) => {
            let mut sums = vec![0u64; first_len];
            for msg in &messages {
                match msg {
                    GradientMessage::Levels(z) => {
                        for (s, &v) in sums.iter_mut().zip(z) {
                            *s += v as u64;
                        }
                    }
                    GradientMessage::Raw(_) => {
                        return Err(Error::InvalidParameter(
                            "mixed raw and integer messages".into(),
                        ))
                    }
                }
            }
            Ok(AggregateMessage::LevelSums(sums))
        }
        GradientMessage::Raw(_) => {
            let mut sums = vec![0.0; first_len];
            for msg in &messages {
                match msg {
                    GradientMessage::Raw(g) => {
                        for (s, &v) in sums.iter_mut().zip(g) {
                            *s += v;
                        }
                    }
                    GradientMessage::Levels(_) => {
                        return Err(Error::InvalidParameter(
                            "mixed raw and integer messages".into(),
                        ))
                    }
                }
            }
            Ok(AggregateMessage::RawSum(sums))
        }
    }
}

/// Decodes the aggregate into the mean-gradient estimate.
pub fn decode_mean_gradient(
    aggregate: &AggregateMessage,
    n: usize,
    mechanism: &SimMechanism,
) -> Result<Vec<f64>> {
    match (aggregate, mechanism) {
        (AggregateMessage::RawSum(s), SimMechanism::NoiseFree) => {
            Ok(s.iter().map(|v| v / n as f64).collect())
        }
        (AggregateMessage::LevelSums(s), SimMechanism::Rqm(params)) => {
            s.iter().map(|&z| decode_aggregate(z, n, params)).collect()
        }
        (AggregateMessage::LevelSums(s), SimMechanism::Pbm(params)) => {
            // E[z] = trials * (1/2 + theta g / c) per device; invert the
            // affine map on the mean count.
            let trials = params.trials() as f64;
            Ok(s.iter()
                .map(|&z| {
                    (z as f64 / n as f64 - trials / 2.0) * params.c() / (trials * params.theta())
                })
                .collect())
        }
        _ => Err(Error::InvalidParameter(
            "aggregate kind does not match mechanism".into(),
        )),
    }
}

/// Applies one SGD step from the decoded aggregate.
pub fn server_step(
    state: &ModelState,
    aggregate: &AggregateMessage,
    n: usize,
    config: &SimConfig,
) -> Result<ModelState> {
    let g_hat = decode_mean_gradient(aggregate, n, &config.mechanism)?;
    let weights: Vec<f64> = state
        .weights
        .iter()
        .zip(&g_hat)
        .map(|(w, g)| w - config.learning_rate * g)
        .collect();
    let next = ModelState {
        weights,
        round: state.round + 1,
    };
    next.assert_finite()?;
    Ok(next)
}

/// Full training result: per-round metrics plus the final model.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub metrics: Vec<RoundMetrics>,
    pub final_state: ModelState,
}

/// Runs the training loop. Fully deterministic given the config.
pub fn run_training(config: &SimConfig) -> Result<TrainingRun> {
    config.validate()?;
    let devices = generate_synthetic_federation(config)?;
    let f = config.model.param_dim();
    let bits = config.mechanism.bits_per_device(f);
    let mut state = ModelState::zeros(&config.model);
    let mut metrics = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        let mut sampler = RngStream::from_key(StreamKey::new(
            config.master_seed,
            u64::MAX,
            round as u64,
            PURPOSE_SAMPLING,
        ));
        let sampled =
            sampler.sample_without_replacement(config.total_devices, config.devices_per_round);

        let diagnostic = if config.diagnostic_mode {
            // Mean clipped gradient before encoding, for the bias check.
            let mut mean = vec![0.0; f];
            for &id in &sampled {
                let clipped = clip_coordinatewise(
                    &local_gradient(&state, &devices[id], &config.model),
                    config.clipping,
                );
                for (m, g) in mean.iter_mut().zip(&clipped) {
                    *m += g / sampled.len() as f64;
                }
            }
            Some(mean)
        } else {
            None
        };

        let messages: Vec<GradientMessage> = sampled
            .iter()
            .map(|&id| local_update(&state, &devices[id], config, id, round))
            .collect::<Result<_>>()?;
        let aggregate = secure_aggregate(messages)?;

        let decode_bias = match &diagnostic {
            Some(mean) => {
                let g_hat = decode_mean_gradient(&aggregate, sampled.len(), &config.mechanism)?;
                Some(
                    g_hat
                        .iter()
                        .zip(mean)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max),
                )
            }
            None => None,
        };

        state = server_step(&state, &aggregate, sampled.len(), config)?;
        let (loss, accuracy) = evaluate(&state, &devices, &config.model);
        if !loss.is_finite() {
            return Err(Error::InternalConsistency(format!(
                "non-finite loss at round {round}"
            )));
        }
        metrics.push(RoundMetrics {
            round,
            loss,
            accuracy,
            bits_per_device: bits,
            decode_bias,
        });
    }

    Ok(TrainingRun {
        metrics,
        final_state: state,
    })
}
