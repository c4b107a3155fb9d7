//! Federated rounds: local training on device shards, weighted partial
//! aggregation at base stations and global aggregation at the cloud.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensorkit::{
    softmax_cross_entropy, Activation, DenseNet, DenseScratch, DenseTrace, OptimizerConfig,
};
use crate::{Error, Result};

/// Flat parameter vector plus the `(rows, cols)` of every tensor in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub shapes: Vec<[usize; 2]>,
}

impl ModelParams {
    pub fn new(values: Vec<f64>, shapes: Vec<[usize; 2]>) -> Result<Self> {
        let expected: usize = shapes.iter().map(|[r, c]| r * c).sum();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "shape descriptor covers {expected} values, vector has {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("model parameters must be finite".into()));
        }
        Ok(ModelParams { values, shapes })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.shapes == other.shapes
    }
}

/// Labeled samples held by one device (or a test set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceShard {
    pub device: usize,
    pub width: usize,
    /// Row-major `len x width`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl DeviceShard {
    pub fn new(
        device: usize,
        width: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if features.len() != width * labels.len() {
            return Err(Error::Shape(format!(
                "{} feature values for {} samples of width {width}",
                features.len(),
                labels.len()
            )));
        }
        Ok(DeviceShard {
            device,
            width,
            features,
            labels,
        })
    }

    pub fn empty(device: usize, width: usize) -> Self {
        DeviceShard {
            device,
            width,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, k: usize) -> (&[f64], usize) {
        (
            &self.features[k * self.width..(k + 1) * self.width],
            self.labels[k],
        )
    }

    pub fn push(&mut self, x: &[f64], y: usize) {
        debug_assert_eq!(x.len(), self.width);
        self.features.extend_from_slice(x);
        self.labels.push(y);
    }
}

/// Feed-forward classifier over flow features. Hidden layers use ReLU; the
/// output layer emits logits and the loss is softmax cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    net: DenseNet,
}

impl TaskModel {
    pub fn new<R: Rng + ?Sized>(
        features: usize,
        hidden: &[usize],
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if features == 0 || classes < 2 {
            return Err(Error::Shape(format!(
                "task model needs features > 0 and classes >= 2, got {features} / {classes}"
            )));
        }
        let mut widths = vec![features];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        Ok(TaskModel {
            net: DenseNet::random(&widths, &acts, rng)?,
        })
    }

    pub fn features(&self) -> usize {
        self.net.input_width()
    }

    pub fn classes(&self) -> usize {
        self.net.output_width()
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            values: self.net.params(),
            shapes: self.net.shapes(),
        }
    }

    pub fn set_params(&mut self, p: &ModelParams) -> Result<()> {
        if p.shapes != self.net.shapes() {
            return Err(Error::Shape(format!(
                "parameter shapes {:?} do not match model {:?}",
                p.shapes,
                self.net.shapes()
            )));
        }
        self.net.set_params(&p.values)
    }

    pub fn with_params(&self, p: &ModelParams) -> Result<Self> {
        let mut m = self.clone();
        m.set_params(p)?;
        Ok(m)
    }

    /// Mean loss over `idx` and its gradient, accumulated into `grads`.
    fn batch_grad(
        &self,
        shard: &DeviceShard,
        idx: &[usize],
        grads: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<f64> {
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        let scale = 1.0 / idx.len() as f64;
        for &k in idx {
            let (x, y) = shard.sample(k);
            self.net.trace_into(x, &mut ws.trace)?;
            let (loss, _, mut g) = softmax_cross_entropy(ws.trace.output(), y);
            g.iter_mut().for_each(|v| *v *= scale);
            self.net
                .backward_into(&ws.trace, &g, grads, &mut ws.scratch);
            total += loss;
        }
        Ok(total * scale)
    }

    /// Mean loss and gradient over a whole shard (used by gradient checks).
    pub fn loss_and_grad(&self, shard: &DeviceShard) -> Result<(f64, Vec<f64>)> {
        let idx: Vec<usize> = (0..shard.len()).collect();
        let mut grads = vec![0.0; self.net.param_count()];
        let loss = self.batch_grad(shard, &idx, &mut grads, &mut Workspace::default())?;
        Ok((loss, grads))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.net.forward_one(x)?;
        Ok(argmax(&logits))
    }
}

#[derive(Default)]
struct Workspace {
    trace: DenseTrace,
    scratch: DenseScratch,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Local training settings shared by every device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalTrainConfig {
    /// `K`: passes over the shard.
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        LocalTrainConfig {
            epochs: 5,
            batch_size: 32,
            optimizer: OptimizerConfig::Sgd { lr: 0.3 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub params: ModelParams,
    /// Mean loss over the final epoch (the global model's loss when `K = 0`).
    pub loss: f64,
}

/// Mini-batch training from the global model. Returns `None` for an empty
/// shard, which then contributes nothing to the round.
pub fn local_train<R: Rng + ?Sized>(
    template: &TaskModel,
    global: &ModelParams,
    shard: &DeviceShard,
    cfg: &LocalTrainConfig,
    rng: &mut R,
) -> Result<Option<LocalUpdate>> {
    if shard.is_empty() {
        return Ok(None);
    }
    if shard.width != template.features() {
        return Err(Error::Shape(format!(
            "shard width {} does not match model input {}",
            shard.width,
            template.features()
        )));
    }
    let mut model = template.with_params(global)?;
    if cfg.epochs == 0 {
        let (_, loss) = evaluate(&model, shard)?;
        return Ok(Some(LocalUpdate {
            params: global.clone(),
            loss,
        }));
    }
    let mut opt = cfg.optimizer.build();
    let mut params = global.values.clone();
    let mut grads = vec![0.0; params.len()];
    let mut ws = Workspace::default();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let batch = cfg.batch_size.max(1);
    let mut last_epoch_loss = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut weighted = 0.0;
        for idx in order.chunks(batch) {
            let loss = model.batch_grad(shard, idx, &mut grads, &mut ws)?;
            weighted += loss * idx.len() as f64;
            opt.step(&mut params, &grads)?;
            model.net.set_params(&params)?;
        }
        last_epoch_loss = weighted / shard.len() as f64;
    }
    Ok(Some(LocalUpdate {
        params: ModelParams::new(params, global.shapes.clone())?,
        loss: last_epoch_loss,
    }))
}

/// Accuracy and mean cross-entropy of `model` on `test`.
pub fn evaluate(model: &TaskModel, test: &DeviceShard) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::Shape("evaluation set is empty".into()));
    }
    let mut ws = Workspace::default();
    let mut correct = 0usize;
    let mut loss = 0.0;
    for k in 0..test.len() {
        let (x, y) = test.sample(k);
        model.net.trace_into(x, &mut ws.trace)?;
        let logits = ws.trace.output();
        if argmax(logits) == y {
            correct += 1;
        }
        loss += softmax_cross_entropy(logits, y).0;
    }
    let n = test.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// FedAvg: each upload weighs its sample count.
    #[default]
    DataSize,
    Uniform,
}

/// Weighted mean of `(params, weight)` pairs, returned with the total weight.
///
/// Computed as `p_0 + Σ (w_k / W)(p_k − p_0)`, so identical inputs return
/// that input exactly.
fn weighted_mean(items: &[(&ModelParams, f64)]) -> Result<(ModelParams, f64)> {
    let (first, _) = items
        .first()
        .ok_or_else(|| Error::Aggregation("nothing to aggregate".into()))?;
    let mut total = 0.0;
    for (p, w) in items {
        if !p.same_shape(first) || p.len() != first.len() {
            return Err(Error::Aggregation(format!(
                "shape mismatch: {:?} vs {:?}",
                p.shapes, first.shapes
            )));
        }
        if !(*w >= 0.0) || !w.is_finite() {
            return Err(Error::Aggregation(format!("invalid weight {w}")));
        }
        total += w;
    }
    if !(total > 0.0) {
        return Err(Error::Aggregation(
            "total aggregation weight is zero".into(),
        ));
    }
    let mut out = first.values.clone();
    for (p, w) in &items[1..] {
        let f = w / total;
        if f == 0.0 {
            continue;
        }
        for ((o, v), r) in out.iter_mut().zip(&p.values).zip(&first.values) {
            *o += f * (v - r);
        }
    }
    Ok((
        ModelParams {
            values: out,
            shapes: first.shapes.clone(),
        },
        total,
    ))
}

/// Partial aggregation at one station. Uploads carry their sample counts.
pub fn aggregate_partial(
    uploads: &[(&ModelParams, usize)],
    weighting: Weighting,
) -> Result<(ModelParams, f64)> {
    let items: Vec<(&ModelParams, f64)> = uploads
        .iter()
        .map(|(p, n)| {
            let w = match weighting {
                Weighting::DataSize => *n as f64,
                Weighting::Uniform => 1.0,
            };
            (*p, w)
        })
        .collect();
    weighted_mean(&items)
}

/// Global aggregation of station partials weighted by their totals.
pub fn aggregate_global(partials: &[(ModelParams, f64)]) -> Result<ModelParams> {
    let items: Vec<(&ModelParams, f64)> = partials.iter().map(|(p, w)| (p, *w)).collect();
    Ok(weighted_mean(&items)?.0)
}

/// Two-tier aggregation: uploads are grouped by station, each group is
/// aggregated, then the partials are combined.
pub fn aggregate_hierarchical(
    groups: &[Vec<(&ModelParams, usize)>],
    weighting: Weighting,
) -> Result<ModelParams> {
    let partials = groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| aggregate_partial(g, weighting))
        .collect::<Result<Vec<_>>>()?;
    aggregate_global(&partials)
}

/// A flow is malicious when the share of malicious packets is strictly
/// above `threshold`. An empty flow is benign.
pub fn label_flow(packet_labels: &[bool], threshold: f64) -> bool {
    if packet_labels.is_empty() {
        return false;
    }
    let bad = packet_labels.iter().filter(|b| **b).count();
    bad as f64 / packet_labels.len() as f64 > threshold
}
