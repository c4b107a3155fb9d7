use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, NamedTensor};
use super::tensor::{add_outer, Tensor2};
use super::{init_uniform, softmax};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Softmax,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Softmax => {
                let s = softmax(z);
                z.copy_from_slice(&s);
            }
        }
    }

    /// Pulls `grad` (w.r.t. the activated output `y`) back to the
    /// pre-activation, in place.
    fn backward_inplace(self, y: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (g, &yi) in grad.iter_mut().zip(y) {
                    if yi <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (g, yi) in grad.iter_mut().zip(y) {
                    *g *= 1.0 - yi * yi;
                }
            }
            Activation::Softmax => {
                let dot: f64 = y.iter().zip(grad.iter()).map(|(a, b)| a * b).sum();
                for (g, yi) in grad.iter_mut().zip(y) {
                    *g = yi * (*g - dot);
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "softmax" => Activation::Softmax,
            _ => return None,
        })
    }
}

/// Affine map followed by an activation. Weights are `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn random<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: init_uniform(rng, inputs, inputs * outputs),
            bias: init_uniform(rng, inputs, outputs),
            activation,
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.bias);
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs)) {
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        self.activation.apply(out);
    }
}

/// Per-layer values recorded during a forward pass: `values[0]` is the input,
/// `values[k + 1]` the output of layer `k`.
#[derive(Debug, Clone, Default)]
pub struct DenseTrace {
    pub values: Vec<Vec<f64>>,
}

/// Reusable buffers for [`DenseNet::backward_into`].
#[derive(Debug, Clone, Default)]
pub struct DenseScratch {
    delta: Vec<f64>,
    next: Vec<f64>,
}

impl DenseTrace {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Stack of dense layers with chained widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

impl DenseNet {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Shape("layer buffers do not match widths".into()));
            }
        }
        Ok(DenseNet { layers })
    }

    /// `widths = [in, h1, ..., out]`, one activation per layer.
    pub fn random<R: Rng + ?Sized>(
        widths: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_spec(widths, activations)?;
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| DenseLayer::random(w[0], w[1], a, rng))
            .collect();
        Self::from_layers(layers)
    }

    pub fn zeros(widths: &[usize], activations: &[Activation]) -> Result<Self> {
        Self::check_spec(widths, activations)?;
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| DenseLayer::zeros(w[0], w[1], a))
            .collect();
        Self::from_layers(layers)
    }

    fn check_spec(widths: &[usize], activations: &[Activation]) -> Result<()> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::Shape(format!(
                "{} widths need {} activations, got {}",
                widths.len(),
                widths.len().saturating_sub(1),
                activations.len()
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// `(rows, cols)` of every parameter tensor in flat-layout order.
    pub fn shapes(&self) -> Vec<[usize; 2]> {
        self.layers
            .iter()
            .flat_map(|l| [[l.outputs, l.inputs], [l.outputs, 1]])
            .collect()
    }

    /// Flat parameters: for each layer, weights row-major then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tr = DenseTrace::default();
        self.trace_into(x, &mut tr)?;
        Ok(tr.values.pop().unwrap_or_default())
    }

    /// Row-wise forward over a batch.
    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check_input(x.cols())?;
        let mut out = Vec::with_capacity(x.rows() * self.output_width());
        for r in 0..x.rows() {
            out.extend(self.forward_one(x.row(r))?);
        }
        Tensor2::from_vec(x.rows(), self.output_width(), out)
    }

    pub fn trace(&self, x: &[f64]) -> Result<DenseTrace> {
        let mut tr = DenseTrace::default();
        self.trace_into(x, &mut tr)?;
        Ok(tr)
    }

    /// Forward pass that reuses the buffers of an existing trace.
    pub fn trace_into(&self, x: &[f64], trace: &mut DenseTrace) -> Result<()> {
        self.check_input(x.len())?;
        trace.values.resize_with(self.layers.len() + 1, Vec::new);
        trace.values[0].clear();
        trace.values[0].extend_from_slice(x);
        for (k, layer) in self.layers.iter().enumerate() {
            let (done, rest) = trace.values.split_at_mut(k + 1);
            layer.forward_into(&done[k], &mut rest[0]);
        }
        Ok(())
    }

    /// Accumulates parameter gradients into `grads` (flat layout) and returns
    /// the gradient with respect to the network input.
    pub fn backward(&self, trace: &DenseTrace, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut scratch = DenseScratch::default();
        self.backward_into(trace, grad_out, grads, &mut scratch);
        scratch.delta
    }

    /// Allocation-free form of [`Self::backward`]; the input gradient is left
    /// in the scratch buffer.
    pub fn backward_into(
        &self,
        trace: &DenseTrace,
        grad_out: &[f64],
        grads: &mut [f64],
        scratch: &mut DenseScratch,
    ) {
        debug_assert_eq!(grads.len(), self.param_count());
        let mut end = grads.len();
        scratch.delta.clear();
        scratch.delta.extend_from_slice(grad_out);
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.values[k];
            let output = &trace.values[k + 1];
            layer
                .activation
                .backward_inplace(output, &mut scratch.delta);
            let base = end - layer.param_count();
            end = base;
            let nw = layer.weights.len();
            add_outer(&mut grads[base..base + nw], &scratch.delta, input);
            for (gb, d) in grads[base + nw..base + nw + layer.outputs]
                .iter_mut()
                .zip(&scratch.delta)
            {
                *gb += d;
            }
            scratch.next.clear();
            scratch.next.resize(layer.inputs, 0.0);
            for (row, &d) in layer.weights.chunks_exact(layer.inputs).zip(&scratch.delta) {
                if d == 0.0 {
                    continue;
                }
                for (o, w) in scratch.next.iter_mut().zip(row) {
                    *o += w * d;
                }
            }
            std::mem::swap(&mut scratch.delta, &mut scratch.next);
        }
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(Error::Shape(format!(
                "input width {width} does not match network input {}",
                self.input_width()
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, kind: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(kind);
        let acts: Vec<&str> = self.layers.iter().map(|l| l.activation.name()).collect();
        ck.meta.insert("activations".into(), acts.join(","));
        for (k, l) in self.layers.iter().enumerate() {
            ck.tensors.push(NamedTensor {
                name: format!("layer{k}.weight"),
                rows: l.outputs,
                cols: l.inputs,
                data: l.weights.clone(),
            });
            ck.tensors.push(NamedTensor {
                name: format!("layer{k}.bias"),
                rows: l.outputs,
                cols: 1,
                data: l.bias.clone(),
            });
        }
        ck
    }

    /// Rebuilds a network from a checkpoint; shapes are taken from the file.
    pub fn from_checkpoint(ck: &Checkpoint, kind: &str) -> Result<Self> {
        ck.expect_kind(kind)?;
        let acts = ck
            .meta
            .get("activations")
            .ok_or_else(|| Error::Checkpoint("missing activations".into()))?;
        let acts: Vec<Activation> = acts
            .split(',')
            .map(|a| {
                Activation::parse(a)
                    .ok_or_else(|| Error::Checkpoint(format!("unknown activation {a:?}")))
            })
            .collect::<Result<_>>()?;
        if ck.tensors.len() != acts.len() * 2 {
            return Err(Error::Checkpoint(
                "tensor count does not match layer count".into(),
            ));
        }
        let mut layers = Vec::with_capacity(acts.len());
        for (k, act) in acts.into_iter().enumerate() {
            let w = ck.tensor(&format!("layer{k}.weight"))?;
            let b = ck.tensor(&format!("layer{k}.bias"))?;
            if b.rows != w.rows || b.cols != 1 {
                return Err(Error::Checkpoint(format!("layer{k} bias shape mismatch")));
            }
            layers.push(DenseLayer {
                inputs: w.cols,
                outputs: w.rows,
                weights: w.data.clone(),
                bias: b.data.clone(),
                activation: act,
            });
        }
        Self::from_layers(layers)
    }

    /// Loads parameters into an existing architecture, rejecting shape changes.
    pub fn load_params_from(&mut self, ck: &Checkpoint, kind: &str) -> Result<()> {
        let other = Self::from_checkpoint(ck, kind)?;
        if other.shapes() != self.shapes() {
            return Err(Error::Checkpoint(format!(
                "checkpoint shapes {:?} do not match model {:?}",
                other.shapes(),
                self.shapes()
            )));
        }
        *self = other;
        Ok(())
    }
}
