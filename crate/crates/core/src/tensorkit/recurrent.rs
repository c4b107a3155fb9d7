use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, NamedTensor};
use super::dense::{Activation, DenseNet, DenseTrace};
use super::loss::LossKind;
use super::tensor::{add_outer, matvec_slice, matvec_t_slice};
use super::{init_uniform, sigmoid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }

    fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::Config(format!("unknown cell kind {other:?}"))),
        }
    }
}

/// A recurrent cell unrolled over a whole sequence, starting from a zero state.
pub trait RecurrentCell {
    type Trace;

    fn input_width(&self) -> usize;
    fn hidden_width(&self) -> usize;
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    fn run(&self, seq: &[Vec<f64>]) -> Result<Self::Trace>;
    fn final_hidden(trace: &Self::Trace) -> &[f64];
    /// Backpropagates `dh_final` through time, accumulating into `grads`.
    fn backward(&self, trace: &Self::Trace, dh_final: &[f64], grads: &mut [f64]);
}

/// Shared storage for gated cells: input weights `W` (`gates*H x I`),
/// recurrent weights `U` (`gates*H x H`) and bias, each stacked gate by gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GatedParams {
    input: usize,
    hidden: usize,
    w: Vec<f64>,
    u: Vec<f64>,
    b: Vec<f64>,
}

impl GatedParams {
    fn random<R: Rng + ?Sized>(gates: usize, input: usize, hidden: usize, rng: &mut R) -> Self {
        let fan_in = input + hidden;
        GatedParams {
            input,
            hidden,
            w: init_uniform(rng, fan_in, gates * hidden * input),
            u: init_uniform(rng, fan_in, gates * hidden * hidden),
            b: init_uniform(rng, fan_in, gates * hidden),
        }
    }

    fn len(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len()
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.w);
        out.extend_from_slice(&self.u);
        out.extend_from_slice(&self.b);
        out
    }

    fn load(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.len() {
            return Err(Error::Shape(format!(
                "expected {} cell parameters, got {}",
                self.len(),
                p.len()
            )));
        }
        let (w, rest) = p.split_at(self.w.len());
        let (u, b) = rest.split_at(self.u.len());
        self.w.copy_from_slice(w);
        self.u.copy_from_slice(u);
        self.b.copy_from_slice(b);
        Ok(())
    }

    /// `W x + b` for all gates at once.
    fn input_part(&self, x: &[f64]) -> Vec<f64> {
        let mut a = matvec_slice(&self.w, x);
        for (ai, bi) in a.iter_mut().zip(&self.b) {
            *ai += bi;
        }
        a
    }

    fn check_seq(&self, seq: &[Vec<f64>]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Shape("empty input sequence".into()));
        }
        if let Some(x) = seq.iter().find(|x| x.len() != self.input) {
            return Err(Error::Shape(format!(
                "sequence step has width {}, cell expects {}",
                x.len(),
                self.input
            )));
        }
        Ok(())
    }

    /// Accumulates `dpre xᵀ`, `dpre hᵀ` and `dpre` into the flat gradient.
    fn accumulate(&self, grads: &mut [f64], dpre: &[f64], x: &[f64], h_prev: &[f64]) {
        let (gw, rest) = grads.split_at_mut(self.w.len());
        let (gu, gb) = rest.split_at_mut(self.u.len());
        add_outer(gw, dpre, x);
        add_outer(gu, dpre, h_prev);
        for (g, d) in gb.iter_mut().zip(dpre) {
            *g += d;
        }
    }

    fn checkpoint_tensors(&self, prefix: &str, gates: usize, out: &mut Vec<NamedTensor>) {
        let rows = gates * self.hidden;
        out.push(NamedTensor {
            name: format!("{prefix}.w"),
            rows,
            cols: self.input,
            data: self.w.clone(),
        });
        out.push(NamedTensor {
            name: format!("{prefix}.u"),
            rows,
            cols: self.hidden,
            data: self.u.clone(),
        });
        out.push(NamedTensor {
            name: format!("{prefix}.b"),
            rows,
            cols: 1,
            data: self.b.clone(),
        });
    }

    fn from_checkpoint(ck: &Checkpoint, prefix: &str, gates: usize) -> Result<Self> {
        let w = ck.tensor(&format!("{prefix}.w"))?;
        let u = ck.tensor(&format!("{prefix}.u"))?;
        let b = ck.tensor(&format!("{prefix}.b"))?;
        let hidden = u.cols;
        let rows = gates * hidden;
        if w.rows != rows || u.rows != rows || b.rows != rows || b.cols != 1 {
            return Err(Error::Checkpoint(format!(
                "{prefix}: gate tensors inconsistent with hidden width {hidden}"
            )));
        }
        Ok(GatedParams {
            input: w.cols,
            hidden,
            w: w.data.clone(),
            u: u.data.clone(),
            b: b.data.clone(),
        })
    }
}

/// Gated recurrent unit.
///
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `ĥ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ ĥ`.
/// Gate blocks are stored in the order z, r, h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    p: GatedParams,
}

#[derive(Debug, Clone)]
struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    hhat: Vec<f64>,
    rh: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GruTrace {
    steps: Vec<GruStep>,
    h: Vec<f64>,
}

impl GruCell {
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        GruCell {
            p: GatedParams::random(3, input, hidden, rng),
        }
    }

    /// One recurrence step `h' = GRU(h, x)`.
    pub fn step_hidden(&self, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.p.hidden || x.len() != self.p.input {
            return Err(Error::Shape(format!(
                "GRU step expects h of width {} and x of width {}, got {} and {}",
                self.p.hidden,
                self.p.input,
                h.len(),
                x.len()
            )));
        }
        let s = self.step(x, h);
        Ok((0..h.len())
            .map(|k| (1.0 - s.z[k]) * h[k] + s.z[k] * s.hhat[k])
            .collect())
    }

    fn step(&self, x: &[f64], h: &[f64]) -> GruStep {
        let hd = self.p.hidden;
        let a = self.p.input_part(x);
        let u = &self.p.u;
        let uz = matvec_slice(&u[..hd * hd], h);
        let ur = matvec_slice(&u[hd * hd..2 * hd * hd], h);
        let z: Vec<f64> = (0..hd).map(|k| sigmoid(a[k] + uz[k])).collect();
        let r: Vec<f64> = (0..hd).map(|k| sigmoid(a[hd + k] + ur[k])).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let uh = matvec_slice(&u[2 * hd * hd..], &rh);
        let hhat: Vec<f64> = (0..hd).map(|k| (a[2 * hd + k] + uh[k]).tanh()).collect();
        GruStep {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            z,
            r,
            hhat,
            rh,
        }
    }
}

impl RecurrentCell for GruCell {
    type Trace = GruTrace;

    fn input_width(&self) -> usize {
        self.p.input
    }

    fn hidden_width(&self) -> usize {
        self.p.hidden
    }

    fn param_count(&self) -> usize {
        self.p.len()
    }

    fn params(&self) -> Vec<f64> {
        self.p.flat()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.p.load(params)
    }

    fn run(&self, seq: &[Vec<f64>]) -> Result<GruTrace> {
        self.p.check_seq(seq)?;
        let mut h = vec![0.0; self.p.hidden];
        let mut steps = Vec::with_capacity(seq.len());
        for x in seq {
            let s = self.step(x, &h);
            h = (0..h.len())
                .map(|k| (1.0 - s.z[k]) * h[k] + s.z[k] * s.hhat[k])
                .collect();
            steps.push(s);
        }
        Ok(GruTrace { steps, h })
    }

    fn final_hidden(trace: &GruTrace) -> &[f64] {
        &trace.h
    }

    fn backward(&self, trace: &GruTrace, dh_final: &[f64], grads: &mut [f64]) {
        let hd = self.p.hidden;
        let u = &self.p.u;
        let mut dh = dh_final.to_vec();
        let mut dpre = vec![0.0; 3 * hd];
        for s in trace.steps.iter().rev() {
            let mut dh_prev: Vec<f64> = (0..hd).map(|k| dh[k] * (1.0 - s.z[k])).collect();
            for k in 0..hd {
                let dz = dh[k] * (s.hhat[k] - s.h_prev[k]);
                let dhhat = dh[k] * s.z[k];
                dpre[k] = dz * s.z[k] * (1.0 - s.z[k]);
                dpre[2 * hd + k] = dhhat * (1.0 - s.hhat[k] * s.hhat[k]);
            }
            let da = &dpre[2 * hd..].to_vec();
            let drh = matvec_t_slice(&u[2 * hd * hd..], da, hd);
            for k in 0..hd {
                let dr = drh[k] * s.h_prev[k];
                dpre[hd + k] = dr * s.r[k] * (1.0 - s.r[k]);
                dh_prev[k] += drh[k] * s.r[k];
            }
            // W and b see all three gates with the raw input; U_h sees r ⊙ h.
            let (gw, rest) = grads.split_at_mut(self.p.w.len());
            let (gu, gb) = rest.split_at_mut(self.p.u.len());
            add_outer(gw, &dpre, &s.x);
            add_outer(&mut gu[..2 * hd * hd], &dpre[..2 * hd], &s.h_prev);
            add_outer(&mut gu[2 * hd * hd..], da, &s.rh);
            for (g, d) in gb.iter_mut().zip(&dpre) {
                *g += d;
            }
            let back = matvec_t_slice(&u[..2 * hd * hd], &dpre[..2 * hd], hd);
            for k in 0..hd {
                dh_prev[k] += back[k];
            }
            dh = dh_prev;
        }
    }
}

/// Long short-term memory cell with gate blocks i, f, g, o.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    p: GatedParams,
}

#[derive(Debug, Clone)]
struct LstmStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tc: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmTrace {
    steps: Vec<LstmStep>,
    h: Vec<f64>,
}

impl LstmCell {
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        LstmCell {
            p: GatedParams::random(4, input, hidden, rng),
        }
    }
}

impl RecurrentCell for LstmCell {
    type Trace = LstmTrace;

    fn input_width(&self) -> usize {
        self.p.input
    }

    fn hidden_width(&self) -> usize {
        self.p.hidden
    }

    fn param_count(&self) -> usize {
        self.p.len()
    }

    fn params(&self) -> Vec<f64> {
        self.p.flat()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.p.load(params)
    }

    fn run(&self, seq: &[Vec<f64>]) -> Result<LstmTrace> {
        self.p.check_seq(seq)?;
        let hd = self.p.hidden;
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut steps = Vec::with_capacity(seq.len());
        for x in seq {
            let mut a = self.p.input_part(x);
            for (ai, ui) in a.iter_mut().zip(matvec_slice(&self.p.u, &h)) {
                *ai += ui;
            }
            let i: Vec<f64> = a[..hd].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = a[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = a[2 * hd..3 * hd].iter().map(|v| v.tanh()).collect();
            let o: Vec<f64> = a[3 * hd..].iter().map(|&v| sigmoid(v)).collect();
            let c_new: Vec<f64> = (0..hd).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
            let tc: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
            let h_new: Vec<f64> = (0..hd).map(|k| o[k] * tc[k]).collect();
            steps.push(LstmStep {
                x: x.clone(),
                h_prev: std::mem::replace(&mut h, h_new),
                c_prev: std::mem::replace(&mut c, c_new),
                i,
                f,
                g,
                o,
                tc,
            });
        }
        Ok(LstmTrace { steps, h })
    }

    fn final_hidden(trace: &LstmTrace) -> &[f64] {
        &trace.h
    }

    fn backward(&self, trace: &LstmTrace, dh_final: &[f64], grads: &mut [f64]) {
        let hd = self.p.hidden;
        let mut dh = dh_final.to_vec();
        let mut dc = vec![0.0; hd];
        let mut dpre = vec![0.0; 4 * hd];
        for s in trace.steps.iter().rev() {
            for k in 0..hd {
                let d_o = dh[k] * s.tc[k];
                dc[k] += dh[k] * s.o[k] * (1.0 - s.tc[k] * s.tc[k]);
                let di = dc[k] * s.g[k];
                let dg = dc[k] * s.i[k];
                let df = dc[k] * s.c_prev[k];
                dpre[k] = di * s.i[k] * (1.0 - s.i[k]);
                dpre[hd + k] = df * s.f[k] * (1.0 - s.f[k]);
                dpre[2 * hd + k] = dg * (1.0 - s.g[k] * s.g[k]);
                dpre[3 * hd + k] = d_o * s.o[k] * (1.0 - s.o[k]);
                dc[k] *= s.f[k];
            }
            self.p.accumulate(grads, &dpre, &s.x, &s.h_prev);
            dh = matvec_t_slice(&self.p.u, &dpre, hd);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Cell {
    Gru(GruCell),
    Lstm(LstmCell),
}

#[derive(Debug, Clone)]
enum CellTrace {
    Gru(GruTrace),
    Lstm(LstmTrace),
}

/// Forward record of [`SequenceClassifier`], needed for backpropagation.
#[derive(Debug, Clone)]
pub struct SequenceTrace {
    cell: CellTrace,
    head: DenseTrace,
}

impl SequenceTrace {
    pub fn probabilities(&self) -> &[f64] {
        self.head.output()
    }
}

/// Recurrent encoder followed by a dense softmax head that reads the final
/// hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceClassifier {
    kind: CellKind,
    cell: Cell,
    head: DenseNet,
    loss: LossKind,
}

impl SequenceClassifier {
    pub fn random<R: Rng + ?Sized>(
        kind: CellKind,
        input: usize,
        hidden: usize,
        classes: usize,
        loss: LossKind,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 || classes < 2 {
            return Err(Error::Shape(format!(
                "classifier needs positive widths and at least two classes \
                 (input {input}, hidden {hidden}, classes {classes})"
            )));
        }
        let cell = match kind {
            CellKind::Gru => Cell::Gru(GruCell::random(input, hidden, rng)),
            CellKind::Lstm => Cell::Lstm(LstmCell::random(input, hidden, rng)),
        };
        let head = DenseNet::random(&[hidden, classes], &[Activation::Softmax], rng)?;
        Ok(SequenceClassifier {
            kind,
            cell,
            head,
            loss,
        })
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn input_width(&self) -> usize {
        match &self.cell {
            Cell::Gru(c) => c.input_width(),
            Cell::Lstm(c) => c.input_width(),
        }
    }

    pub fn hidden_width(&self) -> usize {
        match &self.cell {
            Cell::Gru(c) => c.hidden_width(),
            Cell::Lstm(c) => c.hidden_width(),
        }
    }

    pub fn classes(&self) -> usize {
        self.head.output_width()
    }

    fn cell_params(&self) -> usize {
        match &self.cell {
            Cell::Gru(c) => c.param_count(),
            Cell::Lstm(c) => c.param_count(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.cell_params() + self.head.param_count()
    }

    /// Flat parameters: cell first, then the head.
    pub fn params(&self) -> Vec<f64> {
        let mut p = match &self.cell {
            Cell::Gru(c) => c.params(),
            Cell::Lstm(c) => c.params(),
        };
        p.extend(self.head.params());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let (cp, hp) = params.split_at(self.cell_params());
        match &mut self.cell {
            Cell::Gru(c) => c.set_params(cp)?,
            Cell::Lstm(c) => c.set_params(cp)?,
        }
        self.head.set_params(hp)
    }

    pub fn trace(&self, seq: &[Vec<f64>]) -> Result<SequenceTrace> {
        let (cell, h) = match &self.cell {
            Cell::Gru(c) => {
                let t = c.run(seq)?;
                let h = GruCell::final_hidden(&t).to_vec();
                (CellTrace::Gru(t), h)
            }
            Cell::Lstm(c) => {
                let t = c.run(seq)?;
                let h = LstmCell::final_hidden(&t).to_vec();
                (CellTrace::Lstm(t), h)
            }
        };
        let head = self.head.trace(&h)?;
        Ok(SequenceTrace { cell, head })
    }

    /// Class probabilities for one sequence.
    pub fn predict_proba(&self, seq: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.trace(seq)?.probabilities().to_vec())
    }

    /// Loss against a one-hot target and its gradient over the flat parameters.
    pub fn loss_and_grad(&self, seq: &[Vec<f64>], class: usize) -> Result<(f64, Vec<f64>)> {
        let mut grads = vec![0.0; self.param_count()];
        let loss = self.accumulate_grad(seq, class, &mut grads)?;
        Ok((loss, grads))
    }

    /// Like [`Self::loss_and_grad`] but adds into an existing buffer.
    pub fn accumulate_grad(
        &self,
        seq: &[Vec<f64>],
        class: usize,
        grads: &mut [f64],
    ) -> Result<f64> {
        if class >= self.classes() {
            return Err(Error::Shape(format!(
                "class {class} out of range for {} classes",
                self.classes()
            )));
        }
        let tr = self.trace(seq)?;
        let mut target = vec![0.0; self.classes()];
        target[class] = 1.0;
        let (loss, dprob) = self.loss.evaluate(tr.probabilities(), &target);
        let split = self.cell_params();
        let (gc, gh) = grads.split_at_mut(split);
        let dh = self.head.backward(&tr.head, &dprob, gh);
        match (&self.cell, &tr.cell) {
            (Cell::Gru(c), CellTrace::Gru(t)) => c.backward(t, &dh, gc),
            (Cell::Lstm(c), CellTrace::Lstm(t)) => c.backward(t, &dh, gc),
            _ => return Err(Error::InvalidState("trace does not match cell kind".into())),
        }
        Ok(loss)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(&format!("{}-classifier", self.kind));
        ck.meta
            .insert("hidden".into(), self.hidden_width().to_string());
        ck.meta
            .insert("input".into(), self.input_width().to_string());
        ck.meta.insert(
            "loss".into(),
            match self.loss {
                LossKind::Mse => "mse".into(),
                LossKind::CrossEntropy => "cross-entropy".into(),
            },
        );
        match &self.cell {
            Cell::Gru(c) => c.p.checkpoint_tensors("cell", 3, &mut ck.tensors),
            Cell::Lstm(c) => c.p.checkpoint_tensors("cell", 4, &mut ck.tensors),
        }
        let head = self.head.to_checkpoint("head");
        ck.meta.insert(
            "head.activations".into(),
            head.meta.get("activations").cloned().unwrap_or_default(),
        );
        for mut t in head.tensors {
            t.name = format!("head.{}", t.name);
            ck.tensors.push(t);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind: CellKind = ck
            .kind
            .strip_suffix("-classifier")
            .ok_or_else(|| {
                Error::Checkpoint(format!("not a classifier checkpoint: {:?}", ck.kind))
            })?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("unknown classifier kind {:?}", ck.kind)))?;
        let p = GatedParams::from_checkpoint(ck, "cell", kind.gates())?;
        if ck.meta_usize("hidden")? != p.hidden || ck.meta_usize("input")? != p.input {
            return Err(Error::Checkpoint(
                "meta widths disagree with tensors".into(),
            ));
        }
        let loss = match ck.meta.get("loss").map(String::as_str) {
            Some("mse") | None => LossKind::Mse,
            Some("cross-entropy") => LossKind::CrossEntropy,
            Some(other) => return Err(Error::Checkpoint(format!("unknown loss {other:?}"))),
        };
        let mut head_ck = Checkpoint::new("head");
        if let Some(a) = ck.meta.get("head.activations") {
            head_ck.meta.insert("activations".into(), a.clone());
        }
        head_ck.tensors = ck
            .tensors
            .iter()
            .filter_map(|t| {
                t.name.strip_prefix("head.").map(|n| NamedTensor {
                    name: n.to_string(),
                    ..t.clone()
                })
            })
            .collect();
        let head = DenseNet::from_checkpoint(&head_ck, "head")?;
        if head.input_width() != p.hidden {
            return Err(Error::Checkpoint(
                "head input does not match hidden width".into(),
            ));
        }
        let cell = match kind {
            CellKind::Gru => Cell::Gru(GruCell { p }),
            CellKind::Lstm => Cell::Lstm(LstmCell { p }),
        };
        Ok(SequenceClassifier {
            kind,
            cell,
            head,
            loss,
        })
    }
}
