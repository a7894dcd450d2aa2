//! Minimal fully-connected network with manual backpropagation.
//!
//! The model is an MLP with ReLU hidden activations and an identity output
//! layer; classification losses apply softmax to the logits themselves.
//! Everything is f64 and deterministic: given the same seed and inputs,
//! forward/backward produce bit-identical results on any platform.

use std::io::{Read as _, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Probabilities are clamped to at least this value before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Fully-connected ReLU network.
///
/// Layer `l` maps width `layer_dims[l]` to `layer_dims[l+1]` via
/// `z = a W^T + b` with `weights[l]` of shape `(out, in)` (row-major) and
/// `biases[l]` of shape `(out,)`. Hidden layers apply ReLU; the final layer
/// is identity (logits).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

/// Cached activations from a forward pass, consumed by the backward passes.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// The input batch `(batch, in_dim)`.
    input: Tensor,
    /// Pre-activation `z` of every layer, in forward order.
    pre_activations: Vec<Tensor>,
    /// Post-activation output of every layer (ReLU for hidden, identity for
    /// the last); `activations.last()` is the logits tensor.
    activations: Vec<Tensor>,
}

impl ForwardTrace {
    /// Logits of the traced batch `(batch, classes)`.
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("trace has at least one layer")
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

/// Per-layer parameter gradients mirroring a model's weight/bias shapes.
#[derive(Debug, Clone)]
pub struct GradientSet {
    d_weights: Vec<Tensor>,
    d_biases: Vec<Tensor>,
}

impl GradientSet {
    fn zeros_like(model: &MlpModel) -> GradientSet {
        GradientSet {
            d_weights: model.weights.iter().map(|w| Tensor::zeros(w.shape())).collect(),
            d_biases: model.biases.iter().map(|b| Tensor::zeros(b.shape())).collect(),
        }
    }

    /// Flatten into the model's canonical coordinate order: layer-major,
    /// each layer's weights (row-major) followed by its biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.d_weights.iter().zip(&self.d_biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }

    /// Scale every gradient entry in place (used to negate objectives).
    pub fn scale(&mut self, factor: f64) {
        for t in self.d_weights.iter_mut().chain(self.d_biases.iter_mut()) {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Accumulate `other * factor` into `self`.
    pub fn add_scaled(&mut self, other: &GradientSet, factor: f64) {
        for (a, b) in self
            .d_weights
            .iter_mut()
            .chain(self.d_biases.iter_mut())
            .zip(other.d_weights.iter().chain(other.d_biases.iter()))
        {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += factor * y;
            }
        }
    }
}

impl MlpModel {
    /// Create a model with Xavier-uniform weights and zero biases.
    ///
    /// Weights of layer `l` are drawn uniformly from
    /// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]` in row-major
    /// order, layer by layer, from a SplitMix64 stream seeded with `seed`;
    /// biases consume no draws.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<MlpModel> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "a model needs at least input and output widths, got {:?}",
                layer_dims
            )));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("zero-width layer in {:?}", layer_dims)));
        }
        let mut rng = SplitMix64::new(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> =
                (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)).collect();
            weights.push(Tensor::from_vec(&[fan_out, fan_in], data)?);
            biases.push(Tensor::zeros(&[fan_out]));
        }
        Ok(MlpModel { layer_dims: layer_dims.to_vec(), weights, biases })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// Input feature width.
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Number of output classes (logit width).
    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum::<usize>()
            + self.biases.iter().map(Tensor::len).sum::<usize>()
    }

    /// Flatten all parameters into the canonical coordinate order:
    /// layer-major, each layer's weights (row-major) then its biases.
    /// Coordinate 0 is `weights[0][0, 0]`.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }

    /// Overwrite all parameters from a flat vector in canonical order.
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "flat parameter vector has {} entries, model needs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
            let n = b.len();
            b.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Rebuild a model of the given architecture from a flat vector.
    pub fn from_flat(layer_dims: &[usize], flat: &[f64]) -> Result<MlpModel> {
        let mut model = MlpModel::new(layer_dims, 0)?;
        model.set_from_flat(flat)?;
        Ok(model)
    }

    /// Forward pass over a batch `(batch, in_dim)`, returning logits and the
    /// trace needed for backprop.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "layer 0 expects input of shape (batch, {}), got {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        let n_layers = self.weights.len();
        let batch = x.rows();
        let mut pre_activations = Vec::with_capacity(n_layers);
        let mut activations = Vec::with_capacity(n_layers);
        let mut a = x.clone();
        for l in 0..n_layers {
            let w = &self.weights[l];
            let b = &self.biases[l];
            let (out_dim, in_dim) = (w.rows(), w.cols());
            let mut z = Tensor::zeros(&[batch, out_dim]);
            for i in 0..batch {
                let ai = a.row(i);
                let zi = z.row_mut(i);
                for (o, zo) in zi.iter_mut().enumerate() {
                    let wrow = &w.data()[o * in_dim..(o + 1) * in_dim];
                    let mut acc = b.data()[o];
                    for k in 0..in_dim {
                        acc += ai[k] * wrow[k];
                    }
                    *zo = acc;
                }
            }
            let act = if l + 1 < n_layers {
                let mut r = z.clone();
                for v in r.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                r
            } else {
                z.clone()
            };
            pre_activations.push(z);
            activations.push(act.clone());
            a = act;
        }
        Ok(ForwardTrace { input: x.clone(), pre_activations, activations })
    }

    /// Softmax probabilities for a batch, numerically stabilized by row-max
    /// subtraction, with every probability clamped to at least [`PROB_FLOOR`].
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let trace = self.forward(x)?;
        if trace.logits().data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(
                "model produced non-finite logits; parameters have blown up".into(),
            ));
        }
        Ok(softmax(trace.logits()))
    }

    /// Mean cross-entropy loss and parameter gradients for integer labels.
    pub fn backward_ce(&self, trace: &ForwardTrace, labels: &[usize]) -> Result<(f64, GradientSet)> {
        let k = self.output_dim();
        let batch = trace.batch_size();
        if labels.len() != batch {
            return Err(Error::Dimension(format!(
                "{} labels for a batch of {}",
                labels.len(),
                batch
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
        }
        let probs = softmax(trace.logits());
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            loss -= probs.get(i, y).max(PROB_FLOOR).ln();
        }
        loss /= batch as f64;

        // d loss / d logits = (softmax - onehot) / batch
        let mut dlogits = probs;
        for (i, &y) in labels.iter().enumerate() {
            let v = dlogits.get(i, y);
            dlogits.set(i, y, v - 1.0);
        }
        let inv = 1.0 / batch as f64;
        for v in dlogits.data_mut() {
            *v *= inv;
        }
        Ok((loss, self.backward_from_dlogits(trace, dlogits)))
    }

    /// Mean KL divergence `KL(teacher || student)` and parameter gradients.
    ///
    /// `teacher_probs` is `(batch, classes)`; each row must be a probability
    /// vector (non-negative, summing to 1 within 1e-9). Terms with zero
    /// teacher mass contribute zero; student probabilities are clamped to
    /// [`PROB_FLOOR`] inside the logarithm.
    pub fn backward_kl(
        &self,
        trace: &ForwardTrace,
        teacher_probs: &Tensor,
    ) -> Result<(f64, GradientSet)> {
        let k = self.output_dim();
        let batch = trace.batch_size();
        if teacher_probs.shape() != [batch, k] {
            return Err(Error::Dimension(format!(
                "teacher probabilities of shape {:?}, expected ({batch}, {k})",
                teacher_probs.shape()
            )));
        }
        for i in 0..batch {
            let row = teacher_probs.row(i);
            if let Some(&bad) = row.iter().find(|&&p| p < 0.0) {
                return Err(Error::Input(format!(
                    "negative teacher probability {bad} in row {i}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Input(format!(
                    "teacher probability row {i} sums to {sum}, expected 1"
                )));
            }
        }
        let student = softmax(trace.logits());
        let mut kl = 0.0;
        for i in 0..batch {
            for j in 0..k {
                let t = teacher_probs.get(i, j);
                if t > 0.0 {
                    kl += t * (t.ln() - student.get(i, j).max(PROB_FLOOR).ln());
                }
            }
        }
        kl /= batch as f64;

        // d KL / d logits = (student - teacher) / batch
        let mut dlogits = student;
        let inv = 1.0 / batch as f64;
        for i in 0..batch {
            for j in 0..k {
                let v = (dlogits.get(i, j) - teacher_probs.get(i, j)) * inv;
                dlogits.set(i, j, v);
            }
        }
        Ok((kl, self.backward_from_dlogits(trace, dlogits)))
    }

    /// Backpropagate an arbitrary logit gradient through the trace.
    fn backward_from_dlogits(&self, trace: &ForwardTrace, dlogits: Tensor) -> GradientSet {
        let n_layers = self.weights.len();
        let batch = trace.batch_size();
        let mut grads = GradientSet::zeros_like(self);
        let mut delta = dlogits; // (batch, out_dim of current layer)
        for l in (0..n_layers).rev() {
            let w = &self.weights[l];
            let (out_dim, in_dim) = (w.rows(), w.cols());
            let a_prev: &Tensor =
                if l == 0 { &trace.input } else { &trace.activations[l - 1] };
            // dW[o, k] = sum_i delta[i, o] * a_prev[i, k];  db[o] = sum_i delta[i, o]
            {
                let dw = grads.d_weights[l].data_mut();
                for i in 0..batch {
                    let di = delta.row(i);
                    let ai = a_prev.row(i);
                    for o in 0..out_dim {
                        let d = di[o];
                        if d != 0.0 {
                            let row = &mut dw[o * in_dim..(o + 1) * in_dim];
                            for k in 0..in_dim {
                                row[k] += d * ai[k];
                            }
                        }
                    }
                }
                let db = grads.d_biases[l].data_mut();
                for i in 0..batch {
                    let di = delta.row(i);
                    for o in 0..out_dim {
                        db[o] += di[o];
                    }
                }
            }
            if l > 0 {
                // delta_prev[i, k] = (sum_o delta[i, o] * W[o, k]) * relu'(z_{l-1}[i, k])
                let z_prev = &trace.pre_activations[l - 1];
                let mut next = Tensor::zeros(&[batch, in_dim]);
                for i in 0..batch {
                    let di = delta.row(i);
                    let zi = z_prev.row(i);
                    let ni = next.row_mut(i);
                    for o in 0..out_dim {
                        let d = di[o];
                        if d != 0.0 {
                            let wrow = &w.data()[o * in_dim..(o + 1) * in_dim];
                            for k in 0..in_dim {
                                ni[k] += d * wrow[k];
                            }
                        }
                    }
                    // ReLU derivative: 1 where z > 0, else 0 (including z == 0).
                    for k in 0..in_dim {
                        if zi[k] <= 0.0 {
                            ni[k] = 0.0;
                        }
                    }
                }
                delta = next;
            }
        }
        grads
    }

    /// Classification accuracy on a labeled set; argmax ties go to the
    /// lowest class index.
    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        if x.shape().len() != 2 || x.rows() == 0 {
            return Err(Error::Input("empty evaluation set".into()));
        }
        if labels.len() != x.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                x.rows()
            )));
        }
        let trace = self.forward(x)?;
        let logits = trace.logits();
        let mut hits = 0usize;
        for (i, &y) in labels.iter().enumerate() {
            let row = logits.row(i);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == y {
                hits += 1;
            }
        }
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Write the checkpoint container: magic `MLP1`, layer count and layer
    /// widths as little-endian u32, then the flat f64 parameter vector in
    /// canonical order, little-endian.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + 4 * self.layer_dims.len() + 8 * self.param_count());
        buf.extend_from_slice(b"MLP1");
        buf.extend_from_slice(&(self.layer_dims.len() as u32).to_le_bytes());
        for &d in &self.layer_dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.flatten_params() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Read a checkpoint container written by [`MlpModel::save_checkpoint`].
    pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 8 {
            return Err(Error::Format(format!(
                "truncated checkpoint: expected at least 8 header bytes, found {}",
                bytes.len()
            )));
        }
        if &bytes[0..4] != b"MLP1" {
            return Err(Error::Format(format!(
                "bad magic at offset 0: expected \"MLP1\", found {:02x?}",
                &bytes[0..4]
            )));
        }
        let n_dims = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header_len = 8 + 4 * n_dims;
        if n_dims < 2 || bytes.len() < header_len {
            return Err(Error::Format(format!(
                "truncated checkpoint header: expected {} bytes for {} layer widths, found {}",
                header_len,
                n_dims,
                bytes.len()
            )));
        }
        let mut layer_dims = Vec::with_capacity(n_dims);
        for i in 0..n_dims {
            let off = 8 + 4 * i;
            layer_dims
                .push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Format(format!("zero layer width in header {:?}", layer_dims)));
        }
        let n_params: usize = (0..n_dims - 1)
            .map(|l| layer_dims[l] * layer_dims[l + 1] + layer_dims[l + 1])
            .sum();
        let expected = header_len + 8 * n_params;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint length mismatch: expected {} bytes, found {}",
                expected,
                bytes.len()
            )));
        }
        let mut flat = Vec::with_capacity(n_params);
        for i in 0..n_params {
            let off = header_len + 8 * i;
            flat.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
        }
        MlpModel::from_flat(&layer_dims, &flat)
    }
}

/// Row-wise softmax with max subtraction; outputs are clamped to at least
/// [`PROB_FLOOR`] so downstream logarithms stay finite.
pub fn softmax(logits: &Tensor) -> Tensor {
    let (n, k) = (logits.rows(), logits.cols());
    let mut out = Tensor::zeros(&[n, k]);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let o = out.row_mut(i);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            o[j] = e;
            sum += e;
        }
        for v in o.iter_mut() {
            *v = (*v / sum).max(PROB_FLOOR);
        }
    }
    out
}
