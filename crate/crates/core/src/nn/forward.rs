use crate::error::{shape, Result};
use crate::nn::grad::FlatGradient;
use crate::nn::params::{DenseBlock, ModelParams};

/// Network outputs for one input: class probabilities `p` (softmax over K
/// logits) and K one-vs-all pairs `q[k] = (inlier of k, not k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub p: Vec<f64>,
    pub q: Vec<[f64; 2]>,
}

impl Prediction {
    pub fn k_classes(&self) -> usize {
        self.p.len()
    }

    /// Index of the largest class probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.p)
    }

    pub fn confidence(&self) -> f64 {
        self.p[self.argmax()]
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Activations kept from a forward pass for the backward sweep.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `activations[0]` is the input, `activations[i]` the tanh output of trunk layer `i`.
    pub activations: Vec<Vec<f64>>,
    pub prediction: Prediction,
}

impl Trace {
    pub fn features(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Vector-Jacobian product of softmax: maps `dL/dp` to `dL/dz`.
pub fn softmax_vjp(p: &[f64], d_p: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(d_p).map(|(a, b)| a * b).sum();
    p.iter().zip(d_p).map(|(pi, gi)| pi * (gi - dot)).collect()
}

fn dense(params: &ModelParams, block: DenseBlock, input: &[f64]) -> Vec<f64> {
    let w = params.weights(block);
    let b = params.bias(block);
    (0..block.out_dim)
        .map(|o| {
            let row = &w[o * block.in_dim..(o + 1) * block.in_dim];
            b[o] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
        })
        .collect()
}

/// Forward pass keeping every activation needed by [`backward`].
pub fn forward_trace(params: &ModelParams, x: &[f64]) -> Result<Trace> {
    let layout = params.layout();
    if x.len() != layout.input_dim() {
        return Err(shape(format!(
            "input has {} features, network expects {}",
            x.len(),
            layout.input_dim()
        )));
    }
    let mut activations = Vec::with_capacity(layout.trunk().len() + 1);
    activations.push(x.to_vec());
    for &block in layout.trunk() {
        let pre = dense(params, block, activations.last().unwrap());
        activations.push(pre.into_iter().map(f64::tanh).collect());
    }
    let h = activations.last().unwrap();
    let p = softmax(&dense(params, layout.class_head(), h));
    let ova = dense(params, layout.ova_head(), h);
    let q = ova
        .chunks_exact(2)
        .map(|pair| {
            let s = softmax(pair);
            [s[0], s[1]]
        })
        .collect();
    Ok(Trace {
        activations,
        prediction: Prediction { p, q },
    })
}

pub fn forward(params: &ModelParams, x: &[f64]) -> Result<Prediction> {
    forward_trace(params, x).map(|t| t.prediction)
}

/// Converts per-pair `dL/dq` into `dL/d(ova logits)`.
pub fn ova_vjp(q: &[[f64; 2]], d_q: &[[f64; 2]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * q.len());
    for (qk, gk) in q.iter().zip(d_q) {
        out.extend(softmax_vjp(qk, gk));
    }
    out
}

/// Accumulates into `grad` the parameter gradient implied by upstream
/// gradients on the class logits and OVA logits of one traced forward pass.
/// Either upstream slice may be empty, meaning "no gradient from that head".
pub fn backward(
    params: &ModelParams,
    trace: &Trace,
    d_class: &[f64],
    d_ova: &[f64],
    grad: &mut FlatGradient,
) {
    let layout = params.layout();
    let h = trace.features();
    let mut d_h = vec![0.0; h.len()];
    let g = grad.as_mut_slice();
    for (block, upstream) in [(layout.class_head(), d_class), (layout.ova_head(), d_ova)] {
        if upstream.is_empty() {
            continue;
        }
        debug_assert_eq!(upstream.len(), block.out_dim);
        let w = params.weights(block);
        let wr = block.weight_range();
        let br = block.bias_range();
        for (o, &d) in upstream.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut g[wr.start + o * block.in_dim..wr.start + (o + 1) * block.in_dim];
            for (gi, &hi) in row.iter_mut().zip(h) {
                *gi += d * hi;
            }
            g[br.start + o] += d;
            let wrow = &w[o * block.in_dim..(o + 1) * block.in_dim];
            for (dh, &wi) in d_h.iter_mut().zip(wrow) {
                *dh += d * wi;
            }
        }
    }
    for (i, &block) in layout.trunk().iter().enumerate().rev() {
        let out = &trace.activations[i + 1];
        let input = &trace.activations[i];
        let d_pre: Vec<f64> = d_h
            .iter()
            .zip(out)
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();
        let w = params.weights(block);
        let wr = block.weight_range();
        let br = block.bias_range();
        let mut d_in = if i > 0 {
            vec![0.0; block.in_dim]
        } else {
            Vec::new()
        };
        for (o, &d) in d_pre.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut g[wr.start + o * block.in_dim..wr.start + (o + 1) * block.in_dim];
            for (gi, &xi) in row.iter_mut().zip(input) {
                *gi += d * xi;
            }
            g[br.start + o] += d;
            if i > 0 {
                let wrow = &w[o * block.in_dim..(o + 1) * block.in_dim];
                for (dx, &wi) in d_in.iter_mut().zip(wrow) {
                    *dx += d * wi;
                }
            }
        }
        d_h = d_in;
    }
}
