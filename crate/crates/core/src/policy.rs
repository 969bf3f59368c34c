//! Two-hidden-layer tanh policy with a masked softmax over the 8 moves,
//! exact score-function gradients, and the checkpoint format.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use crate::action::{Action, ActionMask, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::features::FEATURE_DIM;

pub const CHECKPOINT_MAGIC: &str = "MARLAS-CKPT 1";
pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub actions: usize,
}

impl Default for PolicyShape {
    fn default() -> Self {
        PolicyShape {
            input: FEATURE_DIM,
            hidden1: DEFAULT_HIDDEN,
            hidden2: DEFAULT_HIDDEN,
            actions: NUM_ACTIONS,
        }
    }
}

impl PolicyShape {
    pub fn with_input(input: usize) -> Self {
        PolicyShape {
            input,
            ..PolicyShape::default()
        }
    }

    /// Lengths of W1, b1, W2, b2, W3, b3.
    fn block_lens(&self) -> [usize; 6] {
        [
            self.hidden1 * self.input,
            self.hidden1,
            self.hidden2 * self.hidden1,
            self.hidden2,
            self.actions * self.hidden2,
            self.actions,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.block_lens().iter().sum()
    }
}

/// All weights and biases in one flat buffer, blocks in declaration order.
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: PolicyShape,
    data: Vec<f64>,
}

macro_rules! block_accessors {
    ($($name:ident, $name_mut:ident => $i:expr;)*) => {
        $(
            pub fn $name(&self) -> &[f64] {
                let (lo, hi) = self.block_range($i);
                &self.data[lo..hi]
            }
            pub fn $name_mut(&mut self) -> &mut [f64] {
                let (lo, hi) = self.block_range($i);
                &mut self.data[lo..hi]
            }
        )*
    };
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        PolicyParams {
            shape,
            data: vec![0.0; shape.num_params()],
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(shape: PolicyShape, rng: &mut R) -> Self {
        let mut p = PolicyParams::zeros(shape);
        let layers = [
            (0, shape.input, shape.hidden1),
            (2, shape.hidden1, shape.hidden2),
            (4, shape.hidden2, shape.actions),
        ];
        for (block, fan_in, fan_out) in layers {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (lo, hi) = p.block_range(block);
            for w in &mut p.data[lo..hi] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        p
    }

    pub fn from_flat(shape: PolicyShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.num_params() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                shape.num_params(),
                data.len()
            )));
        }
        Ok(PolicyParams { shape, data })
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn block_range(&self, block: usize) -> (usize, usize) {
        let lens = self.shape.block_lens();
        let lo: usize = lens[..block].iter().sum();
        (lo, lo + lens[block])
    }

    block_accessors! {
        w1, w1_mut => 0;
        b1, b1_mut => 1;
        w2, w2_mut => 2;
        b2, b2_mut => 3;
        w3, w3_mut => 4;
        b3, b3_mut => 5;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(&mut file).map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let s = self.shape;
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        writeln!(out, "{} {} {} {}", s.input, s.hidden1, s.hidden2, s.actions)?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)
    }

    /// Load a checkpoint, rejecting it unless its shape equals `expected`.
    pub fn load(path: &Path, expected: PolicyShape) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice(), &path.display().to_string(), expected)
    }

    pub fn read_from<R: Read>(input: &mut R, source_name: &str, expected: PolicyShape) -> Result<Self> {
        let err = |location: String, message: String| Error::Parse {
            source_name: source_name.to_string(),
            location,
            message,
        };
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| err("byte 0".into(), e.to_string()))?;
        let mut lines = bytes.splitn(3, |b| *b == b'\n');
        let magic = lines.next().unwrap_or_default();
        if magic != CHECKPOINT_MAGIC.as_bytes() {
            return Err(err("line 1".into(), "missing checkpoint header".into()));
        }
        let dims_line = lines
            .next()
            .ok_or_else(|| err("line 2".into(), "missing shape line".into()))?;
        let dims: Vec<usize> = std::str::from_utf8(dims_line)
            .ok()
            .map(|s| s.split_whitespace().filter_map(|t| t.parse().ok()).collect())
            .unwrap_or_default();
        let [input, hidden1, hidden2, actions] = dims[..] else {
            return Err(err("line 2".into(), "expected `D H1 H2 A`".into()));
        };
        let shape = PolicyShape {
            input,
            hidden1,
            hidden2,
            actions,
        };
        if shape != expected {
            return Err(Error::Validation(format!(
                "checkpoint {source_name} has shape {shape:?}, configuration expects {expected:?}"
            )));
        }
        let body = lines.next().unwrap_or_default();
        if body.len() != shape.num_params() * 8 {
            return Err(err(
                format!("byte {}", magic.len() + dims_line.len() + 2),
                format!(
                    "parameter block has {} bytes, expected {}",
                    body.len(),
                    shape.num_params() * 8
                ),
            ));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        PolicyParams::from_flat(shape, data)
    }
}

/// Probabilities over the fixed action order; masked actions hold exactly 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDist {
    pub probs: [f64; NUM_ACTIONS],
}

impl ActionDist {
    pub fn prob(&self, a: Action) -> f64 {
        self.probs[a.index()]
    }

    /// Inverse-CDF draw with a single uniform `u ∈ [0, 1)`.
    pub fn sample_with(&self, u: f64) -> Action {
        let mut acc = 0.0;
        let mut last = None;
        for a in Action::all() {
            let p = self.probs[a.index()];
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = Some(a);
            if u < acc {
                return a;
            }
        }
        last.expect("distribution has positive mass")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        self.sample_with(rng.random::<f64>())
    }

    /// Most probable action, lowest index on ties.
    pub fn argmax(&self) -> Action {
        let mut best = 0;
        for k in 1..NUM_ACTIONS {
            if self.probs[k] > self.probs[best] {
                best = k;
            }
        }
        Action::new(best).expect("index in range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    /// Draw from the policy distribution (training).
    #[default]
    Sample,
    /// Take the most probable action (deployment).
    Argmax,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub dist: ActionDist,
}

/// Dot product with four independent partial sums (vectorizes).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn dense_tanh(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        w.chunks_exact(x.len())
            .zip(b)
            .map(|(row, bias)| (bias + dot(row, x)).tanh()),
    );
}

fn check_inputs(params: &PolicyParams, features: &[f64], mask: ActionMask) -> Result<()> {
    let s = params.shape;
    if features.len() != s.input {
        return Err(Error::Contract(format!(
            "feature length {} does not match policy input {}",
            features.len(),
            s.input
        )));
    }
    if s.actions != NUM_ACTIONS {
        return Err(Error::Contract(format!(
            "policy has {} outputs, expected {NUM_ACTIONS}",
            s.actions
        )));
    }
    if mask.is_empty() {
        return Err(Error::Contract("no feasible action".into()));
    }
    Ok(())
}

pub fn forward_activations(params: &PolicyParams, features: &[f64], mask: ActionMask) -> Result<Activations> {
    check_inputs(params, features, mask)?;
    let mut h1 = Vec::with_capacity(params.shape.hidden1);
    let mut h2 = Vec::with_capacity(params.shape.hidden2);
    dense_tanh(params.w1(), params.b1(), features, &mut h1);
    dense_tanh(params.w2(), params.b2(), &h1, &mut h2);
    let mut logits = [f64::NEG_INFINITY; NUM_ACTIONS];
    for (k, (row, bias)) in params.w3().chunks_exact(h2.len()).zip(params.b3()).enumerate() {
        if mask.allows(Action::new(k).expect("index in range")) {
            logits[k] = bias + dot(row, &h2);
        }
    }
    Ok(Activations {
        h1,
        h2,
        dist: masked_softmax(&logits),
    })
}

/// Softmax over the finite logits; `-inf` marks infeasible actions.
fn masked_softmax(logits: &[f64; NUM_ACTIONS]) -> ActionDist {
    let peak = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = [0.0; NUM_ACTIONS];
    let mut z = 0.0;
    for k in 0..NUM_ACTIONS {
        if logits[k] > f64::NEG_INFINITY {
            probs[k] = (logits[k] - peak).exp();
            z += probs[k];
        }
    }
    probs.iter_mut().for_each(|p| *p /= z);
    ActionDist { probs }
}

/// `softmax(W3·tanh(W2·tanh(W1·φ + b1) + b2) + b3)` restricted to `mask`.
pub fn forward(params: &PolicyParams, features: &[f64], mask: ActionMask) -> Result<ActionDist> {
    forward_activations(params, features, mask).map(|a| a.dist)
}

/// `∇θ log π(action | features)`.
pub fn log_prob_grad(
    params: &PolicyParams,
    features: &[f64],
    mask: ActionMask,
    action: Action,
) -> Result<PolicyParams> {
    let mut grad = PolicyParams::zeros(params.shape);
    accumulate_log_prob_grad(params, features, mask, action, 1.0, &mut grad)?;
    Ok(grad)
}

/// `grad += weight · ∇θ log π(action | features)` without allocating a
/// separate gradient.
pub fn accumulate_log_prob_grad(
    params: &PolicyParams,
    features: &[f64],
    mask: ActionMask,
    action: Action,
    weight: f64,
    grad: &mut PolicyParams,
) -> Result<()> {
    if !mask.allows(action) {
        return Err(Error::Contract(format!("action {action:?} is masked out")));
    }
    if grad.shape != params.shape {
        return Err(Error::Contract("gradient buffer shape mismatch".into()));
    }
    let act = forward_activations(params, features, mask)?;
    let s = params.shape;

    let mut d3 = [0.0; NUM_ACTIONS];
    for k in 0..NUM_ACTIONS {
        let indicator = if k == action.index() { 1.0 } else { 0.0 };
        d3[k] = weight * (indicator - act.dist.probs[k]);
    }
    // Masked logits have zero probability, so d3 is already zero there
    // except for the indicator, which the mask check rules out.

    let mut g2 = vec![0.0; s.hidden2];
    {
        let w3 = params.w3();
        let (lo, _) = params.block_range(4);
        for k in 0..NUM_ACTIONS {
            if d3[k] == 0.0 {
                continue;
            }
            let row = &w3[k * s.hidden2..(k + 1) * s.hidden2];
            let grow = &mut grad.data[lo + k * s.hidden2..lo + (k + 1) * s.hidden2];
            for j in 0..s.hidden2 {
                grow[j] += d3[k] * act.h2[j];
                g2[j] += d3[k] * row[j];
            }
        }
        for (gb, d) in grad.b3_mut().iter_mut().zip(&d3) {
            *gb += d;
        }
    }
    for (g, h) in g2.iter_mut().zip(&act.h2) {
        *g *= 1.0 - h * h;
    }

    let mut g1 = vec![0.0; s.hidden1];
    {
        let (lo, _) = params.block_range(2);
        let w2 = params.w2();
        for (k, &gk) in g2.iter().enumerate() {
            let row = &w2[k * s.hidden1..(k + 1) * s.hidden1];
            let grow = &mut grad.data[lo + k * s.hidden1..lo + (k + 1) * s.hidden1];
            for j in 0..s.hidden1 {
                grow[j] += gk * act.h1[j];
                g1[j] += gk * row[j];
            }
        }
        for (gb, g) in grad.b2_mut().iter_mut().zip(&g2) {
            *gb += g;
        }
    }
    for (g, h) in g1.iter_mut().zip(&act.h1) {
        *g *= 1.0 - h * h;
    }

    let (lo, _) = params.block_range(0);
    for (k, &gk) in g1.iter().enumerate() {
        if gk == 0.0 {
            continue;
        }
        let grow = &mut grad.data[lo + k * s.input..lo + (k + 1) * s.input];
        for (g, x) in grow.iter_mut().zip(features) {
            *g += gk * x;
        }
    }
    for (gb, g) in grad.b1_mut().iter_mut().zip(&g1) {
        *gb += g;
    }
    Ok(())
}

/// One weighted term of a score-function sum.
#[derive(Debug, Clone, Copy)]
pub struct ScoreTerm<'a> {
    pub features: &'a [f64],
    pub mask: ActionMask,
    pub action: Action,
    pub weight: f64,
}

/// Row-major `c (m×n) += a (m×k) · b (k×n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides and extents above stay inside the three slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `grad += Σ weight·∇θ log π(action | features)` over `terms`, computed as
/// a handful of matrix products. Agrees with repeated
/// [`accumulate_log_prob_grad`] up to summation order.
pub fn accumulate_batch_log_prob_grad(params: &PolicyParams, terms: &[ScoreTerm<'_>], grad: &mut PolicyParams) -> Result<()> {
    if grad.shape != params.shape {
        return Err(Error::Contract("gradient buffer shape mismatch".into()));
    }
    let s = params.shape;
    let (d, h1, h2) = (s.input, s.hidden1, s.hidden2);
    let b = terms.len();
    if b == 0 {
        return Ok(());
    }
    let mut x = Vec::with_capacity(b * d);
    for t in terms {
        check_inputs(params, t.features, t.mask)?;
        if !t.mask.allows(t.action) {
            return Err(Error::Contract(format!("action {:?} is masked out", t.action)));
        }
        x.extend_from_slice(t.features);
    }

    // Forward: rows are samples.
    let mut a1 = vec![0.0; b * h1];
    for row in a1.chunks_exact_mut(h1) {
        row.copy_from_slice(params.b1());
    }
    gemm(b, d, h1, &x, (d, 1), params.w1(), (1, d), 1.0, &mut a1);
    a1.iter_mut().for_each(|v| *v = v.tanh());
    let mut a2 = vec![0.0; b * h2];
    for row in a2.chunks_exact_mut(h2) {
        row.copy_from_slice(params.b2());
    }
    gemm(b, h1, h2, &a1, (h1, 1), params.w2(), (1, h1), 1.0, &mut a2);
    a2.iter_mut().for_each(|v| *v = v.tanh());
    let mut logits = vec![0.0; b * NUM_ACTIONS];
    for row in logits.chunks_exact_mut(NUM_ACTIONS) {
        row.copy_from_slice(params.b3());
    }
    gemm(b, h2, NUM_ACTIONS, &a2, (h2, 1), params.w3(), (1, h2), 1.0, &mut logits);

    // d log π / d logits, weighted.
    let mut d3 = vec![0.0; b * NUM_ACTIONS];
    for (i, t) in terms.iter().enumerate() {
        let mut row = [f64::NEG_INFINITY; NUM_ACTIONS];
        for k in 0..NUM_ACTIONS {
            if t.mask.allows(Action::new(k).expect("index in range")) {
                row[k] = logits[i * NUM_ACTIONS + k];
            }
        }
        let dist = masked_softmax(&row);
        for k in 0..NUM_ACTIONS {
            let indicator = if k == t.action.index() { 1.0 } else { 0.0 };
            d3[i * NUM_ACTIONS + k] = t.weight * (indicator - dist.probs[k]);
        }
    }

    let (lo3, hi3) = params.block_range(4);
    gemm(NUM_ACTIONS, b, h2, &d3, (1, NUM_ACTIONS), &a2, (h2, 1), 1.0, &mut grad.data[lo3..hi3]);
    add_column_sums(&d3, NUM_ACTIONS, grad.b3_mut());

    let mut g2 = vec![0.0; b * h2];
    gemm(b, NUM_ACTIONS, h2, &d3, (NUM_ACTIONS, 1), params.w3(), (h2, 1), 0.0, &mut g2);
    g2.iter_mut().zip(&a2).for_each(|(g, h)| *g *= 1.0 - h * h);
    let (lo2, hi2) = params.block_range(2);
    gemm(h2, b, h1, &g2, (1, h2), &a1, (h1, 1), 1.0, &mut grad.data[lo2..hi2]);
    add_column_sums(&g2, h2, grad.b2_mut());

    let mut g1 = vec![0.0; b * h1];
    gemm(b, h2, h1, &g2, (h2, 1), params.w2(), (h1, 1), 0.0, &mut g1);
    g1.iter_mut().zip(&a1).for_each(|(g, h)| *g *= 1.0 - h * h);
    let (lo1, hi1) = params.block_range(0);
    gemm(h1, b, d, &g1, (1, h1), &x, (d, 1), 1.0, &mut grad.data[lo1..hi1]);
    add_column_sums(&g1, h1, grad.b1_mut());
    Ok(())
}

fn add_column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn log_prob(params: &PolicyParams, x: &[f64], mask: ActionMask, a: Action) -> f64 {
        forward(params, x, mask).unwrap().prob(a).ln()
    }

    #[test]
    fn batched_gradient_matches_per_sample_sum() {
        let mut r = rng::stream(21, &[]);
        let shape = PolicyShape {
            input: 13,
            hidden1: 9,
            hidden2: 7,
            actions: NUM_ACTIONS,
        };
        let params = PolicyParams::glorot(shape, &mut r);
        let xs: Vec<Vec<f64>> = (0..37)
            .map(|_| (0..13).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let masks = [ActionMask::ALL, ActionMask(0b1101_0000), ActionMask(0b0101_1010)];
        let terms: Vec<ScoreTerm<'_>> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let mask = masks[i % 3];
                let action = Action::all().filter(|a| mask.allows(*a)).nth(i % mask.count() as usize).unwrap();
                ScoreTerm {
                    features: x,
                    mask,
                    action,
                    weight: r.random_range(-1.5..1.5),
                }
            })
            .collect();
        let mut single = PolicyParams::zeros(shape);
        for t in &terms {
            accumulate_log_prob_grad(&params, t.features, t.mask, t.action, t.weight, &mut single).unwrap();
        }
        let mut batched = PolicyParams::zeros(shape);
        accumulate_batch_log_prob_grad(&params, &terms, &mut batched).unwrap();
        for (a, b) in single.as_slice().iter().zip(batched.as_slice()) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn zero_params_give_uniform_over_feasible() {
        let p = PolicyParams::zeros(PolicyShape::default());
        let x = vec![0.3; FEATURE_DIM];
        let d = forward(&p, &x, ActionMask::ALL).unwrap();
        assert!(d.probs.iter().all(|&q| q == 0.125));
        let corner = ActionMask(0b1101_0000);
        let d = forward(&p, &x, corner).unwrap();
        for a in Action::all() {
            let want = if corner.allows(a) { 1.0 / 3.0 } else { 0.0 };
            assert!((d.prob(a) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn shifting_output_bias_leaves_distribution() {
        let shape = PolicyShape::with_input(10);
        let mut p = PolicyParams::glorot(shape, &mut rng::stream(1, &[]));
        let x: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let before = forward(&p, &x, ActionMask::ALL).unwrap();
        p.b3_mut().iter_mut().for_each(|b| *b += 5.0);
        let after = forward(&p, &x, ActionMask::ALL).unwrap();
        for (a, b) in before.probs.iter().zip(after.probs) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sampling_and_argmax() {
        let mut point = ActionDist { probs: [0.0; 8] };
        point.probs[4] = 1.0;
        assert_eq!(point.sample_with(0.0), Action::EAST);
        assert_eq!(point.sample_with(0.999), Action::EAST);
        assert_eq!(point.argmax(), Action::EAST);
        let uniform = ActionDist { probs: [0.125; 8] };
        assert_eq!(uniform.sample_with(0.99), Action::SOUTH_EAST);
        assert_eq!(uniform.sample_with(0.0), Action::NORTH_WEST);
        let mut tie = ActionDist { probs: [0.1; 8] };
        tie.probs[2] = 0.2;
        tie.probs[5] = 0.2;
        assert_eq!(tie.argmax(), Action::NORTH_EAST);
    }

    #[test]
    fn infeasible_action_and_empty_mask_are_rejected() {
        let p = PolicyParams::zeros(PolicyShape::with_input(3));
        let x = [0.0; 3];
        assert!(matches!(
            log_prob_grad(&p, &x, ActionMask(0b1), Action::EAST),
            Err(Error::Contract(_))
        ));
        assert!(matches!(forward(&p, &x, ActionMask(0)), Err(Error::Contract(_))));
        assert!(forward(&p, &[0.0; 4], ActionMask::ALL).is_err());
    }

    #[test]
    fn zero_params_output_bias_gradient() {
        let p = PolicyParams::zeros(PolicyShape::with_input(10));
        let x = [0.5; 10];
        for mask in [ActionMask::ALL, ActionMask(0b0101_1010)] {
            let a = Action::all().find(|a| mask.allows(*a)).unwrap();
            let g = log_prob_grad(&p, &x, mask, a).unwrap();
            let n = mask.count() as f64;
            for k in Action::all() {
                let want = if !mask.allows(k) {
                    0.0
                } else if k == a {
                    1.0 - 1.0 / n
                } else {
                    -1.0 / n
                };
                assert!((g.b3()[k.index()] - want).abs() < 1e-15);
            }
            // With zero weights nothing upstream of the output layer moves.
            assert!(g.w1().iter().chain(g.w2()).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let shape = PolicyShape {
            input: 10,
            hidden1: 6,
            hidden2: 5,
            actions: NUM_ACTIONS,
        };
        let mut r = rng::stream(42, &[]);
        for case in 0..20 {
            let mut p = PolicyParams::glorot(shape, &mut r);
            p.as_mut_slice().iter_mut().for_each(|v| *v += r.random_range(-0.3..0.3));
            let x: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
            let mask = ActionMask(r.random_range(1..=255u8));
            let a = Action::all().filter(|a| mask.allows(*a)).nth(case % mask.count()).unwrap();
            let g = log_prob_grad(&p, &x, mask, a).unwrap();
            let h = 1e-5;
            for i in 0..p.as_slice().len() {
                let mut plus = p.clone();
                plus.as_mut_slice()[i] += h;
                let mut minus = p.clone();
                minus.as_mut_slice()[i] -= h;
                let fd = (log_prob(&plus, &x, mask, a) - log_prob(&minus, &x, mask, a)) / (2.0 * h);
                let an = g.as_slice()[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel <= 1e-4, "case {case} param {i}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_shape_check() {
        let shape = PolicyShape::with_input(10);
        let p = PolicyParams::glorot(shape, &mut rng::stream(3, &[]));
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"MARLAS-CKPT 1\n10 128 128 8\n"));
        let q = PolicyParams::read_from(&mut buf.as_slice(), "mem", shape).unwrap();
        assert_eq!(p, q);
        let wrong = PolicyShape::with_input(11);
        assert!(matches!(
            PolicyParams::read_from(&mut buf.as_slice(), "mem", wrong),
            Err(Error::Validation(_))
        ));
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            PolicyParams::read_from(&mut buf.as_slice(), "mem", shape),
            Err(Error::Parse { .. })
        ));
    }
}
