//! State-value estimation.
//!
//! The sampled pipeline fits `V` by TD regression
//! `min E[(r + gamma * (1 - terminal) * Vbar(s') - V(s))^2]` with a
//! periodically copied target network `Vbar`, minibatches drawn from the
//! current priority weights, plain SGD, and optionally two independent heads
//! (the TD target bootstraps the per-head minimum, readout averages the
//! heads). Datasets whose states are integral ids get a tabular fit instead
//! of an MLP; exact policy evaluation on a known MDP lives in
//! [`solve_tabular_value`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::dataset::Dataset;
use crate::envs::{StochasticPolicy, TabularMdp};
use crate::error::OdprError;
use crate::priority::PriorityWeights;
use crate::rng::{stream_rng, OdprRng, STREAM_VALUE_FIT};
use crate::sampling::IndexSampler;
use crate::Result;

const VALUE_MAGIC: &[u8; 8] = b"ODPRVF01";
/// Hard target-network refresh period, in SGD steps.
pub const TARGET_REFRESH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            t => Err(OdprError::format(format!("unknown activation tag {t}"))),
        }
    }
}

/// Fully connected scalar-output network with a flat parameter vector
/// (per layer: weights row-major `out x in`, then biases). Hidden layers use
/// `activation`; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpValueFn {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

impl MlpValueFn {
    /// Xavier-uniform initialization.
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, rng: &mut OdprRng) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(OdprError::invalid("network needs input and output sizes"));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(OdprError::invalid("layer sizes must be positive"));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(OdprError::invalid("value network output size must be 1"));
        }
        let n_params: usize =
            layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let mut params = vec![0.0; n_params];
        let mut offset = 0;
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(MlpValueFn { layer_sizes, activation, params })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self) -> Vec<(usize, usize, usize)> {
        // (weight offset, bias offset, next offset) per layer.
        let mut out = Vec::with_capacity(self.layer_sizes.len() - 1);
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            let wlen = w[0] * w[1];
            out.push((offset, offset + wlen, offset + wlen + w[1]));
            offset += wlen + w[1];
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.layer_sizes[0]);
        let n_layers = self.layer_sizes.len() - 1;
        let mut h: Vec<f64> = x.to_vec();
        let mut offset = 0;
        for (l, sizes) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (sizes[0], sizes[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let mut next = vec![0.0; n_out];
            for (o, slot) in next.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut acc = biases[o];
                for (w, v) in row.iter().zip(&h) {
                    acc += w * v;
                }
                *slot = if l + 1 < n_layers { self.activation.apply(acc) } else { acc };
            }
            h = next;
            offset += n_in * n_out + n_out;
        }
        h[0]
    }

    /// Mean squared error over a batch and its exact gradient with respect
    /// to the parameters, by reverse accumulation.
    pub fn grad_mse(&self, xs: &[&[f64]], ys: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(xs.len(), ys.len());
        let batch = xs.len() as f64;
        let n_layers = self.layer_sizes.len() - 1;
        let offsets = self.layer_offsets();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        // Pre-activation and post-activation caches per layer.
        let mut zs: Vec<Vec<f64>> =
            self.layer_sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        let mut hs: Vec<Vec<f64>> = self.layer_sizes.iter().map(|&s| vec![0.0; s]).collect();

        for (x, &y) in xs.iter().zip(ys) {
            hs[0].copy_from_slice(x);
            for l in 0..n_layers {
                let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
                let (w_off, b_off, _) = offsets[l];
                let weights = &self.params[w_off..w_off + n_in * n_out];
                let biases = &self.params[b_off..b_off + n_out];
                let (head, tail) = hs.split_at_mut(l + 1);
                let h_in = &head[l];
                for o in 0..n_out {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let mut acc = biases[o];
                    for (w, v) in row.iter().zip(h_in.iter()) {
                        acc += w * v;
                    }
                    zs[l][o] = acc;
                    tail[0][o] =
                        if l + 1 < n_layers { self.activation.apply(acc) } else { acc };
                }
            }
            let pred = hs[n_layers][0];
            let err = pred - y;
            loss += err * err / batch;

            // delta starts as dL/d(pred) for this sample.
            let mut delta = vec![2.0 * err / batch];
            for l in (0..n_layers).rev() {
                let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
                let (w_off, b_off, _) = offsets[l];
                for o in 0..n_out {
                    let d = delta[o];
                    let g_row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (g, v) in g_row.iter_mut().zip(&hs[l]) {
                        *g += d * v;
                    }
                    grad[b_off + o] += d;
                }
                if l > 0 {
                    let weights = &self.params[w_off..w_off + n_in * n_out];
                    let mut prev = vec![0.0; n_in];
                    for o in 0..n_out {
                        let d = delta[o];
                        let row = &weights[o * n_in..(o + 1) * n_in];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                    for (p, z) in prev.iter_mut().zip(&zs[l - 1]) {
                        *p *= self.activation.deriv(*z);
                    }
                    delta = prev;
                }
            }
        }
        (loss, grad)
    }

    /// Gradient of the network output with respect to its input at `x`.
    pub fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let n_layers = self.layer_sizes.len() - 1;
        let offsets = self.layer_offsets();
        let mut zs: Vec<Vec<f64>> =
            self.layer_sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        let mut h: Vec<f64> = x.to_vec();
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (w_off, b_off, _) = offsets[l];
            let weights = &self.params[w_off..w_off + n_in * n_out];
            let biases = &self.params[b_off..b_off + n_out];
            let mut next = vec![0.0; n_out];
            for (o, slot) in next.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut acc = biases[o];
                for (w, v) in row.iter().zip(&h) {
                    acc += w * v;
                }
                zs[l][o] = acc;
                *slot = if l + 1 < n_layers { self.activation.apply(acc) } else { acc };
            }
            h = next;
        }
        let mut delta = vec![1.0];
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (w_off, _, _) = offsets[l];
            let weights = &self.params[w_off..w_off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            if l > 0 {
                for (p, z) in prev.iter_mut().zip(&zs[l - 1]) {
                    *p *= self.activation.deriv(*z);
                }
            }
            delta = prev;
        }
        delta
    }

    pub fn sgd_step(&mut self, lr: f64, grad: &[f64]) {
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }
}

/// Plain value table indexed by integral state id.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularValueFn {
    pub values: Vec<f64>,
}

/// A fitted or exact state-value function.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueFn {
    Tabular(TabularValueFn),
    Mlp(MlpValueFn),
    /// Two independently initialized heads; readout is their mean.
    Twin(MlpValueFn, MlpValueFn),
}

impl ValueFn {
    pub fn value(&self, state: &[f32]) -> f64 {
        match self {
            ValueFn::Tabular(t) => {
                let id = state[0] as usize;
                *t.values.get(id).unwrap_or_else(|| {
                    panic!("state id {id} outside value table of {} states", t.values.len())
                })
            }
            ValueFn::Mlp(m) => {
                let x: Vec<f64> = state.iter().map(|&v| v as f64).collect();
                m.forward(&x)
            }
            ValueFn::Twin(a, b) => {
                let x: Vec<f64> = state.iter().map(|&v| v as f64).collect();
                0.5 * (a.forward(&x) + b.forward(&x))
            }
        }
    }

    pub fn zero_tabular(n_states: usize) -> ValueFn {
        ValueFn::Tabular(TabularValueFn { values: vec![0.0; n_states] })
    }

    /// Cache a fitted value function to disk (`ODPRVF01`, little-endian).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(VALUE_MAGIC)?;
        match self {
            ValueFn::Tabular(t) => {
                w.write_all(&[0u8])?;
                w.write_all(&(t.values.len() as u64).to_le_bytes())?;
                for &v in &t.values {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            ValueFn::Mlp(m) => {
                w.write_all(&[1u8])?;
                write_mlp(&mut w, m)?;
            }
            ValueFn::Twin(a, b) => {
                w.write_all(&[2u8])?;
                write_mlp(&mut w, a)?;
                write_mlp(&mut w, b)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ValueFn> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| OdprError::format("unexpected end of file in value header"))?;
        if &magic != VALUE_MAGIC {
            return Err(OdprError::format("bad magic, not an ODPRVF01 value file"));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)
            .map_err(|_| OdprError::format("unexpected end of file in value header"))?;
        let out = match tag[0] {
            0 => {
                let n = read_u64(&mut r)? as usize;
                let mut values = Vec::with_capacity(n);
                for _ in 0..n {
                    values.push(read_f64(&mut r)?);
                }
                ValueFn::Tabular(TabularValueFn { values })
            }
            1 => ValueFn::Mlp(read_mlp(&mut r)?),
            2 => ValueFn::Twin(read_mlp(&mut r)?, read_mlp(&mut r)?),
            t => return Err(OdprError::format(format!("unknown value function tag {t}"))),
        };
        Ok(out)
    }
}

fn write_mlp(w: &mut impl Write, m: &MlpValueFn) -> Result<()> {
    w.write_all(&[m.activation.tag()])?;
    w.write_all(&(m.layer_sizes.len() as u64).to_le_bytes())?;
    for &s in &m.layer_sizes {
        w.write_all(&(s as u64).to_le_bytes())?;
    }
    for &p in &m.params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_mlp(r: &mut impl Read) -> Result<MlpValueFn> {
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|_| OdprError::format("unexpected end of file in network header"))?;
    let activation = Activation::from_tag(tag[0])?;
    let n_layers = read_u64(r)? as usize;
    if n_layers < 2 {
        return Err(OdprError::format("network needs at least two layer sizes"));
    }
    let mut layer_sizes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layer_sizes.push(read_u64(r)? as usize);
    }
    let n_params: usize = layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(read_f64(r)?);
    }
    Ok(MlpValueFn { layer_sizes, activation, params })
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| OdprError::format("unexpected end of file"))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// TD fitting configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub gamma: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hidden layer widths of the MLP path.
    pub hidden: Vec<usize>,
    /// Fit two heads; TD targets bootstrap their minimum, readout averages.
    pub double_heads: bool,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            gamma: 0.99,
            steps: 20_000,
            batch_size: 256,
            learning_rate: 1e-3,
            hidden: vec![64, 64],
            double_heads: true,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(OdprError::invalid(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(OdprError::invalid("steps and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OdprError::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(OdprError::invalid("hidden sizes must be positive"));
        }
        Ok(())
    }
}

/// Fit `V` by weighted TD regression. Minibatches are drawn uniformly when
/// `weights` is `None`, else proportionally to the weights. Datasets with
/// integral states are fitted as a table (double heads do not apply there);
/// everything else uses an MLP. Deterministic for a fixed
/// `(dataset, weights, cfg)`.
pub fn fit_value_td(
    d: &Dataset,
    weights: Option<&PriorityWeights>,
    cfg: &FitConfig,
) -> Result<ValueFn> {
    cfg.validate()?;
    if let Some(w) = weights {
        if w.len() != d.len() {
            return Err(OdprError::invariant(format!(
                "weight vector covers {} transitions, dataset has {}",
                w.len(),
                d.len()
            )));
        }
    }
    let sampler_rng = stream_rng(cfg.seed, STREAM_VALUE_FIT);
    let sampler = match weights {
        Some(w) => IndexSampler::weighted(w, sampler_rng)?,
        None => IndexSampler::uniform(d.len(), sampler_rng)?,
    };
    match d.integral_states() {
        Some(ts) => fit_tabular(d, &ts.states, &ts.next_states, ts.n_states, sampler, cfg),
        None => fit_mlp(d, sampler, cfg),
    }
}

fn fit_tabular(
    d: &Dataset,
    states: &[usize],
    next_states: &[usize],
    n_states: usize,
    mut sampler: IndexSampler,
    cfg: &FitConfig,
) -> Result<ValueFn> {
    let mut v = vec![0.0f64; n_states];
    let mut target = v.clone();
    let mut grad = vec![0.0f64; n_states];
    let batch_f = cfg.batch_size as f64;
    for step in 0..cfg.steps {
        let batch = sampler.sample_batch(cfg.batch_size);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &i in &batch {
            let t = d.get(i);
            let not_term = if t.terminal { 0.0 } else { 1.0 };
            let y = t.reward as f64 + cfg.gamma * not_term * target[next_states[i]];
            grad[states[i]] += 2.0 * (v[states[i]] - y) / batch_f;
        }
        for (x, g) in v.iter_mut().zip(&grad) {
            *x -= cfg.learning_rate * g;
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(OdprError::Divergence {
                step,
                msg: format!("tabular value hit {bad}"),
            });
        }
        if (step + 1) % TARGET_REFRESH == 0 {
            target.copy_from_slice(&v);
        }
    }
    Ok(ValueFn::Tabular(TabularValueFn { values: v }))
}

fn fit_mlp(d: &Dataset, mut sampler: IndexSampler, cfg: &FitConfig) -> Result<ValueFn> {
    let to_f64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let states: Vec<Vec<f64>> = d.transitions().iter().map(|t| to_f64(&t.state)).collect();
    let next_states: Vec<Vec<f64>> = d.transitions().iter().map(|t| to_f64(&t.next_state)).collect();

    let mut sizes = vec![d.state_dim()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let n_heads = if cfg.double_heads { 2 } else { 1 };
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let mut rng = stream_rng(cfg.seed, &format!("init-head-{h}"));
        heads.push(MlpValueFn::new(sizes.clone(), Activation::Tanh, &mut rng)?);
    }
    let mut targets = heads.clone();

    let mut ys = vec![0.0f64; cfg.batch_size];
    for step in 0..cfg.steps {
        let batch = sampler.sample_batch(cfg.batch_size);
        let xs: Vec<&[f64]> = batch.iter().map(|&i| states[i].as_slice()).collect();
        for (slot, &i) in ys.iter_mut().zip(&batch) {
            let t = d.get(i);
            let boot = if t.terminal {
                0.0
            } else {
                targets
                    .iter()
                    .map(|m| m.forward(&next_states[i]))
                    .fold(f64::INFINITY, f64::min)
            };
            *slot = t.reward as f64 + cfg.gamma * boot;
        }
        for (h, head) in heads.iter_mut().enumerate() {
            let (loss, grad) = head.grad_mse(&xs, &ys);
            if !loss.is_finite() {
                return Err(OdprError::Divergence {
                    step,
                    msg: format!("head {h} loss is {loss}"),
                });
            }
            head.sgd_step(cfg.learning_rate, &grad);
        }
        if (step + 1) % TARGET_REFRESH == 0 {
            targets.clone_from(&heads);
        }
    }
    let mut it = heads.into_iter();
    Ok(match (it.next(), it.next()) {
        (Some(a), Some(b)) => ValueFn::Twin(a, b),
        (Some(a), None) => ValueFn::Mlp(a),
        _ => unreachable!("at least one head"),
    })
}

/// Exact policy evaluation on a known MDP: solve
/// `(I - gamma * P_pi) V = r_pi`. For `gamma == 1`, states that are
/// absorbing with zero reward under the policy are pinned to `V = 0` and the
/// system is solved on the rest; an improper policy leaves the reduced
/// system singular, which is reported as an error.
pub fn solve_tabular_value(mdp: &TabularMdp, pi: &StochasticPolicy) -> Result<TabularValueFn> {
    mdp.validate()?;
    pi.validate()?;
    if pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions {
        return Err(OdprError::invariant("policy shape does not match MDP"));
    }
    let n = mdp.n_states;
    // Policy-averaged rewards and transitions.
    let mut r_pi = vec![0.0; n];
    let mut p_pi = vec![0.0; n * n];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let pa = pi.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            r_pi[s] += pa * mdp.r(s, a);
            for (s2, &p) in mdp.t_row(s, a).iter().enumerate() {
                p_pi[s * n + s2] += pa * p;
            }
        }
    }

    let absorbing: Vec<bool> = if mdp.gamma >= 1.0 {
        (0..n)
            .map(|s| {
                (0..mdp.n_actions).all(|a| {
                    pi.prob(s, a) == 0.0
                        || (mdp.t_row(s, a)[s] == 1.0 && mdp.r(s, a) == 0.0)
                })
            })
            .collect()
    } else {
        vec![false; n]
    };
    let free: Vec<usize> = (0..n).filter(|&s| !absorbing[s]).collect();
    let mut values = vec![0.0; n];
    if !free.is_empty() {
        let k = free.len();
        let m = nalgebra::DMatrix::<f64>::from_fn(k, k, |i, j| {
            let (s, s2) = (free[i], free[j]);
            (if s == s2 { 1.0 } else { 0.0 }) - mdp.gamma * p_pi[s * n + s2]
        });
        let b = nalgebra::DVector::from_iterator(k, free.iter().map(|&s| r_pi[s]));
        let sol = m.lu().solve(&b).ok_or_else(|| {
            OdprError::Singular("policy evaluation system is singular (improper policy?)".into())
        })?;
        for (i, &s) in free.iter().enumerate() {
            values[s] = sol[i];
        }
    }
    // Residual of the full Bellman system; catches ill-conditioned solves
    // and improper policies that slipped past LU.
    let mut residual = 0.0f64;
    for s in 0..n {
        let future: f64 = (0..n).map(|s2| p_pi[s * n + s2] * values[s2]).sum();
        residual = residual.max((values[s] - (r_pi[s] + mdp.gamma * future)).abs());
    }
    if !residual.is_finite() || residual > 1e-9 {
        return Err(OdprError::Singular(format!(
            "policy evaluation residual {residual} (improper policy?)"
        )));
    }
    Ok(TabularValueFn { values })
}
