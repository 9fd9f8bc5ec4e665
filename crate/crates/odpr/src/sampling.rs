//! Index samplers. Resampling transition `i` with probability `w_i` is, in
//! expectation, the same thing as multiplying its loss by `N * w_i` under
//! uniform draws; `reweighted_loss` is that second route. The decoupled
//! training loops keep two samplers: a uniform one for policy evaluation and
//! a weighted one for policy improvement and the policy constraint, each on
//! its own RNG stream so neither can perturb the other.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::OdprError;
use crate::priority::PriorityWeights;
use crate::rng::{stream_rng, OdprRng, STREAM_ACTOR_SAMPLER, STREAM_EVAL_SAMPLER};
use crate::Result;

#[derive(Debug, Clone)]
enum Mode {
    Uniform,
    Weighted {
        /// Cumulative weights; `cum[last]` is the total mass. Zero-weight
        /// indices occupy empty intervals and are never drawn.
        cum: Vec<f64>,
        /// Largest index with positive weight, used to clamp boundary hits.
        last_positive: usize,
    },
}

/// Draws dataset indices i.i.d., either uniformly or proportionally to a
/// weight vector (inverse-CDF lookup by binary search over the cumulative
/// sums). A sampler can pre-generate a stream of indices up front; draining
/// the stream yields exactly the sequence on-demand draws would have
/// produced.
#[derive(Debug, Clone)]
pub struct IndexSampler {
    n: usize,
    mode: Mode,
    rng: OdprRng,
    stream: VecDeque<usize>,
}

impl IndexSampler {
    pub fn uniform(n: usize, rng: OdprRng) -> Result<Self> {
        if n == 0 {
            return Err(OdprError::invalid("cannot sample from an empty index set"));
        }
        Ok(IndexSampler { n, mode: Mode::Uniform, rng, stream: VecDeque::new() })
    }

    pub fn weighted(weights: &PriorityWeights, rng: OdprRng) -> Result<Self> {
        let w = weights.as_slice();
        let mut cum = Vec::with_capacity(w.len());
        let mut acc = 0.0;
        let mut last_positive = None;
        for (i, &x) in w.iter().enumerate() {
            if x > 0.0 {
                last_positive = Some(i);
            }
            acc += x;
            cum.push(acc);
        }
        let last_positive = last_positive
            .ok_or_else(|| OdprError::invariant("weighted sampler needs positive mass"))?;
        Ok(IndexSampler {
            n: w.len(),
            mode: Mode::Weighted { cum, last_positive },
            rng,
            stream: VecDeque::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn draw(&mut self) -> usize {
        match &self.mode {
            Mode::Uniform => self.rng.gen_range(0..self.n),
            Mode::Weighted { cum, last_positive } => {
                let total = *cum.last().expect("nonempty cumulative table");
                let u: f64 = self.rng.gen::<f64>() * total;
                let idx = cum.partition_point(|&c| c <= u);
                idx.min(*last_positive)
            }
        }
    }

    /// Draw `batch_size` indices i.i.d. (with replacement).
    pub fn sample_batch(&mut self, batch_size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            out.push(match self.stream.pop_front() {
                Some(i) => i,
                None => self.draw(),
            });
        }
        out
    }

    /// Pre-generate `total` indices now; subsequent batches replay them and
    /// fall back to on-demand draws (same RNG) once the stream is drained.
    pub fn pregenerate_stream(mut self, total: usize) -> Self {
        for _ in 0..total {
            let i = self.draw();
            self.stream.push_back(i);
        }
        self
    }
}

/// The decoupled sampler pair: `eval` draws uniformly for policy evaluation,
/// `actor` draws from the priority weights for policy improvement and the
/// policy constraint. The two run on independent named RNG streams derived
/// from the master seed, so eval draws are bit-identical no matter what
/// weights the actor side carries.
#[derive(Debug, Clone)]
pub struct DecoupledSamplers {
    pub eval: IndexSampler,
    pub actor: IndexSampler,
}

impl DecoupledSamplers {
    pub fn new(n: usize, actor_weights: &PriorityWeights, master_seed: u64) -> Result<Self> {
        if actor_weights.len() != n {
            return Err(OdprError::invariant(format!(
                "actor weights cover {} indices, dataset has {n}",
                actor_weights.len()
            )));
        }
        Ok(DecoupledSamplers {
            eval: IndexSampler::uniform(n, stream_rng(master_seed, STREAM_EVAL_SAMPLER))?,
            actor: IndexSampler::weighted(actor_weights, stream_rng(master_seed, STREAM_ACTOR_SAMPLER))?,
        })
    }
}

/// Importance-weighted batch loss: `mean_i (N * w_i) * loss_i` over the
/// batch indices. With uniform batch draws this estimates the same
/// expectation as resampling by `w` and averaging plain losses.
pub fn reweighted_loss(losses: &[f64], w: &PriorityWeights, batch: &[usize]) -> f64 {
    let n = w.len() as f64;
    let ws = w.as_slice();
    let mut acc = 0.0;
    for &i in batch {
        acc += n * ws[i] * losses[i];
    }
    acc / batch.len() as f64
}
