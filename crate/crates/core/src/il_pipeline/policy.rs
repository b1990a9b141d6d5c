use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::examples::{StepExample, StepInput, PROGRESS_CLASSES};
use crate::seed::rng_for;
use crate::views::NUM_BUCKETS;
use crate::{Error, Result};

pub const DEFAULT_EMBED_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
}

impl PolicyShape {
    /// [mean instruction embedding, aligned token embedding, pooled
    /// observation, previous pooled observation, progress, bias]
    pub fn context_dim(&self) -> usize {
        2 * self.embed_dim + 2 * self.feature_dim + 2
    }

    /// [context, candidate feature, one-hot relative bucket]
    pub fn phi_dim(&self) -> usize {
        self.context_dim() + self.feature_dim + NUM_BUCKETS
    }

    pub fn w_range(&self) -> std::ops::Range<usize> {
        0..self.phi_dim()
    }

    pub fn u_range(&self) -> std::ops::Range<usize> {
        let start = self.w_range().end;
        start..start + NUM_BUCKETS * self.context_dim()
    }

    pub fn p_range(&self) -> std::ops::Range<usize> {
        let start = self.u_range().end;
        start..start + PROGRESS_CLASSES * self.context_dim()
    }

    pub fn e_range(&self) -> std::ops::Range<usize> {
        let start = self.p_range().end;
        start..start + self.vocab_size * self.embed_dim
    }

    pub fn param_count(&self) -> usize {
        self.e_range().end
    }
}

/// Linear stand-in for the navigation transformer: a candidate scorer
/// `w·φ`, an unconstrained 37-way bucket head `U c`, a 20-way progress head
/// `P c`, and a token embedding table `E`, all stored in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    pub shape: PolicyShape,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub constrained: Vec<f64>,
    pub buckets: Vec<f64>,
    pub progress: Vec<f64>,
    /// `0.5·constrained + 0.5·buckets[rel_bucket]` per candidate.
    pub fused: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub constrained: f64,
    pub unconstrained: f64,
    pub progress: f64,
    /// Zero disables the masked-token auxiliary loss.
    pub mlm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { constrained: 1.0, unconstrained: 1.0, progress: 0.2, mlm: 0.1 }
    }
}

fn log_softmax_grad(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[target];
    let mut grad: Vec<f64> = exps.into_iter().map(|e| e / sum).collect();
    grad[target] -= 1.0;
    (loss, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot32(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * *y as f64).sum()
}

impl LinearPolicy {
    pub fn zeros(shape: PolicyShape) -> Self {
        Self { shape, params: vec![0.0; shape.param_count()] }
    }

    /// Zero heads and a small Gaussian embedding table.
    pub fn init(shape: PolicyShape, seed: u64) -> Self {
        let mut policy = Self::zeros(shape);
        let mut rng = rng_for(seed, &["policy-init"]);
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        for x in &mut policy.params[shape.e_range()] {
            *x = normal.sample(&mut rng);
        }
        policy
    }

    pub fn from_params(shape: PolicyShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(Error::DimensionMismatch { expected: shape.param_count(), actual: params.len() });
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("policy has non-finite weights".into()));
        }
        Ok(Self { shape, params })
    }

    fn embedding(&self, token: u32) -> &[f64] {
        let de = self.shape.embed_dim;
        let start = self.shape.e_range().start + token as usize * de;
        &self.params[start..start + de]
    }

    fn check_input(&self, input: &StepInput) -> Result<()> {
        let d = self.shape.feature_dim;
        let mismatch = |actual: usize| Error::DimensionMismatch { expected: d, actual };
        if input.pooled_obs.len() != d {
            return Err(mismatch(input.pooled_obs.len()));
        }
        if let Some(h) = input.history.iter().find(|h| h.pooled_obs.len() != d) {
            return Err(mismatch(h.pooled_obs.len()));
        }
        if let Some(c) = input.candidates.iter().find(|c| c.feature.len() != d) {
            return Err(mismatch(c.feature.len()));
        }
        if input.candidates.is_empty() || input.tokens.is_empty() {
            return Err(Error::Format("step input needs candidates and tokens".into()));
        }
        if let Some(&t) = input.tokens.iter().find(|&&t| t as usize >= self.shape.vocab_size) {
            return Err(Error::Format(format!("token {t} outside vocabulary")));
        }
        Ok(())
    }

    fn aligned_position(input: &StepInput) -> usize {
        input.t.min(input.tokens.len() - 1)
    }

    pub fn context(&self, input: &StepInput) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let de = self.shape.embed_dim;
        let mut c = Vec::with_capacity(self.shape.context_dim());
        let mut mean = vec![0.0; de];
        for &tok in &input.tokens {
            for (m, e) in mean.iter_mut().zip(self.embedding(tok)) {
                *m += e;
            }
        }
        let n = input.tokens.len() as f64;
        c.extend(mean.iter().map(|m| m / n));
        c.extend_from_slice(self.embedding(input.tokens[Self::aligned_position(input)]));
        c.extend(input.pooled_obs.iter().map(|&x| x as f64));
        match input.history.last() {
            Some(h) => c.extend(h.pooled_obs.iter().map(|&x| x as f64)),
            None => c.extend(std::iter::repeat_n(0.0, self.shape.feature_dim)),
        }
        let len = input.tokens.len();
        c.push(if len <= 1 { 1.0 } else { (input.t as f64 / (len - 1) as f64).min(1.0) });
        c.push(1.0);
        Ok(c)
    }

    fn head(&self, range: std::ops::Range<usize>, rows: usize, c: &[f64]) -> Vec<f64> {
        let cd = c.len();
        let m = &self.params[range];
        (0..rows).map(|r| dot(&m[r * cd..(r + 1) * cd], c)).collect()
    }

    fn constrained_logit(&self, c: &[f64], feature: &[f32], bucket: u8) -> f64 {
        let w = &self.params[self.shape.w_range()];
        let cd = c.len();
        let fd = self.shape.feature_dim;
        dot(&w[..cd], c) + dot32(&w[cd..cd + fd], feature) + w[cd + fd + bucket as usize]
    }

    pub fn policy_logits(&self, input: &StepInput) -> Result<Scores> {
        let c = self.context(input)?;
        Ok(self.scores_from_context(input, &c))
    }

    fn scores_from_context(&self, input: &StepInput, c: &[f64]) -> Scores {
        let constrained: Vec<f64> = input
            .candidates
            .iter()
            .map(|cand| self.constrained_logit(c, &cand.feature, cand.rel_bucket))
            .collect();
        let buckets = self.head(self.shape.u_range(), NUM_BUCKETS, c);
        let progress = self.head(self.shape.p_range(), PROGRESS_CLASSES, c);
        let fused = input
            .candidates
            .iter()
            .zip(&constrained)
            .map(|(cand, l)| 0.5 * l + 0.5 * buckets[cand.rel_bucket as usize])
            .collect();
        Scores { constrained, buckets, progress, fused }
    }

    /// Greedy choice; the first candidate wins ties.
    pub fn choose(&self, input: &StepInput) -> Result<usize> {
        let scores = self.policy_logits(input)?;
        Ok(argmax(&scores.fused))
    }

    /// Weighted loss of one example. When `grad` is given, `scale` times the
    /// gradient is added to it.
    pub fn example_loss(
        &self,
        example: &StepExample,
        weights: &LossWeights,
        grad: Option<(&mut [f64], f64)>,
    ) -> Result<f64> {
        let input = &example.input;
        let labels = &example.labels;
        let c = self.context(input)?;
        let scores = self.scores_from_context(input, &c);
        if labels.constrained_idx >= input.candidates.len() {
            return Err(Error::Format(format!("label {} outside candidates", labels.constrained_idx)));
        }
        let (l_con, g_fused) = log_softmax_grad(&scores.fused, labels.constrained_idx);
        let (l_unc, g_buckets) = log_softmax_grad(&scores.buckets, labels.unconstrained_bucket as usize);
        let progress_target = (labels.progress_class as usize).min(PROGRESS_CLASSES - 1);
        let (l_prog, g_prog) = log_softmax_grad(&scores.progress, progress_target);
        let mut loss = weights.constrained * l_con + weights.unconstrained * l_unc + weights.progress * l_prog;

        let use_mlm = weights.mlm != 0.0 && !labels.masked_tokens.is_empty();
        let mut mlm_parts = None;
        if use_mlm {
            let (l, parts) = self.mlm_loss(labels)?;
            loss += weights.mlm * l;
            mlm_parts = Some(parts);
        }

        let Some((grad, scale)) = grad else { return Ok(loss) };
        let shape = self.shape;
        let cd = shape.context_dim();
        let fd = shape.feature_dim;
        let de = shape.embed_dim;
        let mut dc = vec![0.0; cd];

        // constrained head through the fused score
        let mut d_buckets: Vec<f64> = g_buckets.iter().map(|g| weights.unconstrained * g).collect();
        {
            let w_start = shape.w_range().start;
            let w_c = &self.params[w_start..w_start + cd];
            for (cand, g) in input.candidates.iter().zip(&g_fused) {
                let dl = 0.5 * weights.constrained * g;
                d_buckets[cand.rel_bucket as usize] += dl;
                if dl == 0.0 {
                    continue;
                }
                for i in 0..cd {
                    grad[w_start + i] += scale * dl * c[i];
                    dc[i] += dl * w_c[i];
                }
                for (i, &f) in cand.feature.iter().enumerate() {
                    grad[w_start + cd + i] += scale * dl * f as f64;
                }
                grad[w_start + cd + fd + cand.rel_bucket as usize] += scale * dl;
            }
        }
        let mut back = |range: std::ops::Range<usize>, d_out: &[f64], dc: &mut [f64]| {
            for (r, &d) in d_out.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = range.start + r * cd;
                for i in 0..cd {
                    grad[row + i] += scale * d * c[i];
                    dc[i] += d * self.params[row + i];
                }
            }
        };
        back(shape.u_range(), &d_buckets, &mut dc);
        let d_prog: Vec<f64> = g_prog.iter().map(|g| weights.progress * g).collect();
        back(shape.p_range(), &d_prog, &mut dc);

        // context back into the embedding table
        let e0 = shape.e_range().start;
        let n = input.tokens.len() as f64;
        for &tok in &input.tokens {
            let row = e0 + tok as usize * de;
            for i in 0..de {
                grad[row + i] += scale * dc[i] / n;
            }
        }
        let aligned = input.tokens[Self::aligned_position(input)] as usize;
        for i in 0..de {
            grad[e0 + aligned * de + i] += scale * dc[de + i];
        }

        if let Some(parts) = mlm_parts {
            self.mlm_backward(labels, &parts, weights.mlm * scale, grad);
        }
        Ok(loss)
    }

    /// Bag-of-tokens reconstruction: score every vocabulary entry against the
    /// mean embedding of the masked instruction.
    fn mlm_loss(&self, labels: &super::examples::StepLabels) -> Result<(f64, MlmParts)> {
        let de = self.shape.embed_dim;
        if labels.masked_input.is_empty() {
            return Err(Error::Format("masked input is empty".into()));
        }
        let mut m = vec![0.0; de];
        for &tok in &labels.masked_input {
            if tok as usize >= self.shape.vocab_size {
                return Err(Error::Format(format!("token {tok} outside vocabulary")));
            }
            for (a, e) in m.iter_mut().zip(self.embedding(tok)) {
                *a += e;
            }
        }
        let n = labels.masked_input.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        let logits: Vec<f64> = (0..self.shape.vocab_size as u32).map(|v| dot(self.embedding(v), &m)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_z = sum.ln() + max;
        let mut loss = 0.0;
        for &(_, id) in &labels.masked_tokens {
            if id as usize >= self.shape.vocab_size {
                return Err(Error::Format(format!("target token {id} outside vocabulary")));
            }
            loss += log_z - logits[id as usize];
        }
        let k = labels.masked_tokens.len() as f64;
        let probs = logits.iter().map(|z| (z - log_z).exp()).collect();
        Ok((loss / k, MlmParts { mean: m, probs }))
    }

    fn mlm_backward(&self, labels: &super::examples::StepLabels, parts: &MlmParts, scale: f64, grad: &mut [f64]) {
        let de = self.shape.embed_dim;
        let e0 = self.shape.e_range().start;
        let mut g_logits = parts.probs.clone();
        let k = labels.masked_tokens.len() as f64;
        for &(_, id) in &labels.masked_tokens {
            g_logits[id as usize] -= 1.0 / k;
        }
        let mut dm = vec![0.0; de];
        for (v, &g) in g_logits.iter().enumerate() {
            let row = e0 + v * de;
            for i in 0..de {
                dm[i] += g * self.params[row + i];
                grad[row + i] += scale * g * parts.mean[i];
            }
        }
        let n = labels.masked_input.len() as f64;
        for &tok in &labels.masked_input {
            let row = e0 + tok as usize * de;
            for i in 0..de {
                grad[row + i] += scale * dm[i] / n;
            }
        }
    }

    /// Mean loss over `batch`, with its gradient when requested.
    pub fn batch_loss(&self, batch: &[&StepExample], weights: &LossWeights, grad: Option<&mut [f64]>) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        match grad {
            Some(g) => {
                for ex in batch {
                    total += self.example_loss(ex, weights, Some((&mut *g, scale)))?;
                }
            }
            None => {
                for ex in batch {
                    total += self.example_loss(ex, weights, None)?;
                }
            }
        }
        Ok(total * scale)
    }
}

struct MlmParts {
    mean: Vec<f64>,
    probs: Vec<f64>,
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// On-disk form: flat weight lists with their shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub shape: PolicyShape,
    pub w: Tensor,
    pub u: Tensor,
    pub p: Tensor,
    pub e: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl LinearPolicy {
    pub fn to_document(&self) -> PolicyDocument {
        let s = self.shape;
        let t = |shape: Vec<usize>, range: std::ops::Range<usize>| Tensor { shape, data: self.params[range].to_vec() };
        PolicyDocument {
            shape: s,
            w: t(vec![s.phi_dim()], s.w_range()),
            u: t(vec![NUM_BUCKETS, s.context_dim()], s.u_range()),
            p: t(vec![PROGRESS_CLASSES, s.context_dim()], s.p_range()),
            e: t(vec![s.vocab_size, s.embed_dim], s.e_range()),
        }
    }

    pub fn from_document(doc: &PolicyDocument) -> Result<Self> {
        let s = doc.shape;
        let expected = [
            (&doc.w, vec![s.phi_dim()]),
            (&doc.u, vec![NUM_BUCKETS, s.context_dim()]),
            (&doc.p, vec![PROGRESS_CLASSES, s.context_dim()]),
            (&doc.e, vec![s.vocab_size, s.embed_dim]),
        ];
        let mut params = Vec::with_capacity(s.param_count());
        for (tensor, shape) in expected {
            let size: usize = shape.iter().product();
            if tensor.shape != shape || tensor.data.len() != size {
                return Err(Error::DimensionMismatch { expected: size, actual: tensor.data.len() });
            }
            params.extend_from_slice(&tensor.data);
        }
        Self::from_params(s, params)
    }
}
