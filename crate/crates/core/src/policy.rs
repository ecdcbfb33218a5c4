//! A small autoregressive policy with hand-written backpropagation.
//!
//! For response position `t` the context is the last `context_window`
//! tokens of `prompt ++ response[..t]`. With `c_0` the most recent context
//! token and `k` the context length:
//!
//! ```text
//! h      = (1/k) Σ_j a_j · E[c_j]          a: aggregation weights
//! z      = Wᵀ h + b                         W: embed_dim × vocab
//! l_t    = z[y_t] − logsumexp(z)
//! ```
//!
//! The prompt is never scored. Only the response positions produce
//! log-probabilities.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{exp, ln, sqrt};
use crate::prefdata::PreferencePair;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyDims {
    pub vocab_size: usize,
    pub context_window: usize,
    pub embed_dim: usize,
}

impl Default for PolicyDims {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            context_window: 4,
            embed_dim: 32,
        }
    }
}

impl PolicyDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("context_window", self.context_window),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        if self.vocab_size > u32::MAX as usize {
            return Err(Error::invalid("vocab_size", "must fit in u32"));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.vocab_size * self.embed_dim + self.context_window + self.vocab_size
    }
}

/// The four parameter blocks, each stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    /// `vocab_size × embed_dim`
    pub embedding: Vec<f64>,
    /// `context_window`, index 0 weights the most recent token.
    pub aggregation: Vec<f64>,
    /// `embed_dim × vocab_size`
    pub output: Vec<f64>,
    /// `vocab_size`
    pub bias: Vec<f64>,
}

pub const BLOCK_NAMES: [&str; 4] = ["embedding", "aggregation", "output", "bias"];

impl ParamSet {
    pub fn zeros(dims: &PolicyDims) -> Self {
        Self {
            embedding: vec![0.0; dims.vocab_size * dims.embed_dim],
            aggregation: vec![0.0; dims.context_window],
            output: vec![0.0; dims.embed_dim * dims.vocab_size],
            bias: vec![0.0; dims.vocab_size],
        }
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 4] {
        [
            (BLOCK_NAMES[0], &self.embedding),
            (BLOCK_NAMES[1], &self.aggregation),
            (BLOCK_NAMES[2], &self.output),
            (BLOCK_NAMES[3], &self.bias),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 4] {
        [
            (BLOCK_NAMES[0], &mut self.embedding),
            (BLOCK_NAMES[1], &mut self.aggregation),
            (BLOCK_NAMES[2], &mut self.output),
            (BLOCK_NAMES[3], &mut self.bias),
        ]
    }

    pub fn block(&self, index: usize) -> &[f64] {
        self.blocks()[index].1
    }

    pub fn block_mut(&mut self, index: usize) -> &mut [f64] {
        match index {
            0 => &mut self.embedding,
            1 => &mut self.aggregation,
            2 => &mut self.output,
            _ => &mut self.bias,
        }
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shapes(&self) -> [usize; 4] {
        self.blocks().map(|(_, b)| b.len())
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks().into_iter().flat_map(|(_, b)| b.iter().copied())
    }

    /// Name of the first block holding a non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.blocks()
            .into_iter()
            .find(|(_, b)| b.iter().any(|x| !x.is_finite()))
            .map(|(name, _)| name)
    }
}

/// Gradients with the same shape as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradients {
    pub grads: ParamSet,
}

impl ParameterGradients {
    pub fn zeros(dims: &PolicyDims) -> Self {
        Self {
            grads: ParamSet::zeros(dims),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.grads.iter().all(|g| g == 0.0)
    }
}

/// Upstream gradient `∂L/∂l_t` for every response position of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTokenGrads {
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
}

impl PairTokenGrads {
    pub fn zeros(pair: &PreferencePair) -> Self {
        Self {
            chosen: vec![0.0; pair.chosen.len()],
            rejected: vec![0.0; pair.rejected.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    dims: PolicyDims,
    params: ParamSet,
}

/// Activations of one scored position, kept for the backward pass.
struct Position<'a> {
    context: &'a [u32],
    hidden: Vec<f64>,
    probs: Vec<f64>,
    target: usize,
}

impl PolicyModel {
    /// All parameters zero: every context yields the uniform distribution.
    pub fn zeros(dims: PolicyDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            params: ParamSet::zeros(&dims),
            dims,
        })
    }

    /// Embedding and output entries uniform in `±1/sqrt(embed_dim)`,
    /// aggregation weights 1, bias 0.
    pub fn init(dims: PolicyDims, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        let scale = 1.0 / sqrt(dims.embed_dim as f64);
        let mut rng = seed::rng(seed);
        for x in model.params.embedding.iter_mut() {
            *x = rng.gen_range(-scale..scale);
        }
        for x in model.params.output.iter_mut() {
            *x = rng.gen_range(-scale..scale);
        }
        model.params.aggregation.fill(1.0);
        Ok(model)
    }

    pub fn from_params(dims: PolicyDims, params: ParamSet) -> Result<Self> {
        dims.validate()?;
        let expected = ParamSet::zeros(&dims).shapes();
        for (i, (&e, f)) in expected.iter().zip(params.shapes()).enumerate() {
            if e != f {
                return Err(Error::ShapeMismatch {
                    what: BLOCK_NAMES[i],
                    expected: e,
                    found: f,
                });
            }
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Frozen deep copy.
    pub fn snapshot(&self) -> PolicyModel {
        self.clone()
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.dims.vocab_size) {
            Some(&token) => Err(Error::TokenOutOfRange {
                token,
                vocab_size: self.dims.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn hidden(&self, context: &[u32]) -> Vec<f64> {
        let d = self.dims.embed_dim;
        let k = context.len();
        let mut h = vec![0.0; d];
        for (j, &tok) in context.iter().rev().enumerate() {
            let a = self.params.aggregation[j];
            let row = &self.params.embedding[tok as usize * d..(tok as usize + 1) * d];
            for (hi, &e) in h.iter_mut().zip(row) {
                *hi += a * e;
            }
        }
        let inv = 1.0 / k as f64;
        for hi in h.iter_mut() {
            *hi *= inv;
        }
        h
    }

    fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        let v = self.dims.vocab_size;
        let mut z = self.params.bias.clone();
        for (di, &hd) in hidden.iter().enumerate() {
            let row = &self.params.output[di * v..(di + 1) * v];
            for (zv, &w) in z.iter_mut().zip(row) {
                *zv += hd * w;
            }
        }
        z
    }

    /// Log-softmax of `logits`, max-subtracted.
    fn log_softmax(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&z| exp(z - max)).sum();
        let lse = max + ln(sum);
        logits.iter().map(|&z| z - lse).collect()
    }

    fn positions<'a>(&self, full: &'a [u32], prompt_len: usize) -> Vec<Position<'a>> {
        let w = self.dims.context_window;
        (prompt_len..full.len())
            .map(|end| {
                let context = &full[end.saturating_sub(w)..end];
                let hidden = self.hidden(context);
                let probs = Self::log_softmax(&self.logits(&hidden))
                    .into_iter()
                    .map(exp)
                    .collect();
                Position {
                    context,
                    hidden,
                    probs,
                    target: full[end] as usize,
                }
            })
            .collect()
    }

    /// Full next-token log-distribution after `context` (non-empty).
    pub fn next_token_logprobs(&self, context: &[u32]) -> Result<Vec<f64>> {
        if context.is_empty() {
            return Err(Error::EmptySequence("context"));
        }
        self.check_tokens(context)?;
        let w = self.dims.context_window;
        let context = &context[context.len().saturating_sub(w)..];
        Ok(Self::log_softmax(&self.logits(&self.hidden(context))))
    }

    /// `ln π(response_t | prompt, response_<t)` for every response position.
    pub fn forward(&self, prompt: &[u32], response: &[u32]) -> Result<Vec<f64>> {
        if prompt.is_empty() {
            return Err(Error::EmptySequence("prompt"));
        }
        self.check_tokens(prompt)?;
        self.check_tokens(response)?;
        let w = self.dims.context_window;
        let mut full = Vec::with_capacity(prompt.len() + response.len());
        full.extend_from_slice(prompt);
        full.extend_from_slice(response);
        Ok((prompt.len()..full.len())
            .map(|end| {
                let context = &full[end.saturating_sub(w)..end];
                let logp = Self::log_softmax(&self.logits(&self.hidden(context)));
                logp[full[end] as usize]
            })
            .collect())
    }

    /// Per-pair forward over a batch: `(chosen, rejected)` log-probabilities.
    pub fn forward_batch(&self, pairs: &[PreferencePair]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        pairs
            .iter()
            .map(|p| {
                Ok((
                    self.forward(p.prompt.tokens(), p.chosen.tokens())?,
                    self.forward(p.prompt.tokens(), p.rejected.tokens())?,
                ))
            })
            .collect()
    }

    /// Accumulates `Σ_t g_t · ∇θ l_t` for one response into `out`.
    fn backward_sequence(
        &self,
        prompt: &[u32],
        response: &[u32],
        upstream: &[f64],
        out: &mut ParamSet,
    ) {
        if upstream.iter().all(|&g| g == 0.0) {
            return;
        }
        let d = self.dims.embed_dim;
        let v = self.dims.vocab_size;
        let mut full = Vec::with_capacity(prompt.len() + response.len());
        full.extend_from_slice(prompt);
        full.extend_from_slice(response);

        let mut dz = vec![0.0; v];
        let mut dh = vec![0.0; d];
        for (pos, &g) in self.positions(&full, prompt.len()).iter().zip(upstream) {
            if g == 0.0 {
                continue;
            }
            // ∂l/∂z = onehot(y) − softmax(z)
            for (dzv, &p) in dz.iter_mut().zip(&pos.probs) {
                *dzv = -g * p;
            }
            dz[pos.target] += g;

            for (b, &dzv) in out.bias.iter_mut().zip(&dz) {
                *b += dzv;
            }
            dh.fill(0.0);
            for (di, &hd) in pos.hidden.iter().enumerate() {
                let w_row = &self.params.output[di * v..(di + 1) * v];
                let g_row = &mut out.output[di * v..(di + 1) * v];
                let mut acc = 0.0;
                for ((gw, &w), &dzv) in g_row.iter_mut().zip(w_row).zip(&dz) {
                    *gw += hd * dzv;
                    acc += w * dzv;
                }
                dh[di] = acc;
            }

            let inv = 1.0 / pos.context.len() as f64;
            for (j, &tok) in pos.context.iter().rev().enumerate() {
                let tok = tok as usize;
                let a = self.params.aggregation[j];
                let e_row = &self.params.embedding[tok * d..(tok + 1) * d];
                let mut da = 0.0;
                for (&dhd, &e) in dh.iter().zip(e_row) {
                    da += dhd * e;
                }
                out.aggregation[j] += inv * da;
                let ge_row = &mut out.embedding[tok * d..(tok + 1) * d];
                for (ge, &dhd) in ge_row.iter_mut().zip(&dh) {
                    *ge += inv * a * dhd;
                }
            }
        }
    }

    /// Reverse-mode gradient of `Σ_pairs Σ_t upstream_t · l_t` with respect
    /// to every parameter. Pairs are reduced in index order.
    pub fn backward(
        &self,
        pairs: &[PreferencePair],
        upstream: &[PairTokenGrads],
    ) -> Result<ParameterGradients> {
        if pairs.len() != upstream.len() {
            return Err(Error::ShapeMismatch {
                what: "upstream pairs",
                expected: pairs.len(),
                found: upstream.len(),
            });
        }
        for (pair, g) in pairs.iter().zip(upstream) {
            if g.chosen.len() != pair.chosen.len() {
                return Err(Error::ShapeMismatch {
                    what: "upstream chosen positions",
                    expected: pair.chosen.len(),
                    found: g.chosen.len(),
                });
            }
            if g.rejected.len() != pair.rejected.len() {
                return Err(Error::ShapeMismatch {
                    what: "upstream rejected positions",
                    expected: pair.rejected.len(),
                    found: g.rejected.len(),
                });
            }
            pair.check_vocab(self.dims.vocab_size)?;
        }
        let mut out = ParameterGradients::zeros(&self.dims);
        for (pair, g) in pairs.iter().zip(upstream) {
            let prompt = pair.prompt.tokens();
            self.backward_sequence(prompt, pair.chosen.tokens(), &g.chosen, &mut out.grads);
            self.backward_sequence(prompt, pair.rejected.tokens(), &g.rejected, &mut out.grads);
        }
        Ok(out)
    }

    /// Checkpoint layout, all integers and floats little-endian:
    ///
    /// ```text
    /// magic        8 bytes  "SLIMECKP"
    /// version      u32      1
    /// vocab_size   u32
    /// context      u32
    /// embed_dim    u32
    /// embedding    f64 × vocab·embed     row-major
    /// aggregation  f64 × context
    /// output       f64 × embed·vocab     row-major
    /// bias         f64 × vocab
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for dim in [
            self.dims.vocab_size,
            self.dims.context_window,
            self.dims.embed_dim,
        ] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for x in self.params.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = 8 + 4 * 4;
        if bytes.len() < header || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(String::from("missing magic header")));
        }
        let word = |i: usize| {
            let start = 8 + 4 * i;
            u32::from_le_bytes(bytes[start..start + 4].try_into().unwrap())
        };
        let version = word(0);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dims = PolicyDims {
            vocab_size: word(1) as usize,
            context_window: word(2) as usize,
            embed_dim: word(3) as usize,
        };
        dims.validate()?;
        let expected = header + 8 * dims.parameter_count();
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let mut params = ParamSet::zeros(&dims);
        let mut chunks = bytes[header..].chunks_exact(8);
        for (_, block) in params.blocks_mut() {
            for (x, chunk) in block.iter_mut().zip(&mut chunks) {
                *x = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        Ok(Self { dims, params })
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SLIMECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::logsumexp;

    fn dims(v: usize, w: usize, d: usize) -> PolicyDims {
        PolicyDims {
            vocab_size: v,
            context_window: w,
            embed_dim: d,
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = PolicyModel::zeros(dims(64, 4, 8)).unwrap();
        let out = m.forward(&[1, 2], &[3, 4, 5]).unwrap();
        for l in out {
            assert!((l + ln(64.0)).abs() < 1e-14);
        }
        let m = PolicyModel::zeros(dims(2, 1, 1)).unwrap();
        let out = m.forward(&[0], &[1]).unwrap();
        assert!((out[0] + core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_dims_and_tokens() {
        assert!(PolicyModel::init(dims(8, 2, 0), 0).is_err());
        assert!(PolicyModel::init(dims(0, 2, 4), 0).is_err());
        let m = PolicyModel::init(dims(8, 2, 4), 0).unwrap();
        assert_eq!(
            m.forward(&[1], &[8]),
            Err(Error::TokenOutOfRange {
                token: 8,
                vocab_size: 8
            })
        );
        assert!(m.forward(&[], &[1]).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = PolicyModel::init(PolicyDims::default(), 3).unwrap();
        let b = PolicyModel::init(PolicyDims::default(), 3).unwrap();
        let c = PolicyModel::init(PolicyDims::default(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.params().bias.iter().all(|&b| b == 0.0));
        assert_eq!(a.parameter_count(), PolicyDims::default().parameter_count());
    }

    #[test]
    fn log_softmax_normalizes() {
        let m = PolicyModel::init(dims(16, 3, 5), 1).unwrap();
        for ctx in [&[1u32][..], &[3, 4], &[5, 6, 7, 8, 9]] {
            let logp = m.next_token_logprobs(ctx).unwrap();
            assert!(logsumexp(&logp).abs() < 1e-12);
            let total: f64 = logp.iter().map(|&l| exp(l)).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn context_window_truncates() {
        let m = PolicyModel::init(dims(16, 2, 5), 1).unwrap();
        // only the last two tokens matter
        assert_eq!(
            m.next_token_logprobs(&[9, 1, 2]).unwrap(),
            m.next_token_logprobs(&[4, 1, 2]).unwrap()
        );
        let long = m.forward(&[9, 1], &[2, 3]).unwrap();
        let short = m.forward(&[1], &[2, 3]).unwrap();
        assert_eq!(long[1], short[1]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = PolicyModel::init(dims(8, 2, 4), 0).unwrap();
        let pair = PreferencePair::new(0, vec![1, 2], vec![3, 4], vec![5], 8).unwrap();
        let g = m
            .backward(core::slice::from_ref(&pair), &[PairTokenGrads::zeros(&pair)])
            .unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn backward_shape_mismatch() {
        let m = PolicyModel::init(dims(8, 2, 4), 0).unwrap();
        let pair = PreferencePair::new(0, vec![1, 2], vec![3, 4], vec![5], 8).unwrap();
        let bad = PairTokenGrads {
            chosen: vec![1.0],
            rejected: vec![1.0],
        };
        assert!(matches!(
            m.backward(core::slice::from_ref(&pair), &[bad]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(m.backward(core::slice::from_ref(&pair), &[]).is_err());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let m = PolicyModel::init(dims(8, 2, 4), 0).unwrap();
        let mut bytes = m.to_bytes();
        assert_eq!(PolicyModel::from_bytes(&bytes).unwrap(), m);
        bytes.pop();
        assert!(PolicyModel::from_bytes(&bytes).is_err());
        assert!(PolicyModel::from_bytes(b"NOTACKPT").is_err());
        let mut v2 = m.to_bytes();
        v2[8] = 2;
        assert!(PolicyModel::from_bytes(&v2).is_err());
    }
}
