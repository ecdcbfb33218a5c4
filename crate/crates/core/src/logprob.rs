//! Token-level log-probabilities `l_t = ln π(y_t | x, y_<t)` and their
//! length-normalized sequence means `l̄(y)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::policy::PolicyModel;
use crate::prefdata::PreferencePair;

/// Per-position log-probabilities of one response with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLogProbs {
    pub logprobs: Vec<f64>,
    pub mask: Vec<bool>,
}

impl SequenceLogProbs {
    /// All positions valid.
    pub fn dense(logprobs: Vec<f64>) -> Self {
        let mask = vec![true; logprobs.len()];
        Self { logprobs, mask }
    }

    pub fn new(logprobs: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if logprobs.len() != mask.len() {
            return Err(Error::ShapeMismatch {
                what: "log-probability mask",
                expected: logprobs.len(),
                found: mask.len(),
            });
        }
        Ok(Self { logprobs, mask })
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid(&self) -> impl Iterator<Item = f64> + '_ {
        self.logprobs
            .iter()
            .zip(&self.mask)
            .filter_map(|(&l, &m)| m.then_some(l))
    }

    pub fn mean(&self) -> Result<f64> {
        sequence_mean(&self.logprobs, &self.mask)
    }

    pub fn sum(&self) -> f64 {
        self.valid().sum()
    }

    pub fn min(&self) -> f64 {
        self.valid().fold(f64::INFINITY, f64::min)
    }

    fn validate(&self) -> Result<()> {
        for (position, (&l, &m)) in self.logprobs.iter().zip(&self.mask).enumerate() {
            if !m {
                continue;
            }
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("token log-prob at {position}")));
            }
            if l > 0.0 {
                return Err(Error::PositiveLogProb { position, value: l });
            }
        }
        Ok(())
    }
}

/// Chosen and rejected token log-probabilities for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLogProbs {
    pub chosen: SequenceLogProbs,
    pub rejected: SequenceLogProbs,
}

/// Validated per-pair log-probabilities with cached sequence statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbBatch {
    pairs: Vec<PairLogProbs>,
    seq_mean_chosen: Vec<f64>,
    seq_mean_rejected: Vec<f64>,
    seq_sum_chosen: Vec<f64>,
    seq_sum_rejected: Vec<f64>,
}

impl LogProbBatch {
    pub fn new(pairs: Vec<PairLogProbs>) -> Result<Self> {
        let mut seq_mean_chosen = Vec::with_capacity(pairs.len());
        let mut seq_mean_rejected = Vec::with_capacity(pairs.len());
        let mut seq_sum_chosen = Vec::with_capacity(pairs.len());
        let mut seq_sum_rejected = Vec::with_capacity(pairs.len());
        for pair in &pairs {
            pair.chosen.validate()?;
            pair.rejected.validate()?;
            seq_mean_chosen.push(pair.chosen.mean()?);
            seq_mean_rejected.push(pair.rejected.mean()?);
            seq_sum_chosen.push(pair.chosen.sum());
            seq_sum_rejected.push(pair.rejected.sum());
        }
        Ok(Self {
            pairs,
            seq_mean_chosen,
            seq_mean_rejected,
            seq_sum_chosen,
            seq_sum_rejected,
        })
    }

    pub fn from_policy(policy: &PolicyModel, pairs: &[PreferencePair]) -> Result<Self> {
        let logprobs = pairs
            .iter()
            .map(|pair| token_logprobs(policy, pair))
            .collect::<Result<Vec<_>>>()?;
        Self::new(logprobs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[PairLogProbs] {
        &self.pairs
    }

    /// `l̄_w` per pair.
    pub fn seq_mean_chosen(&self) -> &[f64] {
        &self.seq_mean_chosen
    }

    /// `l̄_l` per pair.
    pub fn seq_mean_rejected(&self) -> &[f64] {
        &self.seq_mean_rejected
    }

    pub fn seq_sum_chosen(&self) -> &[f64] {
        &self.seq_sum_chosen
    }

    pub fn seq_sum_rejected(&self) -> &[f64] {
        &self.seq_sum_rejected
    }

    /// Sequence scores used by the margin: means when `length_normalize`,
    /// raw sums otherwise.
    pub fn scores(&self, length_normalize: bool) -> (&[f64], &[f64]) {
        if length_normalize {
            (&self.seq_mean_chosen, &self.seq_mean_rejected)
        } else {
            (&self.seq_sum_chosen, &self.seq_sum_rejected)
        }
    }

    /// `Δ = l̄_w − l̄_l` per pair, length-normalized.
    pub fn deltas(&self) -> Vec<f64> {
        self.seq_mean_chosen
            .iter()
            .zip(&self.seq_mean_rejected)
            .map(|(&w, &l)| margin(w, l))
            .collect()
    }
}

/// Response log-probabilities of both sides of `pair` under `policy`.
/// Prompt tokens condition but are never scored.
pub fn token_logprobs(policy: &PolicyModel, pair: &PreferencePair) -> Result<PairLogProbs> {
    let chosen = policy.forward(pair.prompt.tokens(), pair.chosen.tokens())?;
    let rejected = policy.forward(pair.prompt.tokens(), pair.rejected.tokens())?;
    Ok(PairLogProbs {
        chosen: SequenceLogProbs::dense(chosen),
        rejected: SequenceLogProbs::dense(rejected),
    })
}

/// Mean over unmasked positions, accumulated left to right.
pub fn sequence_mean(logprobs: &[f64], mask: &[bool]) -> Result<f64> {
    if logprobs.len() != mask.len() {
        return Err(Error::ShapeMismatch {
            what: "log-probability mask",
            expected: logprobs.len(),
            found: mask.len(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&l, &m) in logprobs.iter().zip(mask) {
        if m {
            sum += l;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptySequence("masked"));
    }
    Ok(sum / count as f64)
}

#[inline]
pub fn margin(lbar_w: f64, lbar_l: f64) -> f64 {
    lbar_w - lbar_l
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_examples() {
        assert_eq!(sequence_mean(&[-1.0, -3.0], &[true, true]).unwrap(), -2.0);
        assert_eq!(sequence_mean(&[0.0, 0.0, 0.0], &[true; 3]).unwrap(), 0.0);
        assert_eq!(
            sequence_mean(&[-1.0, -3.0, -7.0], &[true, true, false]).unwrap(),
            -2.0
        );
    }

    #[test]
    fn fully_masked_is_an_error() {
        assert_eq!(
            sequence_mean(&[-1.0, -2.0], &[false, false]),
            Err(Error::EmptySequence("masked"))
        );
        assert!(sequence_mean(&[], &[]).is_err());
        assert!(sequence_mean(&[-1.0], &[true, true]).is_err());
    }

    #[test]
    fn margin_examples() {
        assert_eq!(margin(-1.0, -3.0), 2.0);
        assert_eq!(margin(-0.7, -0.7), 0.0);
    }

    #[test]
    fn batch_rejects_positive_and_non_finite() {
        let ok = SequenceLogProbs::dense(vec![-1.0]);
        let bad = SequenceLogProbs::dense(vec![0.5]);
        assert!(matches!(
            LogProbBatch::new(vec![PairLogProbs {
                chosen: ok.clone(),
                rejected: bad
            }]),
            Err(Error::PositiveLogProb { .. })
        ));
        let nan = SequenceLogProbs::dense(vec![f64::NAN]);
        assert!(LogProbBatch::new(vec![PairLogProbs {
            chosen: nan,
            rejected: ok.clone()
        }])
        .is_err());
        // masked garbage is ignored
        let masked = SequenceLogProbs::new(vec![-1.0, f64::NAN], vec![true, false]).unwrap();
        let batch = LogProbBatch::new(vec![PairLogProbs {
            chosen: masked,
            rejected: ok,
        }])
        .unwrap();
        assert_eq!(batch.seq_mean_chosen(), &[-1.0]);
    }

    proptest! {
        #[test]
        fn mean_is_translation_equivariant(
            xs in proptest::collection::vec(-20.0f64..0.0, 1..32),
            c in -5.0f64..5.0,
        ) {
            let mask = vec![true; xs.len()];
            let base = sequence_mean(&xs, &mask).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let moved = sequence_mean(&shifted, &mask).unwrap();
            prop_assert!((moved - (base + c)).abs() <= 1e-12 * (xs.len() as f64 + 1.0) * 20.0);
        }

        #[test]
        fn margin_is_antisymmetric(a in -50.0f64..0.0, b in -50.0f64..0.0) {
            prop_assert_eq!(margin(a, b), -margin(b, a));
        }

        #[test]
        fn margin_invariant_under_common_shift_for_equal_lengths(
            pairs in proptest::collection::vec((-15.0f64..-1.0, -15.0f64..-1.0), 1..16),
            c in -1.0f64..1.0,
        ) {
            let (w, l): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let mask = vec![true; w.len()];
            let d0 = margin(sequence_mean(&w, &mask).unwrap(), sequence_mean(&l, &mask).unwrap());
            let ws: Vec<f64> = w.iter().map(|x| x + c).collect();
            let ls: Vec<f64> = l.iter().map(|x| x + c).collect();
            let d1 = margin(sequence_mean(&ws, &mask).unwrap(), sequence_mean(&ls, &mask).unwrap());
            prop_assert!((d0 - d1).abs() < 1e-10);
        }
    }
}
