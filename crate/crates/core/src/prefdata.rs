//! Preference pairs, the planted-gap synthetic corpus and the seeded
//! SFT/preference split.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// A non-empty run of token ids, all below the vocabulary size it was
/// validated against.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<u32>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>, vocab_size: usize, role: &'static str) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence(role));
        }
        if let Some(&token) = tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::TokenOutOfRange { token, vocab_size });
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.tokens.iter().find(|&&t| t as usize >= vocab_size) {
            Some(&token) => Err(Error::TokenOutOfRange { token, vocab_size }),
            None => Ok(()),
        }
    }
}

/// One `(prompt, chosen, rejected)` judgment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PreferencePair {
    pub pair_id: u64,
    pub prompt: TokenSequence,
    pub chosen: TokenSequence,
    pub rejected: TokenSequence,
}

impl PreferencePair {
    pub fn new(
        pair_id: u64,
        prompt: Vec<u32>,
        chosen: Vec<u32>,
        rejected: Vec<u32>,
        vocab_size: usize,
    ) -> Result<Self> {
        let prompt = TokenSequence::new(prompt, vocab_size, "prompt")?;
        let chosen = TokenSequence::new(chosen, vocab_size, "chosen")?;
        let rejected = TokenSequence::new(rejected, vocab_size, "rejected")?;
        if chosen == rejected {
            return Err(Error::TiedPair);
        }
        Ok(Self {
            pair_id,
            prompt,
            chosen,
            rejected,
        })
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        self.prompt.check_vocab(vocab_size)?;
        self.chosen.check_vocab(vocab_size)?;
        self.rejected.check_vocab(vocab_size)
    }
}

/// Disjoint SFT / preference index sets over a corpus of `n` items. Both sets
/// are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub sft_fraction: f64,
    pub seed: u64,
    pub sft_indices: Vec<usize>,
    pub pref_indices: Vec<usize>,
}

/// Seeded partition of `0..n`. The SFT side receives `round_half_up(f * n)`
/// indices.
pub fn split_corpus(n: usize, sft_fraction: f64, seed: u64) -> Result<CorpusSplit> {
    if n < 2 {
        return Err(Error::invalid("n", "corpus needs at least 2 items"));
    }
    if !(sft_fraction > 0.0 && sft_fraction < 1.0) {
        return Err(Error::invalid("sft_fraction", "must lie in (0, 1)"));
    }
    let sft_len = libm::floor(sft_fraction * n as f64 + 0.5) as usize;
    let sft_len = sft_len.min(n);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut sft_indices = order[..sft_len].to_vec();
    let mut pref_indices = order[sft_len..].to_vec();
    sft_indices.sort_unstable();
    pref_indices.sort_unstable();

    Ok(CorpusSplit {
        sft_fraction,
        seed,
        sft_indices,
        pref_indices,
    })
}

/// Parameters of the planted-gap generator.
///
/// The vocabulary is partitioned by `id % 4`: class 0 is the preferred style,
/// class 1 the dispreferred style, classes 2 and 3 are neutral. Every chosen
/// token is drawn from the preferred class with probability
/// `style_permille / 1000` and uniformly over the vocabulary otherwise;
/// rejected tokens do the same with the dispreferred class. Prompts are
/// uniform. All sampling is over integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub seed: u64,
    pub style_permille: u32,
}

impl SyntheticSpec {
    pub const DEFAULT_STYLE_PERMILLE: u32 = 700;

    pub fn new(n_pairs: usize, vocab_size: usize, max_len: usize, seed: u64) -> Self {
        Self {
            n_pairs,
            vocab_size,
            max_len,
            seed,
            style_permille: Self::DEFAULT_STYLE_PERMILLE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs < 1 {
            return Err(Error::invalid("n_pairs", "must be at least 1"));
        }
        if self.vocab_size < 4 {
            return Err(Error::invalid("vocab_size", "must be at least 4"));
        }
        if self.vocab_size > u32::MAX as usize {
            return Err(Error::invalid("vocab_size", "must fit in u32"));
        }
        if self.max_len < 2 {
            return Err(Error::invalid("max_len", "must be at least 2"));
        }
        if self.style_permille > 1000 {
            return Err(Error::invalid("style_permille", "must be at most 1000"));
        }
        Ok(())
    }

    pub fn is_preferred(token: u32) -> bool {
        token.is_multiple_of(4)
    }

    pub fn is_dispreferred(token: u32) -> bool {
        token % 4 == 1
    }

    fn class_size(&self, class: u32) -> u32 {
        let v = self.vocab_size as u32;
        v / 4 + u32::from(v % 4 > class)
    }

    /// Probability that a chosen token falls in the preferred class.
    pub fn expected_preferred_rate_chosen(&self) -> f64 {
        let q = self.style_permille as f64 / 1000.0;
        q + (1.0 - q) * self.class_size(0) as f64 / self.vocab_size as f64
    }

    /// Probability that a rejected token falls in the preferred class.
    pub fn expected_preferred_rate_rejected(&self) -> f64 {
        let q = self.style_permille as f64 / 1000.0;
        (1.0 - q) * self.class_size(0) as f64 / self.vocab_size as f64
    }

    /// Planted gap in preferred-class frequency between chosen and rejected
    /// tokens. Equals `style_permille / 1000`.
    pub fn planted_gap(&self) -> f64 {
        self.expected_preferred_rate_chosen() - self.expected_preferred_rate_rejected()
    }

    fn styled_token<R: Rng>(&self, rng: &mut R, class: u32) -> u32 {
        if rng.gen_range(0..1000u32) < self.style_permille {
            let k = rng.gen_range(0..self.class_size(class));
            4 * k + class
        } else {
            rng.gen_range(0..self.vocab_size as u32)
        }
    }

    fn response<R: Rng>(&self, rng: &mut R, class: u32) -> Vec<u32> {
        let len = rng.gen_range(2..=self.max_len as u32);
        (0..len).map(|_| self.styled_token(rng, class)).collect()
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<PreferencePair>> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let vocab = spec.vocab_size as u32;
    let max_prompt = (spec.max_len as u32 / 2).max(1);

    let mut pairs = Vec::with_capacity(spec.n_pairs);
    for pair_id in 0..spec.n_pairs as u64 {
        let prompt_len = rng.gen_range(1..=max_prompt);
        let prompt: Vec<u32> = (0..prompt_len).map(|_| rng.gen_range(0..vocab)).collect();
        let chosen = spec.response(&mut rng, 0);
        let mut rejected = spec.response(&mut rng, 1);
        while rejected == chosen {
            rejected = spec.response(&mut rng, 1);
        }
        pairs.push(PreferencePair::new(
            pair_id,
            prompt,
            chosen,
            rejected,
            spec.vocab_size,
        )?);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn pair_lengths_follow_fields() {
        let pair = PreferencePair::new(0, vec![1, 2], vec![3], vec![4], 8).unwrap();
        assert_eq!(
            (pair.prompt.len(), pair.chosen.len(), pair.rejected.len()),
            (2, 1, 1)
        );
    }

    #[test]
    fn pair_rejects_empty_out_of_range_and_ties() {
        assert_eq!(
            PreferencePair::new(0, vec![1], vec![], vec![4], 8),
            Err(Error::EmptySequence("chosen"))
        );
        assert_eq!(
            PreferencePair::new(0, vec![1], vec![2], vec![], 8),
            Err(Error::EmptySequence("rejected"))
        );
        assert_eq!(
            PreferencePair::new(0, vec![1], vec![8], vec![4], 8),
            Err(Error::TokenOutOfRange {
                token: 8,
                vocab_size: 8
            })
        );
        assert_eq!(
            PreferencePair::new(0, vec![1], vec![3, 3], vec![3, 3], 8),
            Err(Error::TiedPair)
        );
    }

    #[test]
    fn split_sizes() {
        let s = split_corpus(100, 0.33, 0).unwrap();
        assert_eq!(s.sft_indices.len(), 33);
        assert_eq!(s.pref_indices.len(), 67);
        let s = split_corpus(2, 0.5, 9).unwrap();
        assert_eq!(s.sft_indices.len(), 1);
        assert_eq!(s.pref_indices.len(), 1);
        // round half up: 0.25 * 10 = 2.5 -> 3
        assert_eq!(split_corpus(10, 0.25, 0).unwrap().sft_indices.len(), 3);
    }

    #[test]
    fn split_is_seeded() {
        assert_eq!(split_corpus(100, 0.33, 0), split_corpus(100, 0.33, 0));
        assert_ne!(
            split_corpus(100, 0.33, 0).unwrap().sft_indices,
            split_corpus(100, 0.33, 1).unwrap().sft_indices
        );
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split_corpus(1, 0.5, 0).is_err());
        assert!(split_corpus(10, 0.0, 0).is_err());
        assert!(split_corpus(10, 1.0, 0).is_err());
        assert!(split_corpus(10, f64::NAN, 0).is_err());
    }

    #[test]
    fn generator_bounds() {
        assert!(generate_synthetic(&SyntheticSpec::new(10, 3, 8, 0)).is_err());
        assert!(generate_synthetic(&SyntheticSpec::new(0, 8, 8, 0)).is_err());
        assert!(generate_synthetic(&SyntheticSpec::new(10, 8, 1, 0)).is_err());
    }

    #[test]
    fn generator_is_seeded() {
        let spec = SyntheticSpec::new(1000, 64, 12, 0);
        assert_eq!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&spec).unwrap()
        );
    }

    #[test]
    fn class_sizes_cover_vocab() {
        for v in 4..20usize {
            let spec = SyntheticSpec::new(1, v, 4, 0);
            let total: u32 = (0..4).map(|c| spec.class_size(c)).sum();
            assert_eq!(total as usize, v);
            let preferred = (0..v as u32).filter(|&t| SyntheticSpec::is_preferred(t)).count();
            assert_eq!(preferred as u32, spec.class_size(0));
        }
        let spec = SyntheticSpec::new(1, 64, 4, 0);
        assert!((spec.planted_gap() - 0.7).abs() < 1e-12);
    }
}
