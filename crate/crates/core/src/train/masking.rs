use rand::Rng;

use crate::encoder::{Batch, IGNORE_INDEX};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tokenize::{Specials, N_SPECIALS};

pub const DEFAULT_MASK_RATE: f64 = 0.15;

/// Dynamic MLM corruption: each maskable position is selected with
/// probability `mask_rate`; a selected position becomes `[MASK]`, a random
/// non-special token, or stays as is, in the given proportions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskingPolicy {
    pub mask_rate: f64,
    pub mask_token_frac: f64,
    pub random_token_frac: f64,
    pub keep_frac: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy {
            mask_rate: DEFAULT_MASK_RATE,
            mask_token_frac: 0.8,
            random_token_frac: 0.1,
            keep_frac: 0.1,
        }
    }
}

impl MaskingPolicy {
    pub fn new(mask_rate: f64) -> Result<Self> {
        Self::with_fractions(mask_rate, 0.8, 0.1, 0.1)
    }

    pub fn with_fractions(mask_rate: f64, mask: f64, random: f64, keep: f64) -> Result<Self> {
        if !(mask_rate > 0.0 && mask_rate < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask_rate must lie in (0, 1), got {mask_rate}"
            )));
        }
        if [mask, random, keep].iter().any(|f| !(0.0..=1.0).contains(f)) || ((mask + random + keep) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "mask/random/keep fractions must be in [0, 1] and sum to 1, got {mask}/{random}/{keep}"
            )));
        }
        Ok(MaskingPolicy {
            mask_rate,
            mask_token_frac: mask,
            random_token_frac: random,
            keep_frac: keep,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedBatch {
    pub ids: Vec<Vec<u32>>,
    /// Original ids at selected positions, [`IGNORE_INDEX`] elsewhere.
    pub labels: Vec<Vec<i64>>,
    pub maskable: usize,
    pub n_mask: usize,
    pub n_random: usize,
    pub n_keep: usize,
}

impl MaskedBatch {
    pub fn selected(&self) -> usize {
        self.n_mask + self.n_random + self.n_keep
    }
}

fn maskable(id: u32, attended: u8, sp: &Specials) -> bool {
    attended == 1 && id != sp.pad && id != sp.cls && id != sp.sep
}

/// Applies `policy` to `batch`. If nothing is selected the selection is drawn
/// once more, and if still empty one maskable position is forced. A batch
/// with no maskable position at all comes back with no labels set.
pub fn mask_batch(
    batch: &Batch,
    policy: &MaskingPolicy,
    specials: &Specials,
    vocab_size: usize,
    rng: &mut StreamRng,
) -> MaskedBatch {
    let positions: Vec<(usize, usize)> = batch
        .ids
        .iter()
        .zip(&batch.attention)
        .enumerate()
        .flat_map(|(r, (ids, att))| {
            ids.iter()
                .zip(att)
                .enumerate()
                .filter(|&(_, (&id, &a))| maskable(id, a, specials))
                .map(move |(p, _)| (r, p))
        })
        .collect();

    let mut chosen: Vec<(usize, usize)> = Vec::new();
    for _attempt in 0..2 {
        chosen = positions
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < policy.mask_rate)
            .collect();
        if !chosen.is_empty() {
            break;
        }
    }
    if chosen.is_empty() && !positions.is_empty() {
        chosen.push(positions[rng.random_range(0..positions.len())]);
    }

    let mut out = MaskedBatch {
        ids: batch.ids.clone(),
        labels: batch.ids.iter().map(|r| vec![IGNORE_INDEX; r.len()]).collect(),
        maskable: positions.len(),
        n_mask: 0,
        n_random: 0,
        n_keep: 0,
    };
    for (r, p) in chosen {
        let original = batch.ids[r][p];
        out.labels[r][p] = i64::from(original);
        let u: f64 = rng.random();
        if u < policy.mask_token_frac {
            out.ids[r][p] = specials.mask;
            out.n_mask += 1;
        } else if u < policy.mask_token_frac + policy.random_token_frac {
            out.ids[r][p] = rng.random_range(N_SPECIALS..vocab_size as u32);
            out.n_random += 1;
        } else {
            out.n_keep += 1;
        }
    }
    out
}
