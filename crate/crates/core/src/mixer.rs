//! Training batches that mix anchor and auxiliary pairs at a proportion `r`.
//!
//! Batches are built at the index level. The mixed batch always shares its
//! first `N - m` entries with the anchor-only batch of the same step, so
//! `r = 0` gives two bitwise-identical batches.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::models::PairBatch;
use crate::numcore::Tensor;
use crate::rng::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    #[default]
    WithReplacement,
    /// Each pool is walked through seeded permutations, one per epoch.
    Epoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixingMode {
    /// Exactly `m = round(r N)` auxiliary pairs in every batch.
    #[default]
    Fixed,
    /// `m ~ Binomial(N, r)` drawn per step.
    Bernoulli,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::WithReplacement => "replacement",
            SamplingMode::Epoch => "epoch",
        })
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replacement" => Ok(SamplingMode::WithReplacement),
            "epoch" => Ok(SamplingMode::Epoch),
            _ => Err(Error::Parse(format!(
                "unknown sampling mode `{s}` (expected replacement or epoch)"
            ))),
        }
    }
}

impl fmt::Display for MixingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixingMode::Fixed => "fixed",
            MixingMode::Bernoulli => "bernoulli",
        })
    }
}

impl FromStr for MixingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(MixingMode::Fixed),
            "bernoulli" => Ok(MixingMode::Bernoulli),
            _ => Err(Error::Parse(format!(
                "unknown mixing mode `{s}` (expected fixed or bernoulli)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixConfig {
    pub proportion: f64,
    pub batch_size: usize,
    pub sampling: SamplingMode,
    pub mixing: MixingMode,
}

impl MixConfig {
    pub fn new(proportion: f64, batch_size: usize) -> Self {
        MixConfig {
            proportion,
            batch_size,
            sampling: SamplingMode::default(),
            mixing: MixingMode::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_proportion(self.proportion)?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

fn check_proportion(r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::invalid(format!("proportion must lie in [0, 1], got {r}")))
    }
}

fn round_count(r: f64, n: usize) -> usize {
    // f64::round rounds half away from zero.
    ((r * n as f64).round().max(0.0) as usize).min(n)
}

/// Number of auxiliary pairs in a batch of `n`: `round(r n)` with halves
/// rounded away from zero, clamped to `[0, n]`.
///
/// Logs a warning when a positive proportion rounds to zero.
pub fn rounding_rule(r: f64, n: usize) -> usize {
    let m = round_count(r, n);
    if r > 0.0 && m == 0 {
        log::warn!("proportion {r} is not realizable with batch size {n}; no auxiliary pairs will be mixed");
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Anchor,
    Auxiliary,
}

/// One step's pair of batches, as indices into the two pools.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMix {
    /// `X¹`: `N` anchor indices.
    pub anchor: Vec<usize>,
    /// `X^{1,2}`: the first `N - m` entries of `anchor`, then `m` auxiliary indices.
    pub mixed: Vec<(Source, usize)>,
    pub proportion: f64,
    pub aux_count: usize,
}

impl BatchMix {
    pub fn batch_size(&self) -> usize {
        self.anchor.len()
    }

    pub fn count(&self, source: Source) -> usize {
        self.mixed.iter().filter(|(s, _)| *s == source).count()
    }

    /// True when the mixed batch is the anchor batch.
    pub fn is_pure_anchor(&self) -> bool {
        self.aux_count == 0
    }

    /// Materialize both batches from pools of `(degraded, clean)` pairs.
    pub fn gather<P: AsPair>(&self, anchor_pool: &[P], aux_pool: &[P]) -> Result<(PairBatch, PairBatch)> {
        fn pick<P: AsPair>(pool: &[P], i: usize) -> Result<(&Tensor, &Tensor)> {
            pool.get(i)
                .map(AsPair::as_pair)
                .ok_or_else(|| Error::invalid(format!("pool index {i} out of range")))
        }
        let a = self
            .anchor
            .iter()
            .map(|&i| pick(anchor_pool, i))
            .collect::<Result<Vec<_>>>()?;
        let m = self
            .mixed
            .iter()
            .map(|&(s, i)| match s {
                Source::Anchor => pick(anchor_pool, i),
                Source::Auxiliary => pick(aux_pool, i),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((PairBatch::from_images(&a)?, PairBatch::from_images(&m)?))
    }
}

/// Anything that can act as a `(degraded, clean)` training pair.
pub trait AsPair {
    fn as_pair(&self) -> (&Tensor, &Tensor);
}

impl AsPair for crate::degrade::ImagePair {
    fn as_pair(&self) -> (&Tensor, &Tensor) {
        (&self.degraded, &self.clean)
    }
}

impl<T: AsPair> AsPair for &T {
    fn as_pair(&self) -> (&Tensor, &Tensor) {
        (**self).as_pair()
    }
}

impl AsPair for (Tensor, Tensor) {
    fn as_pair(&self) -> (&Tensor, &Tensor) {
        (&self.0, &self.1)
    }
}

fn batch_key(seed: u64) -> StreamKey {
    StreamKey::new(seed, "batch")
}

/// `count` indices into a pool of `len`, for 1-based `step`.
fn draw_indices(
    len: usize,
    count: usize,
    batch_size: usize,
    step: usize,
    mode: SamplingMode,
    key: StreamKey,
) -> Vec<usize> {
    match mode {
        SamplingMode::WithReplacement => {
            let mut rng = key.child(step as u64).rng();
            (0..count).map(|_| rng.random_range(0..len)).collect()
        }
        SamplingMode::Epoch => {
            // Positions (step-1)*N .. (step-1)*N + count in the concatenation
            // of per-epoch permutations.
            let start = (step - 1) * batch_size;
            let mut out = Vec::with_capacity(count);
            let mut epoch = usize::MAX;
            let mut perm = Vec::new();
            for pos in start..start + count {
                let e = pos / len;
                if e != epoch {
                    epoch = e;
                    perm = (0..len).collect();
                    perm.shuffle(&mut key.named("epoch").child(e as u64).rng());
                }
                out.push(perm[pos % len]);
            }
            out
        }
    }
}

/// Compose `X¹` and `X^{1,2}` for 1-based `step`.
///
/// The anchor draw comes from stream `(seed, "batch", step, 0)`; auxiliary
/// draws from the independent stream `(seed, "batch", step, 1)`.
pub fn compose_batch<P>(anchor_pool: &[P], aux_pool: &[P], cfg: &MixConfig, step: usize, seed: u64) -> Result<BatchMix> {
    cfg.validate()?;
    if step == 0 {
        return Err(Error::invalid("steps are numbered from 1"));
    }
    if anchor_pool.is_empty() {
        return Err(Error::invalid("anchor pool is empty"));
    }
    let n = cfg.batch_size;
    let key = batch_key(seed);
    let m = match cfg.mixing {
        MixingMode::Fixed => round_count(cfg.proportion, n),
        MixingMode::Bernoulli => {
            let b = Binomial::new(n as u64, cfg.proportion).map_err(|e| Error::invalid(e.to_string()))?;
            b.sample(&mut key.named("bernoulli").child(step as u64).rng()) as usize
        }
    };
    if m > 0 && aux_pool.is_empty() {
        return Err(Error::invalid("auxiliary pool is empty"));
    }
    if cfg.sampling == SamplingMode::Epoch {
        for (name, len) in [("anchor", anchor_pool.len()), ("auxiliary", aux_pool.len())] {
            if (name == "anchor" || m > 0) && n > len {
                return Err(Error::invalid(format!(
                    "batch size {n} exceeds the {name} pool of {len} under no-replacement sampling"
                )));
            }
        }
    }
    let anchor = draw_indices(anchor_pool.len(), n, n, step, cfg.sampling, key.child(0));
    let aux = if m > 0 {
        draw_indices(aux_pool.len(), m, n, step, cfg.sampling, key.child(1))
    } else {
        Vec::new()
    };
    let mixed = anchor[..n - m]
        .iter()
        .map(|&i| (Source::Anchor, i))
        .chain(aux.into_iter().map(|i| (Source::Auxiliary, i)))
        .collect();
    Ok(BatchMix {
        anchor,
        mixed,
        proportion: cfg.proportion,
        aux_count: m,
    })
}
