use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng::StreamKey;

use super::spec::{
    no_extra, parse_fields, parse_num, Degradation, DegradationKind, DegradationSpec, DepthMode,
    RAIN_ANGLES, RAIN_DISTANCES, SNOW_CELL_SIZES,
};
use super::synth::{self, ImagePair, DEFAULT_RAIN_STRENGTH, DEFAULT_SNOW_STRENGTH};

/// Per-kind parameter ranges from which each image's degradation is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KindConfig {
    Noise { sigma: f64 },
    Haze {
        beta: (f64, f64),
        airlight: (f64, f64),
        depth: DepthMode,
    },
    /// Angle and distance are drawn from the fixed grids.
    Rain { strength: f64 },
    /// Cell size and angle are drawn from the fixed grids.
    Snow { strength: f64 },
    Adversarial { sigma: f64 },
}

impl KindConfig {
    pub fn default_for(kind: DegradationKind) -> Self {
        match kind {
            DegradationKind::Noise => KindConfig::Noise { sigma: 15.0 },
            DegradationKind::Haze => KindConfig::Haze {
                beta: (0.6, 1.8),
                airlight: (0.7, 1.0),
                depth: DepthMode::Radial,
            },
            DegradationKind::Rain => KindConfig::Rain {
                strength: DEFAULT_RAIN_STRENGTH,
            },
            DegradationKind::Snow => KindConfig::Snow {
                strength: DEFAULT_SNOW_STRENGTH,
            },
            DegradationKind::Adversarial => KindConfig::Adversarial { sigma: 15.0 },
        }
    }

    pub fn kind(&self) -> DegradationKind {
        match self {
            KindConfig::Noise { .. } => DegradationKind::Noise,
            KindConfig::Haze { .. } => DegradationKind::Haze,
            KindConfig::Rain { .. } => DegradationKind::Rain,
            KindConfig::Snow { .. } => DegradationKind::Snow,
            KindConfig::Adversarial { .. } => DegradationKind::Adversarial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo <= hi && lo.is_finite() && hi.is_finite();
        match *self {
            KindConfig::Noise { sigma } | KindConfig::Adversarial { sigma } => {
                Degradation::Noise { sigma }.validate()
            }
            KindConfig::Haze { beta, airlight, depth } => {
                if !range_ok(beta) || !range_ok(airlight) {
                    return Err(Error::invalid("haze ranges must satisfy lo <= hi"));
                }
                for (b, a) in [(beta.0, airlight.0), (beta.1, airlight.1)] {
                    Degradation::Haze { beta: b, airlight: a, depth }.validate()?;
                }
                Ok(())
            }
            KindConfig::Rain { strength } | KindConfig::Snow { strength } => {
                if strength >= 0.0 && strength.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("layer strength must be >= 0, got {strength}")))
                }
            }
        }
    }

    /// Draw one image's parameters. Adversarial targets are filled in later.
    fn draw(&self, rng: &mut impl Rng) -> Degradation {
        let uniform = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..hi)
            }
        };
        match *self {
            KindConfig::Noise { sigma } => Degradation::Noise { sigma },
            KindConfig::Haze { beta, airlight, depth } => Degradation::Haze {
                beta: uniform(rng, beta),
                airlight: uniform(rng, airlight),
                depth,
            },
            KindConfig::Rain { strength } => Degradation::Rain {
                angle: RAIN_ANGLES[rng.random_range(0..RAIN_ANGLES.len())],
                distance: RAIN_DISTANCES[rng.random_range(0..RAIN_DISTANCES.len())],
                strength,
            },
            KindConfig::Snow { strength } => Degradation::Snow {
                cell_size: rng.random_range(SNOW_CELL_SIZES),
                angle: RAIN_ANGLES[rng.random_range(0..RAIN_ANGLES.len())],
                strength,
            },
            KindConfig::Adversarial { sigma } => Degradation::Adversarial { sigma, target: 0 },
        }
    }
}

impl fmt::Display for KindConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KindConfig::Noise { sigma } => write!(f, "noise sigma={sigma}"),
            KindConfig::Haze { beta, airlight, depth } => write!(
                f,
                "haze beta={}..{} airlight={}..{} depth={depth}",
                beta.0, beta.1, airlight.0, airlight.1
            ),
            KindConfig::Rain { strength } => write!(f, "rain strength={strength}"),
            KindConfig::Snow { strength } => write!(f, "snow strength={strength}"),
            KindConfig::Adversarial { sigma } => write!(f, "adversarial sigma={sigma}"),
        }
    }
}

fn parse_range(s: &str, what: &str) -> Result<(f64, f64)> {
    match s.split_once("..") {
        Some((a, b)) => Ok((parse_num(a, what)?, parse_num(b, what)?)),
        None => {
            let v = parse_num(s, what)?;
            Ok((v, v))
        }
    }
}

impl FromStr for KindConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, mut m) = parse_fields(s)?;
        let kind: DegradationKind = head.parse()?;
        let mut kc = KindConfig::default_for(kind);
        match &mut kc {
            KindConfig::Noise { sigma } | KindConfig::Adversarial { sigma } => {
                if let Some(v) = m.remove("sigma") {
                    *sigma = parse_num(v, "sigma")?;
                }
            }
            KindConfig::Haze { beta, airlight, depth } => {
                if let Some(v) = m.remove("beta") {
                    *beta = parse_range(v, "beta")?;
                }
                if let Some(v) = m.remove("airlight") {
                    *airlight = parse_range(v, "airlight")?;
                }
                if let Some(v) = m.remove("depth") {
                    *depth = v.parse()?;
                }
            }
            KindConfig::Rain { strength } | KindConfig::Snow { strength } => {
                if let Some(v) = m.remove("strength") {
                    *strength = parse_num(v, "strength")?;
                }
            }
        }
        no_extra(&m)?;
        kc.validate()?;
        Ok(kc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Clean ids belonging to `split`; ids are assigned train, val, test in order.
    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => 0..self.train,
            Split::Val => self.train..self.train + self.val,
            Split::Test => self.train + self.val..self.total(),
        }
    }

    pub fn split_of(&self, id: usize) -> Option<Split> {
        Split::ALL.into_iter().find(|&s| self.range(s).contains(&id))
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kinds: Vec<KindConfig>,
    pub counts: SplitCounts,
    pub size: usize,
    pub channels: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = Vec::new();
        for k in &self.kinds {
            if seen.contains(&k.kind()) {
                return Err(Error::invalid(format!("duplicate degradation kind `{}`", k.kind())));
            }
            seen.push(k.kind());
            k.validate()?;
        }
        if self.kinds.is_empty() {
            return Err(Error::invalid("at least one degradation kind is required"));
        }
        let c = self.counts;
        if c.train == 0 || c.val == 0 || c.test == 0 {
            return Err(Error::invalid(format!(
                "every split needs at least one image (train {}, val {}, test {})",
                c.train, c.val, c.test
            )));
        }
        if seen.contains(&DegradationKind::Adversarial) && (c.train < 2 || c.val < 2 || c.test < 2) {
            return Err(Error::invalid("adversarial pairs need at least 2 images per split"));
        }
        Ok(())
    }

    pub fn kind_config(&self, kind: DegradationKind) -> Option<&KindConfig> {
        self.kinds.iter().find(|k| k.kind() == kind)
    }

    fn degrade_key(&self) -> StreamKey {
        StreamKey::new(self.seed, "degrade")
    }
}

/// Clean images with one degraded variant per kind, aligned by clean id.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    spec: DatasetSpec,
    clean: Vec<Tensor>,
    variants: BTreeMap<DegradationKind, Vec<ImagePair>>,
}

impl PairedDataset {
    pub(crate) fn from_parts(
        spec: DatasetSpec,
        clean: Vec<Tensor>,
        variants: BTreeMap<DegradationKind, Vec<ImagePair>>,
    ) -> Self {
        PairedDataset { spec, clean, variants }
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn clean(&self) -> &[Tensor] {
        &self.clean
    }

    pub fn kinds(&self) -> impl Iterator<Item = DegradationKind> + '_ {
        self.variants.keys().copied()
    }

    pub fn has_kind(&self, kind: DegradationKind) -> bool {
        self.variants.contains_key(&kind)
    }

    /// All pairs of `kind`, indexed by clean (source) id.
    pub fn variants(&self, kind: DegradationKind) -> Result<&[ImagePair]> {
        self.variants
            .get(&kind)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("dataset has no `{kind}` variants")))
    }

    pub fn pairs(&self, kind: DegradationKind, split: Split) -> Result<&[ImagePair]> {
        let r = self.spec.counts.range(split);
        Ok(&self.variants(kind)?[r])
    }

    /// A fresh draw of `kind` on the clean images of `split`, independent of
    /// the stored variants (different noise, parameters and derangement).
    pub fn redraw(&self, kind: DegradationKind, split: Split, salt: u64) -> Result<Vec<ImagePair>> {
        let kc = self
            .spec
            .kind_config(kind)
            .ok_or_else(|| Error::invalid(format!("dataset has no `{kind}` config")))?;
        let key = StreamKey::new(self.spec.seed, "redraw").child(salt);
        draw_split(kc, &self.clean, self.spec.counts.range(split), key)
    }
}

fn draw_split(kc: &KindConfig, clean: &[Tensor], ids: Range<usize>, key: StreamKey) -> Result<Vec<ImagePair>> {
    let kind = kc.kind();
    let kkey = key.child(kind.tag());
    let targets = match kind {
        DegradationKind::Adversarial => {
            let perm = synth::derangement(ids.len(), kkey.named("derangement").child(ids.start as u64).derive_seed())?;
            Some(perm.into_iter().map(|j| ids.start + j).collect::<Vec<_>>())
        }
        _ => None,
    };
    ids.clone()
        .enumerate()
        .map(|(j, id)| {
            let ikey = kkey.child(id as u64);
            let mut params = kc.draw(&mut ikey.named("params").rng());
            if let (Degradation::Adversarial { target, .. }, Some(t)) = (&mut params, &targets) {
                *target = t[j];
            }
            let spec = DegradationSpec {
                params,
                seed: ikey.named("apply").derive_seed(),
            };
            materialize(clean, id, spec)
        })
        .collect()
}

/// Build the pair for clean image `id` under a fully specified degradation.
pub(crate) fn materialize(clean: &[Tensor], id: usize, spec: DegradationSpec) -> Result<ImagePair> {
    let source = clean
        .get(id)
        .ok_or_else(|| Error::invalid(format!("clean id {id} out of range")))?;
    let degraded = synth::degrade_image(source, &spec)?;
    let target = match spec.params {
        Degradation::Adversarial { target, .. } => clean
            .get(target)
            .ok_or_else(|| Error::invalid(format!("adversarial target {target} out of range")))?,
        _ => source,
    };
    Ok(ImagePair {
        degraded,
        clean: target.clone(),
        spec,
    })
}

pub fn build_paired_dataset(spec: &DatasetSpec) -> Result<PairedDataset> {
    spec.validate()?;
    let clean = synth::gen_clean(spec.counts.total(), spec.size, spec.channels, spec.seed)?;
    let mut variants = BTreeMap::new();
    for kc in &spec.kinds {
        let mut pairs = Vec::with_capacity(clean.len());
        for split in Split::ALL {
            pairs.extend(draw_split(kc, &clean, spec.counts.range(split), spec.degrade_key())?);
        }
        variants.insert(kc.kind(), pairs);
    }
    Ok(PairedDataset {
        spec: spec.clone(),
        clean,
        variants,
    })
}
