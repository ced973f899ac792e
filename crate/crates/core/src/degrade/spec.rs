use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const RAIN_ANGLES: [u32; 6] = [45, 60, 75, 105, 120, 135];
pub const RAIN_DISTANCES: [u32; 7] = [20, 25, 30, 35, 40, 45, 50];
pub const SNOW_CELL_SIZES: std::ops::RangeInclusive<u32> = 3..=9;
pub const SNOW_BLUR_DISTANCE: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DegradationKind {
    Noise,
    Haze,
    Rain,
    Snow,
    Adversarial,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 5] = [
        DegradationKind::Noise,
        DegradationKind::Haze,
        DegradationKind::Rain,
        DegradationKind::Snow,
        DegradationKind::Adversarial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::Noise => "noise",
            DegradationKind::Haze => "haze",
            DegradationKind::Rain => "rain",
            DegradationKind::Snow => "snow",
            DegradationKind::Adversarial => "adversarial",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DegradationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown degradation kind `{s}`")))
    }
}

/// Synthetic depth field for the scattering model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthMode {
    /// Same depth everywhere.
    Constant(f64),
    /// 1 at the top row falling linearly to 0 at the bottom row.
    Ramp,
    /// 1 at a (seed-jittered) centre falling to 0 at the farthest pixel.
    Radial,
}

impl fmt::Display for DepthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthMode::Constant(d) => write!(f, "constant:{d}"),
            DepthMode::Ramp => f.write_str("ramp"),
            DepthMode::Radial => f.write_str("radial"),
        }
    }
}

impl FromStr for DepthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ramp" => Ok(DepthMode::Ramp),
            "radial" => Ok(DepthMode::Radial),
            _ => match s.strip_prefix("constant:") {
                Some(d) => {
                    let d: f64 = parse_num(d, "depth")?;
                    if d.is_nan() || d < 0.0 {
                        return Err(Error::invalid(format!("constant depth must be >= 0, got {d}")));
                    }
                    Ok(DepthMode::Constant(d))
                }
                None => Err(Error::invalid(format!(
                    "unknown depth mode `{s}` (expected constant:<d>, ramp or radial)"
                ))),
            },
        }
    }
}

/// Parameters of one concrete degradation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Degradation {
    /// Additive white Gaussian noise, `sigma` on the 0..255 scale.
    Noise { sigma: f64 },
    /// `I = J t + A (1 - t)`, `t = exp(-beta d)`.
    Haze { beta: f64, airlight: f64, depth: DepthMode },
    Rain { angle: u32, distance: u32, strength: f64 },
    Snow { cell_size: u32, angle: u32, strength: f64 },
    /// Noisy input paired with a different clean image `target`.
    Adversarial { sigma: f64, target: usize },
}

impl Degradation {
    pub fn kind(&self) -> DegradationKind {
        match self {
            Degradation::Noise { .. } => DegradationKind::Noise,
            Degradation::Haze { .. } => DegradationKind::Haze,
            Degradation::Rain { .. } => DegradationKind::Rain,
            Degradation::Snow { .. } => DegradationKind::Snow,
            Degradation::Adversarial { .. } => DegradationKind::Adversarial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Degradation::Noise { sigma } | Degradation::Adversarial { sigma, .. } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
                }
            }
            Degradation::Haze { beta, airlight, .. } => {
                if !(beta >= 0.0 && beta.is_finite()) {
                    return Err(Error::invalid(format!("haze beta must be >= 0, got {beta}")));
                }
                if !(airlight > 0.0 && airlight <= 1.0) {
                    return Err(Error::invalid(format!(
                        "atmospheric light must lie in (0, 1], got {airlight}"
                    )));
                }
            }
            Degradation::Rain {
                angle,
                distance,
                strength,
            } => {
                check_angle(angle)?;
                if !RAIN_DISTANCES.contains(&distance) {
                    return Err(Error::invalid(format!(
                        "rain distance {distance} not in {RAIN_DISTANCES:?}"
                    )));
                }
                check_strength(strength)?;
            }
            Degradation::Snow {
                cell_size,
                angle,
                strength,
            } => {
                if !SNOW_CELL_SIZES.contains(&cell_size) {
                    return Err(Error::invalid(format!("snow cell size {cell_size} not in [3, 9]")));
                }
                check_angle(angle)?;
                check_strength(strength)?;
            }
        }
        Ok(())
    }
}

fn check_angle(angle: u32) -> Result<()> {
    if RAIN_ANGLES.contains(&angle) {
        Ok(())
    } else {
        Err(Error::invalid(format!("angle {angle} not in {RAIN_ANGLES:?}")))
    }
}

fn check_strength(s: f64) -> Result<()> {
    if s >= 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("layer strength must be >= 0, got {s}")))
    }
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Degradation::Noise { sigma } => write!(f, "noise sigma={sigma}"),
            Degradation::Haze {
                beta,
                airlight,
                depth,
            } => write!(f, "haze beta={beta} airlight={airlight} depth={depth}"),
            Degradation::Rain {
                angle,
                distance,
                strength,
            } => write!(f, "rain angle={angle} distance={distance} strength={strength}"),
            Degradation::Snow {
                cell_size,
                angle,
                strength,
            } => write!(f, "snow cell={cell_size} angle={angle} strength={strength}"),
            Degradation::Adversarial { sigma, target } => {
                write!(f, "adversarial sigma={sigma} target={target}")
            }
        }
    }
}

pub(crate) fn parse_num<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad value `{s}` for {what}")))
}

/// Split `kind k1=v1 k2=v2` into the kind word and a field map.
pub(crate) fn parse_fields(s: &str) -> Result<(&str, BTreeMap<&str, &str>)> {
    let mut words = s.split_whitespace();
    let head = words
        .next()
        .ok_or_else(|| Error::Parse("empty degradation description".into()))?;
    let mut map = BTreeMap::new();
    for w in words {
        let (k, v) = w
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got `{w}`")))?;
        if map.insert(k, v).is_some() {
            return Err(Error::Parse(format!("duplicate field `{k}`")));
        }
    }
    Ok((head, map))
}

pub(crate) fn field<'a>(map: &mut BTreeMap<&str, &'a str>, key: &str) -> Result<&'a str> {
    map.remove(key)
        .ok_or_else(|| Error::Parse(format!("missing field `{key}`")))
}

pub(crate) fn no_extra(map: &BTreeMap<&str, &str>) -> Result<()> {
    match map.keys().next() {
        None => Ok(()),
        Some(k) => Err(Error::Parse(format!("unexpected field `{k}`"))),
    }
}

impl Degradation {
    fn from_fields(head: &str, m: &mut BTreeMap<&str, &str>) -> Result<Self> {
        let d = match head.parse::<DegradationKind>()? {
            DegradationKind::Noise => Degradation::Noise {
                sigma: parse_num(field(m, "sigma")?, "sigma")?,
            },
            DegradationKind::Haze => Degradation::Haze {
                beta: parse_num(field(m, "beta")?, "beta")?,
                airlight: parse_num(field(m, "airlight")?, "airlight")?,
                depth: field(m, "depth")?.parse()?,
            },
            DegradationKind::Rain => Degradation::Rain {
                angle: parse_num(field(m, "angle")?, "angle")?,
                distance: parse_num(field(m, "distance")?, "distance")?,
                strength: parse_num(field(m, "strength")?, "strength")?,
            },
            DegradationKind::Snow => Degradation::Snow {
                cell_size: parse_num(field(m, "cell")?, "cell")?,
                angle: parse_num(field(m, "angle")?, "angle")?,
                strength: parse_num(field(m, "strength")?, "strength")?,
            },
            DegradationKind::Adversarial => Degradation::Adversarial {
                sigma: parse_num(field(m, "sigma")?, "sigma")?,
                target: parse_num(field(m, "target")?, "target")?,
            },
        };
        d.validate()?;
        Ok(d)
    }
}

impl FromStr for Degradation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, mut m) = parse_fields(s)?;
        let d = Degradation::from_fields(head, &mut m)?;
        no_extra(&m)?;
        Ok(d)
    }
}

/// A degradation together with the seed of its random draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    pub params: Degradation,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn kind(&self) -> DegradationKind {
        self.params.kind()
    }
}

impl fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} seed={}", self.params, self.seed)
    }
}

impl FromStr for DegradationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, mut m) = parse_fields(s)?;
        let seed = parse_num(field(&mut m, "seed")?, "seed")?;
        let params = Degradation::from_fields(head, &mut m)?;
        no_extra(&m)?;
        Ok(DegradationSpec { params, seed })
    }
}
