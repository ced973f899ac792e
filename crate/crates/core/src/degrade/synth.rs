use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng::StreamKey;

use super::filters::{self, Plane};
use super::spec::{Degradation, DegradationSpec, DepthMode, SNOW_BLUR_DISTANCE};

/// Level-adjust points (fractions of the layer's own range).
pub const LEVEL_BLACK: f32 = 0.55;
pub const LEVEL_WHITE: f32 = 0.95;
/// Blur applied to the raw rain speckle.
pub const RAIN_SPECKLE_BLUR: f32 = 0.5;
pub const DEFAULT_RAIN_STRENGTH: f64 = 1.5;
pub const DEFAULT_SNOW_STRENGTH: f64 = 0.25;
/// Fraction of pixels lit per unit of rain strength.
const RAIN_DENSITY_PER_STRENGTH: f64 = 0.04;

/// A degraded image with the clean image it should be restored to.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub degraded: Tensor,
    pub clean: Tensor,
    pub spec: DegradationSpec,
}

fn image_dims(img: &Tensor) -> Result<(usize, usize, usize)> {
    match img.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::shape(format!("expected a [C,H,W] image, got {s:?}"))),
    }
}

/// Procedural clean images: a smooth gradient, a few flat rectangles with
/// hard edges, and two octaves of bilinear value noise. Values in [0, 1].
pub fn gen_clean(count: usize, size: usize, channels: usize, seed: u64) -> Result<Vec<Tensor>> {
    if size < 16 {
        return Err(Error::invalid(format!("clean image size must be >= 16, got {size}")));
    }
    if !matches!(channels, 1 | 3) {
        return Err(Error::invalid(format!("channels must be 1 or 3, got {channels}")));
    }
    let key = StreamKey::new(seed, "data").named("clean");
    (0..count)
        .map(|i| gen_one(size, channels, key.child(i as u64)))
        .collect()
}

fn value_noise(size: usize, spacing: usize, rng: &mut impl Rng) -> Vec<f32> {
    let g = size / spacing + 2;
    let grid: Vec<f32> = (0..g * g).map(|_| rng.random::<f32>() - 0.5).collect();
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let fy = y as f32 / spacing as f32;
            let fx = x as f32 / spacing as f32;
            let (y0, x0) = (fy as usize, fx as usize);
            let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
            let a = grid[y0 * g + x0];
            let b = grid[y0 * g + x0 + 1];
            let c = grid[(y0 + 1) * g + x0];
            let d = grid[(y0 + 1) * g + x0 + 1];
            out[y * size + x] = (a * (1.0 - tx) + b * tx) * (1.0 - ty) + (c * (1.0 - tx) + d * tx) * ty;
        }
    }
    out
}

fn gen_one(size: usize, channels: usize, key: StreamKey) -> Result<Tensor> {
    let mut rng = key.rng();
    let base = rng.random_range(0.3f32..0.7);
    let slope = rng.random_range(-0.3f32..0.3);
    let phi = rng.random_range(0.0f32..std::f32::consts::TAU);
    let (c, s) = (phi.cos(), phi.sin());
    let mut plane = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let u = (x as f32 * c + y as f32 * s) / size as f32 - 0.5 * (c + s);
            plane[y * size + x] = base + slope * u;
        }
    }
    let rects = rng.random_range(2..=5);
    for _ in 0..rects {
        let rh = rng.random_range(size / 8..=size / 2);
        let rw = rng.random_range(size / 8..=size / 2);
        let y0 = rng.random_range(0..=size - rh);
        let x0 = rng.random_range(0..=size - rw);
        let v = rng.random_range(0.1f32..0.9);
        let alpha = rng.random_range(0.5f32..0.9);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                let p = &mut plane[y * size + x];
                *p = (1.0 - alpha) * *p + alpha * v;
            }
        }
    }
    for (spacing, amp) in [(size / 4, 0.16f32), (size / 8, 0.08)] {
        let n = value_noise(size, spacing.max(2), &mut rng);
        for (p, v) in plane.iter_mut().zip(n) {
            *p += amp * v;
        }
    }
    let mut data = Vec::with_capacity(channels * size * size);
    for _ in 0..channels {
        let tint = if channels == 1 {
            0.0
        } else {
            rng.random_range(-0.08f32..0.08)
        };
        data.extend(plane.iter().map(|&v| (v + tint).clamp(0.0, 1.0)));
    }
    Tensor::from_vec(&[channels, size, size], data)
}

/// Zero-mean Gaussian field with standard deviation `sigma / 255`.
pub fn noise_field(shape: &[usize], sigma: f64, seed: u64) -> Result<Tensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let n: usize = shape.iter().product();
    let mut rng = StreamKey::new(seed, "noise").rng();
    let std = sigma / 255.0;
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (z * std) as f32
        })
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn apply_noise(clean: &Tensor, sigma: f64, seed: u64) -> Result<ImagePair> {
    image_dims(clean)?;
    let degraded = if sigma == 0.0 {
        noise_field(clean.shape(), sigma, seed)?;
        clean.clone()
    } else {
        let n = noise_field(clean.shape(), sigma, seed)?;
        let data = clean
            .data()
            .iter()
            .zip(n.data())
            .map(|(&c, &e)| (c + e).clamp(0.0, 1.0))
            .collect();
        Tensor::from_vec(clean.shape(), data)?
    };
    Ok(ImagePair {
        degraded,
        clean: clean.clone(),
        spec: DegradationSpec {
            params: Degradation::Noise { sigma },
            seed,
        },
    })
}

/// Per-pixel depth in [0, 1] (or the constant) for a `h x w` image.
pub fn depth_map(depth: DepthMode, h: usize, w: usize, seed: u64) -> Vec<f64> {
    match depth {
        DepthMode::Constant(d) => vec![d; h * w],
        DepthMode::Ramp => (0..h * w)
            .map(|i| {
                let y = i / w;
                if h > 1 {
                    1.0 - y as f64 / (h - 1) as f64
                } else {
                    1.0
                }
            })
            .collect(),
        DepthMode::Radial => {
            let mut rng = StreamKey::new(seed, "haze").named("centre").rng();
            let cy = h as f64 / 2.0 + rng.random_range(-0.125..0.125) * h as f64;
            let cx = w as f64 / 2.0 + rng.random_range(-0.125..0.125) * w as f64;
            let corners = [(0.0, 0.0), (0.0, w as f64), (h as f64, 0.0), (h as f64, w as f64)];
            let rmax = corners
                .iter()
                .map(|&(y, x)| ((y - cy).powi(2) + (x - cx).powi(2)).sqrt())
                .fold(0.0, f64::max);
            (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
                    let r = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
                    (1.0 - r / rmax).clamp(0.0, 1.0)
                })
                .collect()
        }
    }
}

/// Atmospheric scattering: `clean * t + airlight * (1 - t)`, `t = exp(-beta * depth)`.
pub fn apply_haze(clean: &Tensor, beta: f64, airlight: f64, depth: DepthMode, seed: u64) -> Result<ImagePair> {
    let params = Degradation::Haze {
        beta,
        airlight,
        depth,
    };
    params.validate()?;
    let (c, h, w) = image_dims(clean)?;
    let d = depth_map(depth, h, w, seed);
    let trans: Vec<f64> = d
        .iter()
        .map(|&di| if beta == 0.0 { 1.0 } else { (-beta * di).exp() })
        .collect();
    let mut data = Vec::with_capacity(clean.len());
    for ch in 0..c {
        for (i, &t) in trans.iter().enumerate() {
            let j = f64::from(clean.data()[ch * h * w + i]);
            let v = if t == 1.0 { j } else { j * t + airlight * (1.0 - t) };
            data.push((v as f32).clamp(0.0, 1.0));
        }
    }
    Ok(ImagePair {
        degraded: Tensor::from_vec(clean.shape(), data)?,
        clean: clean.clone(),
        spec: DegradationSpec { params, seed },
    })
}

/// The rain layer before blending.
///
/// Sparse uniform speckle (density and contrast scale with `strength`),
/// a small Gaussian blur, a directional motion blur and a level remap.
pub fn rain_layer(h: usize, w: usize, angle: u32, distance: u32, strength: f64, seed: u64) -> Plane {
    let mut rng = StreamKey::new(seed, "rain").rng();
    let density = RAIN_DENSITY_PER_STRENGTH * strength;
    let mut speckle = Plane::zeros(h, w);
    for v in speckle.data.iter_mut() {
        let u: f64 = rng.random();
        if u < density {
            *v = (strength * (0.5 + 0.5 * u / density)).min(1.0) as f32;
        }
    }
    let blurred = filters::gaussian_blur(&speckle, RAIN_SPECKLE_BLUR);
    let streaks = filters::motion_blur(&blurred, angle as f32, distance);
    filters::level_remap(&streaks, LEVEL_BLACK, LEVEL_WHITE)
}

/// Screen-blend a single-channel layer onto every channel of `clean`.
fn blend_layer(clean: &Tensor, layer: &Plane) -> Result<Tensor> {
    let (c, h, w) = image_dims(clean)?;
    if (layer.h, layer.w) != (h, w) {
        return Err(Error::shape("layer size does not match the image"));
    }
    let mut data = Vec::with_capacity(clean.len());
    for ch in 0..c {
        for i in 0..h * w {
            let v = filters::screen(clean.data()[ch * h * w + i], layer.data[i]);
            data.push(v.clamp(0.0, 1.0));
        }
    }
    Tensor::from_vec(clean.shape(), data)
}

pub fn apply_rain(clean: &Tensor, angle: u32, distance: u32, strength: f64, seed: u64) -> Result<ImagePair> {
    let params = Degradation::Rain {
        angle,
        distance,
        strength,
    };
    params.validate()?;
    let (_, h, w) = image_dims(clean)?;
    let layer = rain_layer(h, w, angle, distance, strength, seed);
    Ok(ImagePair {
        degraded: blend_layer(clean, &layer)?,
        clean: clean.clone(),
        spec: DegradationSpec { params, seed },
    })
}

/// Intermediate snow layers, exposed for inspection.
#[derive(Debug, Clone)]
pub struct SnowStages {
    /// Speckle after motion blur and level remap.
    pub half: Plane,
    /// `screen(half, flip(half))`.
    pub combined: Plane,
    pub crystallized: Plane,
    /// Final layer blended onto the image.
    pub layer: Plane,
}

pub fn snow_stages(h: usize, w: usize, cell_size: u32, angle: u32, strength: f64, seed: u64) -> SnowStages {
    let key = StreamKey::new(seed, "snow");
    let mut rng = key.named("speckle").rng();
    let mut speckle = Plane::zeros(h, w);
    for v in speckle.data.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = (strength * z).clamp(0.0, 1.0) as f32;
    }
    let blurred = filters::motion_blur(&speckle, angle as f32, SNOW_BLUR_DISTANCE);
    let half = filters::level_remap(&blurred, LEVEL_BLACK, LEVEL_WHITE);
    let combined = filters::screen_planes(&half, &filters::flip_horizontal(&half));
    let crystallized = filters::voronoi_quantize(&combined, cell_size as usize, &mut key.named("cells").rng());
    let layer = filters::motion_blur(&crystallized, angle as f32, SNOW_BLUR_DISTANCE);
    SnowStages {
        half,
        combined,
        crystallized,
        layer,
    }
}

pub fn apply_snow(clean: &Tensor, cell_size: u32, angle: u32, strength: f64, seed: u64) -> Result<ImagePair> {
    let params = Degradation::Snow {
        cell_size,
        angle,
        strength,
    };
    params.validate()?;
    let (_, h, w) = image_dims(clean)?;
    let stages = snow_stages(h, w, cell_size, angle, strength, seed);
    Ok(ImagePair {
        degraded: blend_layer(clean, &stages.layer)?,
        clean: clean.clone(),
        spec: DegradationSpec { params, seed },
    })
}

/// A cyclic permutation of `0..n` (Sattolo), hence a derangement.
pub fn derangement(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::invalid(format!("a derangement needs at least 2 items, got {n}")));
    }
    let mut rng = StreamKey::new(seed, "derangement").rng();
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    Ok(p)
}

/// Noisy inputs paired with the clean image of a different pool member.
///
/// `target` in each spec is an index into `pool`.
pub fn make_adversarial(pool: &[Tensor], sigma: f64, seed: u64) -> Result<Vec<ImagePair>> {
    if pool.len() < 2 {
        return Err(Error::invalid(format!(
            "adversarial pairs need a pool of at least 2 images, got {}",
            pool.len()
        )));
    }
    let perm = derangement(pool.len(), seed)?;
    let key = StreamKey::new(seed, "adversarial");
    pool.iter()
        .enumerate()
        .map(|(i, src)| {
            let s = key.child(i as u64).derive_seed();
            let noisy = apply_noise(src, sigma, s)?;
            Ok(ImagePair {
                degraded: noisy.degraded,
                clean: pool[perm[i]].clone(),
                spec: DegradationSpec {
                    params: Degradation::Adversarial {
                        sigma,
                        target: perm[i],
                    },
                    seed: s,
                },
            })
        })
        .collect()
}

/// Degrade `source` according to `spec`. For adversarial specs only the
/// input side is produced; the target is looked up by the caller.
pub fn degrade_image(source: &Tensor, spec: &DegradationSpec) -> Result<Tensor> {
    spec.params.validate()?;
    let pair = match spec.params {
        Degradation::Noise { sigma } | Degradation::Adversarial { sigma, .. } => {
            apply_noise(source, sigma, spec.seed)?
        }
        Degradation::Haze {
            beta,
            airlight,
            depth,
        } => apply_haze(source, beta, airlight, depth, spec.seed)?,
        Degradation::Rain {
            angle,
            distance,
            strength,
        } => apply_rain(source, angle, distance, strength, spec.seed)?,
        Degradation::Snow {
            cell_size,
            angle,
            strength,
        } => apply_snow(source, cell_size, angle, strength, spec.seed)?,
    };
    Ok(pair.degraded)
}
