//! Single-channel layer operations used by the weather synthesizers.

use rand::Rng;

use crate::rng::StreamRng;

/// A row-major single-channel float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(h: usize, w: usize) -> Self {
        Plane {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    /// Bilinear sample with zero outside the image.
    fn sample(&self, y: f32, x: f32) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let get = |yy: f32, xx: f32| -> f32 {
            if yy < 0.0 || xx < 0.0 || yy >= self.h as f32 || xx >= self.w as f32 {
                0.0
            } else {
                self.at(yy as usize, xx as usize)
            }
        };
        let a = get(y0, x0);
        let b = get(y0, x0 + 1.0);
        let c = get(y0 + 1.0, x0);
        let d = get(y0 + 1.0, x0 + 1.0);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }
}

/// Separable Gaussian blur, kernel truncated at 3 sigma, zero padding.
pub fn gaussian_blur(p: &Plane, sigma: f32) -> Plane {
    if sigma <= 0.0 {
        return p.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);

    let mut tmp = Plane::zeros(p.h, p.w);
    for y in 0..p.h {
        for x in 0..p.w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = x as isize + j as isize - radius;
                if xx >= 0 && (xx as usize) < p.w {
                    acc += kv * p.at(y, xx as usize);
                }
            }
            tmp.data[y * p.w + x] = acc;
        }
    }
    let mut out = Plane::zeros(p.h, p.w);
    for y in 0..p.h {
        for x in 0..p.w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = y as isize + j as isize - radius;
                if yy >= 0 && (yy as usize) < p.h {
                    acc += kv * tmp.at(yy as usize, x);
                }
            }
            out.data[y * p.w + x] = acc;
        }
    }
    out
}

/// Average along a centred line segment of `distance` pixels.
///
/// `angle_deg` is measured counter-clockwise from the +x axis with the y axis
/// pointing up, so 45 degrees runs from bottom-left to top-right.
pub fn motion_blur(p: &Plane, angle_deg: f32, distance: u32) -> Plane {
    if distance == 0 {
        return p.clone();
    }
    let theta = angle_deg.to_radians();
    let (dx, dy) = (theta.cos(), -theta.sin());
    let n = distance as usize + 1;
    let offsets: Vec<(f32, f32)> = (0..n)
        .map(|i| {
            let s = i as f32 - distance as f32 / 2.0;
            (s * dy, s * dx)
        })
        .collect();
    let mut out = Plane::zeros(p.h, p.w);
    for y in 0..p.h {
        for x in 0..p.w {
            let acc: f32 = offsets
                .iter()
                .map(|&(oy, ox)| p.sample(y as f32 + oy, x as f32 + ox))
                .sum();
            out.data[y * p.w + x] = acc / n as f32;
        }
    }
    out
}

/// Linear level adjustment relative to the layer's own range.
///
/// Values at `black` of the range map to 0, at `white` to 1, clipped. A flat
/// layer maps to all zeros.
pub fn level_remap(p: &Plane, black: f32, white: f32) -> Plane {
    let (lo, hi) = (p.min(), p.max());
    let range = hi - lo;
    if range.is_nan() || range <= 0.0 {
        return Plane::zeros(p.h, p.w);
    }
    let b = lo + black * range;
    let wp = lo + white * range;
    let data = p
        .data
        .iter()
        .map(|&v| ((v - b) / (wp - b)).clamp(0.0, 1.0))
        .collect();
    Plane { h: p.h, w: p.w, data }
}

/// Screen combination `1 - (1-a)(1-b)`, evaluated as `a + b(1-a)` so a zero
/// layer returns `a` exactly and the result never rounds below `a`.
#[inline]
pub fn screen(a: f32, b: f32) -> f32 {
    a + b * (1.0 - a)
}

pub fn screen_planes(a: &Plane, b: &Plane) -> Plane {
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| screen(x, y)).collect();
    Plane { h: a.h, w: a.w, data }
}

pub fn flip_horizontal(p: &Plane) -> Plane {
    let mut out = Plane::zeros(p.h, p.w);
    for y in 0..p.h {
        for x in 0..p.w {
            out.data[y * p.w + x] = p.at(y, p.w - 1 - x);
        }
    }
    out
}

/// Crystallize: replace each Voronoi cell by its mean value.
///
/// One site is jittered inside every `cell_size` grid square; pixels take
/// the nearest site (ties to the lowest site index).
pub fn voronoi_quantize(p: &Plane, cell_size: usize, rng: &mut StreamRng) -> Plane {
    let cell = cell_size.max(1);
    let gh = p.h.div_ceil(cell);
    let gw = p.w.div_ceil(cell);
    let sites: Vec<(f32, f32)> = (0..gh * gw)
        .map(|i| {
            let (gy, gx) = (i / gw, i % gw);
            let y = (gy * cell) as f32 + rng.random::<f32>() * cell as f32;
            let x = (gx * cell) as f32 + rng.random::<f32>() * cell as f32;
            (y, x)
        })
        .collect();
    let mut owner = vec![0usize; p.h * p.w];
    for y in 0..p.h {
        for x in 0..p.w {
            let (cy, cx) = (y / cell, x / cell);
            let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
            let mut best = (f32::INFINITY, usize::MAX);
            for ny in cy.saturating_sub(2)..(cy + 3).min(gh) {
                for nx in cx.saturating_sub(2)..(cx + 3).min(gw) {
                    let id = ny * gw + nx;
                    let (sy, sx) = sites[id];
                    let d = (sy - py).powi(2) + (sx - px).powi(2);
                    if d < best.0 || (d == best.0 && id < best.1) {
                        best = (d, id);
                    }
                }
            }
            owner[y * p.w + x] = best.1;
        }
    }
    let mut sum = vec![0.0f64; sites.len()];
    let mut count = vec![0usize; sites.len()];
    for (i, &o) in owner.iter().enumerate() {
        sum[o] += f64::from(p.data[i]);
        count[o] += 1;
    }
    let data = owner
        .iter()
        .map(|&o| (sum[o] / count[o] as f64) as f32)
        .collect();
    Plane { h: p.h, w: p.w, data }
}
