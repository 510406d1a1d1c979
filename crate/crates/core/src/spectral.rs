//! DCT-II / DCT-III pair, the frequency grid and radial binning.
//!
//! Forward normalization is `4/(HW)`, inverse weights are `γ₀ = 1/2`,
//! `γ_{k>0} = 1`, so a constant image `c` maps to `X₀₀ = 4c` and every other
//! coefficient zero. Mode `(u, v)` sits at wave vector `k = (πu, πv)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::{Error, PixelField, Result, Shape, SpectralField};

/// Precomputed cosine tables for one `height x width` geometry.
#[derive(Debug, Clone)]
pub struct DctPlan {
    height: usize,
    width: usize,
    // cos[u * n + i] = cos(π (i + ½) u / n)
    cos_h: Vec<f64>,
    cos_w: Vec<f64>,
}

fn cosine_table(n: usize) -> Vec<f64> {
    let period = 4 * n;
    let mut table = Vec::with_capacity(n * n);
    for u in 0..n {
        for i in 0..n {
            // Reduce (2i+1)u modulo the period before scaling to radians.
            let m = ((2 * i + 1) * u) % period;
            table.push(libm::cos(PI * m as f64 / (2 * n) as f64));
        }
    }
    table
}

impl DctPlan {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("shape", "height and width must be at least 1"));
        }
        Ok(Self {
            height,
            width,
            cos_h: cosine_table(height),
            cos_w: cosine_table(width),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn check(&self, shape: Shape, values: &[f64]) -> Result<()> {
        if shape.height != self.height || shape.width != self.width {
            return Err(Error::ShapeMismatch {
                expected: Shape {
                    channels: shape.channels,
                    height: self.height,
                    width: self.width,
                },
                found: shape,
            });
        }
        match values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn forward(&self, field: &PixelField) -> Result<SpectralField> {
        let shape = field.shape();
        self.check(shape, field.values())?;
        let (h, w) = (self.height, self.width);
        let scale = 4.0 / (h * w) as f64;
        let mut out = vec![0.0; shape.len()];
        let mut rows = vec![0.0; h * w];
        for c in 0..shape.channels {
            let x = field.channel(c);
            for i in 0..h {
                let row = &x[i * w..(i + 1) * w];
                for v in 0..w {
                    let basis = &self.cos_w[v * w..(v + 1) * w];
                    rows[i * w + v] = row.iter().zip(basis).map(|(a, b)| a * b).sum();
                }
            }
            let dst = &mut out[c * h * w..(c + 1) * h * w];
            for u in 0..h {
                let acc = &mut dst[u * w..(u + 1) * w];
                for i in 0..h {
                    let k = self.cos_h[u * h + i] * scale;
                    for (a, r) in acc.iter_mut().zip(&rows[i * w..(i + 1) * w]) {
                        *a += k * r;
                    }
                }
            }
        }
        Ok(SpectralField::from_parts_unchecked(shape, out))
    }

    pub fn inverse(&self, spec: &SpectralField) -> Result<PixelField> {
        let shape = spec.shape();
        self.check(shape, spec.values())?;
        let (h, w) = (self.height, self.width);
        let gamma = |k: usize| if k == 0 { 0.5 } else { 1.0 };
        let mut out = vec![0.0; shape.len()];
        let mut rows = vec![0.0; h * w];
        for c in 0..shape.channels {
            let x = spec.channel(c);
            rows.iter_mut().for_each(|r| *r = 0.0);
            for i in 0..h {
                let acc = &mut rows[i * w..(i + 1) * w];
                for u in 0..h {
                    let k = gamma(u) * self.cos_h[u * h + i];
                    for (a, xv) in acc.iter_mut().zip(&x[u * w..(u + 1) * w]) {
                        *a += k * xv;
                    }
                }
            }
            let dst = &mut out[c * h * w..(c + 1) * h * w];
            for i in 0..h {
                let acc = &mut dst[i * w..(i + 1) * w];
                for v in 0..w {
                    let k = gamma(v) * rows[i * w + v];
                    for (a, b) in acc.iter_mut().zip(&self.cos_w[v * w..(v + 1) * w]) {
                        *a += k * b;
                    }
                }
            }
        }
        Ok(PixelField::from_parts_unchecked(shape, out))
    }
}

/// Forward type-II DCT with `4/(HW)` normalization, per channel.
pub fn dct2(field: &PixelField) -> Result<SpectralField> {
    let shape = field.shape();
    DctPlan::new(shape.height, shape.width)?.forward(field)
}

/// Inverse (type-III) transform of [`dct2`].
pub fn idct2(spec: &SpectralField) -> Result<PixelField> {
    let shape = spec.shape();
    DctPlan::new(shape.height, shape.width)?.inverse(spec)
}

/// Wave vectors of every DCT mode on an `height x width` grid.
///
/// `k_eff = max(|k|, k_c)` is the magnitude the schedule sees; it keeps the
/// DC region attenuated and noised when `k_c > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    height: usize,
    width: usize,
    k_c: f64,
    k_mag: Vec<f64>,
    k_eff: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(height: usize, width: usize, k_c: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("shape", "height and width must be at least 1"));
        }
        if !(k_c >= 0.0 && k_c.is_finite()) {
            return Err(Error::invalid("k_c", "must be finite and non-negative"));
        }
        let mut k_mag = Vec::with_capacity(height * width);
        for u in 0..height {
            for v in 0..width {
                let (ku, kv) = (PI * u as f64, PI * v as f64);
                k_mag.push(libm::sqrt(ku * ku + kv * kv));
            }
        }
        let k_eff = k_mag.iter().map(|&k| k.max(k_c)).collect();
        Ok(Self {
            height,
            width,
            k_c,
            k_mag,
            k_eff,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn k_c(&self) -> f64 {
        self.k_c
    }

    /// Number of modes in one channel.
    pub fn modes(&self) -> usize {
        self.k_mag.len()
    }

    pub fn k_vec(&self, u: usize, v: usize) -> (f64, f64) {
        (PI * u as f64, PI * v as f64)
    }

    pub fn k_mag(&self) -> &[f64] {
        &self.k_mag
    }

    pub fn k_eff(&self) -> &[f64] {
        &self.k_eff
    }

    pub fn max_k_mag(&self) -> f64 {
        self.k_mag.iter().copied().fold(0.0, f64::max)
    }

    /// Same geometry with a different cutoff.
    pub fn with_cutoff(&self, k_c: f64) -> Result<Self> {
        Self::new(self.height, self.width, k_c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialBin {
    pub k_center: f64,
    pub mean: f64,
    pub count: usize,
}

/// Averages per-mode values over uniform `|k|` bins spanning `[0, max |k|]`.
///
/// `power` may hold one plane or several channels back to back; all entries
/// sharing a bin are pooled. Empty bins are omitted from the output.
pub fn radial_average(power: &[f64], grid: &FrequencyGrid, bins: usize) -> Result<Vec<RadialBin>> {
    if bins == 0 {
        return Err(Error::invalid("bins", "must be at least 1"));
    }
    let plane = grid.modes();
    if power.is_empty() || power.len() % plane != 0 {
        return Err(Error::LengthMismatch {
            expected: plane,
            found: power.len(),
        });
    }
    let k_max = grid.max_k_mag();
    let width = if k_max > 0.0 { k_max / bins as f64 } else { 1.0 };
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for (idx, &p) in power.iter().enumerate() {
        let k = grid.k_mag[idx % plane];
        let b = ((k / width) as usize).min(bins - 1);
        sums[b] += p;
        counts[b] += 1;
    }
    Ok((0..bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| RadialBin {
            k_center: (b as f64 + 0.5) * width,
            mean: sums[b] / counts[b] as f64,
            count: counts[b],
        })
        .collect())
}
