//! Evaluation layer: connected four-point correlator of spin fields, shared
//! index bootstrap, antialiased bicubic reference and radial spectra.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use rand::Rng;

use crate::ising::SpinLattice;
use crate::schedule::CoefficientTables;
use crate::seed::chain_rng;
use crate::spectral::{radial_average, DctPlan, FrequencyGrid, RadialBin};
use crate::{Error, PixelField, Result, Shape};

/// Patch sides used when none are given.
pub const DEFAULT_SIDES: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

/// Corner statistics of axis-aligned `d×d` squares, averaged over all
/// periodic translations: `G₄ = ⟨s₀₀ s₀d s_d0 s_dd⟩`, `C_a` the mean edge
/// pair product (horizontal and vertical), `C_b` the mean diagonal product.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CornerMoments {
    pub g4: f64,
    pub ca: f64,
    pub cb: f64,
}

impl CornerMoments {
    /// `κ₄ = G₄ − 2 C_a² − C_b²`.
    pub fn kappa4(&self) -> f64 {
        self.g4 - 2.0 * self.ca * self.ca - self.cb * self.cb
    }
}

/// Corner moments of one periodic `side×side` ±1 field.
pub fn corner_moments(spins: &[i8], side: usize, d: usize) -> Result<CornerMoments> {
    if spins.len() != side * side {
        return Err(Error::LengthMismatch {
            expected: side * side,
            found: spins.len(),
        });
    }
    if d == 0 || d >= side {
        return Err(Error::SideTooLarge { side: d, lattice: side });
    }
    let (mut g4, mut ca, mut cb) = (0i64, 0i64, 0i64);
    for i in 0..side {
        let row = i * side;
        let row_d = ((i + d) % side) * side;
        for j in 0..side {
            let jd = (j + d) % side;
            let s00 = spins[row + j] as i64;
            let s01 = spins[row + jd] as i64;
            let s10 = spins[row_d + j] as i64;
            let s11 = spins[row_d + jd] as i64;
            g4 += s00 * s01 * s10 * s11;
            ca += s00 * s01 + s00 * s10;
            cb += s00 * s11 + s01 * s10;
        }
    }
    let n = (side * side) as f64;
    Ok(CornerMoments {
        g4: g4 as f64 / n,
        ca: ca as f64 / (2.0 * n),
        cb: cb as f64 / (2.0 * n),
    })
}

/// Percentile interval of a resampled statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
    /// Standard deviation of the bootstrap replicates.
    pub std_error: f64,
}

/// Bootstrap resampling plan. Row `r` of the shared index matrix is drawn
/// from its own stream `chain_rng(seed, r)`, so every statistic evaluated
/// with the same plan and sample count sees identical resamples without the
/// matrix being stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapPlan {
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl BootstrapPlan {
    pub fn new(resamples: usize, confidence: f64, seed: u64) -> Result<Self> {
        if resamples < 2 {
            return Err(Error::invalid("bootstrap", "need at least 2 resamples"));
        }
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::invalid("confidence", "must lie in (0, 1)"));
        }
        Ok(Self {
            resamples,
            confidence,
            seed,
        })
    }

    /// 1000 resamples at 99%.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            resamples: 1000,
            confidence: 0.99,
            seed,
        }
    }

    /// Row `r` of the index matrix for `n` samples.
    pub fn index_row(&self, r: usize, n: usize, out: &mut Vec<usize>) {
        let mut rng = chain_rng(self.seed, r as u64);
        out.clear();
        out.extend((0..n).map(|_| rng.random_range(0..n)));
    }

    /// Evaluates `stats` (returning `k` values) on the full sample and on
    /// every resample row, returning one interval per statistic.
    pub fn resample<F>(&self, n: usize, k: usize, mut stats: F) -> Result<Vec<Interval>>
    where
        F: FnMut(&[usize], &mut [f64]),
    {
        if n == 0 {
            return Err(Error::NotEnoughSamples { needed: 1, found: 0 });
        }
        let identity: Vec<usize> = (0..n).collect();
        let mut estimate = vec![0.0; k];
        stats(&identity, &mut estimate);
        let mut replicates = vec![Vec::with_capacity(self.resamples); k];
        let mut row = Vec::with_capacity(n);
        let mut out = vec![0.0; k];
        for r in 0..self.resamples {
            self.index_row(r, n, &mut row);
            stats(&row, &mut out);
            for (rep, &v) in replicates.iter_mut().zip(&out) {
                rep.push(v);
            }
        }
        let lo_q = (1.0 - self.confidence) / 2.0;
        let hi_q = 1.0 - lo_q;
        Ok(replicates
            .into_iter()
            .zip(estimate)
            .map(|(mut rep, est)| {
                let m = rep.iter().sum::<f64>() / rep.len() as f64;
                let var = rep.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (rep.len() - 1) as f64;
                rep.sort_by(f64::total_cmp);
                Interval {
                    estimate: est,
                    low: quantile_sorted(&rep, lo_q),
                    high: quantile_sorted(&rep, hi_q),
                    std_error: libm::sqrt(var),
                }
            })
            .collect())
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn mean_at(values: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
}

/// Percentile intervals of the mean of each method's per-sample values,
/// all computed from the same resample rows.
pub fn paired_bootstrap(methods: &[&[f64]], plan: &BootstrapPlan) -> Result<Vec<Interval>> {
    let n = methods.first().map_or(0, |m| m.len());
    if let Some(bad) = methods.iter().find(|m| m.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    plan.resample(n, methods.len(), |idx, out| {
        for (o, m) in out.iter_mut().zip(methods) {
            *o = mean_at(m, idx);
        }
    })
}

/// One row of a κ₄ report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kappa4Row {
    pub side: usize,
    pub moments: CornerMoments,
    pub kappa4: f64,
    pub interval: Interval,
    pub samples: usize,
}

/// Per-image corner moments for each requested side.
pub fn per_image_moments(fields: &[SpinLattice], sides: &[usize]) -> Result<Vec<Vec<CornerMoments>>> {
    sides
        .iter()
        .map(|&d| {
            fields
                .iter()
                .map(|f| corner_moments(f.spins(), f.side(), d))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// κ₄ from image-averaged moments for every side, with bootstrap intervals
/// over images.
pub fn kappa4(fields: &[SpinLattice], sides: &[usize], plan: &BootstrapPlan) -> Result<Vec<Kappa4Row>> {
    if let Some(f) = fields.iter().find(|f| f.side() != fields[0].side()) {
        return Err(Error::invalid(
            "inputs",
            alloc::format!("mixed lattice sides {} and {}", fields[0].side(), f.side()),
        ));
    }
    let moments = per_image_moments(fields, sides)?;
    kappa4_from_moments(&moments, sides, plan)
}

/// Same as [`kappa4`] for precomputed per-image moments
/// (`moments[side_index][image]`).
pub fn kappa4_from_moments(
    moments: &[Vec<CornerMoments>],
    sides: &[usize],
    plan: &BootstrapPlan,
) -> Result<Vec<Kappa4Row>> {
    if moments.len() != sides.len() {
        return Err(Error::LengthMismatch {
            expected: sides.len(),
            found: moments.len(),
        });
    }
    let n = moments.first().map_or(0, Vec::len);
    let averaged = |m: &[CornerMoments], idx: &[usize]| {
        let mut acc = CornerMoments::default();
        for &i in idx {
            acc.g4 += m[i].g4;
            acc.ca += m[i].ca;
            acc.cb += m[i].cb;
        }
        let k = idx.len() as f64;
        CornerMoments {
            g4: acc.g4 / k,
            ca: acc.ca / k,
            cb: acc.cb / k,
        }
    };
    let intervals = plan.resample(n, sides.len(), |idx, out| {
        for (o, m) in out.iter_mut().zip(moments) {
            *o = averaged(m, idx).kappa4();
        }
    })?;
    let all: Vec<usize> = (0..n).collect();
    Ok(sides
        .iter()
        .zip(moments)
        .zip(intervals)
        .map(|((&side, m), interval)| {
            let moments = averaged(m, &all);
            Kappa4Row {
                side,
                moments,
                kappa4: moments.kappa4(),
                interval,
                samples: n,
            }
        })
        .collect())
}

/// Keys cubic convolution kernel with `a = −0.5`.
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = libm::fabs(x);
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Normalized interpolation weights for resizing `in_len → out_len`. When
/// shrinking, the kernel is stretched by the scale factor (antialiasing).
fn resize_weights(in_len: usize, out_len: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = in_len as f64 / out_len as f64;
    let support = 2.0 * scale.max(1.0);
    let inv = if scale >= 1.0 { 1.0 / scale } else { 1.0 };
    (0..out_len)
        .map(|i| {
            let center = scale * (i as f64 + 0.5);
            let xmin = ((center - support + 0.5) as isize).max(0) as usize;
            let xmax = ((center + support + 0.5) as isize).min(in_len as isize) as usize;
            let mut w: Vec<f64> = (xmin..xmax)
                .map(|j| cubic((j as f64 - center + 0.5) * inv))
                .collect();
            let total: f64 = w.iter().sum();
            if total != 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            (xmin, w)
        })
        .collect()
}

/// Separable bicubic resize of every channel.
pub fn bicubic_resize(field: &PixelField, height: usize, width: usize) -> Result<PixelField> {
    let shape = field.shape();
    let out_shape = Shape::new(shape.channels, height, width)?;
    let wy = resize_weights(shape.height, height);
    let wx = resize_weights(shape.width, width);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut rows = vec![0.0; shape.height * width];
    for c in 0..shape.channels {
        let plane = field.channel(c);
        for i in 0..shape.height {
            for (j, (x0, w)) in wx.iter().enumerate() {
                rows[i * width + j] = w
                    .iter()
                    .enumerate()
                    .map(|(k, wk)| wk * plane[i * shape.width + x0 + k])
                    .sum();
            }
        }
        for (y0, w) in &wy {
            for j in 0..width {
                out.push(
                    w.iter()
                        .enumerate()
                        .map(|(k, wk)| wk * rows[(y0 + k) * width + j])
                        .sum(),
                );
            }
        }
    }
    PixelField::new(out_shape, out)
}

/// Antialiased bicubic downsampling by `factor` followed by bicubic
/// upsampling back to the original size.
pub fn bicubic_down_up(field: &PixelField, factor: usize) -> Result<PixelField> {
    let shape = field.shape();
    if factor == 0 || shape.height % factor != 0 || shape.width % factor != 0 {
        return Err(Error::NotDivisible {
            factor,
            height: shape.height,
            width: shape.width,
        });
    }
    let small = bicubic_resize(field, shape.height / factor, shape.width / factor)?;
    bicubic_resize(&small, shape.height, shape.width)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub mse: f64,
    /// `10 log10(1 / MSE)`; `+∞` when the images agree exactly.
    pub psnr: f64,
}

impl Comparison {
    pub fn from_mse(mse: f64) -> Self {
        let psnr = if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * libm::log10(mse)
        };
        Self { mse, psnr }
    }
}

pub fn mse(a: &PixelField, b: &PixelField) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape(),
            found: b.shape(),
        });
    }
    let n = a.values().len() as f64;
    Ok(a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Noise-free signal `exp(−k_eff² λ / 2) X₀` of an image in `[0, 1]`,
/// computed in the `[−1, 1]` normalization and mapped back.
pub fn attenuated_signal(x0: &PixelField, grid: &FrequencyGrid, lambda: f64) -> Result<PixelField> {
    let shape = x0.shape();
    let plan = DctPlan::new(shape.height, shape.width)?;
    let centered = PixelField::new(shape, x0.values().iter().map(|v| 2.0 * v - 1.0).collect())?;
    let mut spec = plan.forward(&centered)?;
    let k = grid.k_eff();
    let plane = k.len();
    for (i, v) in spec.values_mut().iter_mut().enumerate() {
        let ke = k[i % plane];
        *v *= libm::exp(-0.5 * ke * ke * lambda);
    }
    let signal = plan.inverse(&spec)?;
    PixelField::new(shape, signal.values().iter().map(|v| 0.5 * (v + 1.0)).collect())
}

/// MSE/PSNR between the surviving signal at timestep `n` and the bicubic
/// down-up image, both in `[0, 1]`.
pub fn compare_signal_vs_bicubic(
    x0: &PixelField,
    tables: &CoefficientTables,
    n: usize,
    factor: usize,
) -> Result<Comparison> {
    if n > tables.n_steps() {
        return Err(Error::invalid("n", alloc::format!("{n} exceeds N = {}", tables.n_steps())));
    }
    let signal = attenuated_signal(x0, tables.grid(), tables.lambda(n))?;
    let reference = bicubic_down_up(x0, factor)?;
    Ok(Comparison::from_mse(mse(&signal, &reference)?))
}

/// `λ` at which modes with SNR above `τ` end exactly at resolution
/// `target`: `ln(1 + 1/τ) / (√2 π target)²`.
pub fn lambda_for_resolution(target: f64, tau: f64) -> f64 {
    let k = SQRT_2 * PI * target;
    libm::log1p(1.0 / tau) / (k * k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub lambda: f64,
    pub comparison: Comparison,
}

/// For each threshold `τ`, attenuates every image to the level whose
/// effective resolution equals `H / factor` and compares with bicubic
/// down-up. PSNR is taken from the mean MSE over images.
pub fn bicubic_threshold_sweep(
    images: &[PixelField],
    k_c: f64,
    thresholds: &[f64],
    factor: usize,
) -> Result<Vec<SweepRow>> {
    let first = images.first().ok_or(Error::NotEnoughSamples { needed: 1, found: 0 })?;
    let shape = first.shape();
    let grid = FrequencyGrid::new(shape.height, shape.width, k_c)?;
    let references = images
        .iter()
        .map(|x| bicubic_down_up(x, factor))
        .collect::<Result<Vec<_>>>()?;
    let target = shape.height as f64 / factor as f64;
    thresholds
        .iter()
        .map(|&tau| {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::invalid("thresholds", "every threshold must be positive"));
            }
            let lambda = lambda_for_resolution(target, tau);
            let mut total = 0.0;
            for (x, r) in images.iter().zip(&references) {
                total += mse(&attenuated_signal(x, &grid, lambda)?, r)?;
            }
            Ok(SweepRow {
                tau,
                lambda,
                comparison: Comparison::from_mse(total / images.len() as f64),
            })
        })
        .collect()
}

/// Radially binned mean DCT power of a set of fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialRow {
    pub bin: RadialBin,
    /// Whether the SNR at the bin centre exceeds the mask threshold.
    pub above_threshold: Option<bool>,
}

/// Mask of modes whose SNR at timestep `n` exceeds `tau`.
#[derive(Debug, Clone, Copy)]
pub struct SnrMask<'a> {
    pub tables: &'a CoefficientTables,
    pub n: usize,
    pub tau: f64,
}

pub fn radial_spectrum_report(
    fields: &[PixelField],
    bins: usize,
    mask: Option<SnrMask<'_>>,
) -> Result<Vec<RadialRow>> {
    let first = fields.first().ok_or(Error::NotEnoughSamples { needed: 1, found: 0 })?;
    let shape = first.shape();
    let plan = DctPlan::new(shape.height, shape.width)?;
    let grid = FrequencyGrid::new(shape.height, shape.width, 0.0)?;
    let mut power = vec![0.0; shape.len()];
    for (idx, f) in fields.iter().enumerate() {
        if f.shape() != shape {
            return Err(Error::SampleShape {
                index: idx,
                expected: shape,
                found: f.shape(),
            });
        }
        for (p, x) in power.iter_mut().zip(plan.forward(f)?.values()) {
            *p += x * x;
        }
    }
    let n = fields.len() as f64;
    power.iter_mut().for_each(|p| *p /= n);
    let rows = radial_average(&power, &grid, bins)?;
    Ok(rows
        .into_iter()
        .map(|bin| {
            let above_threshold = mask.map(|m| {
                let k = bin.k_center.max(m.tables.spec().k_c());
                let lambda = m.tables.lambda(m.n);
                let ab = libm::exp(-k * k * lambda);
                let om = -libm::expm1(-k * k * lambda);
                om == 0.0 || ab / om > m.tau
            });
            RadialRow { bin, above_threshold }
        })
        .collect())
}
