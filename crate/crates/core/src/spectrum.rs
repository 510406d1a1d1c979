//! Dataset variance spectrum `S₀(k)` and the regularized power law
//! `S₀(k) = C (k² + k₀²)^(−a)`.

use alloc::vec;
use alloc::vec::Vec;
use core::borrow::Borrow;

use crate::linalg::{cholesky_solve, spd_inverse};
use crate::spectral::{DctPlan, FrequencyGrid};
use crate::{Error, PixelField, Result, Shape, SpectralField};

/// Per-mode variance of DCT coefficients across a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSpectrum {
    shape: Shape,
    values: Vec<f64>,
    sample_count: usize,
}

impl VarianceSpectrum {
    /// `sample_count` is 0 for spectra that did not come from data.
    pub fn new(shape: Shape, values: Vec<f64>, sample_count: usize) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::LengthMismatch {
                expected: shape.len(),
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some(index) = values.iter().position(|&v| v < 0.0) {
            return Err(Error::invalid("S0", alloc::format!("negative variance at element {index}")));
        }
        Ok(Self {
            shape,
            values,
            sample_count,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn sqrt_values(&self) -> Vec<f64> {
        self.values.iter().map(|&v| libm::sqrt(v)).collect()
    }

    /// Copy of the spectrum for a field with `channels` channels, repeating
    /// channel 0 when this spectrum has a single channel.
    pub fn broadcast(&self, channels: usize) -> Result<Self> {
        if channels == self.shape.channels {
            return Ok(self.clone());
        }
        if self.shape.channels != 1 {
            return Err(Error::invalid(
                "channels",
                alloc::format!("cannot broadcast {} channels to {channels}", self.shape.channels),
            ));
        }
        let shape = Shape::new(channels, self.shape.height, self.shape.width)?;
        let values = (0..channels).flat_map(|_| self.values.iter().copied()).collect();
        Ok(Self {
            shape,
            values,
            sample_count: self.sample_count,
        })
    }
}

/// Streaming per-mode mean and variance (Welford), mergeable across shards.
#[derive(Debug, Clone)]
pub struct VarianceAccumulator {
    shape: Shape,
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceAccumulator {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            count: 0,
            mean: vec![0.0; shape.len()],
            m2: vec![0.0; shape.len()],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, x: &SpectralField) -> Result<()> {
        if x.shape() != self.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                found: x.shape(),
            });
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x.values()) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
        Ok(())
    }

    /// Chan et al. pairwise combination of two partial accumulators.
    pub fn merge(&mut self, other: &VarianceAccumulator) -> Result<()> {
        if other.shape != self.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                found: other.shape,
            });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population variance `E[X²] − E[X]²` per mode.
    pub fn finish(&self) -> Result<VarianceSpectrum> {
        if self.count < 2 {
            return Err(Error::NotEnoughSamples {
                needed: 2,
                found: self.count,
            });
        }
        let n = self.count as f64;
        let values = self.m2.iter().map(|&s| (s / n).max(0.0)).collect();
        VarianceSpectrum::new(self.shape, values, self.count)
    }
}

/// Transforms every sample and accumulates per-mode variance.
pub fn estimate_variance_spectrum<I>(dataset: I) -> Result<VarianceSpectrum>
where
    I: IntoIterator,
    I::Item: Borrow<PixelField>,
{
    let mut iter = dataset.into_iter();
    let first = iter.next().ok_or(Error::NotEnoughSamples { needed: 2, found: 0 })?;
    let first = first.borrow();
    let shape = first.shape();
    let plan = DctPlan::new(shape.height, shape.width)?;
    let mut acc = VarianceAccumulator::new(shape);
    acc.push(&plan.forward(first)?)?;
    for (offset, sample) in iter.enumerate() {
        let sample = sample.borrow();
        if sample.shape() != shape {
            return Err(Error::SampleShape {
                index: offset + 1,
                expected: shape,
                found: sample.shape(),
            });
        }
        acc.push(&plan.forward(sample)?)?;
    }
    acc.finish()
}

/// `S₀(k) = C (k² + k₀²)^(−a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub c: f64,
    pub k0_sq: f64,
    pub a: f64,
}

impl PowerLaw {
    pub fn new(c: f64, k0_sq: f64, a: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("C", "must be positive and finite"));
        }
        if !(k0_sq >= 0.0 && k0_sq.is_finite()) {
            return Err(Error::invalid("k0_sq", "must be non-negative and finite"));
        }
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::invalid("a", "must be non-negative and finite"));
        }
        Ok(Self { c, k0_sq, a })
    }

    pub fn eval(&self, k: f64) -> f64 {
        self.c * libm::pow(k * k + self.k0_sq, -self.a)
    }
}

/// Fitted power law. `k0_sq_at_bound` is set when the optimum sits on the
/// `k₀² ≥ 0` constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub law: PowerLaw,
    pub stderr: PowerLaw,
    pub modes_fitted: usize,
    pub residual_norm: f64,
    pub iterations: usize,
    pub k0_sq_at_bound: bool,
}

/// Evaluates the law on every mode, identical across `channels`.
pub fn eval_power_law(law: &PowerLaw, grid: &FrequencyGrid, channels: usize) -> Result<VarianceSpectrum> {
    if law.k0_sq == 0.0 && law.a > 0.0 && grid.k_mag().contains(&0.0) {
        return Err(Error::invalid("k0_sq", "zero k0_sq gives infinite variance at k = 0"));
    }
    let shape = Shape::new(channels, grid.height(), grid.width())?;
    let plane: Vec<f64> = grid.k_mag().iter().map(|&k| law.eval(k)).collect();
    let values = (0..channels).flat_map(|_| plane.iter().copied()).collect();
    VarianceSpectrum::new(shape, values, 0)
}

const MAX_ITERATIONS: usize = 500;
const DECAY_TOLERANCE: f64 = -1e-6;

/// Levenberg–Marquardt fit of `ln S₀ = ln C − a ln(k² + k₀²)` over all
/// non-DC modes of every channel.
pub fn fit_power_law(spectrum: &VarianceSpectrum, grid: &FrequencyGrid) -> Result<PowerLawFit> {
    let shape = spectrum.shape();
    if shape.height != grid.height() || shape.width != grid.width() {
        return Err(Error::ShapeMismatch {
            expected: Shape {
                channels: shape.channels,
                height: grid.height(),
                width: grid.width(),
            },
            found: shape,
        });
    }
    let plane = grid.modes();
    let mut ksq = Vec::new();
    let mut y = Vec::new();
    for (idx, &s) in spectrum.values().iter().enumerate() {
        let k = grid.k_mag()[idx % plane];
        if k == 0.0 {
            continue;
        }
        if !(s > 0.0) {
            return Err(Error::NonPositiveSpectrum { index: idx });
        }
        ksq.push(k * k);
        y.push(libm::log(s));
    }
    let m = y.len();
    if m < 4 {
        return Err(Error::NotEnoughSamples { needed: 4, found: m });
    }

    let slope = log_log_slope(&ksq, &y);
    if !(slope < DECAY_TOLERANCE) {
        return Err(Error::NotDecaying { slope });
    }

    // a = 1, k₀² = π², C anchored at the lowest fitted |k|.
    let k_min = ksq.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut anchor, mut n_anchor) = (0.0, 0usize);
    for (x, v) in ksq.iter().zip(&y) {
        if *x == k_min {
            anchor += v;
            n_anchor += 1;
        }
    }
    let k0_init = core::f64::consts::PI * core::f64::consts::PI;
    let mut p = [anchor / n_anchor as f64 + libm::log(k_min + k0_init), k0_init, 1.0];

    let cost = |p: &[f64; 3]| -> f64 {
        ksq.iter()
            .zip(&y)
            .map(|(x, v)| {
                let r = v - (p[0] - p[2] * libm::log(x + p[1]));
                r * r
            })
            .sum()
    };
    let normal_equations = |p: &[f64; 3]| -> ([[f64; 3]; 3], [f64; 3]) {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (x, v) in ksq.iter().zip(&y) {
            let d = x + p[1];
            let ld = libm::log(d);
            let r = v - (p[0] - p[2] * ld);
            let j = [1.0, -p[2] / d, -ld];
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        (jtj, jtr)
    };

    let mut current = cost(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&p);
        let mut damped = jtj;
        for d in 0..3 {
            damped[d][d] += lambda * jtj[d][d].max(1e-300);
        }
        let step = match cholesky_solve(&damped, &jtr) {
            Some(s) => s,
            None => {
                lambda *= 10.0;
                if lambda > 1e20 {
                    converged = true;
                    break;
                }
                continue;
            }
        };
        let mut trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
        if trial[1] < 0.0 {
            trial[1] = 0.0;
        }
        let trial_cost = cost(&trial);
        if trial_cost.is_finite() && trial_cost < current {
            let rel = (0..3)
                .map(|i| (trial[i] - p[i]).abs() / (p[i].abs() + 1e-8))
                .fold(0.0, f64::max);
            p = trial;
            current = trial_cost;
            lambda = (lambda * 0.3).max(1e-12);
            if rel < 1e-13 || current == 0.0 {
                converged = true;
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e20 {
                // No direction decreases the cost at working precision.
                converged = true;
                break;
            }
        }
    }
    let residual_norm = libm::sqrt(current);
    if !converged {
        return Err(Error::FitDidNotConverge {
            iterations,
            residual_norm,
        });
    }

    let (jtj, _) = normal_equations(&p);
    let sigma2 = current / (m as f64 - 3.0);
    let c = libm::exp(p[0]);
    let stderr = match spd_inverse(&jtj) {
        Some(cov) => PowerLaw {
            c: c * libm::sqrt(sigma2 * cov[0][0]),
            k0_sq: libm::sqrt(sigma2 * cov[1][1]),
            a: libm::sqrt(sigma2 * cov[2][2]),
        },
        None => PowerLaw {
            c: f64::INFINITY,
            k0_sq: f64::INFINITY,
            a: f64::INFINITY,
        },
    };
    Ok(PowerLawFit {
        law: PowerLaw {
            c,
            k0_sq: p[1],
            a: p[2],
        },
        stderr,
        modes_fitted: m,
        residual_norm,
        iterations,
        k0_sq_at_bound: p[1] == 0.0,
    })
}

/// Ordinary least-squares slope of `y` against `ln x`.
fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|&v| libm::log(v)).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in lx.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}
