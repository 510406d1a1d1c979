//! Discrete forward process, exact posterior, ancestral sampling and the
//! four prediction targets.
//!
//! With `a = √ᾱ`, `b = √(1 − ᾱ)` and `s = √S₀` per mode, the forward marginal
//! is `X_n = a X₀ + b s ε`. The velocity targets are `w = a s ε − b X₀` and
//! `v = w / s`.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::schedule::{CoefficientTables, StepCoefficients, ALPHA_FLOOR};
use crate::spectrum::VarianceSpectrum;
use crate::{Error, Result, Shape, SpectralField};

/// `√ALPHA_FLOOR`, the smallest `a` used when dividing by `√ᾱ`.
pub const SIGNAL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictionKind {
    Epsilon,
    X0,
    W,
    V,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub kind: PredictionKind,
    pub value: SpectralField,
}

/// Network slot of the reverse process. `t` is continuous diffusion time;
/// the discrete sampler calls it at `t_n = n / N`.
pub trait Denoiser {
    fn predict(&self, t: f64, x: &SpectralField) -> Result<Prediction>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(&self, t: f64, x: &SpectralField) -> Result<Prediction> {
        (**self).predict(t, x)
    }
}

/// Sample at timestep `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub n: usize,
    pub field: SpectralField,
}

/// A prediction expressed as all four targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub epsilon: SpectralField,
    pub x0: SpectralField,
    pub w: SpectralField,
    pub v: SpectralField,
    /// Elements where `√ᾱ < SIGNAL_FLOOR` forced a floored division.
    pub floored: Vec<usize>,
}

/// Schedule coefficients paired with the noise spectrum `S₀`.
#[derive(Debug, Clone)]
pub struct Diffusion {
    tables: CoefficientTables,
    s0: VarianceSpectrum,
    sqrt_s0: Vec<f64>,
}

impl Diffusion {
    pub fn new(tables: CoefficientTables, s0: VarianceSpectrum) -> Result<Self> {
        let shape = s0.shape();
        let grid = tables.grid();
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
        let sqrt_s0 = s0.sqrt_values();
        Ok(Self { tables, s0, sqrt_s0 })
    }

    pub fn tables(&self) -> &CoefficientTables {
        &self.tables
    }

    pub fn s0(&self) -> &VarianceSpectrum {
        &self.s0
    }

    pub fn sqrt_s0(&self) -> &[f64] {
        &self.sqrt_s0
    }

    pub fn shape(&self) -> Shape {
        self.s0.shape()
    }

    pub fn n_steps(&self) -> usize {
        self.tables.n_steps()
    }

    fn plane(&self) -> usize {
        self.tables.modes()
    }

    fn check_shape(&self, x: &SpectralField) -> Result<()> {
        if x.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: x.shape(),
            });
        }
        Ok(())
    }

    fn check_step(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.n_steps() {
            return Err(Error::invalid("n", alloc::format!("{n} outside [1, {}]", self.n_steps())));
        }
        Ok(())
    }

    /// `X ~ N(0, S₀)` per mode.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> SpectralField {
        let values = self
            .sqrt_s0
            .iter()
            .map(|s| s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        SpectralField::from_parts_unchecked(self.shape(), values)
    }

    /// Exact draw of `X_n | X₀`.
    pub fn forward_marginal<R: Rng + ?Sized>(
        &self,
        x0: &SpectralField,
        n: usize,
        rng: &mut R,
    ) -> Result<DiffusionState> {
        self.check_shape(x0)?;
        self.check_step(n)?;
        let ab = self.tables.alpha_bar(n);
        let t = self.tables.spec().t_n(n);
        let om = self.tables.one_minus_alpha_bar_at(t);
        let plane = self.plane();
        let values = x0
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let m = i % plane;
                let e: f64 = rng.sample(StandardNormal);
                libm::sqrt(ab[m]) * x + libm::sqrt(om[m]) * self.sqrt_s0[i] * e
            })
            .collect();
        Ok(DiffusionState {
            n,
            field: SpectralField::from_parts_unchecked(self.shape(), values),
        })
    }

    /// One Markov transition `X_{n−1} → X_n`.
    pub fn forward_step<R: Rng + ?Sized>(
        &self,
        x_prev: &SpectralField,
        n: usize,
        rng: &mut R,
    ) -> Result<SpectralField> {
        self.check_step(n)?;
        self.forward_step_with(x_prev, &self.tables.step(n), rng)
    }

    /// [`Self::forward_step`] with the step's coefficients already computed,
    /// for callers advancing many fields through the same step.
    pub fn forward_step_with<R: Rng + ?Sized>(
        &self,
        x_prev: &SpectralField,
        row: &StepCoefficients,
        rng: &mut R,
    ) -> Result<SpectralField> {
        self.check_shape(x_prev)?;
        self.check_step(row.n)?;
        let plane = self.plane();
        if row.alpha.len() != plane || row.beta.len() != plane {
            return Err(Error::invalid("row", "coefficients belong to another grid"));
        }
        let values = x_prev
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let m = i % plane;
                let e: f64 = rng.sample(StandardNormal);
                libm::sqrt(row.alpha[m]) * x + libm::sqrt(row.beta[m]) * self.sqrt_s0[i] * e
            })
            .collect();
        Ok(SpectralField::from_parts_unchecked(self.shape(), values))
    }

    /// Mean and per-element variance of `q(X_{n−1} | X_n, X₀)`. Modes with
    /// `1 − ᾱ_n = 0` pass `X₀` through with zero variance.
    pub fn posterior(
        &self,
        x_n: &SpectralField,
        x0: &SpectralField,
        n: usize,
    ) -> Result<(SpectralField, Vec<f64>)> {
        self.check_shape(x_n)?;
        self.check_shape(x0)?;
        self.check_step(n)?;
        let row = self.tables.step(n);
        let plane = self.plane();
        let mut mean = Vec::with_capacity(x_n.values().len());
        let mut var = Vec::with_capacity(x_n.values().len());
        for (i, (&xn, &x0)) in x_n.values().iter().zip(x0.values()).enumerate() {
            let m = i % plane;
            let om = row.one_minus_alpha_bar[m];
            if om == 0.0 {
                mean.push(x0);
                var.push(0.0);
                continue;
            }
            let c0 = libm::sqrt(row.alpha_bar_prev[m]) * row.beta[m] / om;
            let c1 = libm::sqrt(row.alpha[m]) * row.one_minus_alpha_bar_prev[m] / om;
            mean.push(c0 * x0 + c1 * xn);
            var.push(self.s0.values()[i] * row.beta_tilde[m]);
        }
        Ok((SpectralField::from_parts_unchecked(self.shape(), mean), var))
    }

    /// Expresses `pred`, made at time `t` for state `x`, as all four targets.
    pub fn convert(&self, pred: &Prediction, t: f64, x: &SpectralField) -> Result<Targets> {
        self.check_shape(x)?;
        self.check_shape(&pred.value)?;
        let ab = self.tables.alpha_bar_at(t);
        let om = self.tables.one_minus_alpha_bar_at(t);
        let plane = self.plane();
        let len = x.values().len();
        let (mut eps, mut x0, mut w, mut v) = (
            Vec::with_capacity(len),
            Vec::with_capacity(len),
            Vec::with_capacity(len),
            Vec::with_capacity(len),
        );
        let mut floored = Vec::new();
        for (i, (&xi, &p)) in x.values().iter().zip(pred.value.values()).enumerate() {
            let m = i % plane;
            let (a, b, s) = (libm::sqrt(ab[m]), libm::sqrt(om[m]), self.sqrt_s0[i]);
            let (e, x0i, wi) = match pred.kind {
                PredictionKind::Epsilon => {
                    if a < SIGNAL_FLOOR {
                        floored.push(i);
                    }
                    let x0i = (xi - b * s * p) / a.max(SIGNAL_FLOOR);
                    (p, x0i, a * s * p - b * x0i)
                }
                PredictionKind::X0 => {
                    let e = div_or_zero(xi - a * p, b * s);
                    (e, p, a * s * e - b * p)
                }
                PredictionKind::W | PredictionKind::V => {
                    let wi = if pred.kind == PredictionKind::V { s * p } else { p };
                    (div_or_zero(b * xi + a * wi, s), a * xi - b * wi, wi)
                }
            };
            eps.push(e);
            x0.push(x0i);
            w.push(wi);
            v.push(div_or_zero(wi, s));
        }
        let shape = self.shape();
        let field = |values: Vec<f64>| -> Result<SpectralField> { SpectralField::new(shape, values) };
        Ok(Targets {
            epsilon: field(eps)?,
            x0: field(x0)?,
            w: field(w)?,
            v: field(v)?,
            floored,
        })
    }

    /// ε prediction of `denoiser` at time `t`.
    pub fn predict_epsilon<D: Denoiser + ?Sized>(
        &self,
        denoiser: &D,
        t: f64,
        x: &SpectralField,
    ) -> Result<SpectralField> {
        let pred = denoiser.predict(t, x)?;
        if pred.kind == PredictionKind::Epsilon {
            self.check_shape(&pred.value)?;
            return Ok(pred.value);
        }
        Ok(self.convert(&pred, t, x)?.epsilon)
    }

    /// Runs the reverse chain from `start.n` down to `stop_n`:
    /// `X_{n−1} = (X_n − β_n/√(1−ᾱ_n) √S₀ ε̂) / √α_n + √(S₀ β̃_n) ε`,
    /// with `α_n` floored at [`ALPHA_FLOOR`] in the division. Noise is drawn
    /// for every element at every step, in storage order.
    pub fn ancestral_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
        &self,
        start: DiffusionState,
        denoiser: &D,
        rng: &mut R,
        stop_n: usize,
    ) -> Result<SpectralField> {
        self.check_shape(&start.field)?;
        if start.n > self.n_steps() || start.n <= stop_n {
            return Err(Error::invalid(
                "start_n",
                alloc::format!("need stop_n = {stop_n} < start_n = {} <= N", start.n),
            ));
        }
        let plane = self.plane();
        let s0 = self.s0.values();
        let mut x = start.field;
        for n in (stop_n + 1..=start.n).rev() {
            let t = self.tables.spec().t_n(n);
            let eps = self
                .predict_epsilon(denoiser, t, &x)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFiniteState { step: n },
                    other => other,
                })?;
            if eps.check_finite().is_err() {
                return Err(Error::NonFiniteState { step: n });
            }
            let row = self.tables.step(n);
            let values = x.values_mut();
            for (i, (xi, &e)) in values.iter_mut().zip(eps.values()).enumerate() {
                let m = i % plane;
                let b = libm::sqrt(row.one_minus_alpha_bar[m]);
                let coef = if b > 0.0 { row.beta[m] / b } else { 0.0 };
                let mean = (*xi - coef * self.sqrt_s0[i] * e) / libm::sqrt(row.alpha[m].max(ALPHA_FLOOR));
                let z: f64 = rng.sample(StandardNormal);
                *xi = mean + libm::sqrt(s0[i] * row.beta_tilde[m]) * z;
            }
            if x.check_finite().is_err() {
                return Err(Error::NonFiniteState { step: n });
            }
        }
        Ok(x)
    }

    /// Draws `X_N ~ N(0, S₀)` and runs the reverse chain to `n = 0`.
    pub fn generate<D: Denoiser + ?Sized, R: Rng + ?Sized>(
        &self,
        denoiser: &D,
        rng: &mut R,
    ) -> Result<SpectralField> {
        let field = self.sample_prior(rng);
        let start = DiffusionState {
            n: self.n_steps(),
            field,
        };
        self.ancestral_sample(start, denoiser, rng, 0)
    }

    /// One-sample ε loss: mean over elements of `(ε − ε̂)²`.
    pub fn loss_value<D: Denoiser + ?Sized, R: Rng + ?Sized>(
        &self,
        denoiser: &D,
        x0: &SpectralField,
        n: usize,
        rng: &mut R,
    ) -> Result<f64> {
        self.check_shape(x0)?;
        self.check_step(n)?;
        let t = self.tables.spec().t_n(n);
        let ab = self.tables.alpha_bar_at(t);
        let om = self.tables.one_minus_alpha_bar_at(t);
        let plane = self.plane();
        let eps: Vec<f64> = (0..x0.values().len()).map(|_| rng.sample(StandardNormal)).collect();
        let xn: Vec<f64> = x0
            .values()
            .iter()
            .zip(&eps)
            .enumerate()
            .map(|(i, (&x, &e))| {
                let m = i % plane;
                libm::sqrt(ab[m]) * x + libm::sqrt(om[m]) * self.sqrt_s0[i] * e
            })
            .collect();
        let xn = SpectralField::from_parts_unchecked(self.shape(), xn);
        let eps_hat = self.predict_epsilon(denoiser, t, &xn)?;
        let sum: f64 = eps
            .iter()
            .zip(eps_hat.values())
            .map(|(e, h)| (e - h) * (e - h))
            .sum();
        Ok(sum / eps.len() as f64)
    }
}

fn div_or_zero(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Knows the true `X₀` and returns it as an x0 prediction.
#[derive(Debug, Clone)]
pub struct CheatDenoiser {
    x0: SpectralField,
}

impl CheatDenoiser {
    pub fn new(x0: SpectralField) -> Self {
        Self { x0 }
    }
}

impl Denoiser for CheatDenoiser {
    fn predict(&self, _t: f64, _x: &SpectralField) -> Result<Prediction> {
        Ok(Prediction {
            kind: PredictionKind::X0,
            value: self.x0.clone(),
        })
    }
}

/// Bayes-optimal ε predictor when the data law is `N(0, S₀)`:
/// `ε̂ = √(1 − ᾱ(t)) X / √S₀`, zero where `S₀ = 0`.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    tables: CoefficientTables,
    sqrt_s0: Vec<f64>,
    shape: Shape,
}

impl GaussianOracle {
    pub fn new(diffusion: &Diffusion) -> Self {
        Self {
            tables: diffusion.tables.clone(),
            sqrt_s0: diffusion.sqrt_s0.clone(),
            shape: diffusion.shape(),
        }
    }
}

impl Denoiser for GaussianOracle {
    fn predict(&self, t: f64, x: &SpectralField) -> Result<Prediction> {
        if x.shape() != self.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                found: x.shape(),
            });
        }
        let om = self.tables.one_minus_alpha_bar_at(t);
        let plane = om.len();
        let values = x
            .values()
            .iter()
            .enumerate()
            .map(|(i, &xi)| div_or_zero(libm::sqrt(om[i % plane]) * xi, self.sqrt_s0[i]))
            .collect();
        Ok(Prediction {
            kind: PredictionKind::Epsilon,
            value: SpectralField::from_parts_unchecked(self.shape, values),
        })
    }
}

/// Predicts `ε̂ = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict(&self, _t: f64, x: &SpectralField) -> Result<Prediction> {
        Ok(Prediction {
            kind: PredictionKind::Epsilon,
            value: SpectralField::zeros(x.shape()),
        })
    }
}
