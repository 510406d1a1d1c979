//! Continuous-time view of the process and its reverse-time samplers.
//!
//! Per mode the forward SDE is `dX = f X dt + g dW` with
//! `f = −½ k_eff² λ̇(t)` and `g = sqrt(k_eff² λ̇(t) S₀)`, so `g² = −2 f S₀`.
//! The marginal at `t` is `X = A X₀ + D ε` with `A = exp(−k_eff² λ(t)/2)`
//! and `D² = S₀ (1 − A²)`.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::ddpm::{Denoiser, Diffusion, SIGNAL_FLOOR};
use crate::{Error, Result, SpectralField};

/// Default Langevin step for the corrector.
pub const DEFAULT_CORRECTOR_STEP: f64 = 0.01;

pub trait ScoreFunction {
    fn score(&self, t: f64, x: &SpectralField) -> Result<SpectralField>;
}

impl<S: ScoreFunction + ?Sized> ScoreFunction for &S {
    fn score(&self, t: f64, x: &SpectralField) -> Result<SpectralField> {
        (**self).score(t, x)
    }
}

/// Drift factor per grid mode and diffusion coefficient per field element.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeCoefficients {
    pub t: f64,
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
}

pub fn sde_coefficients(diffusion: &Diffusion, t: f64) -> Result<SdeCoefficients> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid("t", alloc::format!("{t} is outside (0, 1]")));
    }
    let lambda_dot = diffusion.tables().spec().lambda_dot(t);
    if !lambda_dot.is_finite() || lambda_dot < 0.0 {
        return Err(Error::invalid(
            "t",
            alloc::format!("schedule derivative {lambda_dot} at t = {t} is negative or not finite"),
        ));
    }
    let k2 = diffusion.tables().k_eff_sq();
    let plane = k2.len();
    let drift = k2.iter().map(|k| -0.5 * k * lambda_dot).collect();
    let g = diffusion
        .s0()
        .values()
        .iter()
        .enumerate()
        .map(|(i, s)| libm::sqrt(k2[i % plane] * lambda_dot * s))
        .collect();
    Ok(SdeCoefficients {
        t,
        drift,
        diffusion: g,
    })
}

/// Score `−ε̂ / (√S₀ √(1 − ᾱ(t)))` of a denoiser, zero where that vanishes.
pub struct DenoiserScore<'a, D> {
    diffusion: &'a Diffusion,
    denoiser: D,
}

impl<'a, D: Denoiser> DenoiserScore<'a, D> {
    pub fn new(diffusion: &'a Diffusion, denoiser: D) -> Self {
        Self { diffusion, denoiser }
    }
}

impl<D: Denoiser> ScoreFunction for DenoiserScore<'_, D> {
    fn score(&self, t: f64, x: &SpectralField) -> Result<SpectralField> {
        let eps = self.diffusion.predict_epsilon(&self.denoiser, t, x)?;
        let om = self.diffusion.tables().one_minus_alpha_bar_at(t);
        let s = self.diffusion.sqrt_s0();
        let plane = om.len();
        let values = eps
            .values()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let d = s[i] * libm::sqrt(om[i % plane]);
                if d == 0.0 {
                    0.0
                } else {
                    -e / d
                }
            })
            .collect();
        SpectralField::new(x.shape(), values)
    }
}

/// Exact score `−X / S₀` of `N(0, S₀)` data at every `t`.
pub struct GaussianScore {
    inv_s0: Vec<f64>,
}

impl GaussianScore {
    pub fn new(diffusion: &Diffusion) -> Self {
        let inv_s0 = diffusion
            .s0()
            .values()
            .iter()
            .map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 })
            .collect();
        Self { inv_s0 }
    }
}

impl ScoreFunction for GaussianScore {
    fn score(&self, _t: f64, x: &SpectralField) -> Result<SpectralField> {
        if x.values().len() != self.inv_s0.len() {
            return Err(Error::LengthMismatch {
                expected: self.inv_s0.len(),
                found: x.values().len(),
            });
        }
        let values = x.values().iter().zip(&self.inv_s0).map(|(x, i)| -x * i).collect();
        SpectralField::new(x.shape(), values)
    }
}

/// Tweedie estimate `E[X₀ | X] = A⁻¹ (X + D² score)`, with `A` floored at
/// [`SIGNAL_FLOOR`].
pub fn tweedie_x0(diffusion: &Diffusion, t: f64, x: &SpectralField, score: &SpectralField) -> Result<SpectralField> {
    let ab = diffusion.tables().alpha_bar_at(t);
    let om = diffusion.tables().one_minus_alpha_bar_at(t);
    let s0 = diffusion.s0().values();
    let plane = ab.len();
    let values = x
        .values()
        .iter()
        .zip(score.values())
        .enumerate()
        .map(|(i, (x, sc))| {
            let m = i % plane;
            (x + s0[i] * om[m] * sc) / libm::sqrt(ab[m]).max(SIGNAL_FLOOR)
        })
        .collect();
    SpectralField::new(x.shape(), values)
}

/// Uniform decreasing time grid `t_start → t_end` in `steps` steps, followed
/// by an optional Tweedie step at `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
    pub final_denoise: bool,
}

impl ReverseGrid {
    pub fn new(t_start: f64, t_end: f64, steps: usize, final_denoise: bool) -> Result<Self> {
        if !(t_end > 0.0 && t_end <= t_start && t_start <= 1.0) {
            return Err(Error::invalid(
                "t_start",
                alloc::format!("need 0 < t_end <= t_start <= 1, got t_start = {t_start}, t_end = {t_end}"),
            ));
        }
        if steps == 0 && t_start != t_end {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        Ok(Self {
            t_start,
            t_end,
            steps,
            final_denoise,
        })
    }

    /// Grid matching the discrete timesteps `n_start/N, …, 1/N`, then Tweedie.
    pub fn from_timestep(n_start: usize, n_steps: usize) -> Result<Self> {
        if n_start == 0 || n_start > n_steps {
            return Err(Error::invalid("start_n", alloc::format!("{n_start} outside [1, {n_steps}]")));
        }
        let n = n_steps as f64;
        Self::new(n_start as f64 / n, 1.0 / n, n_start - 1, true)
    }

    pub fn step_size(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            (self.t_start - self.t_end) / self.steps as f64
        }
    }

    fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.t_end
        } else {
            self.t_start - j as f64 * self.step_size()
        }
    }
}

#[derive(Clone, Copy)]
enum Integrator {
    ReverseSde,
    ProbabilityFlow,
}

fn integrate<S, R>(
    diffusion: &Diffusion,
    start: &SpectralField,
    score: &S,
    grid: ReverseGrid,
    mut rng: Option<&mut R>,
    integrator: Integrator,
    corrector: Option<(usize, f64)>,
) -> Result<SpectralField>
where
    S: ScoreFunction + ?Sized,
    R: Rng + ?Sized,
{
    if start.shape() != diffusion.shape() {
        return Err(Error::ShapeMismatch {
            expected: diffusion.shape(),
            found: start.shape(),
        });
    }
    let h = grid.step_size();
    let mut x = start.clone();
    for j in 0..grid.steps {
        let step = j + 1;
        let t = grid.time(j);
        let coef = sde_coefficients(diffusion, t)?;
        let plane = coef.drift.len();
        let sc = score.score(t, &x).map_err(|e| non_finite_at(e, step))?;
        let values = x.values_mut();
        match integrator {
            Integrator::ReverseSde => {
                let rng = rng.as_deref_mut().expect("reverse SDE needs an rng");
                let sqrt_h = libm::sqrt(h);
                for (i, (xi, s)) in values.iter_mut().zip(sc.values()).enumerate() {
                    let f = coef.drift[i % plane];
                    let g = coef.diffusion[i];
                    let z: f64 = rng.sample(StandardNormal);
                    *xi += -h * (f * *xi - g * g * s) + g * sqrt_h * z;
                }
            }
            Integrator::ProbabilityFlow => {
                for (i, (xi, s)) in values.iter_mut().zip(sc.values()).enumerate() {
                    let f = coef.drift[i % plane];
                    let g = coef.diffusion[i];
                    *xi += -h * (f * *xi - 0.5 * g * g * s);
                }
            }
        }
        if x.check_finite().is_err() {
            return Err(Error::NonFiniteState { step });
        }
        if let Some((iters, eta)) = corrector {
            let rng = rng.as_deref_mut().expect("corrector needs an rng");
            langevin_correct(diffusion, &mut x, score, grid.time(step), iters, eta, rng)
                .map_err(|e| non_finite_at(e, step))?;
        }
    }
    if grid.final_denoise {
        let sc = score
            .score(grid.t_end, &x)
            .map_err(|e| non_finite_at(e, grid.steps + 1))?;
        x = tweedie_x0(diffusion, grid.t_end, &x, &sc).map_err(|e| non_finite_at(e, grid.steps + 1))?;
    }
    Ok(x)
}

/// `iters` Langevin updates `X ← X + η S₀ score + sqrt(2 η S₀) ε` at time
/// `t`, preconditioned by `S₀`.
pub fn langevin_correct<S, R>(
    diffusion: &Diffusion,
    x: &mut SpectralField,
    score: &S,
    t: f64,
    iters: usize,
    eta: f64,
    rng: &mut R,
) -> Result<()>
where
    S: ScoreFunction + ?Sized,
    R: Rng + ?Sized,
{
    let s0 = diffusion.s0().values();
    for _ in 0..iters {
        let sc = score.score(t, x)?;
        for ((xi, s), &b) in x.values_mut().iter_mut().zip(sc.values()).zip(s0) {
            let z: f64 = rng.sample(StandardNormal);
            *xi += eta * b * s + libm::sqrt(2.0 * eta * b) * z;
        }
        x.check_finite()?;
    }
    Ok(())
}

fn non_finite_at(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFiniteState { step },
        other => other,
    }
}

/// Euler–Maruyama on the reverse-time SDE
/// `dX = [f X − g² score] dt + g dW̄`.
pub fn em_reverse<S, R>(
    diffusion: &Diffusion,
    start: &SpectralField,
    score: &S,
    grid: ReverseGrid,
    rng: &mut R,
) -> Result<SpectralField>
where
    S: ScoreFunction + ?Sized,
    R: Rng + ?Sized,
{
    integrate(diffusion, start, score, grid, Some(rng), Integrator::ReverseSde, None)
}

/// Explicit Euler on the probability-flow ODE `dX = [f X − ½ g² score] dt`.
pub fn ode_reverse<S>(diffusion: &Diffusion, start: &SpectralField, score: &S, grid: ReverseGrid) -> Result<SpectralField>
where
    S: ScoreFunction + ?Sized,
{
    integrate::<S, rand_chacha::ChaCha8Rng>(diffusion, start, score, grid, None, Integrator::ProbabilityFlow, None)
}

/// Euler–Maruyama predictor followed by `corrector_iters` Langevin updates
/// `X ← X + η S₀ score + sqrt(2 η S₀) ε` after every step.
pub fn pc_reverse<S, R>(
    diffusion: &Diffusion,
    start: &SpectralField,
    score: &S,
    grid: ReverseGrid,
    corrector_iters: usize,
    step_scale: f64,
    rng: &mut R,
) -> Result<SpectralField>
where
    S: ScoreFunction + ?Sized,
    R: Rng + ?Sized,
{
    if !(step_scale > 0.0 && step_scale.is_finite()) {
        return Err(Error::invalid("corrector_step", "must be positive and finite"));
    }
    integrate(
        diffusion,
        start,
        score,
        grid,
        Some(rng),
        Integrator::ReverseSde,
        Some((corrector_iters, step_scale)),
    )
}
