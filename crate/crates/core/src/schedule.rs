//! λ(t) schedule families, per-mode DDPM coefficients, SNR and effective
//! resolution.

use alloc::vec::Vec;
use core::f64::consts::{LN_10, PI, SQRT_2};

use crate::spectral::FrequencyGrid;
use crate::{Error, Result};

/// Lower bound applied to `α_n` where the reverse update divides by `√α_n`.
pub const ALPHA_FLOOR: f64 = 1e-6;

/// Points used to verify that λ is strictly increasing at construction.
const MONOTONE_CHECK_POINTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleFamily {
    /// `λ(t) = t · 10^(λ_i + (λ_f − λ_i) t)`
    LogLinear,
    /// `λ(t) = θ t / (λ_i (1 − t) + λ_f t)²`
    Linear,
}

/// Schedule family with its parameters. `k_c` is the low-frequency cutoff
/// and `n_steps` the number `N` of discrete timesteps `t_n = n / N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    family: ScheduleFamily,
    lambda_i: f64,
    lambda_f: f64,
    theta: f64,
    k_c: f64,
    n_steps: usize,
}

impl ScheduleSpec {
    /// `theta` is ignored by the log-linear family.
    pub fn new(
        family: ScheduleFamily,
        lambda_i: f64,
        lambda_f: f64,
        theta: f64,
        k_c: f64,
        n_steps: usize,
    ) -> Result<Self> {
        if !lambda_i.is_finite() {
            return Err(Error::invalid("lambda_i", "must be finite"));
        }
        if !lambda_f.is_finite() {
            return Err(Error::invalid("lambda_f", "must be finite"));
        }
        if !(k_c >= 0.0 && k_c.is_finite()) {
            return Err(Error::invalid("k_c", "must be non-negative and finite"));
        }
        if n_steps == 0 {
            return Err(Error::invalid("N", "must be at least 1"));
        }
        if family == ScheduleFamily::Linear {
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(Error::invalid("theta", "must be positive and finite"));
            }
            if !(lambda_i > 0.0 && lambda_f > 0.0) {
                return Err(Error::invalid(
                    "lambda_i",
                    "linear schedule needs lambda_i > 0 and lambda_f > 0 (denominator must stay positive)",
                ));
            }
        }
        let spec = Self {
            family,
            lambda_i,
            lambda_f,
            theta,
            k_c,
            n_steps,
        };
        let mut prev = 0.0;
        for j in 1..=MONOTONE_CHECK_POINTS {
            let t = j as f64 / MONOTONE_CHECK_POINTS as f64;
            let l = spec.lambda(t);
            if !l.is_finite() {
                return Err(Error::invalid("lambda_f", alloc::format!("lambda({t}) is not finite")));
            }
            if !(l > prev) {
                return Err(Error::invalid(
                    "lambda_f",
                    alloc::format!("lambda(t) is not strictly increasing near t = {t}"),
                ));
            }
            prev = l;
        }
        Ok(spec)
    }

    pub fn log_linear(lambda_i: f64, lambda_f: f64, k_c: f64, n_steps: usize) -> Result<Self> {
        Self::new(ScheduleFamily::LogLinear, lambda_i, lambda_f, 0.0, k_c, n_steps)
    }

    pub fn linear(theta: f64, lambda_i: f64, lambda_f: f64, k_c: f64, n_steps: usize) -> Result<Self> {
        Self::new(ScheduleFamily::Linear, lambda_i, lambda_f, theta, k_c, n_steps)
    }

    pub fn family(&self) -> ScheduleFamily {
        self.family
    }

    pub fn lambda_i(&self) -> f64 {
        self.lambda_i
    }

    pub fn lambda_f(&self) -> f64 {
        self.lambda_f
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn k_c(&self) -> f64 {
        self.k_c
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t_n(&self, n: usize) -> f64 {
        n as f64 / self.n_steps as f64
    }

    /// λ(t) without range checks.
    pub fn lambda(&self, t: f64) -> f64 {
        match self.family {
            ScheduleFamily::LogLinear => {
                t * libm::pow(10.0, self.lambda_i + (self.lambda_f - self.lambda_i) * t)
            }
            ScheduleFamily::Linear => {
                let d = self.lambda_i * (1.0 - t) + self.lambda_f * t;
                self.theta * t / (d * d)
            }
        }
    }

    /// dλ/dt in closed form.
    pub fn lambda_dot(&self, t: f64) -> f64 {
        let (li, lf) = (self.lambda_i, self.lambda_f);
        match self.family {
            ScheduleFamily::LogLinear => {
                libm::pow(10.0, li + (lf - li) * t) * (1.0 + t * LN_10 * (lf - li))
            }
            ScheduleFamily::Linear => {
                let d = li * (1.0 - t) + lf * t;
                self.theta * (li * (1.0 + t) - lf * t) / (d * d * d)
            }
        }
    }

    /// λ(t) for `t ∈ [0, 1]`.
    pub fn lambda_of_t(&self, t: f64) -> Result<f64> {
        check_t(t)?;
        Ok(self.lambda(t))
    }

    /// Continuous effective resolution
    /// `sqrt(ln(1 + 1/τ) / λ(t)) / (√2 π)`; `+∞` when λ(t) = 0.
    pub fn effective_resolution(&self, t: f64, tau: f64) -> Result<f64> {
        check_t(t)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid("tau", "must be positive and finite"));
        }
        let lambda = self.lambda(t);
        if lambda == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(libm::sqrt(libm::log1p(1.0 / tau) / lambda) / (SQRT_2 * PI))
    }

    /// Smallest `n` with `R_eff(t_n) ≤ target`.
    pub fn choose_start_timestep(&self, target_resolution: f64, tau: f64) -> Result<usize> {
        let min = self.effective_resolution(1.0, tau)?;
        let max = self.effective_resolution(self.t_n(1), tau)?;
        if !(target_resolution >= min && target_resolution <= max) {
            return Err(Error::Unachievable {
                target: target_resolution,
                min,
                max,
            });
        }
        for n in 1..=self.n_steps {
            if self.effective_resolution(self.t_n(n), tau)? <= target_resolution {
                return Ok(n);
            }
        }
        Ok(self.n_steps)
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid("t", alloc::format!("{t} is outside [0, 1]")));
    }
    Ok(())
}

/// Per-mode coefficients of one reverse step `n`, indexed like a grid plane.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCoefficients {
    pub n: usize,
    pub alpha_bar: Vec<f64>,
    pub one_minus_alpha_bar: Vec<f64>,
    pub alpha_bar_prev: Vec<f64>,
    pub one_minus_alpha_bar_prev: Vec<f64>,
    /// Exact `ᾱ_n / ᾱ_{n−1}`; floor with [`ALPHA_FLOOR`] where dividing.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta_tilde: Vec<f64>,
}

/// Coefficients `ᾱ_n(k)`, `α_n(k)`, `β_n(k)`, `β̃_n(k)` of a schedule on a
/// frequency grid. Rows are computed on demand from the stored `λ_n` and
/// `k_eff²`, which keeps memory at `O(N + modes)`.
#[derive(Debug, Clone)]
pub struct CoefficientTables {
    spec: ScheduleSpec,
    grid: FrequencyGrid,
    lambdas: Vec<f64>,
    k_eff_sq: Vec<f64>,
}

impl CoefficientTables {
    /// The grid's own cutoff is replaced by the schedule's `k_c`.
    pub fn new(spec: ScheduleSpec, grid: &FrequencyGrid) -> Result<Self> {
        let grid = grid.with_cutoff(spec.k_c)?;
        let lambdas = (0..=spec.n_steps).map(|n| spec.lambda(spec.t_n(n))).collect();
        let k_eff_sq = grid.k_eff().iter().map(|k| k * k).collect();
        Ok(Self {
            spec,
            grid,
            lambdas,
            k_eff_sq,
        })
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn n_steps(&self) -> usize {
        self.spec.n_steps
    }

    pub fn modes(&self) -> usize {
        self.k_eff_sq.len()
    }

    /// `λ_n = λ(n / N)`, with `λ_0 = 0`.
    pub fn lambda(&self, n: usize) -> f64 {
        self.lambdas[n]
    }

    pub fn k_eff_sq(&self) -> &[f64] {
        &self.k_eff_sq
    }

    /// `ᾱ(t) = exp(−k_eff² λ(t))` per mode.
    pub fn alpha_bar_at(&self, t: f64) -> Vec<f64> {
        let lambda = self.spec.lambda(t);
        self.k_eff_sq.iter().map(|k2| libm::exp(-k2 * lambda)).collect()
    }

    /// `1 − ᾱ(t)` per mode, accurate when ᾱ is close to 1.
    pub fn one_minus_alpha_bar_at(&self, t: f64) -> Vec<f64> {
        let lambda = self.spec.lambda(t);
        self.k_eff_sq.iter().map(|k2| -libm::expm1(-k2 * lambda)).collect()
    }

    pub fn alpha_bar(&self, n: usize) -> Vec<f64> {
        let lambda = self.lambdas[n];
        self.k_eff_sq.iter().map(|k2| libm::exp(-k2 * lambda)).collect()
    }

    /// Coefficients of step `n ∈ [1, N]`.
    pub fn step(&self, n: usize) -> StepCoefficients {
        assert!(n >= 1 && n <= self.spec.n_steps, "step {n} outside [1, N]");
        let (lp, l) = (self.lambdas[n - 1], self.lambdas[n]);
        let dl = l - lp;
        let m = self.k_eff_sq.len();
        let mut row = StepCoefficients {
            n,
            alpha_bar: Vec::with_capacity(m),
            one_minus_alpha_bar: Vec::with_capacity(m),
            alpha_bar_prev: Vec::with_capacity(m),
            one_minus_alpha_bar_prev: Vec::with_capacity(m),
            alpha: Vec::with_capacity(m),
            beta: Vec::with_capacity(m),
            beta_tilde: Vec::with_capacity(m),
        };
        for &k2 in &self.k_eff_sq {
            let one_minus = -libm::expm1(-k2 * l);
            let one_minus_prev = -libm::expm1(-k2 * lp);
            let beta = -libm::expm1(-k2 * dl);
            row.alpha_bar.push(libm::exp(-k2 * l));
            row.alpha_bar_prev.push(libm::exp(-k2 * lp));
            row.one_minus_alpha_bar.push(one_minus);
            row.one_minus_alpha_bar_prev.push(one_minus_prev);
            row.alpha.push(libm::exp(-k2 * dl));
            row.beta.push(beta);
            row.beta_tilde.push(if one_minus > 0.0 {
                beta * one_minus_prev / one_minus
            } else {
                0.0
            });
        }
        row
    }

    /// `ᾱ_n / (1 − ᾱ_n)` per mode, `+∞` where `ᾱ_n = 1`.
    pub fn snr(&self, n: usize) -> Vec<f64> {
        let lambda = self.lambdas[n];
        self.k_eff_sq
            .iter()
            .map(|k2| {
                let one_minus = -libm::expm1(-k2 * lambda);
                if one_minus == 0.0 {
                    f64::INFINITY
                } else {
                    libm::exp(-k2 * lambda) / one_minus
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imnet128_4x() -> ScheduleSpec {
        ScheduleSpec::linear(9.0, 564.2461, 275.4361, 0.0, 1000).unwrap()
    }

    #[test]
    fn lambda_endpoints() {
        let ll = ScheduleSpec::log_linear(-3.75, -2.0, 31.2, 1000).unwrap();
        assert_eq!(ll.lambda(0.0), 0.0);
        assert!((ll.lambda(1.0) - 0.01).abs() < 1e-17);
        let lin = ScheduleSpec::linear(5.0, 137.7294, 1.57, 3.0, 1000).unwrap();
        assert_eq!(lin.lambda(0.0), 0.0);
        assert!((lin.lambda(1.0) - 5.0 / (1.57 * 1.57)).abs() < 1e-14);
        assert!((lin.lambda(1.0) - 2.0285).abs() < 1e-4);
        assert!(lin.lambda_of_t(1.5).is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ScheduleSpec::linear(5.0, 0.0, 1.0, 0.0, 10).is_err());
        assert!(ScheduleSpec::linear(5.0, 1.0, 3.0, 0.0, 10).is_err());
        assert!(ScheduleSpec::log_linear(0.0, -1.0, 0.0, 10).is_err());
        assert!(ScheduleSpec::log_linear(0.0, 1.0, -1.0, 10).is_err());
        let err = ScheduleSpec::log_linear(0.0, 1.0, 0.0, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "N", .. }));
    }

    #[test]
    fn lambda_dot_matches_finite_differences() {
        let specs = [
            ScheduleSpec::log_linear(-3.75, -2.0, 0.0, 1000).unwrap(),
            ScheduleSpec::linear(5.0, 137.7294, 1.57, 0.0, 1000).unwrap(),
            imnet128_4x(),
        ];
        for spec in specs {
            for j in 1..100 {
                let t = j as f64 / 100.0;
                let h = 1e-5;
                let fd = (spec.lambda(t + h) - spec.lambda(t - h)) / (2.0 * h);
                let exact = spec.lambda_dot(t);
                assert!(((fd - exact) / exact).abs() < 1e-6, "{t}: {fd} vs {exact}");
            }
        }
        let lin = ScheduleSpec::linear(5.0, 137.7294, 1.57, 0.0, 1000).unwrap();
        assert!((lin.lambda_dot(0.0) - 5.0 / (137.7294f64 * 137.7294)).abs() < 1e-18);
    }

    #[test]
    fn effective_resolution_endpoints() {
        let r = imnet128_4x().effective_resolution(1.0, 0.1).unwrap();
        let expected = 275.4361 * libm::sqrt(libm::log(11.0) / 9.0) / (SQRT_2 * PI);
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 32.0).abs() < 1e-3);
        let r8 = ScheduleSpec::linear(5.0, 564.2461, 102.6489, 0.0, 1000)
            .unwrap()
            .effective_resolution(1.0, 0.1)
            .unwrap();
        assert!((r8 - 16.0).abs() < 1e-3);
        let cifar = ScheduleSpec::linear(5.0, 137.7294, 1.57, 3.0, 1000).unwrap();
        let rc = cifar.effective_resolution(1.0, 0.1).unwrap();
        assert!((rc - 0.2447).abs() < 1e-3 && rc < 1.0);
        assert_eq!(cifar.effective_resolution(0.0, 0.1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn effective_resolution_nonincreasing() {
        for spec in [imnet128_4x(), ScheduleSpec::log_linear(-3.75, -2.0, 31.2, 1000).unwrap()] {
            let mut prev = f64::INFINITY;
            for n in 1..=1000 {
                let r = spec.effective_resolution(spec.t_n(n), 0.1).unwrap();
                assert!(r <= prev);
                prev = r;
            }
        }
    }

    #[test]
    fn start_timestep() {
        let spec = imnet128_4x();
        let r1 = spec.effective_resolution(1.0, 0.1).unwrap();
        assert_eq!(spec.choose_start_timestep(r1, 0.1).unwrap(), 1000);
        assert_eq!(spec.choose_start_timestep(32.0, 0.1).unwrap(), 1000);
        let rmax = spec.effective_resolution(spec.t_n(1), 0.1).unwrap();
        assert!(matches!(
            spec.choose_start_timestep(rmax * 1.01, 0.1),
            Err(Error::Unachievable { .. })
        ));
        assert!(spec.choose_start_timestep(r1 * 0.99, 0.1).is_err());
        let mut prev = usize::MAX;
        for j in 0..200 {
            let target = r1 + (rmax - r1) * j as f64 / 199.0;
            let n = spec.choose_start_timestep(target, 0.1).unwrap();
            assert!(n <= prev);
            assert!(spec.effective_resolution(spec.t_n(n), 0.1).unwrap() <= target);
            if n > 1 {
                assert!(spec.effective_resolution(spec.t_n(n - 1), 0.1).unwrap() > target);
            }
            prev = n;
        }
    }

    #[test]
    fn geometric_single_mode() {
        // λ(t) = 10^0 t for λ_i = λ_f = 0 gives λ_n = n / N.
        let spec = ScheduleSpec::log_linear(0.0, 0.0, 2.0, 50).unwrap();
        let grid = FrequencyGrid::new(1, 1, 0.0).unwrap();
        let tables = CoefficientTables::new(spec, &grid).unwrap();
        assert_eq!(tables.k_eff_sq(), &[4.0]);
        let c = 4.0 / 50.0;
        for n in 1..=50 {
            let row = tables.step(n);
            assert!((row.alpha_bar[0] - libm::exp(-c * n as f64)).abs() < 1e-14);
            assert!((row.alpha[0] - libm::exp(-c)).abs() < 1e-14);
        }
    }

    #[test]
    fn table_invariants() {
        let grid = FrequencyGrid::new(16, 16, 0.0).unwrap();
        let spec = ScheduleSpec::linear(5.0, 137.7294, 1.57, 3.0, 1000).unwrap();
        let tables = CoefficientTables::new(spec, &grid).unwrap();
        let mut product = alloc::vec![1.0; tables.modes()];
        let mut prev = alloc::vec![1.0; tables.modes()];
        for n in 1..=1000 {
            let row = tables.step(n);
            for m in 0..tables.modes() {
                product[m] *= row.alpha[m];
                assert!((product[m] - row.alpha_bar[m]).abs() < 1e-12);
                assert!(row.alpha_bar[m] <= prev[m] && row.alpha_bar[m] >= 0.0);
                if n == 1 {
                    assert_eq!(row.beta_tilde[m], 0.0);
                }
            }
            prev = row.alpha_bar;
        }
        let ab = tables.alpha_bar(500);
        for i in 0..tables.modes() {
            for j in 0..tables.modes() {
                if grid.k_mag()[i] < grid.k_mag()[j] {
                    assert!(ab[i] >= ab[j]);
                }
            }
        }
    }

    #[test]
    fn cutoff_only_changes_low_modes() {
        let grid = FrequencyGrid::new(8, 8, 0.0).unwrap();
        let a = CoefficientTables::new(ScheduleSpec::log_linear(-3.0, -1.0, 0.0, 100).unwrap(), &grid).unwrap();
        let b = CoefficientTables::new(ScheduleSpec::log_linear(-3.0, -1.0, 5.0, 100).unwrap(), &grid).unwrap();
        assert_eq!(b.k_eff_sq()[0], 25.0);
        for n in [1, 50, 100] {
            let (ra, rb) = (a.step(n), b.step(n));
            for m in 0..a.modes() {
                if grid.k_mag()[m] >= 5.0 {
                    assert_eq!(ra.alpha_bar[m], rb.alpha_bar[m]);
                    assert_eq!(ra.beta_tilde[m], rb.beta_tilde[m]);
                }
            }
        }
    }

    #[test]
    fn snr_values() {
        let grid = FrequencyGrid::new(1, 1, 0.0).unwrap();
        // k = 0 everywhere: ᾱ = 1.
        let tables = CoefficientTables::new(ScheduleSpec::log_linear(0.0, 0.0, 0.0, 4).unwrap(), &grid).unwrap();
        assert_eq!(tables.snr(2)[0], f64::INFINITY);

        // Pick k_c so that ᾱ_N = 1/2, then 1/11.
        for (ab, want) in [(0.5f64, 1.0), (1.0 / 11.0, 0.1)] {
            let k_c = libm::sqrt(-libm::log(ab));
            let t = CoefficientTables::new(ScheduleSpec::log_linear(0.0, 0.0, k_c, 4).unwrap(), &grid).unwrap();
            assert!((t.snr(4)[0] - want).abs() < 1e-12);
        }
        let t = CoefficientTables::new(ScheduleSpec::log_linear(0.0, 0.0, 40.0, 4).unwrap(), &grid).unwrap();
        assert!(t.snr(4)[0] < 1e-300);
    }
}
