//! Critical 2-D Ising model: Wolff cluster Monte Carlo, exhaustive
//! enumeration for tiny lattices, and forward initialization of the
//! diffusion from a spin configuration.
//!
//! Energy convention: `E = −Σ s_i s_j` over the `2L²` right and down bonds of
//! the periodic lattice.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ddpm::{Diffusion, DiffusionState};
use crate::observables::{corner_moments, CornerMoments};
use crate::schedule::ScheduleSpec;
use crate::seed::chain_rng;
use crate::spectral::DctPlan;
use crate::spectrum::PowerLaw;
use crate::{Error, PixelField, Result, Shape};

/// `β_c = ½ ln(1 + √2)`.
pub const BETA_C: f64 = 0.440_686_793_509_771_5;

/// Power-law fit of the critical Ising variance spectrum.
pub const ISING_POWER_LAW: PowerLaw = PowerLaw {
    c: 0.26641,
    k0_sq: 3.0,
    a: 0.811056,
};

/// Largest side accepted by [`exact_enumeration`].
pub const MAX_ENUMERATION_SIDE: usize = 4;

/// Wolff bond probability `1 − exp(−2β)`.
pub fn bond_probability(beta: f64) -> f64 {
    -libm::expm1(-2.0 * beta)
}

/// Super-resolution schedule for an `L×L` lattice: linear family with
/// `θ = 9`, `λ_i = √2π(L−1)`, `λ_f = 275.4361·L/128`, `k_c = 0`, `N = 1000`,
/// which leaves `R_eff(1) ≈ L/4` at `τ = 0.1`.
pub fn ising_schedule(side: usize) -> Result<ScheduleSpec> {
    if side < 2 {
        return Err(Error::invalid("L", "must be at least 2"));
    }
    let l = side as f64;
    ScheduleSpec::linear(9.0, SQRT_2 * PI * (l - 1.0), 275.4361 * l / 128.0, 0.0, 1000)
}

/// Periodic `L×L` configuration of ±1 spins, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinLattice {
    side: usize,
    spins: Vec<i8>,
}

impl SpinLattice {
    pub fn new(side: usize, spins: Vec<i8>) -> Result<Self> {
        if side == 0 {
            return Err(Error::invalid("L", "must be at least 1"));
        }
        if spins.len() != side * side {
            return Err(Error::LengthMismatch {
                expected: side * side,
                found: spins.len(),
            });
        }
        if let Some(i) = spins.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("spins", alloc::format!("element {i} is not ±1")));
        }
        Ok(Self { side, spins })
    }

    pub fn all_up(side: usize) -> Result<Self> {
        Self::new(side, vec![1; side * side])
    }

    /// Independent uniform ±1 spins.
    pub fn random<R: Rng + ?Sized>(side: usize, rng: &mut R) -> Result<Self> {
        let spins = (0..side * side).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        Self::new(side, spins)
    }

    /// Sign projection of a single-channel square field: `x ≥ 0 → +1`.
    pub fn from_field_sign(field: &PixelField) -> Result<Self> {
        let shape = field.shape();
        if shape.channels != 1 || shape.height != shape.width {
            return Err(Error::invalid(
                "field",
                alloc::format!("expected a single-channel square field, got {shape}"),
            ));
        }
        let spins = field.values().iter().map(|&x| if x >= 0.0 { 1 } else { -1 }).collect();
        Self::new(shape.height, spins)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.spins[i * self.side + j]
    }

    pub fn flipped(&self) -> Self {
        Self {
            side: self.side,
            spins: self.spins.iter().map(|s| -s).collect(),
        }
    }

    /// Sum of `s_i s_j` over the right and down bonds.
    pub fn bond_sum(&self) -> i64 {
        let l = self.side;
        let mut sum = 0i64;
        for i in 0..l {
            for j in 0..l {
                let s = self.spins[i * l + j] as i64;
                sum += s * self.spins[i * l + (j + 1) % l] as i64;
                sum += s * self.spins[((i + 1) % l) * l + j] as i64;
            }
        }
        sum
    }

    pub fn energy(&self) -> f64 {
        -(self.bond_sum() as f64)
    }

    /// Mean spin.
    pub fn magnetization(&self) -> f64 {
        self.spins.iter().map(|&s| s as i64).sum::<i64>() as f64 / self.spins.len() as f64
    }

    pub fn to_pixel_field(&self) -> PixelField {
        let shape = Shape {
            channels: 1,
            height: self.side,
            width: self.side,
        };
        PixelField::from_parts_unchecked(shape, self.spins.iter().map(|&s| s as f64).collect())
    }
}

/// Single Wolff Markov chain with its own generator.
#[derive(Debug, Clone)]
pub struct WolffChain {
    lattice: SpinLattice,
    beta: f64,
    p: f64,
    rng: ChaCha8Rng,
    flipped_since_save: usize,
    queue: Vec<usize>,
    visited: Vec<u32>,
    stamp: u32,
}

impl WolffChain {
    /// `beta` may be `+∞` (every same-spin bond activates).
    pub fn new(lattice: SpinLattice, beta: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::invalid("beta", "must be non-negative"));
        }
        let n = lattice.spins.len();
        Ok(Self {
            lattice,
            beta,
            p: bond_probability(beta),
            rng,
            flipped_since_save: 0,
            queue: Vec::with_capacity(n),
            visited: vec![0; n],
            stamp: 0,
        })
    }

    pub fn lattice(&self) -> &SpinLattice {
        &self.lattice
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn bond_probability(&self) -> f64 {
        self.p
    }

    pub fn flipped_since_save(&self) -> usize {
        self.flipped_since_save
    }

    pub fn reset_counter(&mut self) {
        self.flipped_since_save = 0;
    }

    /// Grows one cluster breadth-first from a uniform seed site, testing each
    /// bond from the frontier to an unvisited same-spin neighbour once (order:
    /// up, down, left, right), flips it and returns its size.
    pub fn step(&mut self) -> usize {
        let l = self.lattice.side;
        let n = l * l;
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.visited.iter_mut().for_each(|v| *v = 0);
            self.stamp = 1;
        }
        let stamp = self.stamp;
        let spins = &mut self.lattice.spins;
        let seed = self.rng.random_range(0..n);
        let s_star = spins[seed];
        self.queue.clear();
        self.queue.push(seed);
        self.visited[seed] = stamp;
        let mut head = 0;
        while head < self.queue.len() {
            let site = self.queue[head];
            head += 1;
            let (i, j) = (site / l, site % l);
            let neighbours = [
                ((i + l - 1) % l) * l + j,
                ((i + 1) % l) * l + j,
                i * l + (j + l - 1) % l,
                i * l + (j + 1) % l,
            ];
            for nb in neighbours {
                if self.visited[nb] != stamp && spins[nb] == s_star && self.rng.random::<f64>() < self.p {
                    self.visited[nb] = stamp;
                    self.queue.push(nb);
                }
            }
        }
        for &site in &self.queue {
            spins[site] = -spins[site];
        }
        self.flipped_since_save += self.queue.len();
        self.queue.len()
    }
}

/// Parameters of the dataset protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetProtocol {
    pub side: usize,
    pub chains: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub beta: f64,
}

impl DatasetProtocol {
    pub fn new(side: usize, chains: usize, burn_in: usize, samples: usize) -> Self {
        Self {
            side,
            chains,
            burn_in,
            samples,
            beta: BETA_C,
        }
    }

    /// Flipped spins every chain must accumulate between saves: `2L²`.
    pub fn save_spacing(&self) -> usize {
        2 * self.side * self.side
    }

    fn validate(&self) -> Result<()> {
        if self.side < 2 {
            return Err(Error::invalid("L", "must be at least 2"));
        }
        if self.chains == 0 {
            return Err(Error::invalid("chains", "must be at least 1"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::invalid("beta", "must be non-negative"));
        }
        Ok(())
    }
}

/// Chains advanced in lockstep rounds (one Wolff step per chain per round).
/// Chain `c` starts from i.i.d. spins drawn from its own stream
/// `chain_rng(seed, c)`.
#[derive(Debug, Clone)]
pub struct WolffEnsemble {
    protocol: DatasetProtocol,
    chains: Vec<WolffChain>,
}

impl WolffEnsemble {
    pub fn new(protocol: DatasetProtocol, seed: u64) -> Result<Self> {
        protocol.validate()?;
        let chains = (0..protocol.chains)
            .map(|c| {
                let mut rng = chain_rng(seed, c as u64);
                let lattice = SpinLattice::random(protocol.side, &mut rng)?;
                WolffChain::new(lattice, protocol.beta, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { protocol, chains })
    }

    pub fn protocol(&self) -> &DatasetProtocol {
        &self.protocol
    }

    pub fn chains(&self) -> &[WolffChain] {
        &self.chains
    }

    /// Chains are independent, so callers may advance them concurrently.
    pub fn chains_mut(&mut self) -> &mut [WolffChain] {
        &mut self.chains
    }

    /// True once every chain has flipped at least `2L²` spins since the last
    /// save.
    pub fn save_due(&self) -> bool {
        let spacing = self.protocol.save_spacing();
        self.chains.iter().all(|c| c.flipped_since_save >= spacing)
    }

    pub fn reset_counters(&mut self) {
        self.chains.iter_mut().for_each(WolffChain::reset_counter);
    }
}

/// Runs the protocol serially: `burn_in` steps per chain, then lockstep
/// rounds; whenever a save is due every chain's configuration is emitted in
/// chain order and the counters reset. Stops after `samples` emissions.
pub fn generate_dataset<F>(protocol: DatasetProtocol, seed: u64, mut emit: F) -> Result<()>
where
    F: FnMut(usize, &SpinLattice) -> Result<()>,
{
    let mut ensemble = WolffEnsemble::new(protocol, seed)?;
    for chain in ensemble.chains_mut() {
        for _ in 0..protocol.burn_in {
            chain.step();
        }
        chain.reset_counter();
    }
    let mut emitted = 0;
    while emitted < protocol.samples {
        for chain in ensemble.chains_mut() {
            chain.step();
        }
        if ensemble.save_due() {
            for (c, chain) in ensemble.chains().iter().enumerate() {
                if emitted == protocol.samples {
                    break;
                }
                emit(c, chain.lattice())?;
                emitted += 1;
            }
            ensemble.reset_counters();
        }
    }
    Ok(())
}

/// Boltzmann expectations over all `2^(L²)` configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactExpectations {
    pub side: usize,
    pub beta: f64,
    /// `ln Z`, with `Z = Σ exp(β Σ s_i s_j)`; `+∞` for `β = ∞`.
    pub log_partition: f64,
    pub energy: f64,
    pub abs_magnetization: f64,
    /// Corner moments per requested patch side.
    pub corners: Vec<(usize, CornerMoments)>,
}

pub fn exact_enumeration(side: usize, beta: f64, sides: &[usize]) -> Result<ExactExpectations> {
    if side > MAX_ENUMERATION_SIDE {
        return Err(Error::LatticeTooLarge {
            side,
            max: MAX_ENUMERATION_SIDE,
        });
    }
    if side == 0 {
        return Err(Error::invalid("L", "must be at least 1"));
    }
    if !(beta >= 0.0) {
        return Err(Error::invalid("beta", "must be non-negative"));
    }
    if let Some(&d) = sides.iter().find(|&&d| d >= side) {
        return Err(Error::SideTooLarge { side: d, lattice: side });
    }
    let n = side * side;
    let max_bonds = (2 * n) as i64;
    let mut z = 0.0;
    let mut energy = 0.0;
    let mut abs_m = 0.0;
    let mut corners = vec![CornerMoments::default(); sides.len()];
    let mut spins = vec![0i8; n];
    for config in 0u32..(1u32 << n) {
        for (k, s) in spins.iter_mut().enumerate() {
            *s = if config >> k & 1 == 1 { 1 } else { -1 };
        }
        let lattice = SpinLattice {
            side,
            spins: core::mem::take(&mut spins),
        };
        let bonds = lattice.bond_sum();
        // Weights relative to the ground state keep the sum finite for large β.
        let w = if beta.is_infinite() {
            if bonds == max_bonds {
                1.0
            } else {
                0.0
            }
        } else {
            libm::exp(beta * (bonds - max_bonds) as f64)
        };
        if w > 0.0 {
            z += w;
            energy += w * -(bonds as f64);
            abs_m += w * libm::fabs(lattice.magnetization());
            for (acc, &d) in corners.iter_mut().zip(sides) {
                let m = corner_moments(lattice.spins(), side, d)?;
                acc.g4 += w * m.g4;
                acc.ca += w * m.ca;
                acc.cb += w * m.cb;
            }
        }
        spins = lattice.spins;
    }
    for acc in &mut corners {
        acc.g4 /= z;
        acc.ca /= z;
        acc.cb /= z;
    }
    let log_partition = if beta.is_infinite() {
        f64::INFINITY
    } else {
        libm::log(z) + beta * max_bonds as f64
    };
    Ok(ExactExpectations {
        side,
        beta,
        log_partition,
        energy: energy / z,
        abs_magnetization: abs_m / z,
        corners: sides.iter().copied().zip(corners).collect(),
    })
}

/// DCT of the ±1 field followed by an exact forward draw at `n0`.
pub fn ising_forward_init<R: Rng + ?Sized>(
    lattice: &SpinLattice,
    n0: usize,
    diffusion: &Diffusion,
    rng: &mut R,
) -> Result<DiffusionState> {
    let plan = DctPlan::new(lattice.side, lattice.side)?;
    let x0 = plan.forward(&lattice.to_pixel_field())?;
    diffusion.forward_marginal(&x0, n0, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn critical_bond_probability() {
        assert!((BETA_C - 0.5 * libm::log(1.0 + SQRT_2)).abs() < 1e-16);
        assert!((bond_probability(BETA_C) - (2.0 - SQRT_2)).abs() < 1e-12);
        assert_eq!(bond_probability(f64::INFINITY), 1.0);
        assert_eq!(bond_probability(0.0), 0.0);
    }

    #[test]
    fn zero_probability_flips_one_spin() {
        let lattice = SpinLattice::all_up(8).unwrap();
        let mut chain = WolffChain::new(lattice, 0.0, ChaCha8Rng::seed_from_u64(1)).unwrap();
        for _ in 0..20 {
            assert_eq!(chain.step(), 1);
        }
        assert_eq!(chain.flipped_since_save(), 20);
    }

    #[test]
    fn infinite_beta_flips_whole_domain() {
        // Left half up, right half down on a 6×6 torus: two domains of 18.
        let spins = (0..36).map(|k| if k % 6 < 3 { 1 } else { -1 }).collect();
        let lattice = SpinLattice::new(6, spins).unwrap();
        let mut chain = WolffChain::new(lattice.clone(), f64::INFINITY, ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(chain.step(), 18);
        let flipped = chain.lattice();
        assert!(flipped.spins().iter().all(|&s| s == 1) || flipped.spins().iter().all(|&s| s == -1));
    }

    #[test]
    fn global_flip_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lattice = SpinLattice::random(10, &mut rng).unwrap();
        let mut a = WolffChain::new(lattice.clone(), BETA_C, ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut b = WolffChain::new(lattice.flipped(), BETA_C, ChaCha8Rng::seed_from_u64(4)).unwrap();
        for _ in 0..200 {
            let (sa, sb) = (a.step(), b.step());
            assert_eq!(sa, sb);
            assert!((1..=100).contains(&sa));
            assert_eq!(a.lattice().flipped(), *b.lattice());
        }
    }

    #[test]
    fn two_by_two_partition_function() {
        for beta in [0.0, 0.1, BETA_C, 1.3] {
            let exact = exact_enumeration(2, beta, &[1]).unwrap();
            let (up, down) = (libm::exp(8.0 * beta), libm::exp(-8.0 * beta));
            let z = 2.0 * up + 12.0 + 2.0 * down;
            assert!((exact.log_partition - libm::log(z)).abs() < 1e-12);
            let mean_bonds = (16.0 * up - 16.0 * down) / z;
            assert!((exact.energy + mean_bonds).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_limits() {
        let free = exact_enumeration(3, 0.0, &[1, 2]).unwrap();
        for (_, m) in &free.corners {
            assert!(m.g4.abs() < 1e-12 && m.ca.abs() < 1e-12 && m.cb.abs() < 1e-12);
            assert!(m.kappa4().abs() < 1e-12);
        }
        let frozen = exact_enumeration(3, f64::INFINITY, &[1, 2]).unwrap();
        assert_eq!(frozen.energy, -18.0);
        assert_eq!(frozen.abs_magnetization, 1.0);
        for (_, m) in &frozen.corners {
            assert_eq!((m.g4, m.ca, m.cb, m.kappa4()), (1.0, 1.0, 1.0, -2.0));
        }
        assert!(matches!(exact_enumeration(5, 0.3, &[1]), Err(Error::LatticeTooLarge { .. })));
        assert!(matches!(exact_enumeration(4, 0.3, &[4]), Err(Error::SideTooLarge { .. })));
    }

    #[test]
    fn dataset_is_seed_deterministic() {
        let protocol = DatasetProtocol::new(8, 3, 50, 10);
        let collect = |seed| {
            let mut out = Vec::new();
            generate_dataset(protocol, seed, |c, l| {
                out.push((c, l.clone()));
                Ok(())
            })
            .unwrap();
            out
        };
        let a = collect(17);
        assert_eq!(a.len(), 10);
        assert_eq!(a.iter().map(|x| x.0).collect::<Vec<_>>(), [0, 1, 2, 0, 1, 2, 0, 1, 2, 0]);
        assert_eq!(a, collect(17));
        assert_ne!(a, collect(18));
    }

    #[test]
    fn ising_schedule_endpoint() {
        for side in [64usize, 128] {
            let spec = ising_schedule(side).unwrap();
            let r = spec.effective_resolution(1.0, 0.1).unwrap();
            assert!((r - side as f64 / 4.0).abs() < 1e-3);
        }
    }
}
