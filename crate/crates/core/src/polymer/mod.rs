//! The extended ring-polymer configuration space.
//!
//! A configuration is `N` bead positions and momenta plus a surface index per
//! bead. The bond energy between bead `k` and its successor depends on whether
//! the two surface indices agree; see [`bond_element`].
//!
//! Everything the samplers need at fixed positions is precomputed once per
//! configuration in [`BondFactors`]. The log-trigonometric terms are kept in
//! log space because `β_N V01` is small for realistic bead numbers.

mod levels;
mod sequence;

pub use levels::{
    level_sum, level_sums, sub_integrand_a, sub_integrand_b, LevelEvaluator, LevelSum, LevelTables,
};
pub use sequence::{
    binomial, enumerate_kink_sequences, kink_count, level_size, Combinations, KinkSequences,
    SurfaceIndexSequence,
};

use crate::error::{Error, Result};
use crate::model::{Diabatic, Observable, ObservableValues, PotentialModel};

/// `ln cosh x`, accurate for small and large `x`.
#[inline]
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `ln sinh x` for `x > 0`, accurate for small and large `x`.
#[inline]
pub fn log_sinh(x: f64) -> f64 {
    x + (-(-2.0 * x).exp_m1()).ln() - std::f64::consts::LN_2
}

/// Bead positions, momenta and surface indices, with `β_N = β/N`.
///
/// Positions and momenta are stored bead-major: bead `k` occupies
/// `[k·d, (k+1)·d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RingPolymerState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub ell: SurfaceIndexSequence,
    pub beta_n: f64,
    pub dim: usize,
}

impl RingPolymerState {
    pub fn new(
        q: Vec<f64>,
        p: Vec<f64>,
        ell: SurfaceIndexSequence,
        beta: f64,
        dim: usize,
    ) -> Result<Self> {
        let n = ell.len();
        if dim == 0 || q.len() != n * dim || p.len() != n * dim {
            return Err(Error::Domain(format!(
                "state shape mismatch: {} beads, d = {dim}, |q| = {}, |p| = {}",
                n,
                q.len(),
                p.len()
            )));
        }
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        if q.iter().chain(&p).any(|x| !x.is_finite()) {
            return Err(Error::Domain("state has non-finite entries".into()));
        }
        Ok(Self {
            q,
            p,
            ell,
            beta_n: beta / n as f64,
            dim,
        })
    }

    pub fn beads(&self) -> usize {
        self.ell.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta_n * self.beads() as f64
    }

    #[inline]
    pub fn bead_q(&self, k: usize) -> &[f64] {
        &self.q[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn bead_p(&self, k: usize) -> &[f64] {
        &self.p[k * self.dim..(k + 1) * self.dim]
    }

    /// Simultaneous cyclic rotation of positions, momenta and surfaces.
    pub fn rotate_left(&self, shift: usize) -> Self {
        let n = self.beads();
        let s = shift % n;
        let mut q = self.q.clone();
        let mut p = self.p.clone();
        q.rotate_left(s * self.dim);
        p.rotate_left(s * self.dim);
        Self {
            q,
            p,
            ell: self.ell.rotate_left(s),
            beta_n: self.beta_n,
            dim: self.dim,
        }
    }

    /// `Σ_k |p_k|²/2M + M|q_k − q_{k+1}|²/(2β_N²)`, the part of the
    /// Hamiltonian that does not depend on the surface indices.
    pub fn free_energy_terms(&self, mass: f64) -> f64 {
        (0..self.beads())
            .map(|k| kinetic(self.bead_p(k), mass) + self.spring(k, mass))
            .sum()
    }

    #[inline]
    fn spring(&self, k: usize, mass: f64) -> f64 {
        let next = (k + 1) % self.beads();
        let d2: f64 = self
            .bead_q(k)
            .iter()
            .zip(self.bead_q(next))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        mass * d2 / (2.0 * self.beta_n * self.beta_n)
    }
}

#[inline]
fn kinetic(p: &[f64], mass: f64) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>() / (2.0 * mass)
}

/// Per-bead quantities that depend only on the positions.
#[derive(Debug, Clone)]
pub struct BondFactors {
    pub beta_n: f64,
    pub mass: f64,
    /// `V(q_k)` for every bead.
    pub potential: Vec<Diabatic>,
    /// `ln cosh(β_N V01(q_k))`.
    pub log_cosh: Vec<f64>,
    /// `ln sinh(β_N V01(q_k))`.
    pub log_sinh: Vec<f64>,
    /// `tanh(β_N V01(q_k))`.
    pub tanh: Vec<f64>,
}

impl BondFactors {
    pub fn compute(model: &PotentialModel, q: &[f64], beta_n: f64) -> Result<Self> {
        let dim = model.dim();
        let n = q.len() / dim;
        let mut f = Self {
            beta_n,
            mass: model.mass(),
            potential: Vec::with_capacity(n),
            log_cosh: Vec::with_capacity(n),
            log_sinh: Vec::with_capacity(n),
            tanh: Vec::with_capacity(n),
        };
        for k in 0..n {
            let v = model.evaluate(&q[k * dim..(k + 1) * dim])?;
            f.push(v);
        }
        Ok(f)
    }

    /// Recomputes in place, reusing the allocations.
    pub fn update(&mut self, model: &PotentialModel, q: &[f64]) -> Result<()> {
        let dim = model.dim();
        let n = q.len() / dim;
        self.potential.clear();
        self.log_cosh.clear();
        self.log_sinh.clear();
        self.tanh.clear();
        for k in 0..n {
            let v = model.evaluate(&q[k * dim..(k + 1) * dim])?;
            self.push(v);
        }
        Ok(())
    }

    fn push(&mut self, v: Diabatic) {
        let x = self.beta_n * v.v01;
        self.potential.push(v);
        self.log_cosh.push(log_cosh(x));
        self.log_sinh.push(log_sinh(x));
        self.tanh.push(x.tanh());
    }

    pub fn beads(&self) -> usize {
        self.potential.len()
    }

    /// `ln tanh(β_N V01(q_k))` as a difference of logs.
    #[inline]
    pub fn log_tanh(&self, k: usize) -> f64 {
        self.log_sinh[k] - self.log_cosh[k]
    }

    /// The position-dependent part of `⟨a|G_k|b⟩`:
    /// `V_aa − ln cosh/β_N` on a diagonal bond, `(V00+V11)/2 − ln sinh/β_N`
    /// across a kink.
    #[inline]
    pub fn bond_potential(&self, k: usize, a: u8, b: u8) -> f64 {
        let v = &self.potential[k];
        if a == b {
            v.diagonal(a) - self.log_cosh[k] / self.beta_n
        } else {
            v.mean() - self.log_sinh[k] / self.beta_n
        }
    }

    /// `β_N(⟨a|G_k|b⟩ − ⟨ā|G_k|b⟩)` formed analytically; the kinetic and
    /// spring terms cancel and are never evaluated.
    #[inline]
    pub fn flip_exponent(&self, k: usize, a: u8, b: u8) -> f64 {
        let v = &self.potential[k];
        if a == b {
            self.beta_n * (v.diagonal(a) - v.mean()) + self.log_tanh(k)
        } else {
            self.beta_n * (v.mean() - v.diagonal(b)) - self.log_tanh(k)
        }
    }
}

/// Observable entries at every bead.
pub fn observable_at_beads(
    obs: &Observable,
    q: &[f64],
    dim: usize,
    out: &mut Vec<ObservableValues>,
) -> Result<()> {
    out.clear();
    for bead in q.chunks_exact(dim) {
        out.push(obs.evaluate(bead)?);
    }
    Ok(())
}

/// `⟨ℓ_k|G_k|ℓ_{k+1}⟩` with `a = ℓ_k`, `b = ℓ_{k+1}`: kinetic, spring and
/// bond potential of bead `k`.
pub fn bond_element(
    state: &RingPolymerState,
    factors: &BondFactors,
    k: usize,
    a: u8,
    b: u8,
) -> f64 {
    kinetic(state.bead_p(k), factors.mass)
        + state.spring(k, factors.mass)
        + factors.bond_potential(k, a, b)
}

/// `H_N(q, p, ℓ) = Σ_k ⟨ℓ_k|G_k|ℓ_{k+1}⟩` with cyclic indices.
pub fn extended_hamiltonian(state: &RingPolymerState, factors: &BondFactors) -> Result<f64> {
    let ell = &state.ell;
    let h: f64 = (0..state.beads())
        .map(|k| bond_element(state, factors, k, ell.get(k), ell.next(k)))
        .sum();
    if !h.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite extended Hamiltonian {h}"
        )));
    }
    Ok(h)
}

/// Sum of bond potentials for an arbitrary surface sequence.
pub fn surface_energy(bits: &[u8], factors: &BondFactors) -> f64 {
    let n = bits.len();
    (0..n)
        .map(|k| factors.bond_potential(k, bits[k], bits[(k + 1) % n]))
        .sum()
}

/// `e^{−β_N H_N(q,p,ℓ)} / e^{−β_N H_N(q,p,ℓ₀)}`, independent of `p`:
/// `exp(−β_N Σ_k [V(q_k,ℓ_k,ℓ_{k+1}) − V00(q_k)]) · Π_{kinks} tanh(β_N V01)`.
pub fn weight_ratio(ell: &SurfaceIndexSequence, factors: &BondFactors) -> f64 {
    let mut shift = 0.0;
    let mut tanh_product = 1.0;
    for k in 0..ell.len() {
        let (a, b) = (ell.get(k), ell.next(k));
        let v = &factors.potential[k];
        if a == b {
            shift += v.diagonal(a) - v.v00;
        } else {
            shift += v.mean() - v.v00;
            tanh_product *= factors.tanh[k];
        }
    }
    (-factors.beta_n * shift).exp() * tanh_product
}

/// The thermal-average estimator `W_N[A]` at a configuration:
///
/// `(1/N) Σ_k [A_{ℓ_kℓ_k}(q_k) − e^{β_N(⟨ℓ_k|G_k|ℓ_{k+1}⟩ − ⟨ℓ̄_k|G_k|ℓ_{k+1}⟩)} A01(q_k)]`.
///
/// The coupling is positive by model construction, so the sign factor is 1.
pub fn w_estimator(
    ell: &SurfaceIndexSequence,
    factors: &BondFactors,
    obs: &[ObservableValues],
) -> f64 {
    let n = ell.len();
    let total: f64 = (0..n)
        .map(|k| {
            let (a, b) = (ell.get(k), ell.next(k));
            obs[k].diagonal(a) - factors.flip_exponent(k, a, b).exp() * obs[k].a01
        })
        .sum();
    total / n as f64
}

/// Convenience wrapper evaluating the model and observable at the state.
pub fn w_estimator_at(
    state: &RingPolymerState,
    model: &PotentialModel,
    obs: &Observable,
) -> Result<f64> {
    let factors = BondFactors::compute(model, &state.q, state.beta_n)?;
    let mut values = Vec::with_capacity(state.beads());
    observable_at_beads(obs, &state.q, state.dim, &mut values)?;
    Ok(w_estimator(&state.ell, &factors, &values))
}

#[cfg(test)]
mod tests;
