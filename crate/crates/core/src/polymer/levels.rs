//! Per-level integrands `A_k` and `B_k` of the reference-measure
//! representation.
//!
//! With `r(ℓ) = e^{−β_N H_N(ℓ)} / e^{−β_N H_N(ℓ₀)}`,
//!
//! ```text
//! B_k = Σ_{|ℓ|=2k} r(ℓ)        A_k = Σ_{|ℓ|=2k} W_N[A](ℓ) r(ℓ)
//! ```
//!
//! Both the ratio and `W_N` factor over bonds, so everything reduces to two
//! per-bead tables indexed by `(ℓ_k, ℓ_{k+1})`. The level sum can be formed
//! by walking every sequence of the level ([`LevelEvaluator::Enumerate`],
//! `O(N)` per sequence) or with a 2×2 transfer matrix carrying a polynomial
//! in the kink count ([`LevelEvaluator::Transfer`], `O(N·k)` per level).
//! The two agree to rounding.

use std::str::FromStr;

use super::sequence::{enumerate_kink_sequences, KinkSequences};
use super::{BondFactors, SurfaceIndexSequence};
use crate::error::{Error, Result};
use crate::model::ObservableValues;

/// How a level sum over surface sequences is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LevelEvaluator {
    /// Stream every sequence of the level in enumeration order.
    #[default]
    Enumerate,
    /// Kink-counting transfer matrix; identical sum, cost linear in `N·k`.
    Transfer,
}

impl FromStr for LevelEvaluator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enumerate" => Ok(Self::Enumerate),
            "transfer" => Ok(Self::Transfer),
            other => Err(Error::Config(format!(
                "unknown level evaluator '{other}' (expected enumerate or transfer)"
            ))),
        }
    }
}

impl LevelEvaluator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Enumerate => "enumerate",
            Self::Transfer => "transfer",
        }
    }
}

/// `(A_k, B_k)` at one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LevelSum {
    pub a: f64,
    pub b: f64,
}

#[inline]
fn bond_index(a: u8, b: u8) -> usize {
    ((a as usize) << 1) | b as usize
}

/// Per-bead weight factors and `W_N` terms, plus scratch space reused
/// across evaluations. Owned by a single trajectory.
#[derive(Debug, Clone, Default)]
pub struct LevelTables {
    n: usize,
    /// Bond contribution to `r(ℓ)`, indexed by `(ℓ_k, ℓ_{k+1})`.
    factor: Vec<[f64; 4]>,
    /// `A_{ℓ_kℓ_k}(q_k) − e^{flip exponent} A01(q_k)`, same indexing.
    term: Vec<[f64; 4]>,
    has_terms: bool,
    bits: Vec<u8>,
    walkers: Vec<Option<KinkSequences>>,
    poly: Vec<f64>,
    next_poly: Vec<f64>,
}

impl LevelTables {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tables at one configuration. Pass `None` for the observable when only
    /// `B_k` is required.
    pub fn from_factors(factors: &BondFactors, obs: Option<&[ObservableValues]>) -> Self {
        let mut t = Self::new();
        t.update(factors, obs);
        t
    }

    pub fn update(&mut self, factors: &BondFactors, obs: Option<&[ObservableValues]>) {
        let n = factors.beads();
        if n != self.n {
            self.n = n;
            self.bits = vec![0; n];
            self.walkers.clear();
        }
        self.factor.clear();
        self.term.clear();
        let beta_n = factors.beta_n;
        for k in 0..n {
            let v = &factors.potential[k];
            let lower = 1.0;
            let upper = (-beta_n * (v.v11 - v.v00)).exp();
            let kink = (-beta_n * (v.mean() - v.v00)).exp() * factors.tanh[k];
            self.factor.push([lower, kink, kink, upper]);
        }
        self.has_terms = obs.is_some();
        if let Some(obs) = obs {
            for (k, a) in obs.iter().enumerate().take(n) {
                let mut row = [0.0; 4];
                for (x, y) in [(0u8, 0u8), (0, 1), (1, 0), (1, 1)] {
                    row[bond_index(x, y)] =
                        a.diagonal(x) - factors.flip_exponent(k, x, y).exp() * a.a01;
                }
                self.term.push(row);
            }
        }
    }

    pub fn beads(&self) -> usize {
        self.n
    }

    fn check_level(&self, k: usize) -> Result<()> {
        if 2 * k > self.n {
            return Err(Error::Domain(format!(
                "kink level k = {k} out of range for N = {} beads",
                self.n
            )));
        }
        Ok(())
    }

    fn require_terms(&self) -> Result<()> {
        if !self.has_terms {
            return Err(Error::Domain(
                "A_k requested from tables built without an observable".into(),
            ));
        }
        Ok(())
    }

    /// Weight ratio `r(ℓ)` from the tables.
    pub fn ratio(&self, ell: &SurfaceIndexSequence) -> f64 {
        (0..self.n)
            .map(|j| self.factor[j][bond_index(ell.get(j), ell.next(j))])
            .product()
    }

    fn enumerate_level(&mut self, k: usize, with_terms: bool) -> Result<LevelSum> {
        if self.walkers.len() <= k {
            self.walkers.resize_with(k + 1, || None);
        }
        let mut walker = match self.walkers[k].take() {
            Some(mut w) => {
                w.reset();
                w
            }
            None => enumerate_kink_sequences(self.n, k)?,
        };
        let n = self.n;
        let mut sum = LevelSum::default();
        while walker.next_into(&mut self.bits) {
            let mut weight = 1.0;
            let mut w = 0.0;
            for j in 0..n {
                let next = if j + 1 == n {
                    self.bits[0]
                } else {
                    self.bits[j + 1]
                };
                let idx = bond_index(self.bits[j], next);
                weight *= self.factor[j][idx];
                if with_terms {
                    w += self.term[j][idx];
                }
            }
            sum.b += weight;
            if with_terms {
                sum.a += w * weight;
            }
        }
        sum.a /= n as f64;
        self.walkers[k] = Some(walker);
        Ok(sum)
    }

    /// Runs the transfer recursion keeping kink counts up to `degree` and
    /// leaves the closed-loop coefficients in `self.poly`: layout
    /// `[P(0..=degree), Q(0..=degree)]`, summed over both starting surfaces.
    fn transfer(&mut self, degree: usize, with_terms: bool) {
        let width = degree + 1;
        // per current surface c: P_c then Q_c
        let stride = 2 * width;
        let mut result = vec![0.0; stride];
        self.poly.resize(2 * stride, 0.0);
        self.next_poly.resize(2 * stride, 0.0);
        for start in 0..2u8 {
            self.poly.fill(0.0);
            self.poly[start as usize * stride] = 1.0;
            for j in 0..self.n {
                self.next_poly.fill(0.0);
                for a in 0..2u8 {
                    let src = a as usize * stride;
                    for b in 0..2u8 {
                        let dst = b as usize * stride;
                        let idx = bond_index(a, b);
                        let f = self.factor[j][idx];
                        let t = if with_terms { self.term[j][idx] } else { 0.0 };
                        let shift = usize::from(a != b);
                        for m in 0..width - shift {
                            let p = self.poly[src + m];
                            let q = self.poly[src + width + m];
                            self.next_poly[dst + m + shift] += p * f;
                            if with_terms {
                                self.next_poly[dst + width + m + shift] += (q + p * t) * f;
                            }
                        }
                    }
                }
                std::mem::swap(&mut self.poly, &mut self.next_poly);
            }
            let closed = start as usize * stride;
            for (r, v) in result.iter_mut().zip(&self.poly[closed..closed + stride]) {
                *r += v;
            }
        }
        self.poly.truncate(stride);
        self.poly.copy_from_slice(&result);
    }

    /// `(A_k, B_k)` for one level. `A_k` is left at zero unless
    /// `with_observable` is set.
    pub fn level(
        &mut self,
        k: usize,
        evaluator: LevelEvaluator,
        with_observable: bool,
    ) -> Result<LevelSum> {
        self.check_level(k)?;
        if with_observable {
            self.require_terms()?;
        }
        match evaluator {
            LevelEvaluator::Enumerate => self.enumerate_level(k, with_observable),
            LevelEvaluator::Transfer => {
                let degree = 2 * k;
                self.transfer(degree, with_observable);
                let width = degree + 1;
                Ok(LevelSum {
                    a: self.poly[width + degree] / self.n as f64,
                    b: self.poly[degree],
                })
            }
        }
    }

    /// `(A_k, B_k)` for every level `0..=k_max`.
    pub fn levels(
        &mut self,
        k_max: usize,
        evaluator: LevelEvaluator,
        with_observable: bool,
    ) -> Result<Vec<LevelSum>> {
        self.check_level(k_max)?;
        if with_observable {
            self.require_terms()?;
        }
        match evaluator {
            LevelEvaluator::Enumerate => (0..=k_max)
                .map(|k| self.enumerate_level(k, with_observable))
                .collect(),
            LevelEvaluator::Transfer => {
                let degree = 2 * k_max;
                self.transfer(degree, with_observable);
                let width = degree + 1;
                let n = self.n as f64;
                Ok((0..=k_max)
                    .map(|k| LevelSum {
                        a: self.poly[width + 2 * k] / n,
                        b: self.poly[2 * k],
                    })
                    .collect())
            }
        }
    }
}

/// `(A_k, B_k)` at one configuration.
pub fn level_sum(
    factors: &BondFactors,
    obs: &[ObservableValues],
    k: usize,
    evaluator: LevelEvaluator,
) -> Result<LevelSum> {
    LevelTables::from_factors(factors, Some(obs)).level(k, evaluator, true)
}

/// `(A_k, B_k)` for all levels up to `k_max`.
pub fn level_sums(
    factors: &BondFactors,
    obs: &[ObservableValues],
    k_max: usize,
    evaluator: LevelEvaluator,
) -> Result<Vec<LevelSum>> {
    LevelTables::from_factors(factors, Some(obs)).levels(k_max, evaluator, true)
}

/// `A_k = Σ_{|ℓ|=2k} W_N[A](ℓ)·r(ℓ)` by streaming the level's sequences.
pub fn sub_integrand_a(factors: &BondFactors, obs: &[ObservableValues], k: usize) -> Result<f64> {
    Ok(level_sum(factors, obs, k, LevelEvaluator::Enumerate)?.a)
}

/// `B_k = Σ_{|ℓ|=2k} r(ℓ)` by streaming the level's sequences.
pub fn sub_integrand_b(factors: &BondFactors, k: usize) -> Result<f64> {
    Ok(LevelTables::from_factors(factors, None)
        .level(k, LevelEvaluator::Enumerate, false)?
        .b)
}
