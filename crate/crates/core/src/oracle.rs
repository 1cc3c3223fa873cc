//! Deterministic ground truth: a Fourier-grid solver for the exact quantum
//! thermal average, and tensor-product quadrature of the truncated
//! ring-polymer average for a few beads.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Diabatic, ObservableValues, TestCase};
use crate::polymer::{
    binomial, surface_energy, w_estimator, BondFactors, LevelEvaluator, LevelTables,
    SurfaceIndexSequence,
};

/// Periodic grid `x_j = −L + j·h`, `h = 2L/n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGrid {
    pub n_points: usize,
    pub half_width: f64,
}

impl Default for SpectralGrid {
    fn default() -> Self {
        Self {
            n_points: 512,
            half_width: 8.0,
        }
    }
}

impl SpectralGrid {
    pub fn new(n_points: usize, half_width: f64) -> Result<Self> {
        if n_points < 4 || n_points % 2 != 0 {
            return Err(Error::Oracle(format!(
                "spectral grid needs an even number of points ≥ 4, got {n_points}"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::Oracle(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        Ok(Self {
            n_points,
            half_width,
        })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n_points as f64
    }

    /// Twice the points on a domain 50% wider.
    pub fn refined(&self) -> Self {
        Self {
            n_points: 2 * self.n_points,
            half_width: 1.5 * self.half_width,
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n_points)
            .map(|j| -self.half_width + j as f64 * h)
            .collect()
    }
}

/// First row `t_d` of the circulant kinetic matrix `p²/2M` on the grid.
///
/// `t_d = (1/n) Σ_m (κ_m²/2M) cos(κ_m d h)` over `m = −n/2..=n/2` with the
/// two Nyquist terms at half weight, `κ_m = πm/L`.
pub fn kinetic_row(grid: &SpectralGrid, mass: f64) -> Vec<f64> {
    let n = grid.n_points;
    let h = grid.spacing();
    let half = (n / 2) as i64;
    (0..n)
        .map(|d| {
            let mut s = 0.0;
            for m in -half..=half {
                let w = if m.abs() == half { 0.5 } else { 1.0 };
                let kappa = std::f64::consts::PI * m as f64 / grid.half_width;
                s += w * kappa * kappa / (2.0 * mass) * (kappa * d as f64 * h).cos();
            }
            s / n as f64
        })
        .collect()
}

fn potential_on_grid(case: &TestCase, xs: &[f64]) -> Result<Vec<Diabatic>> {
    xs.iter()
        .map(|&x| {
            let v = case.model.potential().values(&[x]);
            if !(v.v00.is_finite() && v.v11.is_finite() && v.v01.is_finite()) {
                return Err(Error::Oracle(format!("non-finite potential at x = {x}")));
            }
            Ok(v)
        })
        .collect()
}

fn check_boundary(case: &TestCase, grid: &SpectralGrid, v: &[Diabatic]) -> Result<()> {
    let floor = v.iter().map(|d| d.v00).fold(f64::INFINITY, f64::min);
    for x in [-grid.half_width, grid.half_width] {
        let e = case.model.potential().values(&[x]);
        let wall = e.v00.min(e.v11) - floor;
        if wall < 20.0 / case.beta {
            return Err(Error::Oracle(format!(
                "potential at x = {x} is only {wall:.3} above the grid minimum; \
                 need ≥ 20/β = {:.3}",
                20.0 / case.beta
            )));
        }
    }
    Ok(())
}

/// `Tr(e^{−βH}A)/Tr(e^{−βH})` for a one-dimensional two-state model on
/// a Fourier grid.
pub fn pseudospectral_reference(case: &TestCase, grid: &SpectralGrid) -> Result<f64> {
    if case.model.dim() != 1 {
        return Err(Error::Oracle(format!(
            "pseudo-spectral solve needs a 1D model, got dimension {}",
            case.model.dim()
        )));
    }
    let grid = SpectralGrid::new(grid.n_points, grid.half_width)?;
    let n = grid.n_points;
    let xs = grid.points();
    let v = potential_on_grid(case, &xs)?;
    check_boundary(case, &grid, &v)?;
    let obs: Vec<ObservableValues> = xs
        .iter()
        .map(|&x| case.observable.evaluate(&[x]))
        .collect::<Result<_>>()
        .map_err(|e| Error::Oracle(e.to_string()))?;
    let t = kinetic_row(&grid, case.model.mass());
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let d = if i >= j { i - j } else { j - i };
            h[(i, j)] = t[d];
            h[(n + i, n + j)] = t[d];
        }
        h[(i, i)] += v[i].v00;
        h[(n + i, n + i)] += v[i].v11;
        h[(i, n + i)] = v[i].v01;
        h[(n + i, i)] = v[i].v01;
    }
    let eig = SymmetricEigen::new(h);
    thermal_average(&eig, case.beta, |vec| {
        (0..n)
            .map(|i| {
                let (a, b) = (vec[i], vec[n + i]);
                obs[i].a00 * a * a + obs[i].a11 * b * b + 2.0 * obs[i].a01 * a * b
            })
            .sum()
    })
}

fn thermal_average(
    eig: &SymmetricEigen<f64, nalgebra::Dyn>,
    beta: f64,
    expectation: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    let e = &eig.eigenvalues;
    if e.iter().any(|x| !x.is_finite()) {
        return Err(Error::Oracle(
            "diagonalization produced non-finite eigenvalues".into(),
        ));
    }
    let e0 = e.iter().copied().fold(f64::INFINITY, f64::min);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut col = vec![0.0; e.len()];
    for (j, &ej) in e.iter().enumerate() {
        let w = (-beta * (ej - e0)).exp();
        if w < 1e-300 {
            continue;
        }
        col.copy_from_slice(eig.eigenvectors.column(j).as_slice());
        num += w * expectation(&col);
        den += w;
    }
    Ok(num / den)
}

/// Single-surface thermal average `Tr(e^{−βH}a)/Tr(e^{−βH})` with
/// `H = p²/2M + v(x)` on the same grid.
pub fn scalar_spectral_average(
    v: impl Fn(f64) -> f64,
    a: impl Fn(f64) -> f64,
    mass: f64,
    beta: f64,
    grid: &SpectralGrid,
) -> Result<f64> {
    let grid = SpectralGrid::new(grid.n_points, grid.half_width)?;
    let n = grid.n_points;
    let xs = grid.points();
    let t = kinetic_row(&grid, mass);
    let h = DMatrix::from_fn(n, n, |i, j| {
        let d = if i >= j { i - j } else { j - i };
        t[d] + if i == j { v(xs[i]) } else { 0.0 }
    });
    let av: Vec<f64> = xs.iter().map(|&x| a(x)).collect();
    let eig = SymmetricEigen::new(h);
    thermal_average(&eig, beta, |vec| {
        vec.iter().zip(&av).map(|(c, a)| a * c * c).sum()
    })
}

/// A reference value together with its change under [`SpectralGrid::refined`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergedReference {
    pub value: f64,
    pub refined: f64,
    pub delta: f64,
}

/// Solves on `grid` and on the refined grid; errors if they differ by more
/// than `tolerance`.
pub fn converged_reference(
    case: &TestCase,
    grid: &SpectralGrid,
    tolerance: f64,
) -> Result<ConvergedReference> {
    let value = pseudospectral_reference(case, grid)?;
    let refined = pseudospectral_reference(case, &grid.refined())?;
    let delta = (value - refined).abs();
    if !(delta <= tolerance) {
        return Err(Error::Oracle(format!(
            "grid not converged: {value} vs {refined} on the refined grid \
             (delta {delta:.3e} > {tolerance:.1e})"
        )));
    }
    Ok(ConvergedReference {
        value,
        refined,
        delta,
    })
}

/// Trapezoidal tensor grid on `[−L, L]^N` for `N ≤ 4` beads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    pub n_points: usize,
    pub half_width: f64,
    /// Upper bound on `n_points^N · 2^N` sequence evaluations.
    pub budget: f64,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self {
            n_points: 81,
            half_width: 4.0,
            budget: 1e9,
        }
    }
}

pub const MAX_QUADRATURE_BEADS: usize = 4;

impl QuadratureGrid {
    fn nodes(&self) -> (Vec<f64>, Vec<f64>) {
        let h = 2.0 * self.half_width / (self.n_points - 1) as f64;
        let xs = (0..self.n_points)
            .map(|j| -self.half_width + j as f64 * h)
            .collect();
        let ws = (0..self.n_points)
            .map(|j| {
                if j == 0 || j + 1 == self.n_points {
                    0.5 * h
                } else {
                    h
                }
            })
            .collect();
        (xs, ws)
    }

    fn check(&self, case: &TestCase, beads: usize) -> Result<()> {
        if case.model.dim() != 1 {
            return Err(Error::Oracle("quadrature needs a 1D model".into()));
        }
        if beads == 0 || beads > MAX_QUADRATURE_BEADS {
            return Err(Error::Oracle(format!(
                "quadrature supports 1..={MAX_QUADRATURE_BEADS} beads, got {beads}"
            )));
        }
        if self.n_points < 2 || !(self.half_width > 0.0) {
            return Err(Error::Oracle(format!(
                "bad quadrature grid ({} points, half width {})",
                self.n_points, self.half_width
            )));
        }
        let work = (self.n_points as f64).powi(beads as i32) * (1u64 << beads) as f64;
        if work > self.budget {
            return Err(Error::Oracle(format!(
                "quadrature work {work:.3e} exceeds the budget {:.3e}",
                self.budget
            )));
        }
        Ok(())
    }
}

/// Calls `f(q, weight)` for every tensor node, in parallel over the first
/// coordinate, and sums the returned vectors.
fn integrate(
    grid: &QuadratureGrid,
    beads: usize,
    width: usize,
    f: impl Fn(&[f64], f64) -> Result<Vec<f64>> + Sync,
) -> Result<Vec<f64>> {
    let (xs, ws) = grid.nodes();
    let n = grid.n_points;
    let inner = n.pow(beads as u32 - 1);
    let partials: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i0| {
            let mut acc = vec![0.0; width];
            let mut q = vec![0.0; beads];
            for idx in 0..inner {
                q[0] = xs[i0];
                let mut w = ws[i0];
                let mut r = idx;
                for slot in q.iter_mut().skip(1) {
                    let j = r % n;
                    r /= n;
                    *slot = xs[j];
                    w *= ws[j];
                }
                for (a, v) in acc.iter_mut().zip(f(&q, w)?) {
                    *a += v;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; width];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    Ok(total)
}

fn spring(q: &[f64], mass: f64, beta_n: f64) -> f64 {
    let n = q.len();
    (0..n)
        .map(|k| {
            let d = q[k] - q[(k + 1) % n];
            mass * d * d / (2.0 * beta_n)
        })
        .sum()
}

fn bead_observables(case: &TestCase, q: &[f64]) -> Result<Vec<ObservableValues>> {
    q.iter().map(|&x| case.observable.evaluate(&[x])).collect()
}

/// `(∫A_k π̃ dq, ∫B_k π̃ dq)` for every `k ≤ k_max`, with `π̃` the
/// unnormalized reference density in `q` (momenta integrated out).
pub fn quadrature_level_integrals(
    case: &TestCase,
    beads: usize,
    k_max: usize,
    grid: &QuadratureGrid,
) -> Result<Vec<(f64, f64)>> {
    grid.check(case, beads)?;
    if 2 * k_max > beads {
        return Err(Error::Oracle(format!(
            "level {k_max} out of range for {beads} beads"
        )));
    }
    let beta_n = case.beta / beads as f64;
    let mass = case.model.mass();
    let zeros = vec![0u8; beads];
    let sums = integrate(grid, beads, 2 * (k_max + 1), |q, w| {
        let factors = BondFactors::compute(&case.model, q, beta_n)?;
        let obs = bead_observables(case, q)?;
        let log_pi = -beta_n * surface_energy(&zeros, &factors) - spring(q, mass, beta_n);
        let pi = w * log_pi.exp();
        let levels = LevelTables::from_factors(&factors, Some(&obs)).levels(
            k_max,
            LevelEvaluator::Enumerate,
            true,
        )?;
        Ok(levels.iter().flat_map(|s| [pi * s.a, pi * s.b]).collect())
    })
    .map_err(oracle_error)?;
    Ok(sums.chunks_exact(2).map(|c| (c[0], c[1])).collect())
}

fn oracle_error(e: Error) -> Error {
    match e {
        Error::Oracle(_) => e,
        other => Error::Oracle(other.to_string()),
    }
}

/// `(E_π̃ A_k, E_π̃ B_k)` for every `k ≤ k_max` under the normalized
/// reference density.
pub fn quadrature_expectation_table(
    case: &TestCase,
    beads: usize,
    k_max: usize,
    grid: &QuadratureGrid,
) -> Result<Vec<(f64, f64)>> {
    grid.check(case, beads)?;
    let beta_n = case.beta / beads as f64;
    let mass = case.model.mass();
    let zeros = vec![0u8; beads];
    let z = integrate(grid, beads, 1, |q, w| {
        let factors = BondFactors::compute(&case.model, q, beta_n)?;
        let log_pi = -beta_n * surface_energy(&zeros, &factors) - spring(q, mass, beta_n);
        Ok(vec![w * log_pi.exp()])
    })
    .map_err(oracle_error)?[0];
    Ok(quadrature_level_integrals(case, beads, k_max, grid)?
        .into_iter()
        .map(|(a, b)| (a / z, b / z))
        .collect())
}

/// `(E_π̃ A_k, E_π̃ B_k)` under the normalized reference density.
pub fn quadrature_reference_expectations(
    case: &TestCase,
    beads: usize,
    k: usize,
    grid: &QuadratureGrid,
) -> Result<(f64, f64)> {
    Ok(quadrature_expectation_table(case, beads, k, grid)?[k])
}

/// `I_{2k₀} = Σ_{k≤k₀} ∫A_k π̃ / Σ_{k≤k₀} ∫B_k π̃`.
pub fn quadrature_truncated_average(
    case: &TestCase,
    beads: usize,
    k0: usize,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let levels = quadrature_level_integrals(case, beads, k0, grid)?;
    let num: f64 = levels.iter().map(|l| l.0).sum();
    let den: f64 = levels.iter().map(|l| l.1).sum();
    Ok(num / den)
}

/// `I_{2k₀}` for every `k₀ ≤ N/2` from one pass over the grid.
pub fn quadrature_truncation_table(
    case: &TestCase,
    beads: usize,
    grid: &QuadratureGrid,
) -> Result<Vec<f64>> {
    let levels = quadrature_level_integrals(case, beads, beads / 2, grid)?;
    let mut num = 0.0;
    let mut den = 0.0;
    Ok(levels
        .iter()
        .map(|(a, b)| {
            num += a;
            den += b;
            num / den
        })
        .collect())
}

/// The untruncated average summed directly over all `2^N` sequences with
/// the extended Boltzmann weight, independent of the level machinery.
pub fn quadrature_full_average(
    case: &TestCase,
    beads: usize,
    grid: &QuadratureGrid,
) -> Result<f64> {
    grid.check(case, beads)?;
    let beta_n = case.beta / beads as f64;
    let mass = case.model.mass();
    let seqs: Vec<SurfaceIndexSequence> = (0..1u32 << beads)
        .map(|mask| {
            SurfaceIndexSequence::new((0..beads).map(|k| ((mask >> k) & 1) as u8).collect())
        })
        .collect::<Result<_>>()?;
    let sums = integrate(grid, beads, 2, |q, w| {
        let factors = BondFactors::compute(&case.model, q, beta_n)?;
        let obs = bead_observables(case, q)?;
        let s = spring(q, mass, beta_n);
        let mut num = 0.0;
        let mut den = 0.0;
        for ell in &seqs {
            let weight = w * (-beta_n * surface_energy(ell.bits(), &factors) - s).exp();
            num += weight * w_estimator(ell, &factors, &obs);
            den += weight;
        }
        Ok(vec![num, den])
    })
    .map_err(oracle_error)?;
    Ok(sums[0] / sums[1])
}

/// `Σ_k 2·C(N,2k)` over `k ≤ N/2`.
pub fn sequence_count(beads: usize) -> u128 {
    (0..=beads / 2).map(|k| 2 * binomial(beads, 2 * k)).sum()
}
