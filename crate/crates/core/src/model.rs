//! Two-state diabatic potential models and position-dependent matrix
//! observables.
//!
//! A model supplies the three independent entries of the real symmetric
//! potential matrix `V(q)` together with their analytic gradients. The
//! off-diagonal coupling must stay strictly positive wherever it is evaluated;
//! [`PotentialModel::evaluate`] rejects anything else instead of clamping.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// The entries `V00(q)`, `V11(q)` and `V01(q) = V10(q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diabatic {
    pub v00: f64,
    pub v11: f64,
    pub v01: f64,
}

impl Diabatic {
    #[inline]
    pub fn diagonal(&self, surface: u8) -> f64 {
        if surface == 0 {
            self.v00
        } else {
            self.v11
        }
    }

    #[inline]
    pub fn mean(&self) -> f64 {
        0.5 * (self.v00 + self.v11)
    }

    fn is_finite(&self) -> bool {
        self.v00.is_finite() && self.v11.is_finite() && self.v01.is_finite()
    }
}

/// Gradients of the three potential entries, each of length `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiabaticGradient {
    pub d00: Vec<f64>,
    pub d11: Vec<f64>,
    pub d01: Vec<f64>,
}

impl DiabaticGradient {
    pub fn zeros(dim: usize) -> Self {
        Self {
            d00: vec![0.0; dim],
            d11: vec![0.0; dim],
            d01: vec![0.0; dim],
        }
    }

    fn is_finite(&self) -> bool {
        self.d00
            .iter()
            .chain(&self.d11)
            .chain(&self.d01)
            .all(|g| g.is_finite())
    }
}

/// A two-state potential matrix as a pure function of nuclear position.
pub trait DiabaticPotential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn values(&self, q: &[f64]) -> Diabatic;

    /// Writes the analytic gradients at `q` into `out`.
    fn gradients(&self, q: &[f64], out: &mut DiabaticGradient);
}

/// Entries `A00(q)`, `A11(q)` and `A01(q) = A10(q)` of a matrix observable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservableValues {
    pub a00: f64,
    pub a11: f64,
    pub a01: f64,
}

impl ObservableValues {
    #[inline]
    pub fn diagonal(&self, surface: u8) -> f64 {
        if surface == 0 {
            self.a00
        } else {
            self.a11
        }
    }
}

/// A real symmetric, position-only matrix observable.
pub trait MatrixObservable: Send + Sync + fmt::Debug {
    fn values(&self, q: &[f64]) -> ObservableValues;
}

/// A potential together with the nuclear mass. Cheap to clone and safe to
/// share between trajectories.
#[derive(Clone, Debug)]
pub struct PotentialModel {
    mass: f64,
    potential: Arc<dyn DiabaticPotential>,
}

impl PotentialModel {
    pub fn new(potential: impl DiabaticPotential + 'static, mass: f64) -> Result<Self> {
        Self::from_arc(Arc::new(potential), mass)
    }

    pub fn from_arc(potential: Arc<dyn DiabaticPotential>, mass: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Model(format!(
                "mass must be positive and finite, got {mass}"
            )));
        }
        if potential.dim() == 0 {
            return Err(Error::Model("nuclear dimension must be at least 1".into()));
        }
        Ok(Self { mass, potential })
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn potential(&self) -> &dyn DiabaticPotential {
        self.potential.as_ref()
    }

    /// Potential entries at `q`, rejecting non-finite values and a
    /// non-positive coupling.
    #[inline]
    pub fn evaluate(&self, q: &[f64]) -> Result<Diabatic> {
        debug_assert_eq!(q.len(), self.dim());
        let v = self.potential.values(q);
        if !v.is_finite() {
            return Err(Error::Model(format!(
                "non-finite potential {v:?} at q = {q:?}"
            )));
        }
        if v.v01 <= 0.0 {
            return Err(Error::Model(format!(
                "off-diagonal coupling must be positive, got V01 = {} at q = {q:?}",
                v.v01
            )));
        }
        Ok(v)
    }

    #[inline]
    pub fn evaluate_gradient(&self, q: &[f64], out: &mut DiabaticGradient) -> Result<()> {
        debug_assert_eq!(q.len(), self.dim());
        self.potential.gradients(q, out);
        if !out.is_finite() {
            return Err(Error::Model(format!(
                "non-finite potential gradient at q = {q:?}"
            )));
        }
        Ok(())
    }
}

/// Shared handle to a matrix observable.
#[derive(Clone, Debug)]
pub struct Observable {
    inner: Arc<dyn MatrixObservable>,
}

impl Observable {
    pub fn new(observable: impl MatrixObservable + 'static) -> Self {
        Self {
            inner: Arc::new(observable),
        }
    }

    pub fn identity() -> Self {
        Self::new(ConstantObservable {
            a00: 1.0,
            a11: 1.0,
            a01: 0.0,
        })
    }

    pub fn zero() -> Self {
        Self::new(ConstantObservable {
            a00: 0.0,
            a11: 0.0,
            a01: 0.0,
        })
    }

    #[inline]
    pub fn evaluate(&self, q: &[f64]) -> Result<ObservableValues> {
        let a = self.inner.values(q);
        if !(a.a00.is_finite() && a.a11.is_finite() && a.a01.is_finite()) {
            return Err(Error::Model(format!(
                "non-finite observable {a:?} at q = {q:?}"
            )));
        }
        Ok(a)
    }
}

/// A model, an observable and an inverse temperature.
#[derive(Clone, Debug)]
pub struct TestCase {
    pub model: PotentialModel,
    pub observable: Observable,
    pub beta: f64,
    pub reference_value: Option<f64>,
}

/// Exact thermal average of [`MixedTrigObservable`] under [`CoupledWells`]
/// at beta = 1, M = 1.
pub const COUPLED_WELLS_REFERENCE: f64 = 0.987553;

impl TestCase {
    pub fn new(model: PotentialModel, observable: Observable, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Model(format!(
                "beta must be positive and finite, got {beta}"
            )));
        }
        Ok(Self {
            model,
            observable,
            beta,
            reference_value: None,
        })
    }

    /// The asymmetric coupled-wells benchmark with the mixed trigonometric
    /// observable at beta = 1, M = 1.
    pub fn coupled_wells() -> Self {
        let model = PotentialModel::new(CoupledWells, 1.0).expect("valid built-in model");
        Self {
            model,
            observable: Observable::new(MixedTrigObservable),
            beta: 1.0,
            reference_value: Some(COUPLED_WELLS_REFERENCE),
        }
    }

    /// Looks up built-in models and observables by their configuration names.
    pub fn named(model: &str, observable: &str, beta: f64, mass: f64) -> Result<Self> {
        let potential: Arc<dyn DiabaticPotential> = match model {
            "coupled-wells" | "paper-5-1" => Arc::new(CoupledWells),
            other => {
                return Err(Error::Config(format!(
                    "unknown model '{other}' (known: coupled-wells, paper-5-1)"
                )))
            }
        };
        let obs = match observable {
            "mixed-trig" | "paper-5-2" => Observable::new(MixedTrigObservable),
            "identity" => Observable::identity(),
            other => {
                return Err(Error::Config(format!(
                    "unknown observable '{other}' (known: mixed-trig, paper-5-2, identity)"
                )))
            }
        };
        let mut case = TestCase::new(PotentialModel::from_arc(potential, mass)?, obs, beta)?;
        let is_benchmark = matches!(observable, "mixed-trig" | "paper-5-2");
        if is_benchmark && beta == 1.0 && mass == 1.0 {
            case.reference_value = Some(COUPLED_WELLS_REFERENCE);
        } else if observable == "identity" {
            case.reference_value = Some(1.0);
        }
        Ok(case)
    }
}

/// One-dimensional asymmetric wells with a Gaussian coupling:
///
/// ```text
/// V00 = x² + 2(1 − cos x) − 3e^{−(x−1)²} − 2e^{−(x−1.5)²} + 3
/// V11 = x² + 4(1 − cos x) − 2e^{−(x−1)²} + 3
/// V01 = e^{−x²}
/// ```
#[derive(Debug, Clone, Copy, Default)]
pub struct CoupledWells;

impl DiabaticPotential for CoupledWells {
    fn dim(&self) -> usize {
        1
    }

    #[inline]
    fn values(&self, q: &[f64]) -> Diabatic {
        let x = q[0];
        let g1 = (-(x - 1.0).powi(2)).exp();
        let g15 = (-(x - 1.5).powi(2)).exp();
        let cos = x.cos();
        Diabatic {
            v00: x * x + 2.0 * (1.0 - cos) - 3.0 * g1 - 2.0 * g15 + 3.0,
            v11: x * x + 4.0 * (1.0 - cos) - 2.0 * g1 + 3.0,
            v01: (-x * x).exp(),
        }
    }

    #[inline]
    fn gradients(&self, q: &[f64], out: &mut DiabaticGradient) {
        let x = q[0];
        let g1 = (-(x - 1.0).powi(2)).exp();
        let g15 = (-(x - 1.5).powi(2)).exp();
        let sin = x.sin();
        out.d00[0] = 2.0 * x + 2.0 * sin + 6.0 * (x - 1.0) * g1 + 4.0 * (x - 1.5) * g15;
        out.d11[0] = 2.0 * x + 4.0 * sin + 4.0 * (x - 1.0) * g1;
        out.d01[0] = -2.0 * x * (-x * x).exp();
    }
}

/// `A00 = A11 = 1/(1+x²) + cos x`, `A01 = e^{−x²} + sin x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MixedTrigObservable;

impl MatrixObservable for MixedTrigObservable {
    #[inline]
    fn values(&self, q: &[f64]) -> ObservableValues {
        let x = q[0];
        let diag = 1.0 / (1.0 + x * x) + x.cos();
        ObservableValues {
            a00: diag,
            a11: diag,
            a01: (-x * x).exp() + x.sin(),
        }
    }
}

/// Position-independent potential in any dimension.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPotential {
    pub dim: usize,
    pub v00: f64,
    pub v11: f64,
    pub v01: f64,
}

impl DiabaticPotential for ConstantPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn values(&self, _q: &[f64]) -> Diabatic {
        Diabatic {
            v00: self.v00,
            v11: self.v11,
            v01: self.v01,
        }
    }

    fn gradients(&self, _q: &[f64], out: &mut DiabaticGradient) {
        out.d00.fill(0.0);
        out.d11.fill(0.0);
        out.d01.fill(0.0);
    }
}

/// Two isotropic harmonic surfaces `½kq² + offset` with a constant coupling.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicPair {
    pub dim: usize,
    pub stiffness: f64,
    pub offset0: f64,
    pub offset1: f64,
    pub coupling: f64,
}

impl DiabaticPotential for HarmonicPair {
    fn dim(&self) -> usize {
        self.dim
    }

    fn values(&self, q: &[f64]) -> Diabatic {
        let r2: f64 = q.iter().map(|x| x * x).sum();
        let e = 0.5 * self.stiffness * r2;
        Diabatic {
            v00: e + self.offset0,
            v11: e + self.offset1,
            v01: self.coupling,
        }
    }

    fn gradients(&self, q: &[f64], out: &mut DiabaticGradient) {
        for (i, x) in q.iter().enumerate() {
            out.d00[i] = self.stiffness * x;
            out.d11[i] = self.stiffness * x;
            out.d01[i] = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantObservable {
    pub a00: f64,
    pub a11: f64,
    pub a01: f64,
}

impl MatrixObservable for ConstantObservable {
    fn values(&self, _q: &[f64]) -> ObservableValues {
        ObservableValues {
            a00: self.a00,
            a11: self.a11,
            a01: self.a01,
        }
    }
}

/// Observable assembled from plain function pointers.
#[derive(Clone, Copy)]
pub struct FnObservable {
    pub a00: fn(&[f64]) -> f64,
    pub a11: fn(&[f64]) -> f64,
    pub a01: fn(&[f64]) -> f64,
}

impl fmt::Debug for FnObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnObservable")
    }
}

impl MatrixObservable for FnObservable {
    fn values(&self, q: &[f64]) -> ObservableValues {
        ObservableValues {
            a00: (self.a00)(q),
            a11: (self.a11)(q),
            a01: (self.a01)(q),
        }
    }
}
