//! Langevin samplers on the extended ring-polymer space.
//!
//! [`Trajectory`] integrates the bead dynamics with BAOAB at a fixed surface
//! index sequence; with the all-zeros sequence it samples the reference
//! measure. [`PimdSh`] adds the surface-hopping jump process on top, so the
//! sequence itself is sampled from the full extended Gibbs measure.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimators::{EstimateReport, Method};
use crate::model::{DiabaticGradient, ObservableValues, PotentialModel, TestCase};
use crate::polymer::{
    extended_hamiltonian, observable_at_beads, w_estimator, BondFactors, RingPolymerState,
    SurfaceIndexSequence,
};

/// Friction, time step, burn-in length and seed of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinConfig {
    pub gamma: f64,
    pub dt: f64,
    pub n_burn: u64,
    pub seed: u64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            dt: 0.005,
            n_burn: 100_000,
            seed: 0,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::HopConfig(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::HopConfig(format!(
                "friction must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Hop intensity `η` on top of the Langevin settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopConfig {
    pub eta: f64,
    pub base: LangevinConfig,
}

impl Default for HopConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            base: LangevinConfig::default(),
        }
    }
}

impl HopConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::HopConfig(format!(
                "hop intensity must be non-negative, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// When a sampling run stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    Samples(u64),
    Budget(Duration),
}

/// Independent `N(0, M/β_N)` draws for every position and momentum entry.
pub fn sample_initial<R: Rng + ?Sized>(
    beads: usize,
    dim: usize,
    mass: f64,
    beta_n: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let sd = (mass / beta_n).sqrt();
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let q = draw(beads * dim);
    let p = draw(beads * dim);
    (q, p)
}

/// `−∇_q H_N(q, p, ℓ)` written into `out`. `ell = None` means the all-zeros
/// reference sequence.
///
/// Per bond the potential gradient is `∇V_aa − tanh(β_N V01)∇V01` on a
/// diagonal bond and `∇(V00+V11)/2 − coth(β_N V01)∇V01` across a kink.
pub fn force_into(
    model: &PotentialModel,
    q: &[f64],
    ell: Option<&SurfaceIndexSequence>,
    beta_n: f64,
    grad: &mut DiabaticGradient,
    out: &mut [f64],
) -> Result<()> {
    let dim = model.dim();
    let n = q.len() / dim;
    let mass = model.mass();
    let spring = mass / (beta_n * beta_n);
    for k in 0..n {
        let prev = (k + n - 1) % n;
        let next = (k + 1) % n;
        let qk = &q[k * dim..(k + 1) * dim];
        let v = model.evaluate(qk)?;
        model.evaluate_gradient(qk, grad)?;
        let (a, b) = match ell {
            Some(ell) => (ell.get(k), ell.next(k)),
            None => (0, 0),
        };
        let x = beta_n * v.v01;
        for i in 0..dim {
            let qi = q[k * dim + i];
            let lap = 2.0 * qi - q[prev * dim + i] - q[next * dim + i];
            let dv = if a == b {
                let diag = if a == 0 { grad.d00[i] } else { grad.d11[i] };
                diag - x.tanh() * grad.d01[i]
            } else {
                0.5 * (grad.d00[i] + grad.d11[i]) - grad.d01[i] / x.tanh()
            };
            out[k * dim + i] = -(spring * lap + dv);
        }
    }
    if let Some(bad) = out.iter().position(|f| !f.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite force on bead {} (q = {:?})",
            bad / dim,
            &q[(bad / dim) * dim..(bad / dim + 1) * dim]
        )));
    }
    Ok(())
}

/// Force of the reference dynamics: `−∇_q H_N(·, ·, ℓ₀)`.
pub fn reference_force(q: &[f64], model: &PotentialModel, beta_n: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; q.len()];
    let mut grad = DiabaticGradient::zeros(model.dim());
    force_into(model, q, None, beta_n, &mut grad, &mut out)?;
    Ok(out)
}

/// One Langevin trajectory at a given surface index sequence.
///
/// The force at the current positions is cached between steps, so each
/// BAOAB step costs one force evaluation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    model: PotentialModel,
    state: RingPolymerState,
    reference: bool,
    dt: f64,
    c1: f64,
    c2: f64,
    force: Vec<f64>,
    grad: DiabaticGradient,
    rng: ChaCha8Rng,
    steps: u64,
}

impl Trajectory {
    /// Draws the initial state from `cfg.seed` and prepares the first force.
    pub fn new(
        model: &PotentialModel,
        beads: usize,
        beta: f64,
        cfg: &LangevinConfig,
        ell: SurfaceIndexSequence,
    ) -> Result<Self> {
        cfg.validate()?;
        if beads == 0 || ell.len() != beads {
            return Err(Error::Domain(format!(
                "need a surface sequence of length {beads}, got {}",
                ell.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let beta_n = beta / beads as f64;
        let (q, p) = sample_initial(beads, model.dim(), model.mass(), beta_n, &mut rng);
        let state = RingPolymerState::new(q, p, ell, beta, model.dim())?;
        Self::assemble(model, state, cfg, rng)
    }

    /// Reference dynamics on `ℓ₀`.
    pub fn reference(
        model: &PotentialModel,
        beads: usize,
        beta: f64,
        cfg: &LangevinConfig,
    ) -> Result<Self> {
        Self::new(model, beads, beta, cfg, SurfaceIndexSequence::zeros(beads))
    }

    /// Continues from an explicit state; the noise stream comes from `cfg.seed`.
    pub fn from_state(
        model: &PotentialModel,
        state: RingPolymerState,
        cfg: &LangevinConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if state.dim != model.dim() {
            return Err(Error::Domain(format!(
                "state dimension {} does not match the model's {}",
                state.dim,
                model.dim()
            )));
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::assemble(model, state, cfg, rng)
    }

    fn assemble(
        model: &PotentialModel,
        state: RingPolymerState,
        cfg: &LangevinConfig,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let c1 = (-cfg.gamma * cfg.dt).exp();
        let c2 = ((1.0 - c1 * c1) * model.mass() / state.beta_n).sqrt();
        let mut t = Self {
            model: model.clone(),
            reference: state.ell.kinks() == 0 && state.ell.get(0) == 0,
            force: vec![0.0; state.q.len()],
            grad: DiabaticGradient::zeros(model.dim()),
            state,
            dt: cfg.dt,
            c1,
            c2,
            rng,
            steps: 0,
        };
        t.refresh_force()?;
        Ok(t)
    }

    fn refresh_force(&mut self) -> Result<()> {
        let ell = if self.reference {
            None
        } else {
            Some(&self.state.ell)
        };
        force_into(
            &self.model,
            &self.state.q,
            ell,
            self.state.beta_n,
            &mut self.grad,
            &mut self.force,
        )
        .map_err(|e| Error::Trajectory {
            step: self.steps,
            message: e.to_string(),
        })
    }

    pub fn state(&self) -> &RingPolymerState {
        &self.state
    }

    pub fn model(&self) -> &PotentialModel {
        &self.model
    }

    pub fn force(&self) -> &[f64] {
        &self.force
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// `e^{−γΔt}` and the matching noise amplitude of the exact O-part.
    pub fn thermostat(&self) -> (f64, f64) {
        (self.c1, self.c2)
    }

    /// Replaces the surface sequence and recomputes the cached force.
    pub fn set_surfaces(&mut self, ell: SurfaceIndexSequence) -> Result<()> {
        if ell.len() != self.state.beads() {
            return Err(Error::Domain("surface sequence length changed".into()));
        }
        self.reference = ell.kinks() == 0 && ell.get(0) == 0;
        self.state.ell = ell;
        self.refresh_force()
    }

    /// Flips one bead's surface (or all beads for `k = N`) and recomputes the force.
    pub fn hop(&mut self, k: usize) -> Result<()> {
        let n = self.state.beads();
        if k == n {
            self.state.ell.complement_in_place();
        } else {
            self.state.ell.flip(k);
        }
        self.reference = self.state.ell.kinks() == 0 && self.state.ell.get(0) == 0;
        self.refresh_force()
    }

    /// One BAOAB step: half kick, half drift, exact Ornstein–Uhlenbeck,
    /// half drift, half kick.
    pub fn step(&mut self) -> Result<()> {
        let h = 0.5 * self.dt;
        let inv_m = 1.0 / self.model.mass();
        let s = &mut self.state;
        for (p, f) in s.p.iter_mut().zip(&self.force) {
            *p += h * f;
        }
        for (q, p) in s.q.iter_mut().zip(&s.p) {
            *q += h * p * inv_m;
        }
        if self.c1 < 1.0 {
            for p in s.p.iter_mut() {
                let xi: f64 = self.rng.sample(StandardNormal);
                *p = self.c1 * *p + self.c2 * xi;
            }
        }
        for (q, p) in s.q.iter_mut().zip(&s.p) {
            *q += h * p * inv_m;
        }
        self.steps += 1;
        self.refresh_force()?;
        for (p, f) in self.state.p.iter_mut().zip(&self.force) {
            *p += h * f;
        }
        Ok(())
    }

    pub fn advance(&mut self, steps: u64) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    /// `H_N` at the current state.
    pub fn energy(&self) -> Result<f64> {
        let f = BondFactors::compute(&self.model, &self.state.q, self.state.beta_n)?;
        extended_hamiltonian(&self.state, &f)
    }
}

/// `H_N(z, ℓ) − H_N(z, ℓ′)` where `ℓ′` flips bead `k`, or every bead when
/// `k = N`. Only bond potentials differ.
pub fn hop_gap(ell: &SurfaceIndexSequence, factors: &BondFactors, k: usize) -> f64 {
    let n = ell.len();
    if k == n || n == 1 {
        let mut gap = 0.0;
        for j in 0..n {
            let (a, b) = (ell.get(j), ell.next(j));
            gap += factors.bond_potential(j, a, b) - factors.bond_potential(j, 1 - a, 1 - b);
        }
        return gap;
    }
    let prev = (k + n - 1) % n;
    let a = ell.get(k);
    let (lp, ln) = (ell.get(prev), ell.next(k));
    factors.bond_potential(prev, lp, a) + factors.bond_potential(k, a, ln)
        - factors.bond_potential(prev, lp, 1 - a)
        - factors.bond_potential(k, 1 - a, ln)
}

/// `p_{ℓ′,ℓ} = exp((β_N/2)(H_N(z,ℓ) − H_N(z,ℓ′)))` for the `N` single-bead
/// flips followed by the global flip. The diagonal generator entry is minus
/// their sum.
pub fn hop_rates(ell: &SurfaceIndexSequence, factors: &BondFactors, out: &mut Vec<f64>) {
    let n = ell.len();
    out.clear();
    for k in 0..=n {
        out.push((0.5 * factors.beta_n * hop_gap(ell, factors, k)).exp());
    }
}

/// Langevin dynamics at the live surface sequence plus one Bernoulli hop
/// attempt per step.
#[derive(Debug, Clone)]
pub struct PimdSh {
    traj: Trajectory,
    eta: f64,
    factors: BondFactors,
    rates: Vec<f64>,
    hops: u64,
}

impl PimdSh {
    pub fn new(model: &PotentialModel, beads: usize, beta: f64, cfg: &HopConfig) -> Result<Self> {
        cfg.validate()?;
        let traj = Trajectory::reference(model, beads, beta, &cfg.base)?;
        Self::from_trajectory(traj, cfg.eta)
    }

    pub fn from_trajectory(traj: Trajectory, eta: f64) -> Result<Self> {
        let factors = BondFactors::compute(traj.model(), &traj.state().q, traj.state().beta_n)?;
        Ok(Self {
            traj,
            eta,
            factors,
            rates: Vec::new(),
            hops: 0,
        })
    }

    pub fn state(&self) -> &RingPolymerState {
        self.traj.state()
    }

    /// Bond factors at the current positions.
    pub fn factors(&self) -> &BondFactors {
        &self.factors
    }

    pub fn hops(&self) -> u64 {
        self.hops
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    /// BAOAB at the current sequence, then at most one hop. With total
    /// intensity `λ = η·Σ p_{ℓ′,ℓ}` a hop happens with probability
    /// `1 − e^{−λΔt}` and goes to `ℓ′` with probability `p_{ℓ′,ℓ}/Σp`.
    pub fn step(&mut self) -> Result<()> {
        self.traj.step()?;
        let step = self.traj.steps();
        let st = self.traj.state();
        self.factors
            .update(self.traj.model(), &st.q)
            .map_err(|e| Error::Trajectory {
                step,
                message: e.to_string(),
            })?;
        if self.eta == 0.0 {
            return Ok(());
        }
        hop_rates(&st.ell, &self.factors, &mut self.rates);
        let sum: f64 = self.rates.iter().sum();
        if !sum.is_finite() {
            return Err(Error::HopConfig(format!(
                "non-finite hop intensity at step {step} ({} kinks)",
                st.ell.kinks()
            )));
        }
        let p_hop = -(-self.eta * self.traj.dt * sum).exp_m1();
        let u: f64 = self.traj.rng_mut().gen();
        if u >= p_hop {
            return Ok(());
        }
        let v = u / p_hop * sum;
        let mut acc = 0.0;
        let mut target = self.rates.len() - 1;
        for (j, r) in self.rates.iter().enumerate() {
            acc += r;
            if v < acc {
                target = j;
                break;
            }
        }
        self.hops += 1;
        self.traj.hop(target)
    }
}

/// Summary of a PIMD-SH run.
#[derive(Debug, Clone, PartialEq)]
pub struct PimdShRun {
    pub mean: f64,
    pub variance: f64,
    pub samples: u64,
    pub hops: u64,
    /// Visits per kink level `|ℓ|/2` over the recorded steps.
    pub kink_histogram: Vec<u64>,
    pub wall_clock: f64,
}

/// Burn-in followed by recording `W_N[A]` at every step until `stop`.
pub fn pimdsh_run(
    case: &TestCase,
    beads: usize,
    hop: &HopConfig,
    stop: StopRule,
) -> Result<PimdShRun> {
    let start = Instant::now();
    let mut sh = PimdSh::new(&case.model, beads, case.beta, hop)?;
    for _ in 0..hop.base.n_burn {
        sh.step()?;
    }
    let mut values: Vec<ObservableValues> = Vec::with_capacity(beads);
    let mut histogram = vec![0u64; beads / 2 + 1];
    let mut n = 0u64;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let hops_before = sh.hops();
    let clock = Instant::now();
    loop {
        match stop {
            StopRule::Samples(total) if n >= total => break,
            StopRule::Budget(b) if n % 256 == 0 && clock.elapsed() >= b => break,
            _ => {}
        }
        sh.step()?;
        let st = sh.state();
        observable_at_beads(&case.observable, &st.q, st.dim, &mut values)?;
        let w = w_estimator(&st.ell, sh.factors(), &values);
        if !w.is_finite() {
            return Err(Error::Trajectory {
                step: sh.trajectory().steps(),
                message: format!("non-finite estimator value {w}"),
            });
        }
        histogram[st.ell.kinks() / 2] += 1;
        n += 1;
        let d = w - mean;
        mean += d / n as f64;
        m2 += d * (w - mean);
    }
    Ok(PimdShRun {
        mean,
        variance: if n > 1 { m2 / (n - 1) as f64 } else { 0.0 },
        samples: n,
        hops: sh.hops() - hops_before,
        kink_histogram: histogram,
        wall_clock: start.elapsed().as_secs_f64(),
    })
}

/// Time average of `W_N[A]` along one PIMD-SH trajectory.
pub fn pimdsh_estimate(
    case: &TestCase,
    beads: usize,
    hop: &HopConfig,
    n_samples: u64,
) -> Result<EstimateReport> {
    let run = pimdsh_run(case, beads, hop, StopRule::Samples(n_samples))?;
    Ok(EstimateReport::from_pimdsh(&run, beads, hop.base.seed))
}

impl EstimateReport {
    pub fn from_pimdsh(run: &PimdShRun, beads: usize, seed: u64) -> Self {
        EstimateReport {
            method: Method::PimdSh,
            beads,
            k0: beads / 2,
            n_total: run.samples,
            estimate: run.mean,
            per_level: Vec::new(),
            master_seed: seed,
            wall_clock: run.wall_clock,
            work: run.samples as f64,
            pimdsh: Some(run.clone()),
        }
    }
}
