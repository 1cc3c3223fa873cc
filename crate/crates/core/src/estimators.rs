//! Truncated thermal averages assembled from per-level sub-estimators.
//!
//! Each level `k ≤ k₀` runs two independent reference trajectories, one
//! averaging `A_k` and one averaging `B_k`, and the estimate is
//! `Σ_k Â_k / Σ_k B̂_k`. RM-PIMD gives every level the same number of samples;
//! MLMC-PIMD makes `N_k` proportional to `i_k = C(N,2k)^{−1/2}/(2k)!`.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::dynamics::{LangevinConfig, PimdShRun, Trajectory};
use crate::error::{Channel, Error, Result};
use crate::model::{ObservableValues, TestCase};
use crate::polymer::{binomial, observable_at_beads, BondFactors, LevelEvaluator, LevelTables};

/// Which estimator produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rm,
    Mlmc,
    PimdSh,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Rm => "RM",
            Method::Mlmc => "MLMC",
            Method::PimdSh => "PIMD-SH",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "RM" => Ok(Method::Rm),
            "MLMC" => Ok(Method::Mlmc),
            "PIMD-SH" => Ok(Method::PimdSh),
            other => Err(Error::Estimator(format!("unknown method '{other}'"))),
        }
    }
}

/// Per-level sample counts for a truncation level and a total budget.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub beads: usize,
    pub k0: usize,
    pub n_total: u64,
    /// `i_k = C(N,2k)^{−1/2}/(2k)!`.
    pub weights: Vec<f64>,
    pub counts: Vec<u64>,
}

impl AllocationPlan {
    /// `Σ_k 2·N_k·C(N,2k)`, the number of sequence evaluations.
    pub fn work(&self) -> f64 {
        work(self.beads, &self.counts)
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `i_k = C(N,2k)^{−1/2}/(2k)!` for `k = 0..=k0`, from exact binomials.
pub fn allocation_weights(beads: usize, k0: usize) -> Vec<f64> {
    (0..=k0)
        .map(|k| 1.0 / ((binomial(beads, 2 * k) as f64).sqrt() * factorial(2 * k)))
        .collect()
}

fn check_levels(beads: usize, k0: usize, n_total: u64) -> Result<()> {
    if beads == 0 || 2 * k0 > beads {
        return Err(Error::Estimator(format!(
            "truncation level k0 = {k0} out of range for N = {beads} beads"
        )));
    }
    if n_total < k0 as u64 + 1 {
        return Err(Error::Estimator(format!(
            "n_total = {n_total} cannot give each of the {} levels a sample",
            k0 + 1
        )));
    }
    Ok(())
}

/// Variance-optimal counts: `N_k = max(1, ⌊N_T·i_k/Σi⌋)`, with the
/// remainder (positive or negative) absorbed by level 0.
pub fn allocation_plan(beads: usize, k0: usize, n_total: u64) -> Result<AllocationPlan> {
    check_levels(beads, k0, n_total)?;
    let weights = allocation_weights(beads, k0);
    let sum: f64 = weights.iter().sum();
    let mut counts: Vec<u64> = weights
        .iter()
        .map(|w| ((n_total as f64 * w / sum).floor() as u64).max(1))
        .collect();
    let assigned: u64 = counts[1..].iter().sum();
    if assigned >= n_total {
        return Err(Error::Estimator(format!(
            "n_total = {n_total} too small for k0 = {k0} at N = {beads}"
        )));
    }
    counts[0] = n_total - assigned;
    Ok(AllocationPlan {
        beads,
        k0,
        n_total,
        weights,
        counts,
    })
}

/// Equal counts `⌊N_T/(k0+1)⌋` on every level.
pub fn equal_plan(beads: usize, k0: usize, n_total: u64) -> Result<AllocationPlan> {
    check_levels(beads, k0, n_total)?;
    let each = n_total / (k0 as u64 + 1);
    Ok(AllocationPlan {
        beads,
        k0,
        n_total,
        weights: vec![1.0; k0 + 1],
        counts: vec![each; k0 + 1],
    })
}

/// `Σ_k 2·N_k·C(N,2k)`.
pub fn work(beads: usize, counts: &[u64]) -> f64 {
    counts
        .iter()
        .enumerate()
        .map(|(k, &n)| 2.0 * n as f64 * binomial(beads, 2 * k) as f64)
        .sum()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the trajectory feeding `(channel, level)` in replicate
/// `replicate`. Counter-based, so it does not depend on scheduling.
pub fn derive_seed(master: u64, channel: Channel, level: usize, replicate: u64) -> u64 {
    let code = match channel {
        Channel::A => 1,
        Channel::B => 2,
    };
    let mut h = splitmix64(master);
    h = splitmix64(h ^ code);
    h = splitmix64(h ^ level as u64);
    splitmix64(h ^ replicate)
}

/// Seed of the PIMD-SH trajectory of a replicate.
pub fn pimdsh_seed(master: u64, replicate: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ 3) ^ replicate)
}

/// Dynamics settings shared by all sub-estimators of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Friction, step and burn-in; the seed field is ignored.
    pub langevin: LangevinConfig,
    pub evaluator: LevelEvaluator,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            langevin: LangevinConfig::default(),
            evaluator: LevelEvaluator::Enumerate,
        }
    }
}

/// Mean, sample variance and batch-means long-run variance of a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesStats {
    pub count: u64,
    pub mean: f64,
    /// Sample variance of the summands.
    pub variance: f64,
    /// `b·Var(batch means)` over 32 batches of size `b`; `N·Var(mean)`
    /// for a correlated series. NaN below 64 samples.
    pub long_run_variance: f64,
}

const BATCHES: usize = 32;

impl SeriesStats {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let long_run_variance = if n >= 2 * BATCHES {
            let b = n / BATCHES;
            let means: Vec<f64> = xs
                .chunks_exact(b)
                .take(BATCHES)
                .map(|c| c.iter().sum::<f64>() / b as f64)
                .collect();
            let m = means.iter().sum::<f64>() / BATCHES as f64;
            b as f64 * means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (BATCHES - 1) as f64
        } else {
            f64::NAN
        };
        Self {
            count: n as u64,
            mean,
            variance,
            long_run_variance,
        }
    }
}

/// A reference trajectory that yields `A_k` or `B_k` once per step.
#[derive(Debug, Clone)]
pub struct LevelSampler {
    traj: Trajectory,
    case: TestCase,
    level: usize,
    channel: Channel,
    evaluator: LevelEvaluator,
    factors: BondFactors,
    values: Vec<ObservableValues>,
    tables: LevelTables,
}

impl LevelSampler {
    /// Starts the trajectory from `seed` and runs the burn-in.
    pub fn new(
        case: &TestCase,
        beads: usize,
        level: usize,
        channel: Channel,
        cfg: &SamplerConfig,
        seed: u64,
    ) -> Result<Self> {
        let tag = |e: Error| Error::SubEstimator {
            level,
            channel,
            source: Box::new(e),
        };
        if 2 * level > beads {
            return Err(tag(Error::Domain(format!(
                "kink level k = {level} out of range for N = {beads} beads"
            ))));
        }
        let lc = cfg.langevin.with_seed(seed);
        let mut traj = Trajectory::reference(&case.model, beads, case.beta, &lc).map_err(tag)?;
        traj.advance(lc.n_burn).map_err(tag)?;
        let factors =
            BondFactors::compute(&case.model, &traj.state().q, traj.state().beta_n).map_err(tag)?;
        Ok(Self {
            traj,
            case: case.clone(),
            level,
            channel,
            evaluator: cfg.evaluator,
            factors,
            values: Vec::with_capacity(beads),
            tables: LevelTables::new(),
        })
    }

    fn tag(&self, e: Error) -> Error {
        Error::SubEstimator {
            level: self.level,
            channel: self.channel,
            source: Box::new(e),
        }
    }

    /// Advances one step and returns the level integrand there.
    pub fn next_value(&mut self) -> Result<f64> {
        self.traj.step().map_err(|e| self.tag(e))?;
        self.value_here()
    }

    /// The integrand at the current state, without stepping.
    pub fn value_here(&mut self) -> Result<f64> {
        let st = self.traj.state();
        let with_obs = self.channel == Channel::A;
        let r = (|| {
            self.factors.update(&self.case.model, &st.q)?;
            if with_obs {
                observable_at_beads(&self.case.observable, &st.q, st.dim, &mut self.values)?;
                self.tables.update(&self.factors, Some(&self.values));
            } else {
                self.tables.update(&self.factors, None);
            }
            let s = self.tables.level(self.level, self.evaluator, with_obs)?;
            Ok(if with_obs { s.a } else { s.b })
        })();
        let step = self.traj.steps();
        match r {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err(self.tag(Error::Trajectory {
                step,
                message: format!("non-finite level integrand {v}"),
            })),
            Err(e) => Err(self.tag(e)),
        }
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }
}

/// One sub-estimator: burn-in, then the time average of `count` samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubEstimate {
    pub level: usize,
    pub channel: Channel,
    pub seed: u64,
    pub stats: SeriesStats,
}

pub fn run_sub_estimator(
    case: &TestCase,
    beads: usize,
    level: usize,
    count: u64,
    channel: Channel,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<SubEstimate> {
    if count == 0 {
        return Err(Error::SubEstimator {
            level,
            channel,
            source: Box::new(Error::Estimator("sample count must be positive".into())),
        });
    }
    let mut sampler = LevelSampler::new(case, beads, level, channel, cfg, seed)?;
    let mut xs = Vec::with_capacity(count as usize);
    for _ in 0..count {
        xs.push(sampler.next_value()?);
    }
    Ok(SubEstimate {
        level,
        channel,
        seed,
        stats: SeriesStats::of(&xs),
    })
}

/// Like [`run_sub_estimator`], but reports the statistics of every prefix
/// of length `checkpoints[i]` of a single trajectory, with the seconds spent
/// up to that point (burn-in included). Each prefix is exactly the
/// sub-estimate a separate run with that count and seed would give.
pub fn run_sub_estimator_checkpoints(
    case: &TestCase,
    beads: usize,
    level: usize,
    checkpoints: &[u64],
    channel: Channel,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<(SubEstimate, f64)>> {
    if checkpoints.is_empty() || checkpoints.contains(&0) {
        return Err(Error::SubEstimator {
            level,
            channel,
            source: Box::new(Error::Estimator("checkpoints must be positive".into())),
        });
    }
    let start = Instant::now();
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    order.sort_by_key(|&i| checkpoints[i]);
    let total = checkpoints[*order.last().unwrap()];
    let mut sampler = LevelSampler::new(case, beads, level, channel, cfg, seed)?;
    let mut xs = Vec::with_capacity(total as usize);
    let mut out = vec![None; checkpoints.len()];
    let mut next = 0;
    while next < order.len() {
        while (xs.len() as u64) < checkpoints[order[next]] {
            xs.push(sampler.next_value()?);
        }
        let sub = SubEstimate {
            level,
            channel,
            seed,
            stats: SeriesStats::of(&xs),
        };
        let t = start.elapsed().as_secs_f64();
        while next < order.len() && checkpoints[order[next]] == xs.len() as u64 {
            out[order[next]] = Some((sub, t));
            next += 1;
        }
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// Both channels of one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelReport {
    pub k: usize,
    pub count: u64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub lrv_a: f64,
    pub lrv_b: f64,
    pub seed_a: u64,
    pub seed_b: u64,
}

impl LevelReport {
    fn from_pair(a: &SubEstimate, b: &SubEstimate) -> Self {
        Self {
            k: a.level,
            count: a.stats.count,
            mean_a: a.stats.mean,
            mean_b: b.stats.mean,
            var_a: a.stats.variance,
            var_b: b.stats.variance,
            lrv_a: a.stats.long_run_variance,
            lrv_b: b.stats.long_run_variance,
            seed_a: a.seed,
            seed_b: b.seed,
        }
    }
}

/// Outcome of one estimator run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub method: Method,
    pub beads: usize,
    pub k0: usize,
    pub n_total: u64,
    pub estimate: f64,
    pub per_level: Vec<LevelReport>,
    pub master_seed: u64,
    pub wall_clock: f64,
    /// `Σ 2·N_k·C(N,2k)` for the level estimators, steps for PIMD-SH.
    pub work: f64,
    pub pimdsh: Option<PimdShRun>,
}

/// `Σ_k Â_k / Σ_k B̂_k`.
pub fn assemble(levels: &[LevelReport]) -> Result<f64> {
    let num: f64 = levels.iter().map(|l| l.mean_a).sum();
    let den: f64 = levels.iter().map(|l| l.mean_b).sum();
    if !(den > 0.0) || !num.is_finite() {
        return Err(Error::Estimator(format!(
            "degenerate ratio: numerator {num}, denominator {den}"
        )));
    }
    Ok(num / den)
}

/// Runs every `(level, channel)` sub-estimator of `plan` concurrently and
/// assembles the ratio. Seeds come from `(master, channel, level, replicate)`.
pub fn run_plan(
    case: &TestCase,
    method: Method,
    plan: &AllocationPlan,
    cfg: &SamplerConfig,
    master: u64,
    replicate: u64,
) -> Result<EstimateReport> {
    let start = Instant::now();
    let jobs: Vec<(usize, Channel)> = (0..=plan.k0)
        .flat_map(|k| [(k, Channel::A), (k, Channel::B)])
        .collect();
    let results: Vec<Result<SubEstimate>> = jobs
        .par_iter()
        .map(|&(k, ch)| {
            let seed = derive_seed(master, ch, k, replicate);
            run_sub_estimator(case, plan.beads, k, plan.counts[k], ch, cfg, seed)
        })
        .collect();
    let mut subs = Vec::with_capacity(results.len());
    for r in results {
        subs.push(r?);
    }
    let per_level: Vec<LevelReport> = subs
        .chunks_exact(2)
        .map(|p| LevelReport::from_pair(&p[0], &p[1]))
        .collect();
    let estimate = assemble(&per_level)?;
    Ok(EstimateReport {
        method,
        beads: plan.beads,
        k0: plan.k0,
        n_total: plan.n_total,
        estimate,
        per_level,
        master_seed: master,
        wall_clock: start.elapsed().as_secs_f64(),
        work: plan.work(),
        pimdsh: None,
    })
}

/// Runs several plans of one method that share `(beads, k0)` from a single
/// set of trajectories, one per `(level, channel)`. Every report equals what
/// [`run_plan`] would return for that plan with the same seeds; its
/// `wall_clock` is the summed trajectory time needed to reach its counts.
pub fn run_nested_plans(
    case: &TestCase,
    method: Method,
    plans: &[AllocationPlan],
    cfg: &SamplerConfig,
    master: u64,
    replicate: u64,
) -> Result<Vec<EstimateReport>> {
    let first = plans
        .first()
        .ok_or_else(|| Error::Estimator("no plans to run".into()))?;
    if plans
        .iter()
        .any(|p| p.beads != first.beads || p.k0 != first.k0)
    {
        return Err(Error::Estimator("nested plans must share N and k0".into()));
    }
    let jobs: Vec<(usize, Channel)> = (0..=first.k0)
        .flat_map(|k| [(k, Channel::A), (k, Channel::B)])
        .collect();
    let results: Vec<Result<Vec<(SubEstimate, f64)>>> = jobs
        .par_iter()
        .map(|&(k, ch)| {
            let seed = derive_seed(master, ch, k, replicate);
            let cps: Vec<u64> = plans.iter().map(|p| p.counts[k]).collect();
            run_sub_estimator_checkpoints(case, first.beads, k, &cps, ch, cfg, seed)
        })
        .collect();
    let mut per_job = Vec::with_capacity(results.len());
    for r in results {
        per_job.push(r?);
    }
    plans
        .iter()
        .enumerate()
        .map(|(i, plan)| {
            let per_level: Vec<LevelReport> = per_job
                .chunks_exact(2)
                .map(|p| LevelReport::from_pair(&p[0][i].0, &p[1][i].0))
                .collect();
            Ok(EstimateReport {
                method,
                beads: plan.beads,
                k0: plan.k0,
                n_total: plan.n_total,
                estimate: assemble(&per_level)?,
                per_level,
                master_seed: master,
                wall_clock: per_job.iter().map(|j| j[i].1).sum(),
                work: plan.work(),
                pimdsh: None,
            })
        })
        .collect()
}

/// Equal allocation across levels.
pub fn rm_pimd(
    case: &TestCase,
    beads: usize,
    k0: usize,
    n_total: u64,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<EstimateReport> {
    let plan = equal_plan(beads, k0, n_total)?;
    run_plan(case, Method::Rm, &plan, cfg, seed, 0)
}

/// Variance-optimal allocation across levels.
pub fn mlmc_pimd(
    case: &TestCase,
    beads: usize,
    k0: usize,
    n_total: u64,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<EstimateReport> {
    let plan = allocation_plan(beads, k0, n_total)?;
    run_plan(case, Method::Mlmc, &plan, cfg, seed, 0)
}

/// MLMC-PIMD under a wall-clock budget on the calling thread.
///
/// All `2(k0+1)` trajectories are burnt in first; the budget covers sampling
/// only. Levels are advanced one step at a time, always the level furthest
/// behind its share `i_k`, so the realized counts track the MLMC ratios.
pub fn mlmc_pimd_budget(
    case: &TestCase,
    beads: usize,
    k0: usize,
    budget: Duration,
    cfg: &SamplerConfig,
    master: u64,
    replicate: u64,
) -> Result<EstimateReport> {
    check_levels(beads, k0, k0 as u64 + 1)?;
    let start = Instant::now();
    let weights = allocation_weights(beads, k0);
    let mut samplers = Vec::with_capacity(2 * (k0 + 1));
    for k in 0..=k0 {
        for ch in [Channel::A, Channel::B] {
            let seed = derive_seed(master, ch, k, replicate);
            samplers.push(LevelSampler::new(case, beads, k, ch, cfg, seed)?);
        }
    }
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); samplers.len()];
    let mut done = vec![0u64; k0 + 1];
    let clock = Instant::now();
    let mut iter = 0u64;
    loop {
        if iter >= k0 as u64 + 1 && iter % 64 == 0 && clock.elapsed() >= budget {
            break;
        }
        let k = (0..=k0)
            .min_by(|&a, &b| {
                let ra = done[a] as f64 / weights[a];
                let rb = done[b] as f64 / weights[b];
                ra.partial_cmp(&rb).unwrap().then(a.cmp(&b))
            })
            .unwrap();
        for j in [2 * k, 2 * k + 1] {
            let v = samplers[j].next_value()?;
            series[j].push(v);
        }
        done[k] += 1;
        iter += 1;
    }
    let per_level: Vec<LevelReport> = (0..=k0)
        .map(|k| {
            let a = SubEstimate {
                level: k,
                channel: Channel::A,
                seed: derive_seed(master, Channel::A, k, replicate),
                stats: SeriesStats::of(&series[2 * k]),
            };
            let b = SubEstimate {
                level: k,
                channel: Channel::B,
                seed: derive_seed(master, Channel::B, k, replicate),
                stats: SeriesStats::of(&series[2 * k + 1]),
            };
            LevelReport::from_pair(&a, &b)
        })
        .collect();
    let estimate = assemble(&per_level)?;
    Ok(EstimateReport {
        method: Method::Mlmc,
        beads,
        k0,
        n_total: done.iter().sum(),
        estimate,
        per_level,
        master_seed: master,
        wall_clock: start.elapsed().as_secs_f64(),
        work: work(beads, &done),
        pimdsh: None,
    })
}

/// `(1/n) Σ (X_i − reference)²`.
pub fn mse_estimate(outcomes: &[f64], reference: f64) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Estimator("MSE of an empty outcome list".into()));
    }
    Ok(outcomes
        .iter()
        .map(|x| (x - reference).powi(2))
        .sum::<f64>()
        / outcomes.len() as f64)
}

/// Mean and standard error of the mean of independent outcomes.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let s = SeriesStats::of(xs);
    (s.mean, (s.variance / xs.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HarmonicPair, Observable, PotentialModel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn weights_at_sixteen_beads() {
        let w = allocation_weights(16, 3);
        assert_eq!(w[0], 1.0);
        assert_relative_eq!(w[1], 1.0 / (2.0 * 120f64.sqrt()), max_relative = 1e-15);
        assert_relative_eq!(w[2], 1.0 / (24.0 * 1820f64.sqrt()), max_relative = 1e-15);
        assert!((w[1] - 4.5644e-2).abs() < 1e-6);
        assert!((w[2] - 9.766e-4).abs() < 1e-7);
    }

    #[test]
    fn level_zero_takes_everything_at_k0_zero() {
        let p = allocation_plan(16, 0, 12345).unwrap();
        assert_eq!(p.counts, vec![12345]);
        assert_eq!(equal_plan(16, 0, 12345).unwrap().counts, vec![12345]);
    }

    #[test]
    fn plan_rejects_bad_sizes() {
        assert!(allocation_plan(16, 5, 5).is_err());
        assert!(allocation_plan(16, 9, 1000).is_err());
        assert_eq!(
            allocation_plan(16, 5, 6).unwrap().counts,
            vec![1, 1, 1, 1, 1, 1]
        );
        assert!(equal_plan(4, 3, 100).is_err());
    }

    #[test]
    fn small_budgets_keep_one_sample_per_level() {
        // level 5 at N = 16 would round to zero below N_T ≈ 290
        let p = allocation_plan(16, 5, 200).unwrap();
        assert!(p.counts.iter().all(|&c| c >= 1));
        assert_eq!(p.counts.iter().sum::<u64>(), 200);
    }

    fn cost(beads: usize, counts: &[u64]) -> f64 {
        work(beads, counts)
    }

    fn variance_model(counts: &[u64]) -> f64 {
        counts
            .iter()
            .enumerate()
            .map(|(k, &n)| 1.0 / (n as f64 * factorial(2 * k).powi(2)))
            .sum()
    }

    #[test]
    fn plan_is_optimal_on_a_small_instance() {
        let (n, k0, total) = (8usize, 2usize, 30u64);
        let plan = allocation_plan(n, k0, total).unwrap();
        assert_eq!(plan.counts, vec![27, 2, 1]);
        let eps = variance_model(&plan.counts);
        let plan_cost = cost(n, &plan.counts);
        let mut best = f64::INFINITY;
        for a in 1..total {
            for b in 1..total - a {
                let c = total - a - b;
                let counts = [a, b, c];
                if variance_model(&counts) <= eps * (1.0 + 1e-12) {
                    best = best.min(cost(n, &counts));
                }
            }
        }
        // one extra sample at the most expensive level is the rounding slack
        let slack = 2.0 * binomial(n, 2 * k0) as f64;
        assert!(plan_cost <= best + slack, "{plan_cost} vs {best}");
    }

    proptest! {
        #[test]
        fn plan_invariants(beads in 2usize..=24, k0_frac in 0.0f64..1.0, extra in 0u64..2_000_000) {
            let k0 = ((beads / 2) as f64 * k0_frac) as usize;
            let n_total = 4 * (k0 as u64 + 1) + extra;
            let plan = match allocation_plan(beads, k0, n_total) {
                Ok(p) => p,
                Err(_) => return Ok(()),
            };
            prop_assert_eq!(plan.counts.iter().sum::<u64>(), n_total);
            prop_assert!(plan.counts.iter().all(|&c| c >= 1));
            let s: f64 = plan.weights.iter().sum();
            for k in 1..=k0 {
                let raw = n_total as f64 * plan.weights[k] / s;
                prop_assert!((plan.counts[k] as f64 - raw).abs() <= 1.0);
            }
            for k in 0..k0.min(beads / 4) {
                if plan.counts[k + 1] > 1 {
                    prop_assert!(plan.counts[k + 1] < plan.counts[k]);
                }
            }
        }
    }

    #[test]
    fn counts_strictly_decrease_in_the_lower_half() {
        for beads in [8usize, 12, 16, 20, 32] {
            let plan = allocation_plan(beads, beads / 4, 10_000_000).unwrap();
            for k in 0..beads / 4 {
                if plan.counts[k + 1] == 1 {
                    break;
                }
                assert!(
                    plan.counts[k + 1] < plan.counts[k],
                    "N = {beads}: {:?}",
                    plan.counts
                );
            }
        }
    }

    #[test]
    fn seeds_are_distinct_per_key() {
        let mut seen = std::collections::HashSet::new();
        for r in 0..50 {
            for k in 0..6 {
                for ch in [Channel::A, Channel::B] {
                    assert!(seen.insert(derive_seed(42, ch, k, r)));
                }
            }
            assert!(seen.insert(pimdsh_seed(42, r)));
        }
        assert_eq!(
            derive_seed(1, Channel::A, 2, 3),
            derive_seed(1, Channel::A, 2, 3)
        );
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_estimate(&[0.5, 0.5, 0.5], 0.5).unwrap(), 0.0);
        assert_eq!(mse_estimate(&[3.0, 1.0], 2.0).unwrap(), 1.0);
        assert!(mse_estimate(&[], 1.0).is_err());
    }

    fn symmetric_case() -> TestCase {
        let model = PotentialModel::new(
            HarmonicPair {
                dim: 1,
                stiffness: 1.0,
                offset0: 0.0,
                offset1: 0.0,
                coupling: 0.5,
            },
            1.0,
        )
        .unwrap();
        TestCase::new(model, Observable::identity(), 1.0).unwrap()
    }

    fn quick() -> SamplerConfig {
        SamplerConfig {
            langevin: LangevinConfig {
                n_burn: 1000,
                ..Default::default()
            },
            evaluator: LevelEvaluator::Enumerate,
        }
    }

    #[test]
    fn identity_level_zero_is_exactly_two() {
        let s = run_sub_estimator(&symmetric_case(), 8, 0, 500, Channel::A, &quick(), 1).unwrap();
        assert_relative_eq!(s.stats.mean, 2.0, epsilon = 1e-13);
        assert!(s.stats.variance < 1e-24);
    }

    #[test]
    fn channel_b_summands_are_positive() {
        let case = TestCase::coupled_wells();
        for k in 0..3 {
            let mut s = LevelSampler::new(&case, 16, k, Channel::B, &quick(), 9).unwrap();
            for _ in 0..200 {
                assert!(s.next_value().unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn failures_carry_level_and_channel() {
        let case = TestCase::coupled_wells();
        let cfg = SamplerConfig {
            langevin: LangevinConfig {
                dt: 5.0,
                gamma: 0.0,
                n_burn: 1000,
                seed: 0,
            },
            ..quick()
        };
        let err = run_sub_estimator(&case, 16, 2, 10, Channel::B, &cfg, 3).unwrap_err();
        let text = err.to_string();
        assert!(text.starts_with("estimators: level 2 channel B"), "{text}");
    }

    #[test]
    fn reports_are_reproducible() {
        let case = TestCase::coupled_wells();
        let a = mlmc_pimd(&case, 8, 2, 3000, &quick(), 77).unwrap();
        let b = mlmc_pimd(&case, 8, 2, 3000, &quick(), 77).unwrap();
        // NaN long-run variances on short levels compare unequal, so compare text
        assert_eq!(format!("{:?}", a.per_level), format!("{:?}", b.per_level));
        assert_eq!(a.estimate, b.estimate);
        let c = rm_pimd(&case, 8, 2, 3000, &quick(), 77).unwrap();
        let d = rm_pimd(&case, 8, 2, 3000, &quick(), 77).unwrap();
        assert_eq!(c.per_level, d.per_level);
        assert_eq!(c.per_level[0].count, 1000);
    }

    #[test]
    fn k0_zero_rm_and_mlmc_coincide() {
        let case = TestCase::coupled_wells();
        let a = mlmc_pimd(&case, 8, 0, 2000, &quick(), 5).unwrap();
        let b = rm_pimd(&case, 8, 0, 2000, &quick(), 5).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.per_level, b.per_level);
    }

    #[test]
    fn transfer_and_enumeration_give_the_same_estimate() {
        let case = TestCase::coupled_wells();
        let e = mlmc_pimd(&case, 10, 3, 4000, &quick(), 11).unwrap();
        let cfg = SamplerConfig {
            evaluator: LevelEvaluator::Transfer,
            ..quick()
        };
        let t = mlmc_pimd(&case, 10, 3, 4000, &cfg, 11).unwrap();
        assert!((e.estimate - t.estimate).abs() < 1e-12);
    }

    #[test]
    fn budget_run_covers_every_level() {
        let case = TestCase::coupled_wells();
        let r = mlmc_pimd_budget(&case, 16, 3, Duration::from_millis(200), &quick(), 1, 0).unwrap();
        assert!(r.per_level.iter().all(|l| l.count >= 1));
        assert!(r.per_level[0].count > r.per_level[1].count);
        assert!(r.estimate.is_finite());
    }

    #[test]
    fn nested_plans_equal_separate_runs() {
        let case = TestCase::coupled_wells();
        let plans: Vec<AllocationPlan> = [1500u64, 3000]
            .iter()
            .map(|&t| allocation_plan(8, 2, t).unwrap())
            .collect();
        let nested = run_nested_plans(&case, Method::Mlmc, &plans, &quick(), 21, 4).unwrap();
        for (plan, rep) in plans.iter().zip(&nested) {
            let single = run_plan(&case, Method::Mlmc, plan, &quick(), 21, 4).unwrap();
            assert_eq!(single.estimate, rep.estimate);
            assert_eq!(
                format!("{:?}", single.per_level),
                format!("{:?}", rep.per_level)
            );
        }
    }

    #[test]
    fn batch_means_see_correlation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                x = 0.9 * x + rng.gen_range(-1.0..1.0);
                x
            })
            .collect();
        let s = SeriesStats::of(&xs);
        // AR(1) with φ = 0.9: long-run variance is (1+φ)/(1−φ) = 19 times the marginal
        let ratio = s.long_run_variance / s.variance;
        assert!(ratio > 12.0 && ratio < 28.0, "{ratio}");
        let iid = SeriesStats::of(
            &(0..200_000)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect::<Vec<f64>>(),
        );
        assert!((iid.long_run_variance / iid.variance - 1.0).abs() < 0.6);
        assert!(SeriesStats::of(&[1.0, 2.0]).long_run_variance.is_nan());
    }
}
