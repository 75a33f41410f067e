//! Static-path Hamiltonian Monte Carlo with a jittered number of leapfrog
//! steps, dual-averaging step-size adaptation and a windowed diagonal mass
//! matrix estimated during warmup.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::UnconstrainedTarget;
use crate::par;

const DA_GAMMA: f64 = 0.05;
const DA_T0: f64 = 10.0;
const DA_KAPPA: f64 = 0.75;
const INIT_BUFFER: f64 = 0.15;
const TERM_BUFFER: f64 = 0.10;
const BASE_WINDOW: usize = 25;
const MIN_ADAPT_WARMUP: usize = 20;
const INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcConfig {
    pub chains: usize,
    pub warmup_iters: usize,
    pub sample_iters: usize,
    pub target_accept: f64,
    pub init_step_size: f64,
    /// Each transition draws L uniformly from 1..=max_leapfrog_steps.
    pub max_leapfrog_steps: usize,
    /// Energy error above which a transition counts as divergent.
    pub max_energy_error: f64,
    pub adapt_mass: bool,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup_iters: 1000,
            sample_iters: 5000,
            target_accept: 0.8,
            init_step_size: 0.1,
            max_leapfrog_steps: 32,
            max_energy_error: 1000.0,
            adapt_mass: true,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.sample_iters == 0 {
            return Err(Error::Domain(
                "chains and sample_iters must be positive".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Domain(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if !(self.init_step_size > 0.0 && self.init_step_size.is_finite()) {
            return Err(Error::Domain(format!(
                "init_step_size must be positive, got {}",
                self.init_step_size
            )));
        }
        if self.max_leapfrog_steps == 0 {
            return Err(Error::Domain(
                "max_leapfrog_steps must be at least 1".into(),
            ));
        }
        if !(self.max_energy_error > 0.0) {
            return Err(Error::Domain("max_energy_error must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub chain: usize,
    pub seed: u64,
    /// sample_iters × dim.
    pub draws: DMatrix<f64>,
    pub log_density: Vec<f64>,
    pub accept_rate: f64,
    /// Post-warmup divergent transitions.
    pub divergence_count: usize,
    pub warmup_divergences: usize,
    pub step_size: f64,
    /// Step size used at each warmup iteration.
    pub step_size_trace: Vec<f64>,
    /// Diagonal of the mass matrix M (momenta are N(0, M)).
    pub mass_diag: Vec<f64>,
}

impl ChainOutput {
    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.column(j).iter().copied().collect()
    }
}

/// Column j of every chain.
pub fn chain_columns(chains: &[ChainOutput], j: usize) -> Vec<Vec<f64>> {
    chains.iter().map(|c| c.column(j)).collect()
}

/// All draws stacked chain after chain.
pub fn pooled_draws(chains: &[ChainOutput]) -> DMatrix<f64> {
    let dim = chains.first().map_or(0, |c| c.dim());
    let rows: usize = chains.iter().map(|c| c.draws.nrows()).sum();
    let mut out = DMatrix::zeros(rows, dim);
    let mut offset = 0;
    for c in chains {
        out.rows_mut(offset, c.draws.nrows()).copy_from(&c.draws);
        offset += c.draws.nrows();
    }
    out
}

/// A point in phase space with its cached log density and gradient.
#[derive(Debug, Clone)]
pub struct State {
    pub position: Vec<f64>,
    pub log_density: f64,
    pub grad: Vec<f64>,
}

impl State {
    pub fn new<T: UnconstrainedTarget + ?Sized>(target: &T, position: Vec<f64>) -> Result<Self> {
        let mut grad = vec![0.0; position.len()];
        let log_density = target.log_density_grad(&position, &mut grad)?;
        if !log_density.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(
                "log density or gradient at the initial point".into(),
            ));
        }
        Ok(Self {
            position,
            log_density,
            grad,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub end: Option<State>,
    pub momentum: Vec<f64>,
    /// H(end) − H(start); infinite when the path left the domain.
    pub energy_error: f64,
}

impl Trajectory {
    pub fn divergent(&self, threshold: f64) -> bool {
        self.end.is_none() || !(self.energy_error <= threshold)
    }
}

fn kinetic(momentum: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * momentum
        .iter()
        .zip(inv_mass)
        .map(|(m, w)| m * m * w)
        .sum::<f64>()
}

/// `steps` leapfrog steps of size `eps` from `start` with kinetic energy
/// ½ mᵀ M⁻¹ m, where `inv_mass` is the diagonal of M⁻¹.
pub fn leapfrog_from<T: UnconstrainedTarget + ?Sized>(
    target: &T,
    start: &State,
    momentum: &[f64],
    eps: f64,
    steps: usize,
    inv_mass: &[f64],
) -> Trajectory {
    let h0 = -start.log_density + kinetic(momentum, inv_mass);
    let mut q = start.position.clone();
    let mut m = momentum.to_vec();
    let mut grad = start.grad.clone();
    let mut logp = start.log_density;
    for _ in 0..steps {
        for (mi, gi) in m.iter_mut().zip(&grad) {
            *mi += 0.5 * eps * gi;
        }
        for ((qi, mi), wi) in q.iter_mut().zip(&m).zip(inv_mass) {
            *qi += eps * wi * mi;
        }
        match target.log_density_grad(&q, &mut grad) {
            Ok(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => logp = v,
            _ => {
                return Trajectory {
                    end: None,
                    momentum: m,
                    energy_error: f64::INFINITY,
                }
            }
        }
        for (mi, gi) in m.iter_mut().zip(&grad) {
            *mi += 0.5 * eps * gi;
        }
    }
    let h1 = -logp + kinetic(&m, inv_mass);
    let energy_error = if h1.is_finite() {
        h1 - h0
    } else {
        f64::INFINITY
    };
    Trajectory {
        end: Some(State {
            position: q,
            log_density: logp,
            grad,
        }),
        momentum: m,
        energy_error,
    }
}

/// Leapfrog from a bare position; returns (q', m', energy error).
pub fn leapfrog<T: UnconstrainedTarget + ?Sized>(
    target: &T,
    q: &[f64],
    m: &[f64],
    eps: f64,
    steps: usize,
    inv_mass: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let start = State::new(target, q.to_vec())?;
    let traj = leapfrog_from(target, &start, m, eps, steps, inv_mass);
    match traj.end {
        Some(end) => Ok((end.position, traj.momentum, traj.energy_error)),
        None => Err(Error::NonFinite(
            "leapfrog left the domain of the target".into(),
        )),
    }
}

/// Outcome of one HMC transition.
#[derive(Debug, Clone, Copy)]
pub struct TransitionInfo {
    pub accepted: bool,
    pub divergent: bool,
    /// min(1, exp(−ΔH)); zero for divergent transitions.
    pub accept_prob: f64,
}

/// A fixed HMC kernel; reversible with respect to the target.
#[derive(Debug, Clone)]
pub struct HmcKernel {
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub max_leapfrog_steps: usize,
    pub max_energy_error: f64,
}

impl HmcKernel {
    pub fn transition<T: UnconstrainedTarget + ?Sized, R: Rng + ?Sized>(
        &self,
        target: &T,
        state: &mut State,
        rng: &mut R,
    ) -> TransitionInfo {
        let momentum: Vec<f64> = self
            .inv_mass
            .iter()
            .map(|w| rng.sample::<f64, _>(StandardNormal) / w.sqrt())
            .collect();
        let steps = rng.random_range(1..=self.max_leapfrog_steps);
        let traj = leapfrog_from(
            target,
            state,
            &momentum,
            self.step_size,
            steps,
            &self.inv_mass,
        );
        let u: f64 = rng.random();
        if traj.divergent(self.max_energy_error) {
            return TransitionInfo {
                accepted: false,
                divergent: true,
                accept_prob: 0.0,
            };
        }
        let accept_prob = (-traj.energy_error).exp().min(1.0);
        let accepted = u < accept_prob;
        if accepted {
            *state = traj
                .end
                .expect("non-divergent trajectories have an end state");
        }
        TransitionInfo {
            accepted,
            divergent: false,
            accept_prob,
        }
    }
}

struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps_bar: f64,
    t: f64,
}

impl DualAveraging {
    fn new(eps: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            target,
            h_bar: 0.0,
            log_eps_bar: 0.0,
            t: 0.0,
        }
    }

    fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let eta = 1.0 / (self.t + DA_T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_prob);
        let log_eps = self.mu - self.t.sqrt() / DA_GAMMA * self.h_bar;
        let w = self.t.powf(-DA_KAPPA);
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step_size(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Doubles or halves ε until a one-step acceptance probability crosses ½.
fn find_reasonable_step<T: UnconstrainedTarget + ?Sized, R: Rng + ?Sized>(
    target: &T,
    state: &State,
    inv_mass: &[f64],
    eps0: f64,
    rng: &mut R,
) -> f64 {
    let momentum: Vec<f64> = inv_mass
        .iter()
        .map(|w| rng.sample::<f64, _>(StandardNormal) / w.sqrt())
        .collect();
    let log_accept = |eps: f64| {
        let traj = leapfrog_from(target, state, &momentum, eps, 1, inv_mass);
        if traj.end.is_some() && traj.energy_error.is_finite() {
            -traj.energy_error
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut eps = eps0;
    let half = 0.5f64.ln();
    let direction = if log_accept(eps) > half { 1.0 } else { -1.0 };
    for _ in 0..INIT_ATTEMPTS {
        let la = log_accept(eps);
        if (direction > 0.0 && la <= half) || (direction < 0.0 && la > half) {
            break;
        }
        eps *= 2f64.powf(direction);
    }
    if eps.is_finite() && eps > 0.0 {
        eps
    } else {
        eps0
    }
}

/// End iterations (exclusive) of the slow mass-adaptation windows.
fn mass_windows(warmup: usize) -> Vec<usize> {
    if warmup < MIN_ADAPT_WARMUP {
        return Vec::new();
    }
    let init = (INIT_BUFFER * warmup as f64).floor() as usize;
    let term = (TERM_BUFFER * warmup as f64).floor() as usize;
    let slow_end = warmup - term;
    let mut ends = Vec::new();
    let mut start = init;
    let mut size = BASE_WINDOW.min(slow_end - init);
    while start < slow_end {
        let mut end = start + size;
        // Fold a too-short final window into the current one.
        if end + 2 * size > slow_end {
            end = slow_end;
        }
        ends.push(end);
        start = end;
        size *= 2;
    }
    ends
}

/// Welford accumulator for per-coordinate variances.
struct RunningVariance {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningVariance {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = xi - *m;
            *m += delta / n;
            *s += delta * (xi - *m);
        }
    }

    /// Regularized variances, shrunk toward 1e-3.
    fn regularized(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0);
                var * n / (n + 5.0) + 1e-3 * 5.0 / (n + 5.0)
            })
            .collect()
    }
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn initial_state<T: UnconstrainedTarget + ?Sized>(
    target: &T,
    init: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
    chain: usize,
) -> Result<State> {
    let dim = target.dim();
    if let Some(x) = init {
        if x.len() != dim {
            return Err(Error::Dimension(format!(
                "init for chain {chain} has length {}, target dim is {dim}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("init for chain {chain}")));
        }
        return State::new(target, x.to_vec()).map_err(|e| {
            Error::Initialization(format!("chain {chain}: supplied init is not usable: {e}"))
        });
    }
    let mut last = None;
    for _ in 0..INIT_ATTEMPTS {
        let x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        match State::new(target, x) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Initialization(format!(
        "chain {chain}: no usable starting point in {INIT_ATTEMPTS} N(0, 1) draws; last error: {}",
        last.map_or_else(String::new, |e| e.to_string())
    )))
}

/// Runs a single chain (warmup then sampling).
pub fn run_chain<T: UnconstrainedTarget + ?Sized>(
    target: &T,
    config: &HmcConfig,
    chain: usize,
    init: Option<&[f64]>,
) -> Result<ChainOutput> {
    config.validate()?;
    let dim = target.dim();
    let mut rng = chain_rng(config.seed, chain);
    let mut state = initial_state(target, init, &mut rng, chain)?;
    let mut kernel = HmcKernel {
        step_size: config.init_step_size,
        inv_mass: vec![1.0; dim],
        max_leapfrog_steps: config.max_leapfrog_steps,
        max_energy_error: config.max_energy_error,
    };

    let warmup = config.warmup_iters;
    let windows = if config.adapt_mass {
        mass_windows(warmup)
    } else {
        Vec::new()
    };
    let window_start = (INIT_BUFFER * warmup as f64).floor() as usize;
    let mut next_window = 0;
    let mut variance = RunningVariance::new(dim);
    let mut step_size_trace = Vec::with_capacity(warmup);
    let mut warmup_divergences = 0;

    if warmup > 0 {
        kernel.step_size = find_reasonable_step(
            target,
            &state,
            &kernel.inv_mass,
            config.init_step_size,
            &mut rng,
        );
    }
    let mut da = DualAveraging::new(kernel.step_size, config.target_accept);
    for iter in 0..warmup {
        step_size_trace.push(kernel.step_size);
        let info = kernel.transition(target, &mut state, &mut rng);
        warmup_divergences += usize::from(info.divergent);
        kernel.step_size = da.update(info.accept_prob);
        if next_window < windows.len() && iter >= window_start {
            variance.push(&state.position);
            if iter + 1 == windows[next_window] {
                if variance.n >= 2 {
                    kernel.inv_mass = variance.regularized();
                }
                variance = RunningVariance::new(dim);
                next_window += 1;
                kernel.step_size = find_reasonable_step(
                    target,
                    &state,
                    &kernel.inv_mass,
                    kernel.step_size,
                    &mut rng,
                );
                da = DualAveraging::new(kernel.step_size, config.target_accept);
            }
        }
    }
    if warmup > 0 {
        if warmup_divergences == warmup {
            return Err(Error::Initialization(format!(
                "chain {chain}: all {warmup} warmup transitions diverged (final step size {:.3e}, log density at current point {:.6e})",
                kernel.step_size, state.log_density
            )));
        }
        kernel.step_size = da.final_step_size();
    }

    let n = config.sample_iters;
    let mut draws = DMatrix::zeros(n, dim);
    let mut log_density = Vec::with_capacity(n);
    let mut accepted = 0usize;
    let mut divergence_count = 0usize;
    for i in 0..n {
        let info = kernel.transition(target, &mut state, &mut rng);
        accepted += usize::from(info.accepted);
        divergence_count += usize::from(info.divergent);
        for (j, &v) in state.position.iter().enumerate() {
            draws[(i, j)] = v;
        }
        log_density.push(state.log_density);
    }

    Ok(ChainOutput {
        chain,
        seed: config.seed,
        draws,
        log_density,
        accept_rate: accepted as f64 / n as f64,
        divergence_count,
        warmup_divergences,
        step_size: kernel.step_size,
        step_size_trace,
        mass_diag: kernel.inv_mass.iter().map(|w| 1.0 / w).collect(),
    })
}

fn check_inits(config: &HmcConfig, init: Option<&[Vec<f64>]>) -> Result<()> {
    config.validate()?;
    if let Some(inits) = init {
        if inits.len() != config.chains {
            return Err(Error::Dimension(format!(
                "{} inits supplied for {} chains",
                inits.len(),
                config.chains
            )));
        }
    }
    Ok(())
}

fn collect(results: Vec<Result<ChainOutput>>) -> Result<Vec<ChainOutput>> {
    results.into_iter().collect()
}

/// Runs `config.chains` independent chains, in parallel when the `parallel`
/// feature is on. Output is ordered by chain and does not depend on the
/// thread count.
pub fn run_chains<T: UnconstrainedTarget + ?Sized>(
    target: &T,
    config: &HmcConfig,
    init: Option<&[Vec<f64>]>,
) -> Result<Vec<ChainOutput>> {
    check_inits(config, init)?;
    collect(par::map_indexed(config.chains, |c| {
        run_chain(target, config, c, init.map(|v| v[c].as_slice()))
    }))
}

/// [`run_chains`] on the calling thread only.
pub fn run_chains_sequential<T: UnconstrainedTarget + ?Sized>(
    target: &T,
    config: &HmcConfig,
    init: Option<&[Vec<f64>]>,
) -> Result<Vec<ChainOutput>> {
    check_inits(config, init)?;
    collect(par::map_indexed_sequential(config.chains, |c| {
        run_chain(target, config, c, init.map(|v| v[c].as_slice()))
    }))
}
