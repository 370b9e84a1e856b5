//! Mean and variance dynamics of the belief distribution under a second-order
//! moment closure.
//!
//! The mean belief follows the homogeneous dynamics plus a correction
//! `1/2 sum_j sum_sj d^2 f_s / d mu_jsj^2 * Var(mu_jsj)`, where `f` is the logit
//! response evaluated at the mean. Second derivatives are taken in the ambient
//! coordinates `mu_jsj`, one coordinate at a time, and cross-covariances are
//! dropped. Every variance decays as `Var' = -2 Var / (lambda + t + 1)`.

use std::fmt::Write as _;

use crate::dynamics::{fmt_f64, logit_in_place, response_into, rk4_solve, tau_of_t, utilities_into, SfpParams};
use crate::error::{Result, SfpError};
use crate::game::{BeliefProfile, Layout, PopulationNetworkGame};

/// Slack on the Bhatia-Davis bound `Var <= m (1 - m)`.
pub const VARIANCE_BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    mean: BeliefProfile,
    variance: Vec<f64>,
}

impl MomentState {
    pub fn new(mean: BeliefProfile, variance: Vec<f64>) -> Result<Self> {
        if variance.len() != mean.layout().dim() {
            return Err(SfpError::ShapeMismatch(format!(
                "{} variances for {} belief coordinates",
                variance.len(),
                mean.layout().dim()
            )));
        }
        for (k, (&v, &m)) in variance.iter().zip(mean.as_slice()).enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SfpError::InvalidParameter(format!("variance {v} at coordinate {k} is negative")));
            }
            if v > m * (1.0 - m) + VARIANCE_BOUND_SLACK {
                return Err(SfpError::InvalidParameter(format!(
                    "variance {v} at coordinate {k} exceeds m(1-m) = {}",
                    m * (1.0 - m)
                )));
            }
        }
        Ok(Self { mean, variance })
    }

    /// Like [`new`](Self::new) but caps each variance at `m (1 - m)`.
    pub fn clamped(mean: BeliefProfile, mut variance: Vec<f64>) -> Result<Self> {
        for (v, &m) in variance.iter_mut().zip(mean.as_slice()) {
            *v = v.min(m * (1.0 - m));
        }
        Self::new(mean, variance)
    }

    /// Same variance for every coordinate of every learning population, zero
    /// for static ones.
    pub fn with_common_variance(game: &PopulationNetworkGame, mean: BeliefProfile, sigma2: f64) -> Result<Self> {
        game.check_profile(&mean)?;
        let mut var = vec![sigma2; mean.layout().dim()];
        for i in 0..game.population_count() {
            if game.is_static(i) {
                var[game.layout().range(i)].fill(0.0);
            }
        }
        Self::new(mean, var)
    }

    pub fn mean(&self) -> &BeliefProfile {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn layout(&self) -> &Layout {
        self.mean.layout()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = self.mean.as_slice().to_vec();
        v.extend_from_slice(&self.variance);
        v
    }

    fn from_flat(layout: &Layout, flat: Vec<f64>) -> Self {
        let dim = layout.dim();
        Self {
            mean: BeliefProfile::from_flat_unchecked(layout.clone(), flat[..dim].to_vec()),
            variance: flat[dim..].to_vec(),
        }
    }
}

/// `d^2 f_si / d mu_jsj^2` for one neighbour coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianEntry {
    pub neighbor: usize,
    pub strategy: usize,
    /// One value per strategy of the responding population.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitHessianReport {
    pub population: usize,
    pub entries: Vec<HessianEntry>,
}

/// Second derivative of `softmax(g)` along the direction `d`, given `f = softmax(g)`:
/// `f_s [ (d_s - f.d)^2 - (f.d^2 - (f.d)^2) ]`.
#[inline]
fn softmax_second_directional(f: &[f64], d: &[f64], out: &mut [f64]) {
    let fd: f64 = f.iter().zip(d).map(|(a, b)| a * b).sum();
    let fd2: f64 = f.iter().zip(d).map(|(a, b)| a * b * b).sum();
    let spread = fd2 - fd * fd;
    for ((o, &fs), &ds) in out.iter_mut().zip(f).zip(d) {
        *o = fs * ((ds - fd).powi(2) - spread);
    }
}

/// Analytic diagonal of the Hessian of `f_i = softmax(beta sum_j A_ij mu_j)`
/// with respect to every neighbour belief coordinate.
pub fn logit_hessian_diag(
    game: &PopulationNetworkGame,
    i: usize,
    mean: &BeliefProfile,
    beta: f64,
) -> Result<LogitHessianReport> {
    game.check_population(i)?;
    game.check_profile(mean)?;
    let n = game.strategies(i);
    let mut f = vec![0.0; n];
    utilities_into(game, i, mean.as_slice(), &mut f);
    logit_in_place(&mut f, beta);
    let mut entries = Vec::new();
    let mut d = vec![0.0; n];
    for nb in game.neighbors(i) {
        for s in 0..nb.payoff.cols() {
            for (r, dr) in d.iter_mut().enumerate() {
                *dr = beta * nb.payoff.get(r, s);
            }
            let mut values = vec![0.0; n];
            softmax_second_directional(&f, &d, &mut values);
            entries.push(HessianEntry { neighbor: nb.population, strategy: s, values });
        }
    }
    Ok(LogitHessianReport { population: i, entries })
}

/// Reusable buffers for the closure drift.
pub(crate) struct Scratch {
    f: Vec<f64>,
    d: Vec<f64>,
    h: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(game: &PopulationNetworkGame) -> Self {
        let n = game.strategy_counts().into_iter().max().unwrap_or(0);
        Self { f: vec![0.0; n], d: vec![0.0; n], h: vec![0.0; n] }
    }
}

/// Autonomous-form mean drift `f(mean) - mean + correction(var_scale * variance)`.
pub(crate) fn closure_drift_into(
    game: &PopulationNetworkGame,
    mean: &[f64],
    variance: &[f64],
    var_scale: f64,
    beta: f64,
    sc: &mut Scratch,
    out: &mut [f64],
) {
    response_into(game, mean, beta, out);
    let layout = game.layout();
    for i in 0..game.population_count() {
        let r = layout.range(i);
        if game.is_static(i) {
            out[r].fill(0.0);
            continue;
        }
        let n = r.len();
        let f = &mut sc.f[..n];
        f.copy_from_slice(&out[r.clone()]);
        for nb in game.neighbors(i) {
            let off = layout.offset(nb.population);
            for s in 0..nb.payoff.cols() {
                let v = variance[off + s] * var_scale;
                if v == 0.0 {
                    continue;
                }
                for (row, dr) in sc.d[..n].iter_mut().enumerate() {
                    *dr = beta * nb.payoff.get(row, s);
                }
                softmax_second_directional(f, &sc.d[..n], &mut sc.h[..n]);
                for (o, h) in out[r.clone()].iter_mut().zip(&sc.h[..n]) {
                    *o += 0.5 * h * v;
                }
            }
        }
        for k in r {
            out[k] -= mean[k];
        }
    }
}

/// Second-order estimate of the population mean strategy: logit response at
/// the mean belief plus the variance correction.
pub fn closure_mean_strategy(game: &PopulationNetworkGame, state: &MomentState, beta: f64) -> Result<BeliefProfile> {
    game.check_profile(state.mean())?;
    let mean = state.mean().as_slice();
    let mut out = vec![0.0; mean.len()];
    closure_drift_into(game, mean, state.variance(), 1.0, beta, &mut Scratch::new(game), &mut out);
    for (o, m) in out.iter_mut().zip(mean) {
        *o += m;
    }
    for i in 0..game.population_count() {
        if let Some(f) = game.fixed_strategy(i) {
            out[game.layout().range(i)].copy_from_slice(f.probabilities());
        }
    }
    Ok(BeliefProfile::from_flat_unchecked(game.layout().clone(), out))
}

/// Time derivatives of the mean and of the variances.
pub fn mean_variance_rhs(
    game: &PopulationNetworkGame,
    state: &MomentState,
    t: f64,
    params: &SfpParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    game.check_profile(state.mean())?;
    let dim = game.layout().dim();
    let mut out = vec![0.0; 2 * dim];
    moment_rhs_into(game, &state.to_flat(), t, params, &mut Scratch::new(game), &mut out);
    let dvar = out.split_off(dim);
    Ok((out, dvar))
}

fn moment_rhs_into(
    game: &PopulationNetworkGame,
    y: &[f64],
    t: f64,
    params: &SfpParams,
    sc: &mut Scratch,
    out: &mut [f64],
) {
    let dim = game.layout().dim();
    let (mean, var) = y.split_at(dim);
    let (dmean, dvar) = out.split_at_mut(dim);
    closure_drift_into(game, mean, var, 1.0, params.beta, sc, dmean);
    let c = params.rate(t);
    for d in dmean.iter_mut() {
        *d *= c;
    }
    for (dv, v) in dvar.iter_mut().zip(var) {
        *dv = -2.0 * v * c;
    }
    for i in 0..game.population_count() {
        if game.is_static(i) {
            dvar[game.layout().range(i)].fill(0.0);
        }
    }
}

/// `((lambda + 1) / (lambda + t + 1))^2 sigma2`
pub fn variance_closed_form(sigma2: f64, lambda: f64, t: f64) -> f64 {
    let r = (lambda + 1.0) / (lambda + t + 1.0);
    r * r * sigma2
}

/// tau-time mean drift with the variance replaced by `sigma2 e^{-2 tau}`.
pub fn tau_mean_rhs(
    game: &PopulationNetworkGame,
    mean: &BeliefProfile,
    sigma2: &[f64],
    tau: f64,
    params: &SfpParams,
) -> Result<Vec<f64>> {
    game.check_profile(mean)?;
    if sigma2.len() != mean.layout().dim() {
        return Err(SfpError::ShapeMismatch(format!("{} initial variances for {} coordinates", sigma2.len(), mean.layout().dim())));
    }
    let mut out = vec![0.0; mean.layout().dim()];
    closure_drift_into(game, mean.as_slice(), sigma2, (-2.0 * tau).exp(), params.beta, &mut Scratch::new(game), &mut out);
    Ok(out)
}

/// Mean and variance of `Beta(a, b)`.
pub fn beta_moments(a: f64, b: f64) -> Result<(f64, f64)> {
    if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
        return Err(SfpError::InvalidParameter(format!("Beta({a}, {b}) needs positive parameters")));
    }
    let s = a + b;
    Ok((a / s, a * b / (s * s * (s + 1.0))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<MomentState>,
}

impl MomentTrajectory {
    /// CSV with header `t,mean_pop<i>_s<k>,var_pop<i>_s<k>,...` (1-based).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        if let Some(first) = self.states.first() {
            let layout = first.layout();
            for i in 0..layout.populations() {
                for k in 0..layout.count(i) {
                    let _ = write!(s, ",mean_pop{0}_s{1},var_pop{0}_s{1}", i + 1, k + 1);
                }
            }
        }
        s.push('\n');
        for (t, st) in self.times.iter().zip(&self.states) {
            s.push_str(&fmt_f64(*t));
            for (m, v) in st.mean().as_slice().iter().zip(st.variance()) {
                s.push(',');
                s.push_str(&fmt_f64(*m));
                s.push(',');
                s.push_str(&fmt_f64(*v));
            }
            s.push('\n');
        }
        s
    }
}

fn pinned(game: &PopulationNetworkGame, initial: &MomentState) -> Result<MomentState> {
    game.check_profile(initial.mean())?;
    let mut mean = initial.mean().as_slice().to_vec();
    game.pin_static(&mut mean);
    let mut var = initial.variance().to_vec();
    for i in 0..game.population_count() {
        if game.is_static(i) {
            var[game.layout().range(i)].fill(0.0);
        }
    }
    Ok(MomentState { mean: BeliefProfile::from_flat_unchecked(game.layout().clone(), mean), variance: var })
}

fn reproject_mean(layout: &Layout, y: &mut [f64]) {
    crate::dynamics::reproject(layout, &mut y[..layout.dim()]);
}

/// Integrate the mean/variance system in t-time, sampled at `sample_times`.
pub fn run_moments(
    game: &PopulationNetworkGame,
    initial: &MomentState,
    params: &SfpParams,
    sample_times: &[f64],
    step: f64,
) -> Result<MomentTrajectory> {
    params.validate()?;
    let init = pinned(game, initial)?;
    let layout = game.layout().clone();
    let mut sc = Scratch::new(game);
    let states = rk4_solve(
        |t, y, out| moment_rhs_into(game, y, t, params, &mut sc, out),
        &init.to_flat(),
        0.0,
        sample_times,
        step,
        |_, y| reproject_mean(&layout, y),
    )?;
    Ok(MomentTrajectory {
        times: sample_times.to_vec(),
        states: states.into_iter().map(|s| MomentState::from_flat(&layout, s)).collect(),
    })
}

/// Integrate the mean in tau-time with closed-form variances; reported at the
/// t-times `sample_times`.
pub fn run_moments_tau(
    game: &PopulationNetworkGame,
    initial: &MomentState,
    params: &SfpParams,
    sample_times: &[f64],
    tau_step: f64,
) -> Result<MomentTrajectory> {
    params.validate()?;
    let init = pinned(game, initial)?;
    let layout = game.layout().clone();
    let sigma2 = init.variance.clone();
    let taus: Vec<f64> = sample_times.iter().map(|&t| tau_of_t(t, params.lambda)).collect();
    let beta = params.beta;
    let mut sc = Scratch::new(game);
    let means = rk4_solve(
        |tau, y, out| closure_drift_into(game, y, &sigma2, (-2.0 * tau).exp(), beta, &mut sc, out),
        init.mean.as_slice(),
        0.0,
        &taus,
        tau_step,
        |_, y| crate::dynamics::reproject(&layout, y),
    )?;
    let states = means
        .into_iter()
        .zip(sample_times)
        .map(|(m, &t)| MomentState {
            mean: BeliefProfile::from_flat_unchecked(layout.clone(), m),
            variance: sigma2.iter().map(|&s| variance_closed_form(s, params.lambda, t)).collect(),
        })
        .collect();
    Ok(MomentTrajectory { times: sample_times.to_vec(), states })
}

/// Integrate the tau-time mean system until the drift's max-norm falls below
/// `tol` or `tau_max` is reached. Returns the final mean, the tau reached and
/// whether the tolerance was met.
pub fn settle_moments_tau(
    game: &PopulationNetworkGame,
    initial: &MomentState,
    params: &SfpParams,
    tau_step: f64,
    tol: f64,
    tau_max: f64,
) -> Result<(BeliefProfile, f64, bool)> {
    params.validate()?;
    let init = pinned(game, initial)?;
    let layout = game.layout().clone();
    let sigma2 = init.variance.clone();
    let beta = params.beta;
    let mut y = init.mean.as_slice().to_vec();
    let mut drift = vec![0.0; y.len()];
    let mut tau = 0.0f64;
    let mut sc = Scratch::new(game);
    // check convergence every unit of tau
    let chunk = 1.0;
    loop {
        let scale = (-2.0 * tau).exp();
        closure_drift_into(game, &y, &sigma2, scale, beta, &mut sc, &mut drift);
        let norm = drift.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if norm <= tol {
            return Ok((BeliefProfile::from_flat_unchecked(layout, y), tau, true));
        }
        if tau >= tau_max {
            return Ok((BeliefProfile::from_flat_unchecked(layout, y), tau, false));
        }
        let next = (tau + chunk).min(tau_max);
        let mut out = rk4_solve(
            |s, v, o| closure_drift_into(game, v, &sigma2, (-2.0 * s).exp(), beta, &mut sc, o),
            &y,
            tau,
            &[next],
            tau_step,
            |_, v| crate::dynamics::reproject(&layout, v),
        )?;
        y = out.pop().unwrap();
        tau = next;
    }
}
