//! Logit response, homogeneous belief dynamics and the RK4 integrator.

use std::fmt::Write as _;

use crate::error::{Result, SfpError};
use crate::game::{BeliefProfile, Layout, MixedStrategy, PopulationNetworkGame, SIMPLEX_TOL};

/// Default RK4 step, in t-time as well as in tau-time.
pub const DEFAULT_STEP: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SfpParams {
    pub beta: f64,
    pub lambda: f64,
}

impl SfpParams {
    pub fn new(beta: f64, lambda: f64) -> Result<Self> {
        let p = Self { beta, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(SfpError::InvalidParameter(format!("beta = {} must be finite and >= 0", self.beta)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(SfpError::InvalidParameter(format!("lambda = {} must be finite and >= 0", self.lambda)));
        }
        Ok(())
    }

    /// `1 / (lambda + t + 1)`
    #[inline]
    pub fn rate(&self, t: f64) -> f64 {
        1.0 / (self.lambda + t + 1.0)
    }
}

/// `u_is = sum_j e_s^T A_ij mu_j`, written into `out` (overwritten).
pub(crate) fn utilities_into(game: &PopulationNetworkGame, i: usize, flat: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let layout = game.layout();
    for nb in game.neighbors(i) {
        nb.payoff.mul_vec_add(&flat[layout.range(nb.population)], out);
    }
}

/// Expected payoff of each pure strategy of population `i` against `beliefs`.
pub fn utilities(game: &PopulationNetworkGame, i: usize, beliefs: &BeliefProfile) -> Result<Vec<f64>> {
    game.check_population(i)?;
    game.check_profile(beliefs)?;
    let mut u = vec![0.0; game.strategies(i)];
    utilities_into(game, i, beliefs.as_slice(), &mut u);
    Ok(u)
}

/// Replace `v` by `softmax(beta * v)`.
#[inline]
pub(crate) fn logit_in_place(v: &mut [f64], beta: f64) {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (beta * (*x - m)).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}

/// Logit (softmax) response `x_s = exp(beta u_s) / sum exp(beta u_s')`.
pub fn logit(u: &[f64], beta: f64) -> MixedStrategy {
    let mut v = u.to_vec();
    logit_in_place(&mut v, beta);
    MixedStrategy::from_vec_unchecked(v)
}

/// Mixed strategy of every population in response to `flat` beliefs; static
/// populations report their fixed strategy.
pub(crate) fn response_into(game: &PopulationNetworkGame, flat: &[f64], beta: f64, out: &mut [f64]) {
    let layout = game.layout();
    for i in 0..game.population_count() {
        let r = layout.range(i);
        match game.fixed_strategy(i) {
            Some(f) => out[r].copy_from_slice(f.probabilities()),
            None => {
                utilities_into(game, i, flat, &mut out[r.clone()]);
                logit_in_place(&mut out[r], beta);
            }
        }
    }
}

/// `d mu / d tau = x - mu`, static populations held still.
pub(crate) fn autonomous_rhs_into(game: &PopulationNetworkGame, flat: &[f64], beta: f64, out: &mut [f64]) {
    response_into(game, flat, beta, out);
    let layout = game.layout();
    for i in 0..game.population_count() {
        let r = layout.range(i);
        if game.is_static(i) {
            out[r].fill(0.0);
        } else {
            for k in r {
                out[k] -= flat[k];
            }
        }
    }
}

pub(crate) fn homogeneous_rhs_into(
    game: &PopulationNetworkGame,
    flat: &[f64],
    t: f64,
    params: &SfpParams,
    out: &mut [f64],
) {
    autonomous_rhs_into(game, flat, params.beta, out);
    let c = params.rate(t);
    for d in out.iter_mut() {
        *d *= c;
    }
}

/// `d mu_i / dt = (x_i - mu_i) / (lambda + t + 1)` for every coordinate.
pub fn homogeneous_rhs(
    game: &PopulationNetworkGame,
    state: &BeliefProfile,
    t: f64,
    params: &SfpParams,
) -> Result<Vec<f64>> {
    game.check_profile(state)?;
    let mut out = vec![0.0; state.layout().dim()];
    homogeneous_rhs_into(game, state.as_slice(), t, params, &mut out);
    Ok(out)
}

/// Limit equation `d mu_i / d tau = x_i - mu_i`.
pub fn autonomous_rhs(game: &PopulationNetworkGame, state: &BeliefProfile, params: &SfpParams) -> Result<Vec<f64>> {
    game.check_profile(state)?;
    let mut out = vec![0.0; state.layout().dim()];
    autonomous_rhs_into(game, state.as_slice(), params.beta, &mut out);
    Ok(out)
}

/// `tau = ln((lambda + t + 1) / (lambda + 1))`
pub fn tau_of_t(t: f64, lambda: f64) -> f64 {
    (t / (lambda + 1.0)).ln_1p()
}

/// Inverse of [`tau_of_t`].
pub fn t_of_tau(tau: f64, lambda: f64) -> f64 {
    (lambda + 1.0) * tau.exp_m1()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<BeliefProfile>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&BeliefProfile> {
        self.states.last()
    }

    /// Map every time stamp, e.g. from tau-time to t-time.
    pub fn map_times(mut self, f: impl Fn(f64) -> f64) -> Self {
        for t in &mut self.times {
            *t = f(*t);
        }
        self
    }

    /// CSV with header `t,pop<i>_s<k>,...` (1-based indices).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        if let Some(first) = self.states.first() {
            let layout = first.layout();
            for i in 0..layout.populations() {
                for k in 0..layout.count(i) {
                    let _ = write!(s, ",pop{}_s{}", i + 1, k + 1);
                }
            }
        }
        s.push('\n');
        for (t, st) in self.times.iter().zip(&self.states) {
            s.push_str(&fmt_f64(*t));
            for v in st.as_slice() {
                s.push(',');
                s.push_str(&fmt_f64(*v));
            }
            s.push('\n');
        }
        s
    }
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Classical RK4 on plain vectors.
///
/// Steps from `t0` towards each of `stops` in turn (which must be increasing
/// and `> t0`), shortening the last step before every stop so it is hit
/// exactly. `after_step` sees every accepted state and may modify it.
pub fn rk4_solve<F, G>(
    mut rhs: F,
    y0: &[f64],
    t0: f64,
    stops: &[f64],
    step: f64,
    mut after_step: G,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    G: FnMut(f64, &mut [f64]),
{
    if !(step.is_finite() && step > 0.0) {
        return Err(SfpError::InvalidParameter(format!("step = {step} must be positive")));
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut t = t0;
    let mut out = Vec::with_capacity(stops.len());
    for &stop in stops {
        if stop == t {
            out.push(y.clone());
            continue;
        }
        if !(stop > t) {
            return Err(SfpError::InvalidParameter(format!("stop times must increase, got {stop} after {t}")));
        }
        // count steps from the segment start to avoid accumulating round-off in t
        let start = t;
        let steps = ((stop - start) / step).ceil().max(1.0) as u64;
        for n_step in 0..steps {
            let t_next = if n_step + 1 == steps { stop } else { start + (n_step + 1) as f64 * step };
            let h = t_next - t;
            rhs(t, &y, &mut k1);
            for k in 0..n {
                tmp[k] = y[k] + 0.5 * h * k1[k];
            }
            rhs(t + 0.5 * h, &tmp, &mut k2);
            for k in 0..n {
                tmp[k] = y[k] + 0.5 * h * k2[k];
            }
            rhs(t + 0.5 * h, &tmp, &mut k3);
            for k in 0..n {
                tmp[k] = y[k] + h * k3[k];
            }
            rhs(t + h, &tmp, &mut k4);
            for k in 0..n {
                y[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
            }
            t = t_next;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(SfpError::NonFinite { t });
            }
            after_step(t, &mut y);
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Clip negatives and renormalise each population block, but only if its sum
/// has drifted from 1 by more than `SIMPLEX_TOL` or it has a negative entry.
pub(crate) fn reproject(layout: &Layout, flat: &mut [f64]) {
    for i in 0..layout.populations() {
        let block = &mut flat[layout.range(i)];
        let sum: f64 = block.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL || block.iter().any(|v| *v < 0.0) {
            for v in block.iter_mut() {
                *v = v.max(0.0);
            }
            let s: f64 = block.iter().sum();
            for v in block.iter_mut() {
                *v /= s;
            }
        }
    }
}

/// Integrate a belief ODE from `t0` to `t1` storing every RK4 step.
pub fn integrate<F>(rhs: F, initial: &BeliefProfile, t0: f64, t1: f64, step: f64) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(t1 > t0) {
        return Err(SfpError::InvalidParameter(format!("t1 = {t1} must exceed t0 = {t0}")));
    }
    let steps = ((t1 - t0) / step).ceil().max(1.0) as usize;
    let stops: Vec<f64> = (1..=steps).map(|k| if k == steps { t1 } else { t0 + k as f64 * step }).collect();
    let mut traj = integrate_at(rhs, initial, t0, &stops, step)?;
    traj.times.insert(0, t0);
    traj.states.insert(0, initial.clone());
    Ok(traj)
}

/// Integrate a belief ODE and store the state only at `sample_times`
/// (increasing, all `>= t0`).
pub fn integrate_at<F>(rhs: F, initial: &BeliefProfile, t0: f64, sample_times: &[f64], step: f64) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let layout = initial.layout().clone();
    let states = rk4_solve(rhs, initial.as_slice(), t0, sample_times, step, |_, y| reproject(&layout, y))?;
    Ok(Trajectory {
        times: sample_times.to_vec(),
        states: states.into_iter().map(|s| BeliefProfile::from_flat_unchecked(layout.clone(), s)).collect(),
    })
}

/// Homogeneous dynamics in t-time, sampled at `sample_times`.
pub fn homogeneous_trajectory(
    game: &PopulationNetworkGame,
    initial: &BeliefProfile,
    params: &SfpParams,
    sample_times: &[f64],
    step: f64,
) -> Result<Trajectory> {
    game.check_profile(initial)?;
    params.validate()?;
    let mut init = initial.clone().into_flat();
    game.pin_static(&mut init);
    let init = BeliefProfile::from_flat_unchecked(game.layout().clone(), init);
    integrate_at(|t, y, out| homogeneous_rhs_into(game, y, t, params, out), &init, 0.0, sample_times, step)
}

/// Homogeneous dynamics integrated in tau-time (autonomous form) and
/// reported at the t-times `sample_times`.
pub fn homogeneous_trajectory_tau(
    game: &PopulationNetworkGame,
    initial: &BeliefProfile,
    params: &SfpParams,
    sample_times: &[f64],
    tau_step: f64,
) -> Result<Trajectory> {
    game.check_profile(initial)?;
    params.validate()?;
    let mut init = initial.clone().into_flat();
    game.pin_static(&mut init);
    let init = BeliefProfile::from_flat_unchecked(game.layout().clone(), init);
    let taus: Vec<f64> = sample_times.iter().map(|&t| tau_of_t(t, params.lambda)).collect();
    let beta = params.beta;
    let traj = integrate_at(|_, y, out| autonomous_rhs_into(game, y, beta, out), &init, 0.0, &taus, tau_step)?;
    Ok(Trajectory { times: sample_times.to_vec(), states: traj.states })
}
