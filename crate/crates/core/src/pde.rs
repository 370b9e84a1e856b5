//! Belief-density transport for binary populations.
//!
//! The density `p(mu, t)` of beliefs about population `i` (with `mu` the
//! probability of its first strategy) obeys
//! `dp/dt = -d/dmu [ p (xbar_i - mu) / (lambda + t + 1) ]`, where `xbar_i` is
//! the mean strategy of `i` obtained by integrating the logit response over
//! the densities of its neighbours.
//!
//! Two solvers are provided. [`PdeScheme::Upwind`] is a first-order
//! conservative finite-volume scheme on a fixed grid. [`PdeScheme::Characteristics`]
//! moves the grid with the flow: the velocity is affine in `mu` with slope
//! `-1/(lambda + t + 1)` shared by all points, so every grid stays uniform, its
//! spacing shrinks by `s = (lambda + 1)/(lambda + t + 1)` and densities grow by
//! `1/s`. Only one characteristic per population has to be integrated, which
//! avoids the numerical diffusion of the fixed-grid scheme.

use std::fmt::Write as _;

use crate::dynamics::{fmt_f64, logit_in_place, rk4_solve, tau_of_t, SfpParams};
use crate::error::{Result, SfpError};
use crate::game::{BeliefProfile, MixedStrategy, PopulationNetworkGame};
use crate::moments::{MomentState, MomentTrajectory};

pub const CFL_LIMIT: f64 = 0.9;
pub const DEFAULT_GRID: usize = 200;
pub const MIN_GRID: usize = 50;

/// Density sampled at the uniform nodes `lo + k h`, `k = 0..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    lo: f64,
    h: f64,
    density: Vec<f64>,
}

impl DensityGrid {
    /// Grid on `[0, 1]` with the given node values.
    pub fn on_unit_interval(density: Vec<f64>) -> Result<Self> {
        if density.len() < 3 {
            return Err(SfpError::InvalidParameter("a density grid needs at least 3 nodes".into()));
        }
        if density.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(SfpError::InvalidParameter("densities must be finite and non-negative".into()));
        }
        let h = 1.0 / (density.len() - 1) as f64;
        Ok(Self { lo: 0.0, h, density })
    }

    /// Number of intervals `M`.
    pub fn intervals(&self) -> usize {
        self.density.len() - 1
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.density.len()).map(|k| self.node(k)).collect()
    }

    /// Trapezoid weight `h p_k` (halved at the ends) of every node.
    fn weights(&self) -> Vec<f64> {
        let last = self.density.len() - 1;
        self.density
            .iter()
            .enumerate()
            .map(|(k, p)| if k == 0 || k == last { 0.5 * self.h * p } else { self.h * p })
            .collect()
    }

    /// Trapezoid-rule total mass.
    pub fn mass(&self) -> f64 {
        self.weights().iter().sum()
    }

    pub fn max_density(&self) -> f64 {
        self.density.iter().fold(0.0, |a, b| a.max(*b))
    }

    pub fn boundary_density(&self) -> (f64, f64) {
        (self.density[0], *self.density.last().unwrap())
    }

    /// Cloud-in-cell deposit onto `bins + 1` uniform nodes of `[0, 1]`,
    /// returned as node densities; mass is preserved.
    pub fn resample_unit(&self, bins: usize) -> Vec<f64> {
        let h0 = 1.0 / bins as f64;
        let mut mass = vec![0.0; bins + 1];
        for (k, w) in self.weights().into_iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let x = (self.node(k) / h0).clamp(0.0, bins as f64);
            let left = (x.floor() as usize).min(bins - 1);
            let frac = x - left as f64;
            mass[left] += w * (1.0 - frac);
            mass[left + 1] += w * frac;
        }
        mass.iter()
            .enumerate()
            .map(|(k, m)| if k == 0 || k == bins { m / (0.5 * h0) } else { m / h0 })
            .collect()
    }
}

/// Mass-normalised trapezoid mean and central variance.
pub fn grid_moments(grid: &DensityGrid) -> (f64, f64) {
    let w = grid.weights();
    let total: f64 = w.iter().sum();
    let mean = w.iter().enumerate().map(|(k, wk)| wk * grid.node(k)).sum::<f64>() / total;
    let var = w.iter().enumerate().map(|(k, wk)| wk * (grid.node(k) - mean).powi(2)).sum::<f64>() / total;
    (mean, var.max(0.0))
}

/// `Beta(a, b)` density on `M + 1` nodes of `[0, 1]`, renormalised to unit
/// trapezoid mass.
pub fn density_from_beta(a: f64, b: f64, intervals: usize) -> Result<DensityGrid> {
    if !(a.is_finite() && b.is_finite() && a > 1.0 && b > 1.0) {
        return Err(SfpError::InvalidParameter(format!(
            "Beta({a}, {b}) puts mass at the boundary; need a, b > 1"
        )));
    }
    if intervals < MIN_GRID {
        return Err(SfpError::InvalidParameter(format!("grid needs M >= {MIN_GRID}, got {intervals}")));
    }
    let log_norm = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b);
    let h = 1.0 / intervals as f64;
    let mut p: Vec<f64> = (0..=intervals)
        .map(|k| {
            if k == 0 || k == intervals {
                0.0
            } else {
                let x = k as f64 * h;
                (log_norm + (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p()).exp()
            }
        })
        .collect();
    let grid = DensityGrid { lo: 0.0, h, density: p.clone() };
    let mass = grid.mass();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(SfpError::InvalidParameter(format!("Beta({a}, {b}) is not resolved by a grid of {intervals} intervals")));
    }
    for v in &mut p {
        *v /= mass;
    }
    Ok(DensityGrid { lo: 0.0, h, density: p })
}

/// Smooth bump `(1 - z^2)^2` of half-width `half_width` centred on `mean`, on
/// `M + 1` nodes spanning its support, with unit trapezoid mass. Approximates
/// a point mass for the moving-grid solver.
pub fn density_peak(mean: f64, half_width: f64, intervals: usize) -> Result<DensityGrid> {
    if !(half_width > 0.0 && mean - half_width >= 0.0 && mean + half_width <= 1.0) {
        return Err(SfpError::InvalidParameter(format!("peak at {mean} of half-width {half_width} leaves [0, 1]")));
    }
    if intervals < MIN_GRID {
        return Err(SfpError::InvalidParameter(format!("grid needs M >= {MIN_GRID}, got {intervals}")));
    }
    let h = 2.0 * half_width / intervals as f64;
    let mut p: Vec<f64> = (0..=intervals)
        .map(|k| {
            let z = -1.0 + 2.0 * k as f64 / intervals as f64;
            (1.0 - z * z).max(0.0).powi(2)
        })
        .collect();
    let grid = DensityGrid { lo: mean - half_width, h, density: p.clone() };
    let mass = grid.mass();
    for v in &mut p {
        *v /= mass;
    }
    Ok(DensityGrid { lo: mean - half_width, h, density: p })
}

/// One density per learning population; static populations carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    grids: Vec<Option<DensityGrid>>,
}

impl DensityState {
    pub fn new(game: &PopulationNetworkGame, grids: Vec<Option<DensityGrid>>) -> Result<Self> {
        if grids.len() != game.population_count() {
            return Err(SfpError::ShapeMismatch(format!(
                "{} density grids for {} populations",
                grids.len(),
                game.population_count()
            )));
        }
        for (i, g) in grids.iter().enumerate() {
            if game.strategies(i) != 2 {
                return Err(SfpError::Unsupported(format!(
                    "density solver needs binary strategies; population {} has {}",
                    game.populations()[i].id,
                    game.strategies(i)
                )));
            }
            match (g, game.is_static(i)) {
                (None, false) => {
                    return Err(SfpError::InvalidParameter(format!("no density for learning population {i}")))
                }
                (Some(_), true) => {
                    return Err(SfpError::InvalidParameter(format!("static population {i} cannot carry a density")))
                }
                _ => {}
            }
        }
        Ok(Self { grids })
    }

    /// The same density for every learning population.
    pub fn uniform_init(game: &PopulationNetworkGame, grid: &DensityGrid) -> Result<Self> {
        let grids = (0..game.population_count()).map(|i| (!game.is_static(i)).then(|| grid.clone())).collect();
        Self::new(game, grids)
    }

    pub fn grid(&self, i: usize) -> Option<&DensityGrid> {
        self.grids[i].as_ref()
    }

    pub fn grids(&self) -> &[Option<DensityGrid>] {
        &self.grids
    }

    /// Grid mean and variance per population (static ones pinned, variance 0).
    pub fn moments(&self, game: &PopulationNetworkGame) -> MomentState {
        let mut mean = Vec::with_capacity(2 * self.grids.len());
        let mut var = Vec::with_capacity(2 * self.grids.len());
        for (i, g) in self.grids.iter().enumerate() {
            match g {
                Some(g) => {
                    let (m, v) = grid_moments(g);
                    mean.extend([m, 1.0 - m]);
                    var.extend([v, v]);
                }
                None => {
                    mean.extend_from_slice(game.fixed_strategy(i).unwrap().probabilities());
                    var.extend([0.0, 0.0]);
                }
            }
        }
        let mean = BeliefProfile::from_flat_unchecked(game.layout().clone(), mean);
        MomentState::clamped(mean, var).expect("grid moments are consistent")
    }
}

/// Quadrature nodes and weights for one neighbour: belief in the first
/// strategy and its trapezoid weight (a single node of weight 1 for a static
/// neighbour).
struct Marginal {
    mu: Vec<f64>,
    w: Vec<f64>,
}

fn marginal(game: &PopulationNetworkGame, j: usize, grid: Option<&DensityGrid>) -> Marginal {
    match grid {
        Some(g) => {
            let w = g.weights();
            let total: f64 = w.iter().sum();
            let (mu, w): (Vec<f64>, Vec<f64>) = w
                .iter()
                .enumerate()
                .filter(|(_, wk)| **wk > 0.0)
                .map(|(k, wk)| (g.node(k), wk / total))
                .unzip();
            Marginal { mu, w }
        }
        None => Marginal { mu: vec![game.fixed_strategy(j).unwrap()[0]], w: vec![1.0] },
    }
}

/// Tensor-product quadrature of the logit response of population `i`.
/// `marginals[n]` belongs to the `n`-th neighbour of `i`.
fn mean_choice(game: &PopulationNetworkGame, i: usize, marginals: &[&Marginal], beta: f64) -> [f64; 2] {
    let nbs = game.neighbors(i);
    // u(mu) = base + sum_n slope_n * mu_n
    let mut base = [0.0; 2];
    let mut slopes = Vec::with_capacity(nbs.len());
    for nb in nbs {
        let a = &nb.payoff;
        base[0] += a.get(0, 1);
        base[1] += a.get(1, 1);
        slopes.push([a.get(0, 0) - a.get(0, 1), a.get(1, 0) - a.get(1, 1)]);
    }
    let mut acc = [0.0; 2];
    fn recurse(
        n: usize,
        u: [f64; 2],
        w: f64,
        marginals: &[&Marginal],
        slopes: &[[f64; 2]],
        beta: f64,
        acc: &mut [f64; 2],
    ) {
        if n == marginals.len() {
            let mut x = u;
            logit_in_place(&mut x, beta);
            acc[0] += w * x[0];
            acc[1] += w * x[1];
            return;
        }
        let m = marginals[n];
        for (mu, wk) in m.mu.iter().zip(&m.w) {
            let un = [u[0] + slopes[n][0] * mu, u[1] + slopes[n][1] * mu];
            recurse(n + 1, un, w * wk, marginals, slopes, beta, acc);
        }
    }
    recurse(0, base, 1.0, marginals, &slopes, beta, &mut acc);
    let s = acc[0] + acc[1];
    [acc[0] / s, acc[1] / s]
}

fn mean_choices(game: &PopulationNetworkGame, state: &DensityState, beta: f64) -> Vec<[f64; 2]> {
    let marg: Vec<Marginal> = (0..game.population_count()).map(|j| marginal(game, j, state.grid(j))).collect();
    (0..game.population_count())
        .map(|i| match game.fixed_strategy(i) {
            Some(f) => [f[0], f[1]],
            None => {
                let ms: Vec<&Marginal> = game.neighbors(i).iter().map(|nb| &marg[nb.population]).collect();
                mean_choice(game, i, &ms, beta)
            }
        })
        .collect()
}

/// Mean mixed strategy of population `i` under the current belief densities.
pub fn mean_choice_from_density(
    game: &PopulationNetworkGame,
    i: usize,
    state: &DensityState,
    beta: f64,
) -> Result<MixedStrategy> {
    game.check_population(i)?;
    if state.grids.len() != game.population_count() {
        return Err(SfpError::ShapeMismatch("density state does not match the game".into()));
    }
    if game.strategies(i) != 2 {
        return Err(SfpError::Unsupported(format!("population {i} is not binary")));
    }
    if let Some(f) = game.fixed_strategy(i) {
        return Ok(f.clone());
    }
    let marg: Vec<Marginal> =
        game.neighbors(i).iter().map(|nb| marginal(game, nb.population, state.grid(nb.population))).collect();
    let ms: Vec<&Marginal> = marg.iter().collect();
    Ok(MixedStrategy::from_vec_unchecked(mean_choice(game, i, &ms, beta).to_vec()))
}

/// Largest stable upwind step at time `t` (infinite if nothing moves).
pub fn cfl_dt(game: &PopulationNetworkGame, state: &DensityState, t: f64, params: &SfpParams) -> f64 {
    let xbar = mean_choices(game, state, params.beta);
    let c = params.rate(t);
    let mut dt = f64::INFINITY;
    for (i, g) in state.grids.iter().enumerate() {
        if let Some(g) = g {
            let vmax = (xbar[i][0] - g.node(0)).abs().max((xbar[i][0] - g.node(g.intervals())).abs()) * c;
            if vmax > 0.0 {
                dt = dt.min(CFL_LIMIT * g.h / vmax);
            }
        }
    }
    dt
}

/// One explicit-Euler first-order upwind step on fixed grids.
pub fn pde_step(
    state: &DensityState,
    game: &PopulationNetworkGame,
    t: f64,
    dt: f64,
    params: &SfpParams,
) -> Result<DensityState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SfpError::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    let xbar = mean_choices(game, state, params.beta);
    let c = params.rate(t);
    let mut grids = state.grids.clone();
    for (i, g) in grids.iter_mut().enumerate() {
        let Some(g) = g else { continue };
        let m = g.intervals();
        let vmax = (0..=m).map(|k| ((xbar[i][0] - g.node(k)) * c).abs()).fold(0.0, f64::max);
        let courant = dt * vmax / g.h;
        if courant > CFL_LIMIT * (1.0 + 1e-12) {
            return Err(SfpError::Cfl { courant, limit: CFL_LIMIT });
        }
        // fluxes at faces k + 1/2, k = 0..m-1; the outermost faces carry nothing
        let p = &g.density;
        let mut flux = vec![0.0; m];
        for (k, f) in flux.iter_mut().enumerate().take(m - 1).skip(1) {
            let v = (xbar[i][0] - (g.node(k) + 0.5 * g.h)) * c;
            *f = if v > 0.0 { v * p[k] } else { v * p[k + 1] };
        }
        let mut next = p.clone();
        for k in 1..m {
            next[k] = p[k] - dt / g.h * (flux[k] - flux[k - 1]);
        }
        next[0] = 0.0;
        next[m] = 0.0;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SfpError::NonFinite { t: t + dt });
        }
        g.density = next;
    }
    Ok(DensityState { grids })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeScheme {
    Upwind,
    #[default]
    Characteristics,
}

#[derive(Debug, Clone)]
pub struct PdeRun {
    pub times: Vec<f64>,
    pub snapshots: Vec<DensityState>,
    pub moments: MomentTrajectory,
}

impl PdeRun {
    /// Snapshot CSV `t,mu,pop<i>_density` for learning populations, each
    /// density deposited on `bins + 1` uniform nodes of `[0, 1]`.
    pub fn density_csv(&self, game: &PopulationNetworkGame, bins: usize) -> String {
        let learners: Vec<usize> = game.learning_populations().collect();
        let mut s = String::from("t,mu");
        for i in &learners {
            let _ = write!(s, ",pop{}_density", i + 1);
        }
        s.push('\n');
        for (t, snap) in self.times.iter().zip(&self.snapshots) {
            let cols: Vec<Vec<f64>> = learners.iter().map(|&i| snap.grid(i).unwrap().resample_unit(bins)).collect();
            for k in 0..=bins {
                s.push_str(&fmt_f64(*t));
                s.push(',');
                s.push_str(&fmt_f64(k as f64 / bins as f64));
                for c in &cols {
                    s.push(',');
                    s.push_str(&fmt_f64(c[k]));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Integrate the density from `t = 0` and record snapshots at `snapshot_times`
/// (increasing, within `[0, t_end]`; `t_end` is always recorded).
pub fn run_pde(
    game: &PopulationNetworkGame,
    initial: &DensityState,
    t_end: f64,
    params: &SfpParams,
    scheme: PdeScheme,
    snapshot_times: &[f64],
) -> Result<PdeRun> {
    params.validate()?;
    if !(t_end > 0.0) {
        return Err(SfpError::InvalidParameter(format!("t_end = {t_end} must be positive")));
    }
    let mut stops: Vec<f64> = snapshot_times.iter().copied().filter(|t| *t <= t_end).collect();
    if stops.windows(2).any(|w| w[1] <= w[0]) || stops.first().is_some_and(|t| *t < 0.0) {
        return Err(SfpError::InvalidParameter("snapshot times must be increasing and non-negative".into()));
    }
    if stops.last() != Some(&t_end) {
        stops.push(t_end);
    }
    let snapshots = match scheme {
        PdeScheme::Upwind => run_upwind(game, initial, params, &stops)?,
        PdeScheme::Characteristics => run_characteristics(game, initial, params, &stops, 1e-2)?,
    };
    let moments = MomentTrajectory { times: stops.clone(), states: snapshots.iter().map(|s| s.moments(game)).collect() };
    Ok(PdeRun { times: stops, snapshots, moments })
}

fn run_upwind(
    game: &PopulationNetworkGame,
    initial: &DensityState,
    params: &SfpParams,
    stops: &[f64],
) -> Result<Vec<DensityState>> {
    let mut state = initial.clone();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(stops.len());
    for &stop in stops {
        while t < stop {
            let dt = cfl_dt(game, &state, t, params).min(stop - t);
            state = pde_step(&state, game, t, dt, params)?;
            t = if stop - t <= dt { stop } else { t + dt };
        }
        out.push(state.clone());
    }
    Ok(out)
}

/// Moving-grid solver. The anchor of each grid is its mean; in tau-time the
/// anchors obey `dm/dtau = xbar - m` and the spread contracts by `e^{-tau}`.
fn run_characteristics(
    game: &PopulationNetworkGame,
    initial: &DensityState,
    params: &SfpParams,
    stops: &[f64],
    tau_step: f64,
) -> Result<Vec<DensityState>> {
    let n = game.population_count();
    let learners: Vec<usize> = game.learning_populations().collect();
    let anchors0: Vec<f64> = learners.iter().map(|&i| grid_moments(initial.grid(i).unwrap()).0).collect();
    let beta = params.beta;
    // geometry of the grid at a given tau and anchor
    let place = |i: usize, tau: f64, anchor: f64, m0: f64| -> DensityGrid {
        let g0 = initial.grid(i).unwrap();
        let s = (-tau).exp();
        DensityGrid {
            lo: anchor + s * (g0.lo - m0),
            h: s * g0.h,
            density: g0.density.iter().map(|p| p / s).collect(),
        }
    };
    let state_at = |tau: f64, y: &[f64]| -> DensityState {
        let mut grids: Vec<Option<DensityGrid>> = vec![None; n];
        for (slot, &i) in learners.iter().enumerate() {
            grids[i] = Some(place(i, tau, y[slot], anchors0[slot]));
        }
        DensityState { grids }
    };
    let taus: Vec<f64> = stops.iter().map(|&t| tau_of_t(t, params.lambda)).collect();
    let ys = rk4_solve(
        |tau, y, out| {
            let st = state_at(tau, y);
            let xbar = mean_choices(game, &st, beta);
            for (slot, &i) in learners.iter().enumerate() {
                out[slot] = xbar[i][0] - y[slot];
            }
        },
        &anchors0,
        0.0,
        &taus,
        tau_step,
        |_, _| {},
    )?;
    Ok(ys.iter().zip(&taus).map(|(y, &tau)| state_at(tau, y)).collect())
}
