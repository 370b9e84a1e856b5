//! Agent-based smooth fictitious play.
//!
//! Each agent of a learning population keeps a weight vector `kappa_j` over the
//! strategies of every neighbour population `j`. Its belief is the normalised
//! weight vector, it plays the logit response to its beliefs, and after every
//! step it adds the neighbour's mean mixed strategy `xbar_j` to `kappa_j`.
//! Updates are synchronous: all agents see the same pre-step means.
//!
//! Static populations have no agents; they report their fixed strategy as
//! their mean and observers' beliefs about them stay pinned to it.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{fmt_f64, logit_in_place, SfpParams};
use crate::error::{Result, SfpError};
use crate::game::{check_simplex, PopulationNetworkGame};

/// Initial belief distribution of one observer about one target population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefDist {
    /// Every agent starts with this belief.
    Point(Vec<f64>),
    /// Probability of the target's first strategy is `Beta(a, b)`; binary targets only.
    Beta { a: f64, b: f64 },
    Dirichlet(Vec<f64>),
}

impl BeliefDist {
    fn validate(&self, strategies: usize) -> Result<()> {
        match self {
            BeliefDist::Point(p) => {
                if p.len() != strategies {
                    return Err(SfpError::ShapeMismatch(format!("point belief of length {} for {strategies} strategies", p.len())));
                }
                check_simplex(p, "point belief")
            }
            BeliefDist::Beta { a, b } => {
                if strategies != 2 {
                    return Err(SfpError::InvalidParameter(format!("Beta beliefs need 2 strategies, target has {strategies}")));
                }
                if !(a.is_finite() && b.is_finite() && *a > 0.0 && *b > 0.0) {
                    return Err(SfpError::InvalidParameter(format!("Beta({a}, {b}) needs positive parameters")));
                }
                Ok(())
            }
            BeliefDist::Dirichlet(alpha) => {
                if alpha.len() != strategies {
                    return Err(SfpError::ShapeMismatch(format!("Dirichlet of order {} for {strategies} strategies", alpha.len())));
                }
                if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return Err(SfpError::InvalidParameter("Dirichlet parameters must be positive".into()));
                }
                Ok(())
            }
        }
    }

    /// Draw one belief into `out`.
    fn sample<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            BeliefDist::Point(p) => out.copy_from_slice(p),
            BeliefDist::Beta { a, b } => {
                // Beta as a ratio of Gamma variates
                let x = Gamma::new(*a, 1.0).unwrap().sample(rng);
                let y = Gamma::new(*b, 1.0).unwrap().sample(rng);
                out[0] = x / (x + y);
                out[1] = 1.0 - out[0];
            }
            BeliefDist::Dirichlet(alpha) => {
                let mut s = 0.0;
                for (o, a) in out.iter_mut().zip(alpha) {
                    *o = Gamma::new(*a, 1.0).unwrap().sample(rng);
                    s += *o;
                }
                for o in out.iter_mut() {
                    *o /= s;
                }
            }
        }
    }
}

/// Initial belief about `target`, for all observers or only for `observer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefSpec {
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer: Option<String>,
    pub dist: BeliefDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub agents: usize,
    pub params: SfpParams,
    pub steps: usize,
    pub seed: u64,
    /// Independent runs averaged by [`run_abm`].
    #[serde(default = "one")]
    pub runs: usize,
    /// Beliefs not covered here start as the uniform point mass.
    #[serde(default)]
    pub beliefs: Vec<BeliefSpec>,
    /// Steps at which statistics are recorded; every step when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<Vec<usize>>,
}

fn one() -> usize {
    1
}

impl SimConfig {
    pub fn new(agents: usize, params: SfpParams, steps: usize, seed: u64) -> Self {
        Self { agents, params, steps, seed, runs: 1, beliefs: Vec::new(), record: None }
    }

    /// Same distribution for every observer's belief about every learning population.
    pub fn with_common_belief(mut self, game: &PopulationNetworkGame, dist: BeliefDist) -> Self {
        self.beliefs = game
            .learning_populations()
            .map(|i| BeliefSpec { target: game.populations()[i].id.clone(), observer: None, dist: dist.clone() })
            .collect();
        self
    }

    pub fn validate(&self, game: &PopulationNetworkGame) -> Result<()> {
        self.params.validate()?;
        if self.agents == 0 {
            return Err(SfpError::InvalidParameter("at least one agent per population is required".into()));
        }
        if self.runs == 0 {
            return Err(SfpError::InvalidParameter("at least one run is required".into()));
        }
        if !(self.params.lambda > 0.0) {
            return Err(SfpError::InvalidParameter("agents need a positive initial weight sum lambda".into()));
        }
        for b in &self.beliefs {
            let t = game
                .index_of(&b.target)
                .ok_or_else(|| SfpError::InvalidParameter(format!("belief target {} is not a population", b.target)))?;
            if let Some(o) = &b.observer {
                if game.index_of(o).is_none() {
                    return Err(SfpError::InvalidParameter(format!("belief observer {o} is not a population")));
                }
            }
            b.dist.validate(game.strategies(t))?;
        }
        if let Some(r) = &self.record {
            if r.windows(2).any(|w| w[1] <= w[0]) || r.last().is_some_and(|&s| s > self.steps) {
                return Err(SfpError::InvalidParameter("record steps must increase and not exceed steps".into()));
            }
        }
        Ok(())
    }

    /// Distribution of `observer`'s beliefs about `target`; observer-specific
    /// entries win, later entries override earlier ones.
    fn dist_for(&self, game: &PopulationNetworkGame, observer: usize, target: usize) -> BeliefDist {
        if let Some(f) = game.fixed_strategy(target) {
            return BeliefDist::Point(f.probabilities().to_vec());
        }
        let oid = &game.populations()[observer].id;
        let tid = &game.populations()[target].id;
        let mut general = None;
        let mut specific = None;
        for b in &self.beliefs {
            if &b.target == tid {
                match &b.observer {
                    None => general = Some(&b.dist),
                    Some(o) if o == oid => specific = Some(&b.dist),
                    _ => {}
                }
            }
        }
        specific
            .or(general)
            .cloned()
            .unwrap_or_else(|| BeliefDist::Point(vec![1.0 / game.strategies(target) as f64; game.strategies(target)]))
    }

    fn record_steps(&self) -> Vec<usize> {
        self.record.clone().unwrap_or_else(|| (0..=self.steps).collect())
    }
}

/// Weights of all agents of one learning population.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPopulation {
    pub population: usize,
    pub agents: usize,
    /// Entries per agent (sum of the neighbours' strategy counts).
    stride: usize,
    /// `(neighbour, offset inside an agent's block, strategy count)`
    blocks: Vec<(usize, usize, usize)>,
    weights: Vec<f64>,
}

impl AgentPopulation {
    /// `kappa` of agent `k` about neighbour `j`.
    pub fn weights(&self, k: usize, j: usize) -> Option<&[f64]> {
        let &(_, off, len) = self.blocks.iter().find(|b| b.0 == j)?;
        Some(&self.weights[k * self.stride + off..k * self.stride + off + len])
    }

    /// Normalised belief of agent `k` about neighbour `j`.
    pub fn belief(&self, k: usize, j: usize) -> Option<Vec<f64>> {
        let w = self.weights(k, j)?;
        let s: f64 = w.iter().sum();
        Some(w.iter().map(|v| v / s).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbmState {
    pub t: u64,
    /// `None` for static populations.
    pub populations: Vec<Option<AgentPopulation>>,
}

fn run_seed(seed: u64, run: u64) -> u64 {
    // splitmix64 finaliser keeps nearby (seed, run) pairs apart
    let mut z = seed ^ run.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sample initial weights `kappa = lambda * mu`. Each agent draws from its own
/// ChaCha stream, so the state depends only on `(seed, run)`.
pub fn init_population(config: &SimConfig, game: &PopulationNetworkGame, seed: u64) -> Result<AbmState> {
    config.validate(game)?;
    let lambda = config.params.lambda;
    let mut pops = Vec::with_capacity(game.population_count());
    for i in 0..game.population_count() {
        if game.is_static(i) {
            pops.push(None);
            continue;
        }
        let mut blocks = Vec::new();
        let mut stride = 0;
        for nb in game.neighbors(i) {
            let len = game.strategies(nb.population);
            blocks.push((nb.population, stride, len));
            stride += len;
        }
        let dists: Vec<BeliefDist> = blocks.iter().map(|b| config.dist_for(game, i, b.0)).collect();
        let n = config.agents;
        let mut weights = vec![0.0; n * stride];
        for k in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((i as u64) << 40) | k as u64);
            let agent = &mut weights[k * stride..(k + 1) * stride];
            for (&(_, off, len), d) in blocks.iter().zip(&dists) {
                let slot = &mut agent[off..off + len];
                d.sample(&mut rng, slot);
                for v in slot.iter_mut() {
                    *v *= lambda;
                }
            }
        }
        pops.push(Some(AgentPopulation { population: i, agents: n, stride, blocks, weights }));
    }
    Ok(AbmState { t: 0, populations: pops })
}

/// Mixed strategy of every agent, `agents x |S_i|` row-major per population
/// (empty for static populations).
pub fn agent_strategies(state: &AbmState, game: &PopulationNetworkGame, beta: f64) -> Vec<Vec<f64>> {
    state
        .populations
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let Some(p) = p else { return Vec::new() };
            let si = game.strategies(i);
            let nbs = game.neighbors(i);
            let mut out = vec![0.0; p.agents * si];
            if si == 2 && p.blocks.iter().all(|b| b.2 == 2) {
                binary_strategies(p, game, i, beta, &mut out);
                return out;
            }
            let mut belief = vec![0.0; p.stride];
            for k in 0..p.agents {
                let w = &p.weights[k * p.stride..(k + 1) * p.stride];
                let x = &mut out[k * si..(k + 1) * si];
                for (nb, &(_, off, len)) in nbs.iter().zip(&p.blocks) {
                    let kap = &w[off..off + len];
                    let s: f64 = kap.iter().sum();
                    let mu = &mut belief[off..off + len];
                    for (m, v) in mu.iter_mut().zip(kap) {
                        *m = v / s;
                    }
                    nb.payoff.mul_vec_add(mu, x);
                }
                logit_in_place(x, beta);
            }
            out
        })
        .collect()
}

/// Two-strategy populations facing two-strategy neighbours: the logit
/// response depends only on the payoff difference `u_0 - u_1`.
fn binary_strategies(p: &AgentPopulation, game: &PopulationNetworkGame, i: usize, beta: f64, out: &mut [f64]) {
    let diffs: Vec<[f64; 2]> = game
        .neighbors(i)
        .iter()
        .map(|nb| [nb.payoff.get(0, 0) - nb.payoff.get(1, 0), nb.payoff.get(0, 1) - nb.payoff.get(1, 1)])
        .collect();
    for (w, x) in p.weights.chunks_exact(p.stride).zip(out.chunks_exact_mut(2)) {
        let mut du = 0.0;
        for (kap, d) in w.chunks_exact(2).zip(&diffs) {
            du += (d[0] * kap[0] + d[1] * kap[1]) / (kap[0] + kap[1]);
        }
        let z = beta * du;
        let e = (-z.abs()).exp();
        let (hi, lo) = (1.0 / (1.0 + e), e / (1.0 + e));
        if z >= 0.0 {
            x[0] = hi;
            x[1] = lo;
        } else {
            x[0] = lo;
            x[1] = hi;
        }
    }
}

/// Population mean strategies; static populations report their fixed strategy.
fn mean_strategies(game: &PopulationNetworkGame, strategies: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..game.population_count())
        .map(|i| match game.fixed_strategy(i) {
            Some(f) => f.probabilities().to_vec(),
            None => {
                let si = game.strategies(i);
                let xs = &strategies[i];
                let n = xs.len() / si;
                let mut m = vec![0.0; si];
                for row in xs.chunks(si) {
                    for (a, b) in m.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                m.iter_mut().for_each(|v| *v /= n as f64);
                m
            }
        })
        .collect()
}

fn apply_update(state: &mut AbmState, xbar: &[Vec<f64>]) {
    for p in state.populations.iter_mut().flatten() {
        // the increment is the same for every agent
        let mut inc = vec![0.0; p.stride];
        for &(j, off, len) in &p.blocks {
            inc[off..off + len].copy_from_slice(&xbar[j]);
        }
        for w in p.weights.chunks_exact_mut(p.stride) {
            for (v, x) in w.iter_mut().zip(&inc) {
                *v += x;
            }
        }
    }
    state.t += 1;
}

/// One synchronous step: every agent adds the pre-step mean strategy of each
/// neighbour to its weights.
pub fn abm_step(state: &AbmState, game: &PopulationNetworkGame, params: &SfpParams) -> AbmState {
    let xs = agent_strategies(state, game, params.beta);
    let xbar = mean_strategies(game, &xs);
    let mut next = state.clone();
    apply_update(&mut next, &xbar);
    next
}

/// Per-population statistics at one time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PopStats {
    pub mean_strategy: Vec<f64>,
    /// Across-agent variance of each strategy probability.
    pub strategy_var: Vec<f64>,
    /// Mean belief about this population, pooled over all observers.
    pub belief_mean: Vec<f64>,
    pub belief_var: Vec<f64>,
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut n, mut s) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        s += v;
    }
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = s / n as f64;
    let var = values.map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
    (m, var)
}

/// Exact population (divide-by-n) moments of strategies and beliefs.
pub fn population_stats(state: &AbmState, game: &PopulationNetworkGame, beta: f64) -> Vec<PopStats> {
    let xs = agent_strategies(state, game, beta);
    stats_from(state, game, &xs)
}

fn stats_from(state: &AbmState, game: &PopulationNetworkGame, xs: &[Vec<f64>]) -> Vec<PopStats> {
    (0..game.population_count())
        .map(|i| {
            let si = game.strategies(i);
            if let Some(f) = game.fixed_strategy(i) {
                return PopStats {
                    mean_strategy: f.probabilities().to_vec(),
                    strategy_var: vec![0.0; si],
                    belief_mean: f.probabilities().to_vec(),
                    belief_var: vec![0.0; si],
                };
            }
            let mut st = PopStats::default();
            for s in 0..si {
                let (m, v) = mean_var(xs[i].iter().skip(s).step_by(si).copied());
                st.mean_strategy.push(m);
                st.strategy_var.push(v);
                // beliefs about i held by agents of every learning neighbour
                let observers: Vec<(&AgentPopulation, usize, f64)> = game
                    .neighbors(i)
                    .iter()
                    .filter_map(|nb| state.populations[nb.population].as_ref())
                    .map(|p| {
                        let &(_, off, len) = p.blocks.iter().find(|b| b.0 == i).unwrap();
                        (p, off, len as f64)
                    })
                    .collect();
                let it = observers.iter().flat_map(|&(p, off, _)| {
                    (0..p.agents).map(move |k| {
                        let w = &p.weights[k * p.stride + off..];
                        let kap = &w[..si];
                        kap[s] / kap.iter().sum::<f64>()
                    })
                });
                let (bm, bv) = mean_var(it);
                st.belief_mean.push(bm);
                st.belief_var.push(bv);
            }
            st
        })
        .collect()
}

/// Statistics recorded over one or more runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AbmSeries {
    pub times: Vec<usize>,
    /// `stats[n][i]`: population `i` at `times[n]`.
    pub stats: Vec<Vec<PopStats>>,
}

impl AbmSeries {
    /// `t,pop<i>_mean_s<k>,pop<i>_belief_mean_s<k>,pop<i>_belief_var_s<k>,pop<i>_strat_var_s<k>,...`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        if let Some(first) = self.stats.first() {
            for (i, p) in first.iter().enumerate() {
                for k in 0..p.mean_strategy.len() {
                    let (a, b) = (i + 1, k + 1);
                    let _ = write!(s, ",pop{a}_mean_s{b},pop{a}_belief_mean_s{b},pop{a}_belief_var_s{b},pop{a}_strat_var_s{b}");
                }
            }
        }
        s.push('\n');
        for (t, row) in self.times.iter().zip(&self.stats) {
            let _ = write!(s, "{t}");
            for p in row {
                for k in 0..p.mean_strategy.len() {
                    for v in [p.mean_strategy[k], p.belief_mean[k], p.belief_var[k], p.strategy_var[k]] {
                        s.push(',');
                        s.push_str(&fmt_f64(v));
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    /// Series of one statistic, e.g. `|p| p.mean_strategy[1]` for population `i`.
    pub fn series(&self, i: usize, f: impl Fn(&PopStats) -> f64) -> Vec<f64> {
        self.stats.iter().map(|row| f(&row[i])).collect()
    }
}

/// A single run with seed derived from `(config.seed, run)`.
pub fn run_abm_single(config: &SimConfig, game: &PopulationNetworkGame, run: u64) -> Result<AbmSeries> {
    let mut state = init_population(config, game, run_seed(config.seed, run))?;
    let record = config.record_steps();
    let mut stats = Vec::with_capacity(record.len());
    let mut next_record = record.iter().peekable();
    loop {
        let xs = agent_strategies(&state, game, config.params.beta);
        if next_record.peek().is_some_and(|&&r| r as u64 == state.t) {
            stats.push(stats_from(&state, game, &xs));
            next_record.next();
        }
        if state.t as usize == config.steps {
            break;
        }
        let xbar = mean_strategies(game, &xs);
        if xbar.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SfpError::NonFinite { t: state.t as f64 });
        }
        apply_update(&mut state, &xbar);
    }
    Ok(AbmSeries { times: record, stats })
}

/// Average of `config.runs` independent runs. Within-run population variances
/// are averaged across runs. Runs execute in parallel; the reduction is
/// sequential in run order, so results do not depend on the thread count.
pub fn run_abm(config: &SimConfig, game: &PopulationNetworkGame) -> Result<AbmSeries> {
    config.validate(game)?;
    let runs: Vec<AbmSeries> =
        (0..config.runs as u64).into_par_iter().map(|r| run_abm_single(config, game, r)).collect::<Result<_>>()?;
    let mut acc = runs[0].clone();
    for run in &runs[1..] {
        for (row, other) in acc.stats.iter_mut().zip(&run.stats) {
            for (a, b) in row.iter_mut().zip(other) {
                for (x, y) in [
                    (&mut a.mean_strategy, &b.mean_strategy),
                    (&mut a.strategy_var, &b.strategy_var),
                    (&mut a.belief_mean, &b.belief_mean),
                    (&mut a.belief_var, &b.belief_var),
                ] {
                    for (u, v) in x.iter_mut().zip(y) {
                        *u += v;
                    }
                }
            }
        }
    }
    let n = config.runs as f64;
    for row in &mut acc.stats {
        for a in row.iter_mut() {
            for x in [&mut a.mean_strategy, &mut a.strategy_var, &mut a.belief_mean, &mut a.belief_var] {
                x.iter_mut().for_each(|u| *u /= n);
            }
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{asymmetric_matching_pennies, stag_hunt};
    use crate::moments::beta_moments;

    fn params() -> SfpParams {
        SfpParams::new(10.0, 10.0).unwrap()
    }

    #[test]
    fn binary_path_matches_generic_logit() {
        let g = stag_hunt();
        let cfg = SimConfig::new(200, params(), 0, 2).with_common_belief(&g, BeliefDist::Beta { a: 2.0, b: 3.0 });
        let st = init_population(&cfg, &g, 2).unwrap();
        let xs = agent_strategies(&st, &g, 10.0);
        let p = st.populations[0].as_ref().unwrap();
        for k in 0..200 {
            let mu = p.belief(k, 1).unwrap();
            let u = [mu[0] + 2.0 * mu[1], 4.0 * mu[1]];
            let want = crate::dynamics::logit(&u, 10.0);
            for s in 0..2 {
                assert!((xs[0][2 * k + s] - want[s]).abs() <= 1e-15 + 1e-12 * want[s]);
            }
        }
    }

    #[test]
    fn point_mass_init() {
        let g = stag_hunt();
        let cfg = SimConfig::new(5, params(), 0, 1).with_common_belief(&g, BeliefDist::Point(vec![0.7, 0.3]));
        let st = init_population(&cfg, &g, 9).unwrap();
        for p in st.populations.iter().flatten() {
            for k in 0..5 {
                assert_eq!(p.weights(k, 1 - p.population).unwrap(), &[7.0, 3.0]);
            }
        }
    }

    #[test]
    fn beta_sampling_matches_moments() {
        let g = stag_hunt();
        let cfg = SimConfig::new(100_000, params(), 0, 3).with_common_belief(&g, BeliefDist::Beta { a: 14.0, b: 6.0 });
        let st = init_population(&cfg, &g, 3).unwrap();
        let stats = population_stats(&st, &g, 10.0);
        let (m, v) = beta_moments(14.0, 6.0).unwrap();
        for s in &stats {
            assert!((s.belief_mean[0] - m).abs() < 0.002);
            assert!((s.belief_var[0] - v).abs() < 0.05 * v);
        }
    }

    #[test]
    fn same_seed_same_state() {
        let g = stag_hunt();
        let cfg = SimConfig::new(50, params(), 0, 3).with_common_belief(&g, BeliefDist::Beta { a: 2.0, b: 5.0 });
        assert_eq!(init_population(&cfg, &g, 11).unwrap(), init_population(&cfg, &g, 11).unwrap());
        assert_ne!(init_population(&cfg, &g, 11).unwrap(), init_population(&cfg, &g, 12).unwrap());
    }

    #[test]
    fn dirichlet_beliefs_are_on_simplex() {
        let g = PopulationNetworkGame::from_json_str(
            r#"{"populations": [{"id": "a", "strategies": 3}, {"id": "b", "strategies": 3}],
                "edges": [{"from": "a", "to": "b", "payoff_from_to": [[1,0,0],[0,1,0],[0,0,1]], "payoff_to_from": [[1,0,0],[0,1,0],[0,0,1]]}]}"#,
        )
        .unwrap();
        let cfg = SimConfig::new(20, params(), 0, 1).with_common_belief(&g, BeliefDist::Dirichlet(vec![1.0, 2.0, 3.0]));
        let st = init_population(&cfg, &g, 1).unwrap();
        let p = st.populations[0].as_ref().unwrap();
        for k in 0..20 {
            let s: f64 = p.weights(k, 1).unwrap().iter().sum();
            assert!((s - 10.0).abs() < 1e-12);
        }
        let bad = SimConfig::new(20, params(), 0, 1).with_common_belief(&g, BeliefDist::Beta { a: 1.0, b: 1.0 });
        assert!(init_population(&bad, &g, 1).is_err());
    }

    #[test]
    fn observer_specific_override() {
        let g = stag_hunt();
        let mut cfg = SimConfig::new(3, params(), 0, 1).with_common_belief(&g, BeliefDist::Point(vec![0.5, 0.5]));
        cfg.beliefs.push(BeliefSpec { target: "2".into(), observer: Some("1".into()), dist: BeliefDist::Point(vec![0.9, 0.1]) });
        let st = init_population(&cfg, &g, 1).unwrap();
        assert_eq!(st.populations[0].as_ref().unwrap().weights(0, 1).unwrap(), &[9.0, 1.0]);
        assert_eq!(st.populations[1].as_ref().unwrap().weights(0, 0).unwrap(), &[5.0, 5.0]);
    }

    #[test]
    fn weight_sums_and_belief_recursion() {
        let g = stag_hunt();
        let p = params();
        let cfg = SimConfig::new(30, p, 0, 5).with_common_belief(&g, BeliefDist::Beta { a: 14.0, b: 6.0 });
        let mut st = init_population(&cfg, &g, 5).unwrap();
        for t in 0..50u64 {
            let xbar = mean_strategies(&g, &agent_strategies(&st, &g, p.beta));
            let next = abm_step(&st, &g, &p);
            for (a, b) in st.populations.iter().flatten().zip(next.populations.iter().flatten()) {
                let j = 1 - a.population;
                for k in 0..a.agents {
                    let s: f64 = b.weights(k, j).unwrap().iter().sum();
                    assert!((s - (10.0 + t as f64 + 1.0)).abs() < 1e-12);
                    let (m0, m1) = (a.belief(k, j).unwrap(), b.belief(k, j).unwrap());
                    for s in 0..2 {
                        let lhs = (10.0 + t as f64 + 1.0) * m1[s];
                        let rhs = (10.0 + t as f64) * m0[s] + xbar[j][s];
                        assert!((lhs - rhs).abs() < 1e-12);
                    }
                }
            }
            st = next;
        }
    }

    #[test]
    fn identical_agents_stay_identical() {
        let g = asymmetric_matching_pennies();
        let cfg = SimConfig::new(4, params(), 0, 1).with_common_belief(&g, BeliefDist::Point(vec![0.2, 0.8]));
        let mut st = init_population(&cfg, &g, 1).unwrap();
        for _ in 0..20 {
            st = abm_step(&st, &g, &cfg.params);
        }
        for s in population_stats(&st, &g, 10.0) {
            assert!(s.strategy_var.iter().all(|v| *v == 0.0));
            assert!(s.belief_var.iter().all(|v| *v < 1e-30), "{s:?}");
        }
    }

    #[test]
    fn static_populations_report_fixed_strategy() {
        let g = asymmetric_matching_pennies();
        let cfg = SimConfig::new(4, params(), 3, 1);
        let series = run_abm_single(&cfg, &g, 0).unwrap();
        assert_eq!(series.stats[3][0].mean_strategy, vec![1.0, 0.0]);
        assert_eq!(series.stats[3][4].belief_mean, vec![0.0, 1.0]);
        assert!(init_population(&cfg, &g, 0).unwrap().populations[0].is_none());
    }

    #[test]
    fn hand_computed_stats() {
        let (m, v) = mean_var([0.2f64, 0.6].into_iter());
        assert!((m - 0.4).abs() < 1e-15 && (v - 0.04).abs() < 1e-15);
    }

    #[test]
    fn runs_are_deterministic_and_averaged() {
        let g = stag_hunt();
        let mut cfg = SimConfig::new(40, params(), 30, 7).with_common_belief(&g, BeliefDist::Beta { a: 14.0, b: 6.0 });
        cfg.runs = 3;
        cfg.record = Some(vec![0, 10, 30]);
        let a = run_abm(&cfg, &g).unwrap();
        let b = run_abm(&cfg, &g).unwrap();
        assert_eq!(a, b);
        let singles: Vec<AbmSeries> = (0..3).map(|r| run_abm_single(&cfg, &g, r).unwrap()).collect();
        let want = singles.iter().map(|s| s.stats[2][0].mean_strategy[1]).sum::<f64>() / 3.0;
        assert!((a.stats[2][0].mean_strategy[1] - want).abs() < 1e-15);
        for row in &a.stats {
            for p in row {
                assert!((p.mean_strategy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(a.times, vec![0, 10, 30]);
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{"agents": 1000, "params": {"beta": 10, "lambda": 10}, "steps": 100, "seed": 42, "runs": 2,
            "beliefs": [{"target": "1", "dist": {"beta": {"a": 14, "b": 6}}},
                        {"target": "2", "observer": "1", "dist": {"point": [0.7, 0.3]}}]}"#;
        let cfg: SimConfig = serde_json::from_str(text).unwrap();
        cfg.validate(&stag_hunt()).unwrap();
        let back: SimConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs() {
        let g = stag_hunt();
        assert!(SimConfig::new(0, params(), 1, 1).validate(&g).is_err());
        assert!(SimConfig::new(1, SfpParams::new(1.0, 0.0).unwrap(), 1, 1).validate(&g).is_err());
        let mut c = SimConfig::new(1, params(), 1, 1);
        c.beliefs.push(BeliefSpec { target: "9".into(), observer: None, dist: BeliefDist::Point(vec![1.0, 0.0]) });
        assert!(c.validate(&g).is_err());
    }

    #[test]
    fn csv_layout() {
        let g = stag_hunt();
        let cfg = SimConfig::new(3, params(), 2, 1);
        let csv = run_abm_single(&cfg, &g, 0).unwrap().to_csv();
        assert!(csv.starts_with("t,pop1_mean_s1,pop1_belief_mean_s1,pop1_belief_var_s1,pop1_strat_var_s1,pop1_mean_s2"));
        assert_eq!(csv.lines().count(), 4);
    }
}
