//! Experiment drivers: stag-hunt variance selection, regions of attraction,
//! matching-pennies convergence and free-form runs on user games.
//!
//! Every driver is a pure function of its configuration and seed; outputs are
//! returned as named CSV/SVG artifacts and written by [`write_artifacts`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abm::{run_abm, AbmSeries, BeliefDist, BeliefSpec, SimConfig};
use crate::dynamics::{fmt_f64, homogeneous_trajectory_tau, SfpParams, DEFAULT_STEP};
use crate::equilibrium::{
    check_monotone, multistart_qre, solve_qre, star_potential, zero_sum_lyapunov, Direction, MonotoneReport,
    QreCluster, QreSolution, DEFAULT_DAMPING, DEFAULT_MAX_ITER, DEFAULT_SLACK, DEFAULT_TOL,
};
use crate::error::{Result, SfpError};
use crate::game::{asymmetric_matching_pennies, stag_hunt, BeliefProfile, PopulationNetworkGame};
use crate::moments::{closure_mean_strategy, run_moments_tau, settle_moments_tau, MomentState};
use crate::pde::{density_from_beta, density_peak, mean_choice_from_density, run_pde, DensityState, PdeScheme};
use crate::svg::{Heatmap, LinePlot, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fig1,
    Roa,
    Fig4,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Abm,
    Moments,
    Pde,
    #[serde(alias = "homogeneous")]
    Homog,
}

/// A named initial belief distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub label: String,
    pub dist: BeliefDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// Cells per axis.
    pub resolution: usize,
    /// Initial belief variances, applied to both populations.
    pub variances: Vec<f64>,
    pub tau_max: f64,
    pub tol: f64,
    pub tau_step: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { resolution: 41, variances: vec![0.0, 0.005, 0.01, 0.02], tau_max: 200.0, tol: 1e-8, tau_step: 0.02 }
    }
}

/// Everything an experiment needs. Absent fields take per-experiment defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    /// `stag_hunt`, `matching_pennies`, or a path to a game file (relative
    /// paths resolve against the config file's directory).
    pub game: Option<String>,
    pub solver: Option<SolverKind>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    /// Initial beliefs for `custom` runs.
    pub initial: Vec<BeliefSpec>,
    /// Initial distributions compared by `fig1` and `fig4`.
    pub cases: Option<Vec<CaseSpec>>,
    pub t_end: Option<f64>,
    /// Recorded times per decade of the log-spaced output grid.
    pub per_decade: Option<usize>,
    pub agents: Option<usize>,
    pub runs: Option<usize>,
    /// Density grid intervals.
    pub grid: Option<usize>,
    pub scheme: Option<PdeScheme>,
    pub sweep: Option<SweepSpec>,
    /// Repeat a `custom` run for each of these temperatures.
    pub betas: Option<Vec<f64>>,
    pub lyapunov: bool,
    pub potential: bool,
    pub weights: Option<Vec<f64>>,
    pub qre_starts: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    fn params(&self, beta: f64, lambda: f64) -> Result<SfpParams> {
        SfpParams::new(self.beta.unwrap_or(beta), self.lambda.unwrap_or(lambda))
    }

    fn seconds(&self, default: f64) -> Result<f64> {
        let t = self.t_end.unwrap_or(default);
        if !(t >= 1.0 && t.is_finite()) {
            return Err(SfpError::InvalidParameter(format!("t_end = {t} must be at least 1")));
        }
        Ok(t)
    }

    fn positive(v: Option<usize>, default: usize, what: &str) -> Result<usize> {
        match v.unwrap_or(default) {
            0 => Err(SfpError::InvalidParameter(format!("{what} must be positive"))),
            n => Ok(n),
        }
    }

    pub fn load_game(&self) -> Result<PopulationNetworkGame> {
        let spec = self.game.as_deref().ok_or_else(|| SfpError::InvalidParameter("no game given".into()))?;
        load_game(spec, self.base_dir.as_deref())
    }
}

/// Resolve a builtin name or a game file.
pub fn load_game(spec: &str, base: Option<&Path>) -> Result<PopulationNetworkGame> {
    match spec {
        "stag_hunt" | "stag-hunt" => Ok(stag_hunt()),
        "matching_pennies" | "matching-pennies" | "asymmetric_matching_pennies" => Ok(asymmetric_matching_pennies()),
        path => {
            let p = Path::new(path);
            let p = match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.to_path_buf(),
            };
            PopulationNetworkGame::from_json_file(&p).map_err(|e| match e {
                SfpError::Io(io) => SfpError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", p.display()))),
                e => e,
            })
        }
    }
}

/// Named output files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: Vec<(String, String)>,
}

impl Artifacts {
    fn add(&mut self, name: impl Into<String>, content: String) {
        self.files.push((name.into(), content));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }
}

pub fn write_artifacts(dir: &Path, artifacts: &Artifacts) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    artifacts
        .files
        .iter()
        .map(|(name, content)| {
            let p = dir.join(name);
            std::fs::write(&p, content)?;
            Ok(p)
        })
        .collect()
}

/// `0` followed by about `per_decade` log-spaced integers per decade up to `t_end`.
pub fn log_times(t_end: usize, per_decade: usize) -> Vec<usize> {
    let mut out = vec![0usize];
    let decades = (t_end.max(1) as f64).log10();
    let n = (decades * per_decade as f64).ceil() as usize;
    for k in 0..=n {
        let t = (10f64.powf(k as f64 / per_decade as f64).round() as usize).min(t_end);
        if t > *out.last().unwrap() {
            out.push(t);
        }
    }
    if *out.last().unwrap() != t_end {
        out.push(t_end);
    }
    out
}

/// Belief and mean-strategy profiles of a continuum solver on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPath {
    pub times: Vec<f64>,
    pub beliefs: Vec<BeliefProfile>,
    pub strategies: Vec<BeliefProfile>,
    /// Belief variance per coordinate (zero for the homogeneous solver).
    pub variances: Vec<Vec<f64>>,
}

fn moment_initial(game: &PopulationNetworkGame, dist_of: &dyn Fn(usize) -> BeliefDist) -> Result<MomentState> {
    let mut mean = Vec::new();
    let mut var = Vec::new();
    for i in 0..game.population_count() {
        let (m, v) = dist_moments(&dist_of(i), game.strategies(i))?;
        mean.extend(m);
        var.extend(v);
    }
    MomentState::clamped(BeliefProfile::from_flat(game.layout().clone(), mean)?, var)
}

/// Per-coordinate mean and variance of a belief distribution.
pub fn dist_moments(dist: &BeliefDist, strategies: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    match dist {
        BeliefDist::Point(p) => Ok((p.clone(), vec![0.0; p.len()])),
        BeliefDist::Beta { a, b } => {
            if strategies != 2 {
                return Err(SfpError::InvalidParameter("Beta beliefs need 2 strategies".into()));
            }
            let (m, v) = crate::moments::beta_moments(*a, *b)?;
            Ok((vec![m, 1.0 - m], vec![v, v]))
        }
        BeliefDist::Dirichlet(alpha) => {
            if alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                return Err(SfpError::InvalidParameter("Dirichlet parameters must be positive".into()));
            }
            let a0: f64 = alpha.iter().sum();
            let mean = alpha.iter().map(|a| a / a0).collect();
            let var = alpha.iter().map(|a| a * (a0 - a) / (a0 * a0 * (a0 + 1.0))).collect();
            Ok((mean, var))
        }
    }
}

fn density_initial(
    game: &PopulationNetworkGame,
    dist_of: &dyn Fn(usize) -> BeliefDist,
    intervals: usize,
) -> Result<DensityState> {
    let grids = (0..game.population_count())
        .map(|i| {
            if game.is_static(i) {
                return Ok(None);
            }
            let g = match dist_of(i) {
                BeliefDist::Beta { a, b } => density_from_beta(a, b, intervals)?,
                BeliefDist::Dirichlet(al) if al.len() == 2 => density_from_beta(al[0], al[1], intervals)?,
                BeliefDist::Point(p) if p.len() == 2 => {
                    let w = POINT_HALF_WIDTH.min(p[0]).min(1.0 - p[0]);
                    if !(w > 0.0) {
                        return Err(SfpError::InvalidParameter("a point belief on the boundary has no density".into()));
                    }
                    density_peak(p[0], w, intervals)?
                }
                _ => return Err(SfpError::Unsupported("density solver needs binary populations".into())),
            };
            Ok(Some(g))
        })
        .collect::<Result<Vec<_>>>()?;
    DensityState::new(game, grids)
}

/// Half-width of the bump standing in for a point belief in the density solver.
pub const POINT_HALF_WIDTH: f64 = 1e-3;

/// Run a continuum solver from the given per-population belief distributions.
pub fn run_mean_path(
    game: &PopulationNetworkGame,
    solver: SolverKind,
    dist_of: &dyn Fn(usize) -> BeliefDist,
    params: &SfpParams,
    times: &[f64],
    intervals: usize,
    scheme: PdeScheme,
) -> Result<MeanPath> {
    match solver {
        SolverKind::Moments => {
            let init = moment_initial(game, dist_of)?;
            let traj = run_moments_tau(game, &init, params, times, DEFAULT_STEP)?;
            let strategies =
                traj.states.iter().map(|s| closure_mean_strategy(game, s, params.beta)).collect::<Result<_>>()?;
            Ok(MeanPath {
                times: traj.times,
                beliefs: traj.states.iter().map(|s| s.mean().clone()).collect(),
                variances: traj.states.iter().map(|s| s.variance().to_vec()).collect(),
                strategies,
            })
        }
        SolverKind::Homog => {
            let init = moment_initial(game, dist_of)?;
            let traj = homogeneous_trajectory_tau(game, init.mean(), params, times, DEFAULT_STEP)?;
            let strategies = traj
                .states
                .iter()
                .map(|s| crate::equilibrium::qre_map(game, s, params.beta))
                .collect::<Result<_>>()?;
            Ok(MeanPath {
                variances: vec![vec![0.0; game.layout().dim()]; traj.times.len()],
                times: traj.times,
                beliefs: traj.states,
                strategies,
            })
        }
        SolverKind::Pde => {
            let init = density_initial(game, dist_of, intervals)?;
            let t_end = *times.last().ok_or_else(|| SfpError::InvalidParameter("no output times".into()))?;
            let run = run_pde(game, &init, t_end, params, scheme, times)?;
            let mut strategies = Vec::with_capacity(run.snapshots.len());
            for snap in &run.snapshots {
                let mut flat = Vec::with_capacity(game.layout().dim());
                for i in 0..game.population_count() {
                    flat.extend(mean_choice_from_density(game, i, snap, params.beta)?.into_vec());
                }
                strategies.push(BeliefProfile::from_flat(game.layout().clone(), flat)?);
            }
            Ok(MeanPath {
                times: run.times,
                beliefs: run.moments.states.iter().map(|s| s.mean().clone()).collect(),
                variances: run.moments.states.iter().map(|s| s.variance().to_vec()).collect(),
                strategies,
            })
        }
        SolverKind::Abm => Err(SfpError::InvalidParameter("the agent-based solver has no mean path".into())),
    }
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

// ---------------------------------------------------------------------------
// Stag hunt: initial variance selects the equilibrium

#[derive(Debug, Clone)]
pub struct Fig1Case {
    pub label: String,
    pub dist: BeliefDist,
    pub abm: AbmSeries,
    pub model: MeanPath,
}

impl Fig1Case {
    /// Mean belief that population `i` plays S, from the agent simulation.
    pub fn abm_belief_s(&self, i: usize) -> Vec<f64> {
        self.abm.series(i, |p| p.belief_mean[1])
    }

    pub fn abm_strategy_s(&self, i: usize) -> Vec<f64> {
        self.abm.series(i, |p| p.mean_strategy[1])
    }

    pub fn model_belief_s(&self, i: usize) -> Vec<f64> {
        self.model.beliefs.iter().map(|b| b.population(i)[1]).collect()
    }

    pub fn model_strategy_s(&self, i: usize) -> Vec<f64> {
        self.model.strategies.iter().map(|b| b.population(i)[1]).collect()
    }

    /// Sup-norm distance between simulated and modelled mean beliefs over
    /// both populations and all recorded times.
    pub fn belief_gap(&self) -> f64 {
        (0..2).map(|i| sup_gap(&self.abm_belief_s(i), &self.model_belief_s(i))).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Fig1Result {
    pub params: SfpParams,
    pub solver: SolverKind,
    pub cases: Vec<Fig1Case>,
}

pub fn fig1_default_cases() -> Vec<CaseSpec> {
    vec![
        CaseSpec { label: "beta_280_120".into(), dist: BeliefDist::Beta { a: 280.0, b: 120.0 } },
        CaseSpec { label: "beta_14_6".into(), dist: BeliefDist::Beta { a: 14.0, b: 6.0 } },
    ]
}

fn case_seed(seed: u64, case: usize) -> u64 {
    seed.wrapping_add((case as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn run_fig1(config: &ExperimentConfig) -> Result<Fig1Result> {
    if config.game.as_deref().is_some_and(|g| g != "stag_hunt") {
        return Err(SfpError::InvalidParameter("fig1 runs on the builtin stag hunt".into()));
    }
    let game = stag_hunt();
    let params = config.params(10.0, 10.0)?;
    let t_end = config.seconds(1e4)?;
    let steps = t_end.round() as usize;
    let record = log_times(steps, ExperimentConfig::positive(config.per_decade, 20, "per_decade")?);
    let times: Vec<f64> = record.iter().map(|&t| t as f64).collect();
    let agents = ExperimentConfig::positive(config.agents, 1000, "agents")?;
    let runs = ExperimentConfig::positive(config.runs, 100, "runs")?;
    let solver = match config.solver.unwrap_or(SolverKind::Moments) {
        SolverKind::Abm => SolverKind::Moments,
        s => s,
    };
    let grid = config.grid.unwrap_or(crate::pde::DEFAULT_GRID);
    let cases = config.cases.clone().unwrap_or_else(fig1_default_cases);
    let mut out = Vec::with_capacity(cases.len());
    for (n, case) in cases.into_iter().enumerate() {
        let mut sim = SimConfig::new(agents, params, steps, case_seed(config.seed, n)).with_common_belief(&game, case.dist.clone());
        sim.runs = runs;
        sim.record = Some(record.clone());
        let abm = run_abm(&sim, &game)?;
        let model = run_mean_path(&game, solver, &|_| case.dist.clone(), &params, &times, grid, config.scheme.unwrap_or_default())?;
        out.push(Fig1Case { label: case.label, dist: case.dist, abm, model });
    }
    Ok(Fig1Result { params, solver, cases: out })
}

impl Fig1Result {
    pub fn artifacts(&self) -> Artifacts {
        let mut a = Artifacts::default();
        let mut csv = String::from(
            "case,t,abm_belief_S_pop1,abm_belief_S_pop2,abm_strategy_S_pop1,abm_strategy_S_pop2,\
             model_belief_S_pop1,model_belief_S_pop2,model_strategy_S_pop1,model_strategy_S_pop2\n",
        );
        let mut summary = String::from("case,final_abm_belief_S_pop1,final_model_belief_S_pop1,belief_gap\n");
        let mut plot = LinePlot {
            title: format!("Stag hunt, beta = {}, lambda = {}", self.params.beta, self.params.lambda),
            x_label: "t".into(),
            y_label: "P(S), population 1".into(),
            log_x: true,
            y_range: Some((0.0, 1.0)),
            series: Vec::new(),
        };
        for c in &self.cases {
            let cols = [c.abm_belief_s(0), c.abm_belief_s(1), c.abm_strategy_s(0), c.abm_strategy_s(1)];
            let mcols = [c.model_belief_s(0), c.model_belief_s(1), c.model_strategy_s(0), c.model_strategy_s(1)];
            for (k, t) in c.model.times.iter().enumerate() {
                let _ = write!(csv, "{},{}", c.label, fmt_f64(*t));
                for col in cols.iter().chain(&mcols) {
                    let _ = write!(csv, ",{}", fmt_f64(col[k]));
                }
                csv.push('\n');
            }
            let _ = writeln!(
                summary,
                "{},{},{},{}",
                c.label,
                fmt_f64(*cols[0].last().unwrap()),
                fmt_f64(*mcols[0].last().unwrap()),
                fmt_f64(c.belief_gap())
            );
            plot.series.push(Series::new(format!("{} agents", c.label), c.model.times.clone(), cols[0].clone()).wide());
            plot.series.push(Series::new(format!("{} model", c.label), c.model.times.clone(), mcols[0].clone()));
            plot.series.push(
                Series::new(format!("{} model strategy", c.label), c.model.times.clone(), mcols[2].clone()).dashed(),
            );
        }
        a.add("fig1.csv", csv);
        a.add("fig1_summary.csv", summary);
        a.add("fig1.svg", plot.render());
        a
    }
}

// ---------------------------------------------------------------------------
// Regions of attraction

#[derive(Debug, Clone, PartialEq)]
pub struct RoaGrid {
    pub variance: f64,
    /// Cell centres along both axes.
    pub axis: Vec<f64>,
    /// `labels[r][c]` for initial means `mu_1H = axis[r]`, `mu_2H = axis[c]`:
    /// index into `qre`, or -1 when the run did not settle.
    pub labels: Vec<Vec<i64>>,
    pub finals: Vec<Vec<BeliefProfile>>,
    pub qre: Vec<BeliefProfile>,
}

impl RoaGrid {
    /// Index of the QRE where population 1 plays S most.
    pub fn s_dominant(&self) -> usize {
        (0..self.qre.len())
            .max_by(|&a, &b| self.qre[a].population(0)[1].total_cmp(&self.qre[b].population(0)[1]))
            .unwrap_or(0)
    }

    pub fn fraction(&self, label: i64) -> f64 {
        let n: usize = self.labels.iter().map(Vec::len).sum();
        let k = self.labels.iter().flatten().filter(|&&l| l == label).count();
        k as f64 / n as f64
    }

    pub fn s_fraction(&self) -> f64 {
        self.fraction(self.s_dominant() as i64)
    }

    pub fn unconverged(&self) -> usize {
        self.labels.iter().flatten().filter(|&&l| l < 0).count()
    }
}

#[derive(Debug, Clone)]
pub struct RoaResult {
    pub params: SfpParams,
    pub qre: Vec<QreCluster>,
    pub grids: Vec<RoaGrid>,
}

pub fn nearest(profile: &BeliefProfile, candidates: &[BeliefProfile]) -> usize {
    let d = |q: &BeliefProfile| profile.as_slice().iter().zip(q.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    (0..candidates.len()).min_by(|&a, &b| d(&candidates[a]).total_cmp(&d(&candidates[b]))).unwrap_or(0)
}

/// Settle the moment dynamics from one initial mean and common variance.
pub fn roa_cell(
    game: &PopulationNetworkGame,
    mean: &BeliefProfile,
    variance: f64,
    params: &SfpParams,
    sweep: &SweepSpec,
) -> Result<(BeliefProfile, bool)> {
    let var = vec![variance; mean.as_slice().len()];
    let init = MomentState::clamped(mean.clone(), var)?;
    let (fin, _, ok) = settle_moments_tau(game, &init, params, sweep.tau_step, sweep.tol, sweep.tau_max)?;
    Ok((fin, ok))
}

pub fn run_roa(config: &ExperimentConfig) -> Result<RoaResult> {
    let game = match &config.game {
        None => stag_hunt(),
        Some(_) => config.load_game()?,
    };
    if game.population_count() != 2 || game.strategy_counts() != vec![2, 2] {
        return Err(SfpError::Unsupported("region-of-attraction maps need two binary populations".into()));
    }
    let params = config.params(5.0, 0.0)?;
    let mut sweep = config.sweep.clone().unwrap_or_default();
    if let Some(g) = config.grid {
        sweep.resolution = g;
    }
    if sweep.resolution == 0 || sweep.variances.is_empty() {
        return Err(SfpError::InvalidParameter("the sweep needs a positive resolution and at least one variance".into()));
    }
    if sweep.variances.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(SfpError::InvalidParameter("variances must be finite and non-negative".into()));
    }
    let qre = multistart_qre(&game, params.beta, config.qre_starts.unwrap_or(64), DEFAULT_TOL, 1e-6)?;
    if qre.is_empty() {
        return Err(SfpError::NotConverged("no QRE found by multistart".into()));
    }
    let profiles: Vec<BeliefProfile> = qre.iter().map(|c| c.solution.profile.clone()).collect();
    let n = sweep.resolution;
    let axis: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
    let mut grids = Vec::with_capacity(sweep.variances.len());
    for &variance in &sweep.variances {
        let cells: Vec<(BeliefProfile, bool)> = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (y, x) = (axis[idx / n], axis[idx % n]);
                let mean = BeliefProfile::new(vec![vec![y, 1.0 - y], vec![x, 1.0 - x]])?;
                roa_cell(&game, &mean, variance, &params, &sweep)
            })
            .collect::<Result<_>>()?;
        let mut labels = vec![vec![0i64; n]; n];
        let mut finals = vec![Vec::with_capacity(n); n];
        for (idx, (fin, ok)) in cells.into_iter().enumerate() {
            labels[idx / n][idx % n] = if ok { nearest(&fin, &profiles) as i64 } else { -1 };
            finals[idx / n].push(fin);
        }
        grids.push(RoaGrid { variance, axis: axis.clone(), labels, finals, qre: profiles.clone() });
    }
    Ok(RoaResult { params, qre, grids })
}

impl RoaResult {
    pub fn artifacts(&self) -> Artifacts {
        let mut a = Artifacts::default();
        let mut qre_csv = String::from("index,pop1_H,pop2_H,residual,starts\n");
        for (k, c) in self.qre.iter().enumerate() {
            let p = &c.solution.profile;
            let _ = writeln!(
                qre_csv,
                "{k},{},{},{},{}",
                fmt_f64(p.population(0)[0]),
                fmt_f64(p.population(1)[0]),
                fmt_f64(c.solution.residual),
                c.count
            );
        }
        let mut csv = String::from("variance,mu2H,mu1H,label,final_mu1H,final_mu2H\n");
        let mut summary = String::from("variance,s_fraction,unconverged\n");
        for g in &self.grids {
            for (r, row) in g.labels.iter().enumerate() {
                for (c, l) in row.iter().enumerate() {
                    let f = &g.finals[r][c];
                    let _ = writeln!(
                        csv,
                        "{},{},{},{l},{},{}",
                        fmt_f64(g.variance),
                        fmt_f64(g.axis[c]),
                        fmt_f64(g.axis[r]),
                        fmt_f64(f.population(0)[0]),
                        fmt_f64(f.population(1)[0])
                    );
                }
            }
            let _ = writeln!(summary, "{},{},{}", fmt_f64(g.variance), fmt_f64(g.s_fraction()), g.unconverged());
            let mut legend: Vec<String> = g
                .qre
                .iter()
                .enumerate()
                .map(|(k, q)| format!("QRE {k}: P1(S) = {:.3}", q.population(0)[1]))
                .collect();
            legend.push("unconverged".into());
            let map = Heatmap {
                title: format!("Reached QRE, initial variance {}", g.variance),
                x_label: "initial mean belief mu_2H".into(),
                y_label: "initial mean belief mu_1H".into(),
                cells: g.labels.clone(),
                legend,
            };
            a.add(format!("roa_var_{}.svg", g.variance), map.render());
        }
        a.files.insert(0, ("roa_summary.csv".into(), summary));
        a.files.insert(0, ("roa_qre.csv".into(), qre_csv));
        a.files.insert(0, ("roa.csv".into(), csv));
        a
    }
}

// ---------------------------------------------------------------------------
// Matching pennies: unique equilibrium

#[derive(Debug, Clone)]
pub struct Fig4Case {
    pub label: String,
    pub dist: BeliefDist,
    pub abm: AbmSeries,
}

impl Fig4Case {
    pub fn mean_h(&self, i: usize) -> Vec<f64> {
        self.abm.series(i, |p| p.mean_strategy[0])
    }

    pub fn strat_var_h(&self, i: usize) -> Vec<f64> {
        self.abm.series(i, |p| p.strategy_var[0])
    }

    /// `max_i |final mean strategy_i - qre_i|` over learning populations.
    pub fn qre_gap(&self, game: &PopulationNetworkGame, qre: &BeliefProfile) -> f64 {
        let last = self.abm.stats.last().unwrap();
        game.learning_populations()
            .map(|i| sup_gap(&last[i].mean_strategy, qre.population(i)))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Fig4Result {
    pub params: SfpParams,
    pub qre: QreSolution,
    pub cases: Vec<Fig4Case>,
}

pub fn fig4_default_cases() -> Vec<CaseSpec> {
    [(20.0, 10.0), (6.0, 4.0), (10.0, 5.0)]
        .into_iter()
        .map(|(a, b)| CaseSpec { label: format!("beta_{a}_{b}"), dist: BeliefDist::Beta { a, b } })
        .collect()
}

pub fn run_fig4(config: &ExperimentConfig) -> Result<Fig4Result> {
    if config.game.as_deref().is_some_and(|g| g != "matching_pennies") {
        return Err(SfpError::InvalidParameter("fig4 runs on the builtin matching pennies game".into()));
    }
    let game = asymmetric_matching_pennies();
    let params = config.params(10.0, 10.0)?;
    let steps = config.seconds(1e4)?.round() as usize;
    let record = log_times(steps, ExperimentConfig::positive(config.per_decade, 20, "per_decade")?);
    let agents = ExperimentConfig::positive(config.agents, 1000, "agents")?;
    let runs = ExperimentConfig::positive(config.runs, 100, "runs")?;
    let qre = solve_qre(&game, params.beta, &game.default_profile(), DEFAULT_DAMPING, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    if !qre.converged {
        return Err(SfpError::NotConverged(format!("QRE iteration stopped at residual {:.3e}", qre.residual)));
    }
    let cases = config.cases.clone().unwrap_or_else(fig4_default_cases);
    let mut out = Vec::with_capacity(cases.len());
    for (n, case) in cases.into_iter().enumerate() {
        let mut sim = SimConfig::new(agents, params, steps, case_seed(config.seed, n));
        sim.beliefs = ["2", "4"]
            .iter()
            .map(|t| BeliefSpec { target: t.to_string(), observer: None, dist: case.dist.clone() })
            .collect();
        sim.runs = runs;
        sim.record = Some(record.clone());
        let abm = run_abm(&sim, &game)?;
        out.push(Fig4Case { label: case.label, dist: case.dist, abm });
    }
    Ok(Fig4Result { params, qre, cases: out })
}

impl Fig4Result {
    pub fn artifacts(&self) -> Artifacts {
        let game = asymmetric_matching_pennies();
        let mut a = Artifacts::default();
        let mut csv = String::from("case,t,pop2_mean_H,pop3_mean_H,pop4_mean_H,pop3_strat_var_H\n");
        let mut summary = String::from("case,final_pop3_mean_H,final_pop3_strat_var_H,qre_gap\n");
        let mut plot = LinePlot {
            title: format!("Matching pennies, population 3, beta = {}, lambda = {}", self.params.beta, self.params.lambda),
            x_label: "t".into(),
            y_label: "P(H), population 3".into(),
            log_x: true,
            y_range: Some((0.0, 1.0)),
            series: Vec::new(),
        };
        for c in &self.cases {
            let times: Vec<f64> = c.abm.times.iter().map(|&t| t as f64).collect();
            let (m2, m3, m4, v3) = (c.mean_h(1), c.mean_h(2), c.mean_h(3), c.strat_var_h(2));
            for k in 0..times.len() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    c.label,
                    fmt_f64(times[k]),
                    fmt_f64(m2[k]),
                    fmt_f64(m3[k]),
                    fmt_f64(m4[k]),
                    fmt_f64(v3[k])
                );
            }
            let _ = writeln!(
                summary,
                "{},{},{},{}",
                c.label,
                fmt_f64(*m3.last().unwrap()),
                fmt_f64(*v3.last().unwrap()),
                fmt_f64(c.qre_gap(&game, &self.qre.profile))
            );
            let lo = m3.iter().zip(&v3).map(|(m, v)| m - v).collect();
            let hi = m3.iter().zip(&v3).map(|(m, v)| m + v).collect();
            plot.series.push(Series::new(c.label.clone(), times, m3).with_band(lo, hi));
        }
        a.add("fig4.csv", csv);
        a.add("fig4_summary.csv", summary);
        let q = &self.qre.profile;
        let mut qre_csv = String::from("population,P_H\n");
        for i in 0..q.populations() {
            let _ = writeln!(qre_csv, "{},{}", i + 1, fmt_f64(q.population(i)[0]));
        }
        a.add("fig4_qre.csv", qre_csv);
        a.add("fig4.svg", plot.render());
        a
    }
}

// ---------------------------------------------------------------------------
// Free-form runs

/// Belief distribution about `target` from the common (observer-free) entries.
fn common_dist(game: &PopulationNetworkGame, specs: &[BeliefSpec], target: usize) -> BeliefDist {
    if let Some(f) = game.fixed_strategy(target) {
        return BeliefDist::Point(f.probabilities().to_vec());
    }
    let id = &game.populations()[target].id;
    specs
        .iter()
        .rev()
        .find(|b| &b.target == id && b.observer.is_none())
        .map(|b| b.dist.clone())
        .unwrap_or_else(|| BeliefDist::Point(vec![1.0 / game.strategies(target) as f64; game.strategies(target)]))
}

/// Which function to evaluate along a custom run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Certificate {
    Lyapunov,
    Potential,
}

#[derive(Debug, Clone)]
pub struct CustomRun {
    pub beta: f64,
    pub csv: String,
    pub extra_csv: Option<(String, String)>,
    pub certificate: Option<(Certificate, Vec<f64>, MonotoneReport)>,
}

#[derive(Debug, Clone)]
pub struct CustomResult {
    pub solver: SolverKind,
    pub runs: Vec<CustomRun>,
}

fn append_column(csv: &str, name: &str, values: &[f64]) -> String {
    let mut out = String::with_capacity(csv.len() + 24 * values.len());
    for (k, line) in csv.lines().enumerate() {
        out.push_str(line);
        out.push(',');
        if k == 0 {
            out.push_str(name);
        } else {
            out.push_str(&fmt_f64(values[k - 1]));
        }
        out.push('\n');
    }
    out
}

fn abm_beliefs(game: &PopulationNetworkGame, abm: &AbmSeries) -> Result<Vec<BeliefProfile>> {
    abm.stats
        .iter()
        .map(|row| {
            let flat: Vec<f64> = row.iter().flat_map(|p| p.belief_mean.iter().copied()).collect();
            BeliefProfile::from_flat(game.layout().clone(), flat)
        })
        .collect()
}

pub fn run_custom(config: &ExperimentConfig) -> Result<CustomResult> {
    let game = config.load_game()?;
    let solver = config.solver.unwrap_or(SolverKind::Moments);
    let base = config.params(10.0, 10.0)?;
    let betas = config.betas.clone().unwrap_or_else(|| vec![base.beta]);
    if config.lyapunov && config.potential {
        return Err(SfpError::InvalidParameter("request either the Lyapunov function or the potential".into()));
    }
    let weights = config.weights.clone().unwrap_or_else(|| game.weights().to_vec());
    let certificate = if config.lyapunov {
        let zs = game.is_weighted_zero_sum(&weights)?;
        if !zs.holds {
            return Err(SfpError::Classification(format!(
                "Lyapunov column requested but the game is not weighted zero-sum (residual {:.3e})",
                zs.max_residual
            )));
        }
        Some(Certificate::Lyapunov)
    } else if config.potential {
        if game.coordination_payoffs().is_none() || game.star_centers().is_none() {
            return Err(SfpError::Classification(
                "potential column requested but the game is not a star-shaped coordination game".into(),
            ));
        }
        Some(Certificate::Potential)
    } else {
        None
    };
    let steps = config.seconds(1000.0)?.round() as usize;
    let record = log_times(steps, ExperimentConfig::positive(config.per_decade, 20, "per_decade")?);
    let times: Vec<f64> = record.iter().map(|&t| t as f64).collect();
    let grid = config.grid.unwrap_or(crate::pde::DEFAULT_GRID);
    let dist_of = |i: usize| common_dist(&game, &config.initial, i);
    let mut runs = Vec::with_capacity(betas.len());
    for beta in betas {
        let params = SfpParams::new(beta, base.lambda)?;
        let (csv, extra_csv, beliefs) = match solver {
            SolverKind::Abm => {
                let mut sim = SimConfig::new(
                    ExperimentConfig::positive(config.agents, 1000, "agents")?,
                    params,
                    steps,
                    config.seed,
                );
                sim.runs = ExperimentConfig::positive(config.runs, 1, "runs")?;
                sim.beliefs = config.initial.clone();
                sim.record = Some(record.clone());
                let abm = run_abm(&sim, &game)?;
                (abm.to_csv(), None, abm_beliefs(&game, &abm)?)
            }
            SolverKind::Moments => {
                let init = moment_initial(&game, &dist_of)?;
                let traj = run_moments_tau(&game, &init, &params, &times, DEFAULT_STEP)?;
                let beliefs = traj.states.iter().map(|s| s.mean().clone()).collect();
                (traj.to_csv(), None, beliefs)
            }
            SolverKind::Homog => {
                let init = moment_initial(&game, &dist_of)?;
                let traj = homogeneous_trajectory_tau(&game, init.mean(), &params, &times, DEFAULT_STEP)?;
                (traj.to_csv(), None, traj.states)
            }
            SolverKind::Pde => {
                let init = density_initial(&game, &dist_of, grid)?;
                let run = run_pde(&game, &init, times[times.len() - 1], &params, config.scheme.unwrap_or_default(), &times)?;
                let beliefs = run.moments.states.iter().map(|s| s.mean().clone()).collect();
                (run.moments.to_csv(), Some(run.density_csv(&game, grid)), beliefs)
            }
        };
        let mut csv = csv;
        let mut cert = None;
        if let Some(kind) = certificate {
            let (name, dir) = match kind {
                Certificate::Lyapunov => ("lyapunov", Direction::NonIncreasing),
                Certificate::Potential => ("potential", Direction::NonDecreasing),
            };
            let values: Vec<f64> = beliefs
                .iter()
                .map(|b| match kind {
                    Certificate::Lyapunov => zero_sum_lyapunov(&game, b, beta, &weights),
                    Certificate::Potential => star_potential(&game, b, beta),
                })
                .collect::<Result<_>>()?;
            csv = append_column(&csv, name, &values);
            let rep = check_monotone(&values, dir, DEFAULT_SLACK);
            cert = Some((kind, values, rep));
        }
        let tag = if config.betas.is_some() { format!("_beta_{beta}") } else { String::new() };
        runs.push(CustomRun {
            beta,
            csv,
            extra_csv: extra_csv.map(|c| (format!("custom{tag}_density.csv"), c)),
            certificate: cert,
        });
    }
    Ok(CustomResult { solver, runs })
}

impl CustomResult {
    pub fn artifacts(&self, tagged: bool) -> Artifacts {
        let mut a = Artifacts::default();
        for r in &self.runs {
            let tag = if tagged { format!("_beta_{}", r.beta) } else { String::new() };
            a.add(format!("custom{tag}.csv"), r.csv.clone());
            if let Some((name, c)) = &r.extra_csv {
                a.add(name.clone(), c.clone());
            }
            if let Some((kind, values, _)) = &r.certificate {
                let name = match kind {
                    Certificate::Lyapunov => "Lyapunov function",
                    Certificate::Potential => "potential",
                };
                let xs: Vec<f64> = r.csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
                let plot = LinePlot {
                    title: format!("{name}, beta = {}", r.beta),
                    x_label: "t".into(),
                    y_label: name.into(),
                    log_x: true,
                    y_range: None,
                    series: vec![Series::new(name, xs, values.clone())],
                };
                a.add(format!("custom{tag}.svg"), plot.render());
            }
        }
        a
    }
}
