//! Quantal response equilibria and Lyapunov functions.

use serde::Serialize;

use crate::dynamics::{response_into, utilities_into};
use crate::error::{Result, SfpError};
use crate::game::{BeliefProfile, PopulationNetworkGame};

pub const DEFAULT_DAMPING: f64 = 0.5;
pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// Default per-step slack of [`check_monotone`].
pub const DEFAULT_SLACK: f64 = 1e-9;

/// Logit response of every population to `profile`; static populations map
/// to their fixed strategy.
pub fn qre_map(game: &PopulationNetworkGame, profile: &BeliefProfile, beta: f64) -> Result<BeliefProfile> {
    game.check_profile(profile)?;
    let mut out = vec![0.0; profile.layout().dim()];
    response_into(game, profile.as_slice(), beta, &mut out);
    Ok(BeliefProfile::from_flat_unchecked(profile.layout().clone(), out))
}

/// `max |qre_map(x) - x|`
pub fn qre_residual(game: &PopulationNetworkGame, profile: &BeliefProfile, beta: f64) -> Result<f64> {
    Ok(qre_map(game, profile, beta)?.max_abs_diff(profile))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QreSolution {
    pub profile: BeliefProfile,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// False if the residual ever grew between iterations.
    pub monotone: bool,
}

/// Damped fixed-point iteration `x <- (1 - a) x + a qre_map(x)`.
///
/// Stops once the max-norm defect is at most `tol`. Not converging within
/// `max_iter` is reported through `converged`, with the last iterate.
pub fn solve_qre(
    game: &PopulationNetworkGame,
    beta: f64,
    initial: &BeliefProfile,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<QreSolution> {
    game.check_profile(initial)?;
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(SfpError::InvalidParameter(format!("damping {damping} must be in (0, 1]")));
    }
    if !(tol > 0.0) {
        return Err(SfpError::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(SfpError::InvalidParameter(format!("beta = {beta} must be finite and >= 0")));
    }
    let layout = initial.layout().clone();
    let mut x = initial.as_slice().to_vec();
    game.pin_static(&mut x);
    let mut fx = vec![0.0; x.len()];
    let mut monotone = true;
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    loop {
        response_into(game, &x, beta, &mut fx);
        let residual = x.iter().zip(&fx).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        if !residual.is_finite() {
            return Err(SfpError::NonFinite { t: iterations as f64 });
        }
        if residual <= tol || iterations >= max_iter {
            return Ok(QreSolution {
                profile: BeliefProfile::from_flat_unchecked(layout, x),
                residual,
                iterations,
                converged: residual <= tol,
                monotone,
            });
        }
        if residual > prev {
            monotone = false;
        }
        prev = residual;
        for (p, q) in x.iter_mut().zip(&fx) {
            *p += damping * (q - *p);
        }
        crate::dynamics::reproject(&layout, &mut x);
        iterations += 1;
    }
}

/// `k`-th point (1-based) of the Halton sequence in base `b`.
fn halton(mut k: u64, b: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while k > 0 {
        f /= b as f64;
        r += f * (k % b) as f64;
        k /= b;
    }
    r
}

fn primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut c = 2u64;
    while out.len() < n {
        if out.iter().all(|p| !c.is_multiple_of(*p)) {
            out.push(c);
        }
        c += 1;
    }
    out
}

/// Deterministic low-discrepancy interior profiles: Halton points mapped to
/// each simplex through exponential spacings. Static populations get their
/// fixed strategy.
pub fn halton_profiles(game: &PopulationNetworkGame, count: usize) -> Vec<BeliefProfile> {
    let layout = game.layout().clone();
    let bases = primes(layout.dim());
    (1..=count as u64)
        .map(|k| {
            let mut flat: Vec<f64> = bases.iter().map(|&b| -halton(k, b).ln()).collect();
            for i in 0..layout.populations() {
                let block = &mut flat[layout.range(i)];
                let s: f64 = block.iter().sum();
                block.iter_mut().for_each(|v| *v /= s);
            }
            game.pin_static(&mut flat);
            BeliefProfile::from_flat_unchecked(layout.clone(), flat)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QreCluster {
    pub solution: QreSolution,
    /// Number of starts that converged to this equilibrium.
    pub count: usize,
}

/// Solve from `starts` deterministic Halton starts and merge converged
/// solutions closer than `merge_tol` (max-norm). Clusters are ordered by
/// first discovery.
pub fn multistart_qre(
    game: &PopulationNetworkGame,
    beta: f64,
    starts: usize,
    tol: f64,
    merge_tol: f64,
) -> Result<Vec<QreCluster>> {
    use rayon::prelude::*;
    let sols: Vec<QreSolution> = halton_profiles(game, starts)
        .par_iter()
        .map(|p| solve_qre(game, beta, p, DEFAULT_DAMPING, tol, DEFAULT_MAX_ITER))
        .collect::<Result<_>>()?;
    let mut clusters: Vec<QreCluster> = Vec::new();
    for s in sols.into_iter().filter(|s| s.converged) {
        match clusters.iter_mut().find(|c| c.solution.profile.max_abs_diff(&s.profile) <= merge_tol) {
            Some(c) => c.count += 1,
            None => clusters.push(QreCluster { solution: s, count: 1 }),
        }
    }
    Ok(clusters)
}

/// JSON form of a QRE computation.
#[derive(Debug, Clone, Serialize)]
pub struct QreReport {
    pub beta: f64,
    pub profile: Vec<Vec<f64>>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub monotone: bool,
    pub clusters: usize,
    pub equilibria: Vec<Vec<Vec<f64>>>,
}

impl QreReport {
    pub fn new(beta: f64, best: &QreSolution, clusters: &[QreCluster]) -> Self {
        let split = |p: &BeliefProfile| (0..p.populations()).map(|i| p.population(i).to_vec()).collect();
        Self {
            beta,
            profile: split(&best.profile),
            residual: best.residual,
            iterations: best.iterations,
            converged: best.converged,
            monotone: best.monotone,
            clusters: clusters.len(),
            equilibria: clusters.iter().map(|c| split(&c.solution.profile)).collect(),
        }
    }
}

/// `v(x) = -(1/beta) sum x ln x` with `0 ln 0 = 0`.
pub fn entropy_term(x: &[f64], beta: f64) -> f64 {
    -x.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>() / beta
}

/// `pi_i(x_i, mu) = x_i^T sum_j A_ij mu_j + v(x_i)`
pub fn perturbed_payoff(
    game: &PopulationNetworkGame,
    i: usize,
    x_i: &[f64],
    beliefs: &BeliefProfile,
    beta: f64,
) -> Result<f64> {
    game.check_population(i)?;
    game.check_profile(beliefs)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(SfpError::InvalidParameter("the entropy term needs beta > 0".into()));
    }
    if x_i.len() != game.strategies(i) {
        return Err(SfpError::ShapeMismatch(format!("x_i has {} entries, population has {}", x_i.len(), game.strategies(i))));
    }
    crate::game::check_simplex(x_i, "x_i")?;
    let mut u = vec![0.0; x_i.len()];
    utilities_into(game, i, beliefs.as_slice(), &mut u);
    Ok(x_i.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() + entropy_term(x_i, beta))
}

fn check_interior(game: &PopulationNetworkGame, beliefs: &BeliefProfile) -> Result<()> {
    for i in game.learning_populations() {
        if beliefs.population(i).iter().any(|v| *v <= 0.0) {
            return Err(SfpError::InvalidParameter(format!("belief about population {i} is on the boundary")));
        }
    }
    Ok(())
}

/// `L = sum_i w_i [pi_i(x_i, mu) - pi_i(mu_i, mu)]` with `x_i` the logit response.
/// Refuses games that are not weighted zero-sum for `weights`.
pub fn zero_sum_lyapunov(
    game: &PopulationNetworkGame,
    beliefs: &BeliefProfile,
    beta: f64,
    weights: &[f64],
) -> Result<f64> {
    game.check_profile(beliefs)?;
    let zs = game.is_weighted_zero_sum(weights)?;
    if !zs.holds {
        return Err(SfpError::Classification(format!(
            "game is not weighted zero-sum for these weights (max residual {:.3e})",
            zs.max_residual
        )));
    }
    check_interior(game, beliefs)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(SfpError::InvalidParameter("the Lyapunov function needs beta > 0".into()));
    }
    let x = qre_map(game, beliefs, beta)?;
    let mut total = 0.0;
    for i in game.learning_populations() {
        let gain = perturbed_payoff(game, i, x.population(i), beliefs, beta)?
            - perturbed_payoff(game, i, beliefs.population(i), beliefs, beta)?;
        total += weights[i] * gain;
    }
    Ok(total)
}

/// Sum over star centres `j` of
/// `L_j = mu_j^T sum_i B_ji mu_i + v(mu_j) + sum_i v(mu_i)`, where `B` are the
/// common-interest payoffs of [`PopulationNetworkGame::coordination_payoffs`].
pub fn star_potential(game: &PopulationNetworkGame, beliefs: &BeliefProfile, beta: f64) -> Result<f64> {
    game.check_profile(beliefs)?;
    let b = game
        .coordination_payoffs()
        .ok_or_else(|| SfpError::Classification("game is not a coordination game".into()))?;
    let centers = game
        .star_centers()
        .ok_or_else(|| SfpError::Classification("interaction graph is not a star forest".into()))?;
    check_interior(game, beliefs)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(SfpError::InvalidParameter("the potential needs beta > 0".into()));
    }
    let mut total = 0.0;
    for j in centers {
        let mu_j = beliefs.population(j);
        total += entropy_term(mu_j, beta);
        for nb in &b[j] {
            let mu_i = beliefs.population(nb.population);
            total += nb.payoff.bilinear(mu_j, mu_i) + entropy_term(mu_i, beta);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    NonIncreasing,
    NonDecreasing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneReport {
    pub monotone: bool,
    /// Index `k` of the first step `k -> k+1` that breaks monotonicity.
    pub first_violation: Option<usize>,
    /// Every step moves strictly in the requested direction.
    pub strict: bool,
    /// All values equal.
    pub constant: bool,
    /// Largest step against the direction (0 if none).
    pub max_violation: f64,
}

/// Monotonicity of `values` up to `slack` per step.
pub fn check_monotone(values: &[f64], direction: Direction, slack: f64) -> MonotoneReport {
    let mut rep = MonotoneReport { monotone: true, first_violation: None, strict: true, constant: true, max_violation: 0.0 };
    for (k, w) in values.windows(2).enumerate() {
        let step = match direction {
            Direction::NonIncreasing => w[1] - w[0],
            Direction::NonDecreasing => w[0] - w[1],
        };
        if w[1] != w[0] {
            rep.constant = false;
        }
        if !(step < 0.0) {
            rep.strict = false;
        }
        if step > 0.0 {
            rep.max_violation = rep.max_violation.max(step);
        }
        if step > slack || step.is_nan() {
            rep.monotone = false;
            rep.first_violation.get_or_insert(k);
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{homogeneous_trajectory, logit, utilities, SfpParams};
    use crate::game::{asymmetric_matching_pennies, stag_hunt, Edge, Matrix, Population};
    use proptest::prelude::*;

    fn sh(p1: f64, p2: f64) -> BeliefProfile {
        BeliefProfile::new(vec![vec![p1, 1.0 - p1], vec![p2, 1.0 - p2]]).unwrap()
    }

    fn mp(a: f64, b: f64, c: f64) -> BeliefProfile {
        BeliefProfile::new(vec![vec![1.0, 0.0], vec![a, 1.0 - a], vec![b, 1.0 - b], vec![c, 1.0 - c], vec![0.0, 1.0]])
            .unwrap()
    }

    #[test]
    fn map_at_zero_beta_is_uniform() {
        let g = stag_hunt();
        let y = qre_map(&g, &sh(0.9, 0.2), 0.0).unwrap();
        assert_eq!(y.as_slice(), &[0.5; 4]);
        let s = solve_qre(&g, 0.0, &sh(0.9, 0.2), 1.0, 1e-12, 10).unwrap();
        assert_eq!(s.iterations, 1);
        assert_eq!(s.profile.as_slice(), &[0.5; 4]);
    }

    #[test]
    fn map_hand_value() {
        let g = stag_hunt();
        let y = qre_map(&g, &sh(0.7, 0.7), 10.0).unwrap();
        let want = logit(&[1.3, 1.2], 10.0);
        assert!((y.population(0)[0] - want[0]).abs() < 1e-15);
        assert!((y.population(1)[1] - want[1]).abs() < 1e-15);
    }

    #[test]
    fn matching_pennies_qre() {
        let g = asymmetric_matching_pennies();
        let s = solve_qre(&g, 10.0, &mp(0.3, 0.6, 0.8), DEFAULT_DAMPING, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(s.converged);
        assert!((s.profile.population(2)[0] - 0.5).abs() < 1e-9);
        let again = qre_map(&g, &s.profile, 10.0).unwrap();
        assert!(again.max_abs_diff(&s.profile) < 1e-12);
    }

    #[test]
    fn stag_hunt_has_two_stable_qre() {
        let g = stag_hunt();
        let h = solve_qre(&g, 5.0, &sh(0.95, 0.95), DEFAULT_DAMPING, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let s = solve_qre(&g, 5.0, &sh(0.05, 0.05), DEFAULT_DAMPING, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(h.converged && s.converged);
        assert!(h.residual <= 1e-12 && s.residual <= 1e-12);
        assert!(h.profile.population(0)[0] > 0.9);
        assert!(s.profile.population(0)[1] > 0.9);
        let clusters = multistart_qre(&g, 5.0, 64, 1e-12, 1e-6).unwrap();
        assert!(clusters.len() >= 2);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let g = asymmetric_matching_pennies();
        let s = solve_qre(&g, 10.0, &mp(0.3, 0.6, 0.8), 0.5, 1e-12, 3).unwrap();
        assert!(!s.converged);
        assert_eq!(s.iterations, 3);
        assert!(solve_qre(&g, 10.0, &mp(0.3, 0.6, 0.8), 0.0, 1e-12, 3).is_err());
    }

    #[test]
    fn halton_starts_are_interior() {
        let g = asymmetric_matching_pennies();
        let starts = halton_profiles(&g, 30);
        assert_eq!(starts.len(), 30);
        for s in &starts {
            assert_eq!(s.population(0), &[1.0, 0.0]);
            for i in 1..4 {
                assert!(s.population(i).iter().all(|v| *v > 0.0));
                assert!((s.population(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!((halton(1, 2) - 0.5).abs() < 1e-15 && (halton(5, 3) - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn entropy_values() {
        let g = PopulationNetworkGame::new(vec![Population::learning("x", 3)], vec![], vec![1.0]).unwrap();
        let b = BeliefProfile::uniform(&[3]);
        let v = perturbed_payoff(&g, 0, &[1.0 / 3.0; 3], &b, 2.0).unwrap();
        assert!((v - 3f64.ln() / 2.0).abs() < 1e-15);
        assert_eq!(entropy_term(&[1.0, 0.0], 3.0), 0.0);
        assert!(perturbed_payoff(&g, 0, &[1.0 / 3.0; 3], &b, 0.0).is_err());
    }

    #[test]
    fn logit_maximises_perturbed_payoff() {
        let g = stag_hunt();
        let b = sh(0.35, 0.6);
        let x = logit(&utilities(&g, 0, &b).unwrap(), 4.0);
        let best = perturbed_payoff(&g, 0, x.probabilities(), &b, 4.0).unwrap();
        // brute-force maximisation on a fine grid, refined around the best point
        let mut arg = 0.0;
        let mut val = f64::NEG_INFINITY;
        for k in 1..100_000 {
            let p = k as f64 / 100_000.0;
            let v = perturbed_payoff(&g, 0, &[p, 1.0 - p], &b, 4.0).unwrap();
            if v > val {
                val = v;
                arg = p;
            }
        }
        assert!((arg - x[0]).abs() < 2e-5);
        assert!(best >= val - 1e-12);
    }

    #[test]
    fn lyapunov_basics() {
        let g = asymmetric_matching_pennies();
        let w = [1.0; 5];
        let u = mp(0.5, 0.5, 0.5);
        let l = zero_sum_lyapunov(&g, &u, 10.0, &w).unwrap();
        assert!(l >= 0.0);
        let q = solve_qre(&g, 10.0, &u, DEFAULT_DAMPING, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(zero_sum_lyapunov(&g, &q.profile, 10.0, &w).unwrap().abs() < 1e-10);
        assert!(matches!(zero_sum_lyapunov(&stag_hunt(), &sh(0.5, 0.5), 10.0, &[1.0, 1.0]), Err(SfpError::Classification(_))));
        assert!(zero_sum_lyapunov(&g, &mp(0.0, 0.5, 0.5), 10.0, &w).is_err());
    }

    #[test]
    fn lyapunov_matches_direct_maximisation() {
        // at uniform beliefs each population's gain is max_x pi(x) - pi(mu)
        let g = asymmetric_matching_pennies();
        let u = mp(0.5, 0.5, 0.5);
        let mut want = 0.0;
        for i in 1..4 {
            // pi is strictly concave in p: ternary search
            let f = |p: f64| perturbed_payoff(&g, i, &[p, 1.0 - p], &u, 10.0).unwrap();
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..200 {
                let (a, b) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
                if f(a) < f(b) {
                    lo = a;
                } else {
                    hi = b;
                }
            }
            want += f(0.5 * (lo + hi)) - f(0.5);
        }
        let l = zero_sum_lyapunov(&g, &u, 10.0, &[1.0; 5]).unwrap();
        assert!((l - want).abs() < 1e-7, "{l} vs {want}");
    }

    #[test]
    fn lyapunov_decreases_along_a_trajectory() {
        let g = asymmetric_matching_pennies();
        let p = SfpParams::new(10.0, 10.0).unwrap();
        let times: Vec<f64> = (1..=300).map(|k| k as f64).collect();
        let traj = homogeneous_trajectory(&g, &mp(0.8, 0.2, 0.7), &p, &times, 1e-2).unwrap();
        let vals: Vec<f64> = traj.states.iter().map(|s| zero_sum_lyapunov(&g, s, 10.0, &[1.0; 5]).unwrap()).collect();
        let rep = check_monotone(&vals, Direction::NonIncreasing, DEFAULT_SLACK);
        assert!(rep.monotone, "{rep:?}");
    }

    fn exact_coordination() -> PopulationNetworkGame {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 4.0]]).unwrap();
        PopulationNetworkGame::new(
            vec![Population::learning("1", 2), Population::learning("2", 2)],
            vec![Edge { from: 0, to: 1, payoff_from_to: a.clone(), payoff_to_from: a.transpose() }],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn star_potential_values() {
        let beta = 3.0;
        let u = sh(0.5, 0.5);
        let v = star_potential(&exact_coordination(), &u, beta).unwrap();
        assert!((v - (7.0 / 4.0 + 2.0 * 2f64.ln() / beta)).abs() < 1e-14);
        // stag hunt: common-interest payoffs [[1,0],[0,2]]
        let v = star_potential(&stag_hunt(), &u, beta).unwrap();
        assert!((v - (3.0 / 4.0 + 2.0 * 2f64.ln() / beta)).abs() < 1e-14);
        let r = star_potential(&asymmetric_matching_pennies(), &mp(0.5, 0.5, 0.5), beta);
        assert!(matches!(r, Err(SfpError::Classification(_))), "{r:?}");
    }

    #[test]
    fn star_potential_center_choice_is_irrelevant() {
        let g = exact_coordination();
        let b = g.coordination_payoffs().unwrap();
        let mu = sh(0.3, 0.85);
        let from_0 = b[0][0].payoff.bilinear(mu.population(0), mu.population(1));
        let from_1 = b[1][0].payoff.bilinear(mu.population(1), mu.population(0));
        assert!((from_0 - from_1).abs() < 1e-15);
    }

    #[test]
    fn star_potential_entropy_vanishes_at_high_beta() {
        let g = stag_hunt();
        let mu = sh(0.3, 0.85);
        let coarse = star_potential(&g, &mu, 1e12).unwrap();
        let bilinear = g.coordination_payoffs().unwrap()[0][0].payoff.bilinear(mu.population(0), mu.population(1));
        assert!((coarse - bilinear).abs() < 1e-11);
    }

    #[test]
    fn monotone_checks() {
        let r = check_monotone(&[3.0, 2.0, 1.0], Direction::NonIncreasing, 1e-9);
        assert!(r.monotone && r.strict && !r.constant);
        let r = check_monotone(&[1.0, 1.0, 1.0], Direction::NonIncreasing, 1e-9);
        assert!(r.monotone && r.constant && !r.strict);
        let r = check_monotone(&[1.0, 2.0, 1.5, 3.0], Direction::NonDecreasing, 1e-9);
        assert!(!r.monotone);
        assert_eq!(r.first_violation, Some(1));
        assert!((r.max_violation - 0.5).abs() < 1e-15);
        let r = check_monotone(&[1.0, 1.0 + 1e-10], Direction::NonIncreasing, 1e-9);
        assert!(r.monotone && !r.strict);
    }

    proptest! {
        #[test]
        fn lyapunov_nonnegative_and_zero_only_at_qre(a in 0.01f64..0.99, b in 0.01f64..0.99, c in 0.01f64..0.99) {
            let g = asymmetric_matching_pennies();
            let mu = mp(a, b, c);
            let l = zero_sum_lyapunov(&g, &mu, 10.0, &[1.0; 5]).unwrap();
            prop_assert!(l >= -1e-12);
            let r = qre_residual(&g, &mu, 10.0).unwrap();
            if r > 1e-3 {
                prop_assert!(l > 0.0);
            }
        }

        #[test]
        fn multistart_agrees_in_zero_sum(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let g = asymmetric_matching_pennies();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let start = mp(rng.random_range(0.01..0.99), rng.random_range(0.01..0.99), rng.random_range(0.01..0.99));
            let s = solve_qre(&g, 10.0, &start, DEFAULT_DAMPING, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            prop_assert!(s.converged);
            prop_assert!((s.profile.population(2)[0] - 0.5).abs() < 1e-9);
        }
    }
}
