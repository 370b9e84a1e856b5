//! Acceptance checks. Each check prints one `[PASS]` or `[FAIL]` line; the
//! process exits non-zero if any check fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfp_core::abm::{abm_step, init_population, run_abm, BeliefDist, SimConfig};
use sfp_core::dynamics::{homogeneous_trajectory_tau, logit, t_of_tau, SfpParams};
use sfp_core::equilibrium::{
    check_monotone, qre_residual, solve_qre, star_potential, zero_sum_lyapunov, Direction, DEFAULT_DAMPING,
    DEFAULT_MAX_ITER, DEFAULT_SLACK, DEFAULT_TOL,
};
use sfp_core::experiments::{run_fig1, run_mean_path, run_roa, ExperimentConfig, SolverKind};
use sfp_core::game::{asymmetric_matching_pennies, stag_hunt};
use sfp_core::moments::{logit_hessian_diag, run_moments, run_moments_tau, variance_closed_form, MomentState};
use sfp_core::pde::{density_from_beta, grid_moments, run_pde, DensityState, PdeScheme};
use sfp_core::{BeliefProfile, PopulationNetworkGame};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    println!(
        "[{}] {id:>2} {name}: {} ({:.1} s, limit {} s{})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { ", too slow" }
    );
    pass
}

fn binary(p: &[f64]) -> BeliefProfile {
    BeliefProfile::new(p.iter().map(|&x| vec![x, 1.0 - x]).collect()).unwrap()
}

fn mp_profile(a: f64, b: f64, c: f64) -> BeliefProfile {
    binary(&[1.0, a, b, c, 0.0])
}

/// Sample variance and its standard error `sqrt((m4 - s^4) / n)`.
fn variance_with_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let s2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    (s2, ((m4 - s2 * s2) / n).sqrt())
}

fn variance_decay() -> Outcome {
    let g = stag_hunt();
    let params = SfpParams::new(10.0, 10.0).unwrap();
    let cfg = SimConfig::new(1000, params, 1000, 2024).with_common_belief(&g, BeliefDist::Beta { a: 14.0, b: 6.0 });
    let mut state = init_population(&cfg, &g, cfg.seed).unwrap();
    let mut rows = Vec::new();
    let mut ok = true;
    for t in 1..=1000u64 {
        state = abm_step(&state, &g, &params);
        if [10, 100, 1000].contains(&t) {
            // beliefs of population 1 agents about population 2
            let p = state.populations[0].as_ref().unwrap();
            let x: Vec<f64> = (0..p.agents).map(|k| p.belief(k, 1).unwrap()[0]).collect();
            let (v, se) = variance_with_se(&x);
            let want = variance_closed_form(0.01, 10.0, t as f64);
            let z = (v - want) / se;
            ok &= z.abs() <= 3.0;
            rows.push((t as f64, v, z));
        }
    }
    // slope over the last decade, where the decay is asymptotic
    let slope = (rows[2].1 / rows[1].1).ln() / (rows[2].0 / rows[1].0).ln();
    ok &= (slope + 2.0).abs() <= 0.1;
    let z: Vec<String> = rows.iter().map(|r| format!("t={} z={:+.2}", r.0, r.2)).collect();
    Outcome { pass: ok, detail: format!("{}; slope {slope:.3}", z.join(", ")) }
}

fn closed_form_consistency() -> Outcome {
    let g = stag_hunt();
    let params = SfpParams::new(10.0, 10.0).unwrap();
    let init = MomentState::with_common_variance(&g, binary(&[0.7, 0.7]), 0.01).unwrap();
    let times: Vec<f64> = (0..=60).map(|k| 10f64.powf(k as f64 / 20.0) - 1.0).collect();
    let traj = run_moments(&g, &init, &params, &times, 1e-2).unwrap();
    let mut worst = 0.0f64;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let want = ((11.0) / (11.0 + t)).powi(2) * 0.01;
        for v in s.variance() {
            worst = worst.max((v - want).abs() / want);
        }
    }
    Outcome { pass: worst <= 1e-8, detail: format!("max relative error {worst:.2e} over {} times", times.len()) }
}

fn qre_uniqueness() -> Outcome {
    let g = asymmetric_matching_pennies();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sols: Vec<_> = (0..20)
        .map(|_| {
            let start = mp_profile(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            solve_qre(&g, 10.0, &start, DEFAULT_DAMPING, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap()
        })
        .collect();
    let converged = sols.iter().all(|s| s.converged);
    let mut spread = 0.0f64;
    for a in &sols {
        for b in &sols {
            spread = spread.max(a.profile.max_abs_diff(&b.profile));
        }
    }
    let p3 = sols.iter().map(|s| (s.profile.population(2)[0] - 0.5).abs()).fold(0.0, f64::max);
    Outcome {
        pass: converged && spread <= 1e-8 && p3 <= 1e-9,
        detail: format!("all converged {converged}, pairwise spread {spread:.1e}, |pop3 - 0.5| {p3:.1e}"),
    }
}

fn lyapunov_decrease() -> Outcome {
    let g = asymmetric_matching_pennies();
    let params = SfpParams::new(10.0, 10.0).unwrap();
    let taus: Vec<f64> = (0..=600).map(|k| k as f64 * 0.05).collect();
    let times: Vec<f64> = taus.iter().map(|&s| t_of_tau(s, 10.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut ok, mut worst_final, mut max_violation) = (true, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let start =
            mp_profile(rng.random_range(0.01..0.99), rng.random_range(0.01..0.99), rng.random_range(0.01..0.99));
        let traj = homogeneous_trajectory_tau(&g, &start, &params, &times, 1e-2).unwrap();
        let l: Vec<f64> = traj.states.iter().map(|s| zero_sum_lyapunov(&g, s, 10.0, &[1.0; 5]).unwrap()).collect();
        let rep = check_monotone(&l, Direction::NonIncreasing, DEFAULT_SLACK);
        ok &= rep.monotone && l[0] > l[1];
        max_violation = max_violation.max(rep.max_violation);
        worst_final = worst_final.max(*l.last().unwrap());
    }
    ok &= worst_final <= 1e-8;
    Outcome { pass: ok, detail: format!("max upward step {max_violation:.1e}, worst final value {worst_final:.1e}") }
}

fn potential_ascent() -> Outcome {
    let g = stag_hunt();
    let params = SfpParams::new(10.0, 10.0).unwrap();
    let taus: Vec<f64> = (0..=800).map(|k| k as f64 * 0.05).collect();
    let times: Vec<f64> = taus.iter().map(|&s| t_of_tau(s, 10.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut ok, mut worst_res, mut max_violation) = (true, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let (a, b) = (rng.random_range(0.02..0.98), rng.random_range(0.02..0.98));
        let start = binary(&[a, b]);
        let var = rng.random_range(0.0..0.02f64);
        let paths = [
            homogeneous_trajectory_tau(&g, &start, &params, &times, 1e-2).unwrap().states,
            run_moments_tau(&g, &MomentState::clamped(start.clone(), vec![var; 4]).unwrap(), &params, &times, 1e-2)
                .unwrap()
                .states
                .into_iter()
                .map(|s| s.mean().clone())
                .collect(),
        ];
        for path in &paths {
            let v: Vec<f64> = path.iter().map(|s| star_potential(&g, s, 10.0).unwrap()).collect();
            let rep = check_monotone(&v, Direction::NonDecreasing, DEFAULT_SLACK);
            ok &= rep.monotone;
            max_violation = max_violation.max(rep.max_violation);
            worst_res = worst_res.max(qre_residual(&g, path.last().unwrap(), 10.0).unwrap());
        }
    }
    ok &= worst_res <= 1e-6;
    Outcome { pass: ok, detail: format!("max downward step {max_violation:.1e}, worst terminal QRE residual {worst_res:.1e}") }
}

fn fig1_reproduction() -> Outcome {
    let r = run_fig1(&ExperimentConfig::default()).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (c, want_s) in r.cases.iter().zip([false, true]) {
        let finals = [
            *c.abm_belief_s(0).last().unwrap(),
            *c.abm_belief_s(1).last().unwrap(),
            *c.model_belief_s(0).last().unwrap(),
            *c.model_belief_s(1).last().unwrap(),
        ];
        let selected = finals.iter().all(|&p| if want_s { p > 0.9 } else { p < 0.1 });
        let gap = c.belief_gap();
        ok &= selected && gap <= 0.05;
        parts.push(format!("{}: final P(S) abm {:.3} model {:.3}, gap {gap:.3}", c.label, finals[0], finals[2]));
    }
    Outcome { pass: ok, detail: parts.join("; ") }
}

fn basin_growth() -> Outcome {
    let r = run_roa(&ExperimentConfig::default()).unwrap();
    let f: Vec<f64> = r.grids.iter().map(|g| g.s_fraction()).collect();
    let unconverged: usize = r.grids.iter().map(|g| g.unconverged()).sum();
    let monotone = f.windows(2).all(|w| w[1] >= w[0]);
    let strict = f[f.len() - 1] > f[0];
    let shown: Vec<String> = r.grids.iter().zip(&f).map(|(g, x)| format!("{}: {x:.4}", g.variance)).collect();
    Outcome {
        pass: monotone && strict && r.grids.len() == 4 && r.grids[0].axis.len() == 41,
        detail: format!("S-basin fraction by variance [{}], {unconverged} unconverged cells", shown.join(", ")),
    }
}

fn pde_validity() -> Outcome {
    let g = stag_hunt();
    let params = SfpParams::new(10.0, 10.0).unwrap();
    let times: Vec<f64> = (0..=80).map(|k| 10f64.powf(k as f64 / 20.0)).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (a, b) in [(280.0, 120.0), (14.0, 6.0)] {
        let grid = density_from_beta(a, b, 200).unwrap();
        let (_, s0) = grid_moments(&grid);
        let init = DensityState::uniform_init(&g, &grid).unwrap();
        let run = run_pde(&g, &init, 1e4, &params, PdeScheme::default(), &times).unwrap();
        let m0 = grid.mass();
        let (mut drift, mut boundary, mut var_err) = (0.0f64, 0.0f64, 0.0f64);
        for (t, snap) in run.times.iter().zip(&run.snapshots) {
            for gr in snap.grids().iter().flatten() {
                drift = drift.max((gr.mass() - m0).abs());
                let (l, r) = gr.boundary_density();
                boundary = boundary.max(l.abs()).max(r.abs());
                if *t >= 10.0 {
                    let (_, v) = grid_moments(gr);
                    var_err = var_err.max((v / variance_closed_form(s0, 10.0, *t) - 1.0).abs());
                }
            }
        }
        let mom =
            run_mean_path(&g, SolverKind::Moments, &|_| BeliefDist::Beta { a, b }, &params, &times, 200, PdeScheme::default())
                .unwrap();
        let gap = run
            .moments
            .states
            .iter()
            .zip(&mom.beliefs)
            .map(|(s, m)| s.mean().max_abs_diff(m))
            .fold(0.0, f64::max);
        ok &= drift <= 1e-6 && boundary == 0.0 && gap <= 0.02 && var_err <= 0.05;
        parts.push(format!(
            "Beta({a},{b}): mass drift {drift:.1e}, boundary {boundary:.0e}, mean gap {gap:.3}, variance error {:.2}%",
            100.0 * var_err
        ));
    }
    Outcome { pass: ok, detail: parts.join("; ") }
}

fn solver_equivalence() -> Outcome {
    let g = stag_hunt();
    let params = SfpParams::new(10.0, 10.0).unwrap();
    let point = |_: usize| BeliefDist::Point(vec![0.7, 0.3]);
    let times: Vec<f64> = (0..=1000).map(|t| t as f64).collect();
    let mut series: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for agents in [1usize, 37] {
        let mut cfg = SimConfig::new(agents, params, 1000, 9).with_common_belief(&g, BeliefDist::Point(vec![0.7, 0.3]));
        cfg.record = None;
        let abm = run_abm(&cfg, &g).unwrap();
        series.push((format!("abm{agents}"), (0..2).map(|i| abm.series(i, |p| p.belief_mean[0])).collect()));
    }
    for (name, solver) in [("homog", SolverKind::Homog), ("moments", SolverKind::Moments), ("pde", SolverKind::Pde)] {
        let p = run_mean_path(&g, solver, &point, &params, &times, 400, PdeScheme::default()).unwrap();
        series.push((name.into(), (0..2).map(|i| p.beliefs.iter().map(|b| b.population(i)[0]).collect()).collect()));
    }
    let mut worst = (0.0f64, String::new());
    for (i, a) in series.iter().enumerate() {
        for b in &series[i + 1..] {
            let gap = (0..2)
                .map(|p| a.1[p].iter().zip(&b.1[p]).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())))
                .fold(0.0, f64::max);
            if gap > worst.0 {
                worst = (gap, format!("{} vs {}", a.0, b.0));
            }
        }
    }
    Outcome { pass: worst.0 <= 0.02, detail: format!("largest pairwise sup gap {:.4} ({})", worst.0, worst.1) }
}

/// Central differences of `mu -> logit(sum_j A_ij mu_j)` in the ambient coordinates.
fn fd_second(game: &PopulationNetworkGame, i: usize, mean: &BeliefProfile, beta: f64, j: usize, s: usize, h: f64) -> Vec<f64> {
    let f = |shift: f64| {
        let mut u = vec![0.0; game.strategies(i)];
        for nb in game.neighbors(i) {
            let mut mu = mean.population(nb.population).to_vec();
            if nb.population == j {
                mu[s] += shift;
            }
            nb.payoff.mul_vec_add(&mu, &mut u);
        }
        logit(&u, beta).into_vec()
    };
    let (p, z, m) = (f(h), f(0.0), f(-h));
    (0..p.len()).map(|k| (p[k] - 2.0 * z[k] + m[k]) / (h * h)).collect()
}

fn hessian_check() -> Outcome {
    let beta = 5.0;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    let mut count = 0;
    for game in [stag_hunt(), asymmetric_matching_pennies()] {
        for _ in 0..50 {
            let p: Vec<f64> = (0..game.population_count()).map(|_| rng.random_range(0.0..1.0)).collect();
            let mean = binary(&p);
            for i in game.learning_populations() {
                let rep = logit_hessian_diag(&game, i, &mean, beta).unwrap();
                for e in &rep.entries {
                    let fd = fd_second(&game, i, &mean, beta, e.neighbor, e.strategy, 1e-4);
                    for (a, b) in e.values.iter().zip(&fd) {
                        worst = worst.max((a - b).abs());
                    }
                }
            }
            count += 1;
        }
    }
    Outcome { pass: worst <= 1e-5 && count == 100, detail: format!("beta {beta}, {count} states, max |analytic - fd| {worst:.2e}") }
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        check(1, "variance decay", s(30), variance_decay),
        check(2, "closed-form variance", s(1), closed_form_consistency),
        check(3, "zero-sum QRE uniqueness", s(5), qre_uniqueness),
        check(4, "Lyapunov decrease", s(10), lyapunov_decrease),
        check(5, "star potential ascent", s(10), potential_ascent),
        check(6, "variance selects equilibrium", s(300), fig1_reproduction),
        check(7, "basin growth with variance", s(300), basin_growth),
        check(8, "density solver validity", s(120), pde_validity),
        check(9, "point-mass solver equivalence", s(120), solver_equivalence),
        check(10, "logit Hessian", s(1), hessian_check),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
