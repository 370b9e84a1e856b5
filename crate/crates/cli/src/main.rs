use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sfp_core::equilibrium::{multistart_qre, solve_qre, QreReport, DEFAULT_DAMPING, DEFAULT_MAX_ITER, DEFAULT_TOL};
use sfp_core::experiments::{
    run_custom, run_fig1, run_fig4, run_roa, write_artifacts, Artifacts, ExperimentConfig, ExperimentKind, SolverKind,
};
use sfp_core::{PopulationNetworkGame, SfpError};

/// Smooth fictitious play on population network games.
#[derive(Parser)]
#[command(name = "png-sfp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stag hunt: small vs large initial belief variance.
    Fig1(Common),
    /// Regions of attraction of the stag-hunt QRE over initial mean beliefs.
    Roa(Common),
    /// Asymmetric matching pennies from several Beta initialisations.
    Fig4(Common),
    /// Any game file, solver and initial beliefs.
    Custom(Common),
    /// Quantal response equilibria by multistart damped iteration.
    Qre(Common),
    /// Check a game and/or config file and print its classification.
    Validate(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Abm,
    Moments,
    Pde,
    Homog,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin game name (stag_hunt, matching_pennies) or game file.
    #[arg(long)]
    game: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    solver: Option<Solver>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Final time (number of agent updates).
    #[arg(long)]
    steps: Option<u64>,
    /// Density grid intervals, or cells per axis for `roa`.
    #[arg(long)]
    grid: Option<usize>,
    /// Evaluate the zero-sum Lyapunov function along `custom` runs.
    #[arg(long)]
    lyapunov: bool,
    /// Evaluate the star-coordination potential along `custom` runs.
    #[arg(long)]
    potential: bool,
}

enum Failure {
    Numerical(String),
    Config(String),
}

impl From<SfpError> for Failure {
    fn from(e: SfpError) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

fn load_config(kind: Option<ExperimentKind>, c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_json_file(p)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", p.display())))?,
        None => ExperimentConfig::default(),
    };
    if let (Some(want), Some(have)) = (kind, cfg.kind) {
        if want != have {
            return Err(Failure::Config(format!("config describes a {have:?} experiment, not {want:?}")));
        }
    }
    if let Some(g) = &c.game {
        cfg.game = Some(g.clone());
        cfg.base_dir = None;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(s) = c.solver {
        cfg.solver = Some(match s {
            Solver::Abm => SolverKind::Abm,
            Solver::Moments => SolverKind::Moments,
            Solver::Pde => SolverKind::Pde,
            Solver::Homog => SolverKind::Homog,
        });
    }
    cfg.beta = c.beta.or(cfg.beta);
    cfg.lambda = c.lambda.or(cfg.lambda);
    cfg.t_end = c.steps.map(|s| s as f64).or(cfg.t_end);
    cfg.grid = c.grid.or(cfg.grid);
    cfg.lyapunov |= c.lyapunov;
    cfg.potential |= c.potential;
    if let Some(o) = &c.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

fn emit(cfg: &ExperimentConfig, artifacts: &Artifacts) -> Result<(), Failure> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    for p in write_artifacts(&dir, artifacts)? {
        println!("wrote {}", p.display());
    }
    for (name, content) in &artifacts.files {
        if name.ends_with("summary.csv") {
            print!("{content}");
        }
    }
    Ok(())
}

fn classify(game: &PopulationNetworkGame) -> Result<(), Failure> {
    println!("{game}");
    let zs = game.is_weighted_zero_sum(game.weights())?;
    println!("weighted zero-sum: {} (max residual {:.3e})", zs.holds, zs.max_residual);
    println!("coordination: {}", game.is_coordination());
    println!("star forest: {}", game.is_star_forest());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fig1(c) => {
            let cfg = load_config(Some(ExperimentKind::Fig1), &c)?;
            emit(&cfg, &run_fig1(&cfg)?.artifacts())
        }
        Command::Roa(c) => {
            let cfg = load_config(Some(ExperimentKind::Roa), &c)?;
            emit(&cfg, &run_roa(&cfg)?.artifacts())
        }
        Command::Fig4(c) => {
            let cfg = load_config(Some(ExperimentKind::Fig4), &c)?;
            emit(&cfg, &run_fig4(&cfg)?.artifacts())
        }
        Command::Custom(c) => {
            let cfg = load_config(Some(ExperimentKind::Custom), &c)?;
            let res = run_custom(&cfg)?;
            emit(&cfg, &res.artifacts(cfg.betas.is_some()))?;
            for r in &res.runs {
                if let Some((kind, _, rep)) = &r.certificate {
                    println!(
                        "beta {}: {kind:?} monotone = {}, strict = {}, first violation = {:?}",
                        r.beta, rep.monotone, rep.strict, rep.first_violation
                    );
                }
            }
            Ok(())
        }
        Command::Qre(c) => {
            let cfg = load_config(None, &c)?;
            let game = cfg.load_game()?;
            let beta = cfg.beta.unwrap_or(10.0);
            let clusters = multistart_qre(&game, beta, cfg.qre_starts.unwrap_or(64), DEFAULT_TOL, 1e-6)?;
            let best = match clusters.first() {
                Some(c) => c.solution.clone(),
                None => solve_qre(&game, beta, &game.default_profile(), DEFAULT_DAMPING, DEFAULT_TOL, DEFAULT_MAX_ITER)?,
            };
            let report = QreReport::new(beta, &best, &clusters);
            let json = serde_json::to_string_pretty(&report).map_err(SfpError::from)? + "\n";
            let mut art = Artifacts::default();
            art.files.push(("qre.json".into(), json.clone()));
            emit(&cfg, &art)?;
            print!("{json}");
            if clusters.is_empty() {
                return Err(Failure::Numerical(format!(
                    "damped iteration converged from none of the starts (fallback residual {:.3e})",
                    best.residual
                )));
            }
            Ok(())
        }
        Command::Validate(c) => {
            let cfg = load_config(None, &c)?;
            if cfg.game.is_none() && c.config.is_none() {
                return Err(Failure::Config("nothing to validate: pass --config or --game".into()));
            }
            if cfg.game.is_some() {
                classify(&cfg.load_game()?)?;
            }
            println!("ok");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
