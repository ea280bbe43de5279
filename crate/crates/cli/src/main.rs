use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amm_exec::check::consistency_check;
use amm_exec::config::{parse_grid, DumpFormat, NamedPath, PathSpec, Preset, ScenarioConfig, SolverKind};
use amm_exec::output::{load_grid, read_schedule, write_csv, write_json, write_run, SeriesRow};
use amm_exec::sweep::{sweep, sweep_table, SweepParameter};
use amm_exec::{compare_schedules, run_scenario, CliError};
use amm_exec_core::grid::GridConfig;
use amm_exec_core::{fit_power_law, FitOptions, PowerLawTarget};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

/// Optimal execution schedules for AMM pools with transient impact.
#[derive(Debug, Parser)]
#[command(name = "amm-exec", version)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one scenario and write its schedule.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Evaluate a saved value grid instead of solving.
        #[arg(long)]
        load_grid: Option<PathBuf>,
        /// Save the value grid of a grid run.
        #[arg(long, value_enum)]
        dump_grid: Option<DumpFormat>,
    },
    /// Solve the scenario for several values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// sigma, rho, beta, omega0, N, L, L1 or s_bar.
        #[arg(long)]
        param: SweepParameter,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Differences between two schedules in bps of the order size: either two
    /// schedule files or two solvers run on the same scenario.
    Compare {
        #[command(flatten)]
        common: Common,
        files: Vec<PathBuf>,
        #[arg(long, value_enum, value_delimiter = ',', default_values = ["dp-open", "dp-closed"])]
        solvers: Vec<SolverKind>,
    },
    /// Fit a sum of exponentials to the kernel (1 + alpha t)^-beta.
    FitKernel {
        #[arg(long, default_value_t = 10.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.8)]
        beta: f64,
        /// Number of exponentials (J + 1).
        #[arg(long, default_value_t = 2)]
        count: usize,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid resolution study against the closed-loop schedule (equal layers)
    /// or a high-resolution grid run.
    Check {
        #[command(flatten)]
        common: Common,
        /// Price grid sizes K_f.
        #[arg(long, value_delimiter = ',', default_values = ["50", "100", "250"])]
        kf: Vec<usize>,
        /// Impact grid sizes K_I.
        #[arg(long, value_delimiter = ',', default_values = ["10", "30", "50"])]
        ki: Vec<usize>,
        /// Reference grid Kf,Kx,Ki,z for two-layer pools.
        #[arg(long, value_parser = parse_grid, default_value = "500,250,500,3")]
        reference: GridConfig,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML scenario file; missing fields take the defaults of scenario 1.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario used when no config file is given.
    #[arg(long, value_enum, conflicts_with = "config")]
    scenario: Option<Preset>,
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    /// mean, up, down or bump:<n>:<+|->.
    #[arg(long)]
    path: Option<NamedPath>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Kf,Kx,Ki,z.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<GridConfig>,
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig, CliError> {
        let mut cfg = match (&self.config, self.scenario) {
            (Some(path), _) => ScenarioConfig::load(path)?,
            (None, Some(preset)) => preset.config(),
            (None, None) => ScenarioConfig::default(),
        };
        if let Some(solver) = self.solver {
            cfg.solver = solver;
        }
        if let Some(path) = self.path {
            cfg.path = PathSpec::Named(path);
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(grid) = self.grid {
            cfg.set_grid(grid);
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("AMM_EXEC_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Solve { common, load_grid: warm, dump_grid } => {
            let mut cfg = common.scenario()?;
            if let Some(format) = dump_grid {
                cfg.output.grid_dump = Some(format);
            }
            let warm = warm.as_deref().map(load_grid).transpose()?;
            let run = run_scenario(&cfg, warm)?;
            write_run(&cfg.output.dir, &run, cfg.output.grid_dump)?;
            print_json(&run.schedule.trades)
        }
        Command::Sweep { common, param, values } => {
            let cfg = common.scenario()?;
            let runs = sweep(&cfg, param, &values)?;
            for (value, run) in values.iter().zip(&runs) {
                write_run(&cfg.output.dir.join(format!("{param}={value}")), run, None)?;
            }
            write_csv(&cfg.output.dir.join("sweep.csv"), &sweep_table(param, &values, &runs))?;
            let table: Vec<(f64, &Vec<f64>)> = values.iter().copied().zip(runs.iter().map(|r| &r.schedule.trades)).collect();
            print_json(&table)
        }
        Command::Compare { common, files, solvers } => {
            let cfg = common.scenario()?;
            let (a, b) = match files.as_slice() {
                [a, b] => (read_schedule(a)?, read_schedule(b)?),
                [] => {
                    let [first, second] = solvers.as_slice() else {
                        return Err(invalid("solvers", "give exactly two solvers"));
                    };
                    let run = |solver: SolverKind| {
                        let mut c = cfg.clone();
                        c.solver = solver;
                        run_scenario(&c, None).map(|r| r.schedule)
                    };
                    (run(*first)?, run(*second)?)
                }
                _ => return Err(invalid("files", "give two schedule files or none")),
            };
            let report = compare_schedules(&a, &b, cfg.problem.order_size)?;
            ensure_dir(&cfg.output.dir)?;
            write_json(&cfg.output.dir.join("compare.json"), &report)?;
            print_json(&report)
        }
        Command::FitKernel { alpha, beta, count, horizon, seed, out } => {
            if count == 0 {
                return Err(invalid("count", "must be at least 1"));
            }
            let target = PowerLawTarget::new(alpha, beta, horizon)?;
            let fit = fit_power_law(&target, count - 1, &FitOptions { seed, ..FitOptions::default() })?;
            let summary = FitSummary { weights: fit.kernels.weights().to_vec(), rates: fit.kernels.rates().to_vec(), rms: fit.rms };
            if let Some(dir) = out {
                ensure_dir(&dir)?;
                write_json(&dir.join("kernel.json"), &summary)?;
                let mut rows = Vec::new();
                for i in 0..=200 {
                    let t = horizon * i as f64 / 200.0;
                    rows.push(SeriesRow { series: "target".into(), x: t, y: target.value(t) });
                    rows.push(SeriesRow { series: "fit".into(), x: t, y: fit.kernels.value(t)? });
                }
                write_csv(&dir.join("fit.csv"), &rows)?;
            }
            print_json(&summary)
        }
        Command::Check { common, kf, ki, reference } => {
            let cfg = common.scenario()?;
            let base = cfg.grid_config();
            let grids: Vec<GridConfig> = kf
                .iter()
                .flat_map(|&f| ki.iter().map(move |&i| GridConfig { price_points: f, impact_points: i, ..base }))
                .collect();
            for g in grids.iter().chain([&reference]) {
                g.validate()?;
            }
            let (rows, _) = consistency_check(&cfg, &grids, reference)?;
            ensure_dir(&cfg.output.dir)?;
            write_csv(&cfg.output.dir.join("check.csv"), &rows)?;
            print_json(&rows)
        }
    }
}

#[derive(Serialize)]
struct FitSummary {
    weights: Vec<f64>,
    rates: Vec<f64>,
    rms: f64,
}

fn invalid(field: &str, message: &str) -> CliError {
    CliError::Validation(vec![amm_exec::FieldError::new(field, message)])
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io("stdout", e))?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed pipe (e.g. `| head`) is not a failure of the run
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io("stdout", e)),
        _ => Ok(()),
    }
}
