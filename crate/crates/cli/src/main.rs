use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use mpf_core::controllers::ControllerKind;
use mpf_core::exec::{self, Execution};
use mpf_core::fastloop::{self, BoundarySearch, LoopMode};
use mpf_core::impairment::{classify_channel, default_grid, ChannelOp, Passivity};
use mpf_core::io::{self, BoundaryRow, MetricsRow, SweepRow, SCHEMA_VERSION};
use mpf_core::scenario::{self, ImpairmentCase, RunOptions, ScenarioConfig, World};
use mpf_core::{FastLoopError, ScenarioError};

/// Delay periods simulated beyond the base horizon of each sweep point.
const SWEEP_EXTRA_DELAYS: f64 = 5.0;

#[derive(Parser, Debug)]
#[command(
    name = "mpfsim",
    version,
    about = "Lane-swap CBF-QP simulator with proprioceptive fast feedback"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one world and write its metrics and trajectory.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo batch over shared worlds.
    Mc {
        #[command(flatten)]
        common: Common,
        /// Number of worlds.
        #[arg(long)]
        runs: Option<usize>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Delay sweep and stability boundary of the scalar fast loop.
    Fastloop {
        #[arg(long, default_value = "full-mpf")]
        mode: LoopMode,
        /// Loop gains, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 0.., default_value = "1")]
        k: Vec<f64>,
        #[arg(long, default_value_t = 0.2)]
        eps: f64,
        /// Delay over eps values to simulate, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,5,20,100")]
        ratios: Vec<f64>,
        /// Upper end of the boundary search, in units of eps.
        #[arg(long, default_value_t = 3.0)]
        search_max: f64,
        #[arg(long, env = "MPFSIM_OUT", default_value = "mpfsim-out")]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Passivity class of actuator channel operators, e.g. `gain=0.7`,
    /// `first-order=0.4`, `delay=0.05`, `identity`.
    ClassifyDelta {
        #[arg(required = true)]
        ops: Vec<String>,
        #[arg(long, env = "MPFSIM_OUT")]
        out: Option<PathBuf>,
    },
    /// Re-run a saved world and optionally compare against a saved trajectory.
    Replay {
        #[command(flatten)]
        common: Common,
        /// world.json written by `run`.
        #[arg(long)]
        world: PathBuf,
        /// trajectory.jsonl that the replay must reproduce byte for byte.
        #[arg(long)]
        expect: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "MPFSIM_OUT", default_value = "mpfsim-out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    controller: Option<ControllerKind>,
    /// Impairment case: none, 1, 2 or 3.
    #[arg(long)]
    case: Option<ImpairmentCase>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(_) => 3,
        }
    }
}

trait Classify<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn run_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn run_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Run(e.into()))
    }
}

fn scenario_failure(e: ScenarioError) -> Failure {
    match e {
        ScenarioError::Config(_) | ScenarioError::TooDense(_) => Failure::Config(e.into()),
        other => Failure::Run(other.into()),
    }
}

fn load_config(c: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => ScenarioConfig::from_path(p).config_err()?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.scenario.seed = s;
    }
    if let Some(k) = c.controller {
        cfg.controller.kind = k;
    }
    if let Some(case) = c.case {
        cfg.impairment.case = case;
    }
    cfg.validate().config_err()?;
    Ok(cfg)
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .run_err()
}

fn write_file(
    dir: &Path,
    name: &str,
    write: impl FnOnce(fs::File) -> Result<(), ScenarioError>,
) -> Result<(), Failure> {
    let path = dir.join(name);
    let f = fs::File::create(&path)
        .with_context(|| format!("cannot create {}", path.display()))
        .run_err()?;
    write(f)
        .with_context(|| format!("writing {}", path.display()))
        .run_err()
}

fn header(cfg: &ScenarioConfig, world: &World) -> String {
    format!(
        "controller={} case={} seed={} agents={}",
        cfg.controller.kind,
        world.case,
        world.seed,
        world.n_agents()
    )
}

fn simulate_and_write(cfg: &ScenarioConfig, world: &World, out: &Path) -> Result<Vec<u8>, Failure> {
    let opts = RunOptions {
        run_id: 0,
        record: cfg.output.trajectory,
    };
    let result = scenario::run(world, cfg, &opts).map_err(scenario_failure)?;
    create_out(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml_string()).run_err()?;
    if cfg.output.world {
        fs::write(out.join("world.json"), world.to_json()).run_err()?;
    }
    let row = MetricsRow::new(0, world.seed, cfg.controller.kind, world.case, &Ok(result.metrics));
    write_file(out, "metrics.csv", |f| io::write_csv(f, &[row]))?;
    let mut traj = Vec::new();
    if let Some(log) = &result.log {
        io::write_trajectory_jsonl(&mut traj, log).run_err()?;
        fs::write(out.join("trajectory.jsonl"), &traj).run_err()?;
    }
    let m = &result.metrics;
    println!("{}", header(cfg, world));
    println!(
        "min_h0 {:.4}  incomplete {}  oob {:.3}  max_dAc {:.2}  dAc>2 {}  speed drop {:.2} mph  loop {:.2} ms/step",
        m.min_h0,
        m.incomplete_lane_changes,
        m.oob,
        m.max_delta_ac,
        m.count_delta_ac_gt2,
        m.avg_speed_drop,
        result.timing.mean_ms
    );
    Ok(traj)
}

fn cmd_run(c: &Common) -> Result<(), Failure> {
    let cfg = load_config(c)?;
    let world = scenario::generate(&cfg).map_err(scenario_failure)?;
    simulate_and_write(&cfg, &world, &c.out)?;
    info!("outputs in {}", c.out.display());
    Ok(())
}

fn cmd_replay(c: &Common, world: &Path, expect: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(c)?;
    let text = fs::read_to_string(world)
        .with_context(|| format!("cannot read {}", world.display()))
        .config_err()?;
    let world = World::from_json(&text).config_err()?;
    if world.n_agents() == 0 {
        return Err(Failure::Config(anyhow!("world has no agents")));
    }
    let expected = match expect {
        Some(p) => Some(
            fs::read(p)
                .with_context(|| format!("cannot read {}", p.display()))
                .config_err()?,
        ),
        None => None,
    };
    let traj = simulate_and_write(&cfg, &world, &c.out)?;
    if let Some(expected) = expected {
        if expected != traj {
            return Err(Failure::Run(anyhow!(
                "replayed trajectory differs from the expected one"
            )));
        }
        println!("replay matches the expected trajectory");
    }
    Ok(())
}

fn cmd_mc(c: &Common, runs: Option<usize>, jobs: Option<usize>) -> Result<(), Failure> {
    let cfg = load_config(c)?;
    let runs = runs.unwrap_or(100);
    if runs == 0 {
        return Err(Failure::Config(anyhow!("--runs must be >= 1")));
    }
    if jobs == Some(0) {
        return Err(Failure::Config(anyhow!("--jobs must be >= 1")));
    }
    let kinds: Vec<ControllerKind> = match c.controller {
        Some(k) => vec![k],
        None => ControllerKind::ALL.to_vec(),
    };
    let mc = exec::with_jobs(jobs, || scenario::monte_carlo(&cfg, runs, &kinds, Execution::Parallel));
    create_out(&c.out)?;
    let case = cfg.impairment.case;
    fs::write(c.out.join("config.toml"), cfg.to_toml_string()).run_err()?;
    write_file(&c.out, "runs.csv", |f| io::write_mc_runs(f, &mc, case))?;
    write_file(&c.out, "summary.csv", |f| io::write_mc_summary(f, &mc, case))?;
    write_file(&c.out, "timing.csv", |f| io::write_mc_timing(f, &mc))?;
    let table = io::summary_table(&mc, case);
    fs::write(c.out.join("summary.txt"), &table).run_err()?;
    print!("{table}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fastloop(
    mode: LoopMode,
    ks: &[f64],
    eps: f64,
    ratios: &[f64],
    search_max: f64,
    out: &Path,
    jobs: Option<usize>,
) -> Result<(), Failure> {
    if ks.is_empty() {
        return Err(Failure::Config(anyhow!("--k needs at least one gain")));
    }
    if ks.iter().any(|&k| k.is_nan() || k <= 0.0) || eps.is_nan() || eps <= 0.0 {
        return Err(Failure::Config(anyhow!("gains and eps must be > 0")));
    }
    if ratios.iter().any(|&r| r.is_nan() || r < 0.0) {
        return Err(Failure::Config(anyhow!("delay ratios must be >= 0")));
    }
    let points = exec::with_jobs(jobs, || {
        fastloop::sweep(mode, ks, eps, ratios, SWEEP_EXTRA_DELAYS, Execution::Parallel)
    })
    .run_err()?;
    let search = BoundarySearch {
        hi: search_max,
        ..Default::default()
    };
    let boundaries: Vec<BoundaryRow> = ks
        .iter()
        .map(|&k| {
            let (b, note) = match fastloop::find_stability_boundary_with(mode, k, eps, &search) {
                Ok(b) => (Some(b), String::new()),
                Err(e @ FastLoopError::NoSignChange { .. }) => (None, e.to_string()),
                Err(e) => (None, format!("error: {e}")),
            };
            BoundaryRow {
                schema_version: SCHEMA_VERSION,
                mode: mode.name(),
                k,
                eps,
                boundary_delay_over_eps: b,
                note,
            }
        })
        .collect();
    create_out(out)?;
    let rows: Vec<SweepRow> = points.iter().map(SweepRow::from).collect();
    write_file(out, "fastloop_sweep.csv", |f| io::write_csv(f, &rows))?;
    write_file(out, "fastloop_boundary.csv", |f| io::write_csv(f, &boundaries))?;
    for r in &rows {
        println!("{} k={} tau/eps={:<8} {}", r.mode, r.k, r.delay_over_eps, r.verdict);
    }
    for b in &boundaries {
        match b.boundary_delay_over_eps {
            Some(v) => println!("{} k={} boundary tau/eps = {v:.4}", b.mode, b.k),
            None => println!("{} k={} no boundary: {}", b.mode, b.k, b.note),
        }
    }
    Ok(())
}

fn parse_op(spec: &str) -> anyhow::Result<ChannelOp> {
    let (name, value) = match spec.split_once('=') {
        Some((n, v)) => (
            n,
            Some(v.parse::<f64>().with_context(|| format!("bad number in '{spec}'"))?),
        ),
        None => (spec, None),
    };
    let need = |v: Option<f64>| v.ok_or_else(|| anyhow!("'{name}' needs a value, e.g. {name}=0.5"));
    Ok(match name {
        "identity" => ChannelOp::Identity,
        "gain" => ChannelOp::Gain { k: need(value)? },
        "first-order" | "first_order" => ChannelOp::FirstOrder { tau: need(value)? },
        "delay" | "pure-delay" => ChannelOp::PureDelay { delay: need(value)? },
        other => bail!("unknown operator '{other}' (expected identity, gain, first-order or delay)"),
    })
}

#[derive(serde::Serialize)]
struct ClassRow {
    schema_version: u32,
    op: String,
    class: &'static str,
    nu: Option<f64>,
}

fn cmd_classify(ops: &[String], out: Option<&Path>) -> Result<(), Failure> {
    let parsed: Vec<(String, ChannelOp)> = ops
        .iter()
        .map(|s| parse_op(s).map(|op| (s.clone(), op)))
        .collect::<anyhow::Result<_>>()
        .config_err()?;
    let grid = default_grid();
    let mut rows = Vec::new();
    for (spec, op) in parsed {
        let class = classify_channel(&op, &grid).config_err()?;
        let (name, nu) = match class {
            Passivity::NotPassive { nu_hat } => ("not_passive", Some(nu_hat)),
            Passivity::Passive => ("passive", Some(0.0)),
            Passivity::Isp { nu } => ("isp", Some(nu)),
        };
        println!("{spec}: {name} (nu = {:.6})", nu.unwrap_or(f64::NAN));
        rows.push(ClassRow {
            schema_version: SCHEMA_VERSION,
            op: spec,
            class: name,
            nu,
        });
    }
    if let Some(dir) = out {
        create_out(dir)?;
        write_file(dir, "passivity.csv", |f| io::write_csv(f, &rows))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Command::Run { common } => cmd_run(&common),
        Command::Mc { common, runs, jobs } => cmd_mc(&common, runs, jobs),
        Command::Fastloop {
            mode,
            k,
            eps,
            ratios,
            search_max,
            out,
            jobs,
        } => cmd_fastloop(mode, &k, eps, &ratios, search_max, &out, jobs),
        Command::ClassifyDelta { ops, out } => cmd_classify(&ops, out.as_deref()),
        Command::Replay { common, world, expect } => cmd_replay(&common, &world, expect.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            let (Failure::Config(e) | Failure::Run(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
