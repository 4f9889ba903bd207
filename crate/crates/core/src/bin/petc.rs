use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use petc_core::error::{Error, Result};
use petc_core::grid::UniformGrid;
use petc_core::harness::acceptance::Suite;
use petc_core::harness::output::{fmt_f64, summary_text};
use petc_core::harness::plot::{self, sweep_chart};
use petc_core::harness::{compare, load_config, read_events, read_trace, summary_table, sweep_c, write_run};
use petc_core::harness::{Experiment, RunConfig, RunOutput};
use petc_core::kernels::{Block, KernelCache, KernelSet, KernelTable, SolverOptions};
use petc_core::triggering::Mode;

#[derive(Parser)]
#[command(name = "petc", version, about = "Event-triggered boundary control of 2x2 hyperbolic systems")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Configuration file; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    cfl: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    diagnostics: bool,
    #[arg(long)]
    decimate: Option<usize>,
    /// Directory for solved kernel files.
    #[arg(long)]
    kernel_cache: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Solve, cache or dump the kernels.
    Kernels {
        #[command(subcommand)]
        action: KernelAction,
    },
    /// Print the derived constants of a configuration.
    Constants(Common),
    /// Run one closed-loop simulation.
    Run(Common),
    /// Run several modes on the same kernels.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "petc,etc")]
        modes: Vec<Mode>,
    },
    /// Event-triggered runs over a list of performance gains.
    SweepC {
        #[command(flatten)]
        common: Common,
        #[arg(long = "c", value_delimiter = ',', default_value = "0,0.5,1,2")]
        values: Vec<f64>,
    },
    /// Render SVG charts from written trace files.
    Plot {
        /// Run directories holding trace.csv and events.csv.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the acceptance criteria.
    Verify {
        #[arg(long)]
        kernel_cache: Option<PathBuf>,
        /// Criteria to evaluate; all when empty.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

#[derive(Subcommand)]
enum KernelAction {
    /// Solve and report iteration counts and residuals.
    Solve(Common),
    /// Solve (or load) and store in the kernel cache.
    Cache(Common),
    /// Write one kernel block as CSV with columns x, xi, value.
    Dump {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kernel: KernelName,
        #[arg(long, value_parser = parse_block)]
        block: Block,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelName {
    P,
    R,
    K,
    L,
}

fn parse_block(s: &str) -> std::result::Result<Block, String> {
    Block::parse(s).ok_or_else(|| format!("unknown block {s:?}; expected aa, ab, ba or bb"))
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        let sim = &mut cfg.simulation;
        if let Some(v) = &self.out {
            sim.output = v.clone();
        }
        if let Some(v) = self.mode {
            sim.mode = v;
        }
        if let Some(v) = self.grid {
            sim.grid = v;
        }
        if let Some(v) = self.cfl {
            sim.cfl = Some(v);
        }
        if let Some(v) = self.horizon {
            sim.horizon = v;
        }
        if self.diagnostics {
            sim.diagnostics = true;
        }
        if let Some(v) = self.decimate {
            sim.decimate = v;
        }
        if let Some(v) = &self.kernel_cache {
            sim.kernel_cache = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn solver_options(cfg: &RunConfig) -> SolverOptions {
    SolverOptions { tol: cfg.simulation.kernel_tol, max_iter: cfg.simulation.kernel_max_iter }
}

fn kernels_for(cfg: &RunConfig) -> Result<KernelSet> {
    let opts = solver_options(cfg);
    match &cfg.simulation.kernel_cache {
        Some(dir) => KernelCache::new(dir).load_or_solve(&cfg.plant, cfg.simulation.grid, &opts),
        None => {
            let plant = cfg.plant.sample(&UniformGrid::new(cfg.simulation.grid)?)?;
            Ok(KernelSet::solve(&plant, &opts)?.0)
        }
    }
}

fn dump_block(path: &Path, table: &KernelTable, block: Block) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(["x", "xi", "value"])?;
    let grid = table.grid();
    for i in 0..table.nodes() {
        for j in 0..=i {
            w.write_record([fmt_f64(grid.x(i)), fmt_f64(grid.x(j)), fmt_f64(table.get(block, i, j))])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_outputs(dir: &Path, label: &str, exp: &Experiment, out: &RunOutput) -> Result<()> {
    let files = write_run(dir, out, &exp.consts, exp.config.simulation.decimate)?;
    plot::plot_run(dir, label, &out.trace, &out.events)?;
    println!("{label}: wrote {} and plots to {}", files.trace.display(), dir.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Kernels { action } => match action {
            KernelAction::Solve(common) => {
                let cfg = common.load()?;
                let plant = cfg.plant.sample(&UniformGrid::new(cfg.simulation.grid)?)?;
                let (_, reports) = KernelSet::solve(&plant, &solver_options(&cfg))?;
                for (name, r) in ["observer", "controller"].iter().zip(&reports) {
                    println!("{name}: {} iterations, final residual {:e}", r.iterations, r.final_residual());
                }
            }
            KernelAction::Cache(common) => {
                let mut cfg = common.load()?;
                let dir = cfg.simulation.kernel_cache.clone().unwrap_or_else(|| cfg.simulation.output.join("kernels"));
                cfg.simulation.kernel_cache = Some(dir.clone());
                kernels_for(&cfg)?;
                println!("kernels for N = {} cached in {}", cfg.simulation.grid, dir.display());
            }
            KernelAction::Dump { common, kernel, block } => {
                let cfg = common.load()?;
                let set = kernels_for(&cfg)?;
                let (name, table) = match kernel {
                    KernelName::P => ("p", &set.p),
                    KernelName::R => ("r", &set.r),
                    KernelName::K => ("k", &set.k),
                    KernelName::L => ("l", &set.l),
                };
                let path = cfg.simulation.output.join(format!("kernel_{name}_{}.csv", block.name()));
                dump_block(&path, table, block)?;
                println!("wrote {}", path.display());
            }
        },
        Command::Constants(common) => {
            let cfg = common.load()?;
            let exp = Experiment::prepare(&cfg)?;
            print!("{}", exp.consts.report());
        }
        Command::Run(common) => {
            let cfg = common.load()?;
            let exp = Experiment::prepare(&cfg)?;
            let out = exp.run(&exp.default_options())?;
            write_outputs(&cfg.simulation.output, &cfg.simulation.mode.to_string(), &exp, &out)?;
            print!("{}", summary_text(&out.summary));
        }
        Command::Compare { common, modes } => {
            if modes.len() < 2 {
                return Err(Error::Config("compare needs at least two modes".into()));
            }
            let cfg = common.load()?;
            let exp = Experiment::prepare(&cfg)?;
            let runs = compare(&exp, &exp.default_options(), &modes)?;
            let root = &cfg.simulation.output;
            for (mode, out) in modes.iter().zip(&runs) {
                write_outputs(&root.join(mode.to_string()), &mode.to_string(), &exp, out)?;
            }
            let labels: Vec<String> = modes.iter().map(Mode::to_string).collect();
            let overlay: Vec<(&str, &[_])> =
                labels.iter().zip(&runs).map(|(l, o)| (l.as_str(), o.trace.as_slice())).collect();
            plot::norm_chart(&overlay)?.save(&root.join("norm_compare.svg"))?;
            let table = summary_table(&runs.iter().map(|r| &r.summary).collect::<Vec<_>>());
            fs::write(root.join("compare.txt"), &table)?;
            print!("{table}");
        }
        Command::SweepC { common, values } => {
            if let Some(c) = values.iter().find(|c| c.is_nan() || **c < 0.0) {
                return Err(Error::Config(format!("performance gains must be non-negative, got {c}")));
            }
            let cfg = common.load()?;
            let exp = Experiment::prepare(&cfg)?;
            let runs = sweep_c(&exp, &exp.default_options(), &values)?;
            let root = &cfg.simulation.output;
            for (c, out) in values.iter().zip(&runs) {
                write_outputs(&root.join(format!("c_{c}")), &format!("c = {c}"), &exp, out)?;
            }
            let series: Vec<(f64, &[_])> = values.iter().copied().zip(runs.iter().map(|o| o.trace.as_slice())).collect();
            sweep_chart(&series)?.save(&root.join("vhat_per_c.svg"))?;
            let table = summary_table(&runs.iter().map(|r| &r.summary).collect::<Vec<_>>());
            fs::write(root.join("sweep_c.txt"), &table)?;
            print!("{table}");
        }
        Command::Plot { runs, out } => {
            let mut loaded = Vec::new();
            for dir in &runs {
                let trace = read_trace(&dir.join("trace.csv"))?;
                let events_path = dir.join("events.csv");
                let events = if events_path.exists() { read_events(&events_path)? } else { Vec::new() };
                loaded.push((dir.file_name().map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned()), trace, events));
            }
            for ((label, trace, events), dir) in loaded.iter().zip(&runs) {
                let target = match &out {
                    Some(o) if runs.len() > 1 => o.join(label),
                    Some(o) => o.clone(),
                    None => dir.clone(),
                };
                for path in plot::plot_run(&target, label, trace, events)? {
                    println!("wrote {}", path.display());
                }
            }
            if runs.len() > 1 {
                let root = out.clone().unwrap_or_else(|| PathBuf::from("."));
                let overlay: Vec<(&str, &[_])> = loaded.iter().map(|(l, t, _)| (l.as_str(), t.as_slice())).collect();
                let path = root.join("norm_compare.svg");
                plot::norm_chart(&overlay)?.save(&path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Verify { kernel_cache, only } => {
            let suite = Suite::new(kernel_cache);
            let ids: Vec<u8> = if only.is_empty() { (1..=9).collect() } else { only };
            let mut all = true;
            for id in ids {
                let result = suite.criterion(id);
                println!("{result}");
                all &= result.passed;
            }
            return Ok(all);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
