//! The `mmplan` command line.
//!
//! Exit status: 0 on success, 1 when a configuration is invalid or a
//! pipeline stage fails, 2 for usage errors and unreadable input.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::allocator::{comm_cost, initial_assignment, local_search, Assignment, CostWeights};
use crate::configgen::{generate, load_meta, FullConfig, LoadError};
use crate::syncsim::{
    preset_arch, run_benchmark, scaling_sweep, BenchReport, CostModel, ScalingPoint, SimSettings,
    PRESETS,
};

#[derive(Debug, Parser)]
#[command(
    name = "mmplan",
    version,
    about = "Plan and simulate modular multilingual training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compile a meta-configuration into an explicit configuration.
    Generate {
        meta: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        alloc: AllocFlags,
    },
    /// Re-run task placement on an explicit configuration.
    Allocate {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Ignore the current placement and start from the greedy one.
        #[arg(long)]
        fresh: bool,
        #[command(flatten)]
        alloc: AllocFlags,
    },
    /// Simulate synchronized training steps and report communication.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
        #[command(flatten)]
        links: LinkFlags,
    },
    /// Check an explicit configuration.
    Validate { config: PathBuf },
    /// Scaling efficiency of a preset architecture on synthetic tasks.
    Scaling {
        /// One of: independent, partial, shared, full.
        #[arg(long, default_value = "independent")]
        arch: String,
        #[arg(long, value_delimiter = ',', default_values_t = [4, 8, 12, 16, 20])]
        ks: Vec<usize>,
        #[command(flatten)]
        sim: SimFlags,
    },
}

#[derive(Debug, Args)]
struct AllocFlags {
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum number of move evaluations in local search.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    w_intra: Option<f64>,
    #[arg(long)]
    w_inter: Option<f64>,
}

#[derive(Debug, Args)]
struct SimFlags {
    #[arg(long, default_value_t = 10)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    accum_count: usize,
    /// Directory for ledger.tsv, modules.tsv and summary.json.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long)]
    seconds_per_token_layer: Option<f64>,
    #[arg(long)]
    batch_tokens: Option<u64>,
    /// Check every synchronization against the single-process reference.
    #[arg(long)]
    verify_oracle: bool,
    /// Run the toy model in single precision.
    #[arg(long)]
    f32: bool,
}

#[derive(Debug, Args)]
struct LinkFlags {
    #[arg(long)]
    alpha_intra: Option<f64>,
    #[arg(long)]
    alpha_inter: Option<f64>,
    #[arg(long)]
    beta_intra: Option<f64>,
    #[arg(long)]
    beta_inter: Option<f64>,
}

impl SimFlags {
    fn settings(&self) -> SimSettings {
        let mut cost = CostModel::default();
        if let Some(v) = self.seconds_per_token_layer {
            cost.seconds_per_token_layer = v;
        }
        if let Some(v) = self.batch_tokens {
            cost.batch_tokens = v;
        }
        SimSettings {
            steps: self.steps,
            seed: self.seed,
            accum_count: self.accum_count,
            dim: self.dim,
            learning_rate: self.learning_rate,
            batch: self.batch,
            cost,
            verify_oracle: self.verify_oracle,
            ..SimSettings::default()
        }
    }
}

/// A failure with its stage tag and exit status.
struct Failure {
    stage: String,
    message: String,
    code: i32,
}

impl Failure {
    fn usage(stage: &str, message: impl fmt::Display) -> Self {
        Self {
            stage: stage.into(),
            message: message.to_string(),
            code: 2,
        }
    }

    fn invalid(stage: &str, message: impl fmt::Display) -> Self {
        Self {
            stage: stage.into(),
            message: message.to_string(),
            code: 1,
        }
    }
}

type Outcome = Result<(), Failure>;

fn read_config(path: &Path) -> Result<FullConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage("read", format!("{}: {e}", path.display())))?;
    FullConfig::from_yaml(&text)
        .map_err(|e| Failure::usage("parse", format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::usage("write", format!("{}: {e}", path.display())))
}

fn check_valid(cfg: &FullConfig) -> Outcome {
    let violations = cfg.validate();
    if violations.is_empty() {
        return Ok(());
    }
    let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
    Err(Failure::invalid("validate", msgs.join("\n")))
}

fn emit(out: &mut dyn Write, line: impl fmt::Display) -> Outcome {
    writeln!(out, "{line}").map_err(|e| Failure::usage("write", e))
}

fn cmd_generate(meta_path: &Path, output: &Path, flags: &AllocFlags) -> Outcome {
    let loaded = load_meta(meta_path).map_err(|e| match e {
        LoadError::Io { .. } => Failure::usage("read", e),
        LoadError::Parse { .. } => Failure::usage("parse", e),
    })?;
    let mut meta = loaded.meta;
    if let Some(s) = flags.seed {
        meta.seed = s;
    }
    if let Some(b) = flags.budget {
        meta.allocation.budget = b;
    }
    if let Some(w) = flags.w_intra {
        meta.allocation.w_intra = w;
    }
    if let Some(w) = flags.w_inter {
        meta.allocation.w_inter = w;
    }
    let cfg = generate(&meta, loaded.distances.as_ref(), &loaded.corpus).map_err(|e| Failure {
        stage: e.stage.to_string(),
        message: e.message,
        code: 1,
    })?;
    let text = cfg.to_yaml().map_err(|e| Failure::invalid("emit", e))?;
    write_file(output, &text)
}

fn cmd_allocate(
    path: &Path,
    output: Option<&Path>,
    fresh: bool,
    flags: &AllocFlags,
    out: &mut dyn Write,
) -> Outcome {
    let mut cfg = read_config(path)?;
    let tasks = cfg.task_list();
    let inventory = cfg.modules().map_err(|e| Failure::invalid("sharing", e))?;
    let defaults = CostWeights::default();
    let weights = CostWeights {
        w_intra: flags.w_intra.unwrap_or(defaults.w_intra),
        w_inter: flags.w_inter.unwrap_or(defaults.w_inter),
    };
    let seed = flags.seed.unwrap_or(0);
    let budget = flags.budget.unwrap_or(crate::allocator::DEFAULT_BUDGET);

    let current = Assignment::from_tasks(&tasks)
        .ok()
        .filter(|a| a.check(&tasks, &cfg.topology).is_ok());
    match &current {
        Some(a) => emit(
            out,
            format!(
                "cost before: {}",
                comm_cost(a, &tasks, &inventory, weights).total
            ),
        )?,
        None => emit(out, "cost before: none (placement missing or infeasible)")?,
    }
    let start = match current {
        Some(a) if !fresh => a,
        _ => initial_assignment(&tasks, &cfg.topology, seed)
            .map_err(|e| Failure::invalid("allocate", e))?,
    };
    let best = local_search(
        &start,
        &tasks,
        &inventory,
        &cfg.topology,
        weights,
        budget,
        seed,
    )
    .map_err(|e| Failure::invalid("search", e))?;
    emit(
        out,
        format!(
            "cost after: {}",
            comm_cost(&best, &tasks, &inventory, weights).total
        ),
    )?;
    for t in cfg.tasks.values_mut() {
        t.device = best.device_of(&t.id);
    }
    check_valid(&cfg)?;
    if let Some(o) = output {
        let text = cfg.to_yaml().map_err(|e| Failure::invalid("emit", e))?;
        write_file(o, &text)?;
    }
    Ok(())
}

fn print_summary(report: &BenchReport, out: &mut dyn Write) -> Outcome {
    let s = &report.summary;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
    emit(out, format!("steps: {}", s.steps))?;
    emit(out, format!("devices: {}", s.devices))?;
    emit(
        out,
        format!("tokens_per_second: {}", opt(s.tokens_per_second)),
    )?;
    emit(out, format!("comm_fraction: {}", opt(s.comm_fraction)))?;
    emit(
        out,
        format!("grad_allreduce_bytes: {}", s.grad_allreduce_bytes),
    )?;
    emit(out, format!("ready_bytes: {}", s.ready_bytes))?;
    if let Some(e) = s.max_oracle_rel_err {
        emit(out, format!("max_oracle_rel_err: {e:e}"))?;
    }
    Ok(())
}

fn cmd_simulate(path: &Path, sim: &SimFlags, links: &LinkFlags, out: &mut dyn Write) -> Outcome {
    let mut cfg = read_config(path)?;
    check_valid(&cfg)?;
    let topo = &mut cfg.topology;
    for (flag, slot) in [
        (links.alpha_intra, &mut topo.alpha_intra),
        (links.alpha_inter, &mut topo.alpha_inter),
        (links.beta_intra, &mut topo.beta_intra),
        (links.beta_inter, &mut topo.beta_inter),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    topo.validate().map_err(|e| Failure::usage("args", e))?;
    let settings = sim.settings();
    let report = if sim.f32 {
        run_benchmark::<f32>(&cfg, &settings)
    } else {
        run_benchmark::<f64>(&cfg, &settings)
    }
    .map_err(|e| Failure::invalid("simulate", e))?;
    if let Some(dir) = &sim.report {
        report
            .write_to(dir)
            .map_err(|e| Failure::usage("write", format!("{}: {e}", dir.display())))?;
    }
    print_summary(&report, out)
}

fn cmd_validate(path: &Path, out: &mut dyn Write) -> Outcome {
    let cfg = read_config(path)?;
    check_valid(&cfg)?;
    let modules = cfg.modules().map_err(|e| Failure::invalid("validate", e))?;
    emit(
        out,
        format!("ok: {} tasks, {} modules", cfg.tasks.len(), modules.len()),
    )
}

fn write_scaling(dir: &Path, points: &[ScalingPoint]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(dir.join("scaling.tsv"))?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()
}

fn cmd_scaling(arch: &str, ks: &[usize], sim: &SimFlags, out: &mut dyn Write) -> Outcome {
    let spec = preset_arch(arch).ok_or_else(|| {
        Failure::usage(
            "args",
            format!(
                "unknown arch {arch:?}; expected one of {}",
                PRESETS.join(", ")
            ),
        )
    })?;
    if ks.contains(&0) {
        return Err(Failure::usage("args", "k must be positive"));
    }
    let points =
        scaling_sweep(&spec, ks, &sim.settings()).map_err(|e| Failure::invalid("simulate", e))?;
    emit(out, "k\ttokens_per_second\tefficiency\tcomm_fraction")?;
    for p in &points {
        emit(
            out,
            format!(
                "{}\t{:.3}\t{:.6}\t{:.6}",
                p.k, p.tokens_per_second, p.efficiency, p.comm_fraction
            ),
        )?;
    }
    if let Some(dir) = &sim.report {
        write_scaling(dir, &points)
            .map_err(|e| Failure::usage("write", format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

/// Runs the command line and returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Generate {
            meta,
            output,
            alloc,
        } => cmd_generate(meta, output, alloc),
        Command::Allocate {
            config,
            output,
            fresh,
            alloc,
        } => cmd_allocate(config, output.as_deref(), *fresh, alloc, out),
        Command::Simulate { config, sim, links } => cmd_simulate(config, sim, links, out),
        Command::Validate { config } => cmd_validate(config, out),
        Command::Scaling { arch, ks, sim } => cmd_scaling(arch, ks, sim, out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            for line in f.message.lines() {
                let _ = writeln!(err, "mmplan: [{}] {line}", f.stage);
            }
            f.code
        }
    }
}
