//! Command-line front end: config parsing, subcommand dispatch, report
//! emission and the built-in verification suite.
//!
//! Exit codes: 0 on success, 1 on usage/config/IO errors, 2 on internal
//! invariant violations (including verification failures).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use moesim::costmodel::{
    cost_report, k_partition_bound, migration_cost, MigrationPayload, OptimizerVariant,
};
use moesim::model::{validate_cluster, ClusterSpec};
use moesim::policies::PolicyConfig;
use moesim::scheduler::{compute_placement, SchedulerInput};
use moesim::simulator::{compare, comparison_table, records_csv, SimOptions};
use moesim::tracegen::{generate, load_trace, save_trace, TraceGenConfig, TraceMode};
use moesim::verify::{format_check, run_all};
use moesim::{PopularityVector, Trace};

/// Errors split by the exit code they map to.
enum CmdError {
    /// Usage, configuration or IO problem: exit 1.
    Usage(String),
    /// Broken internal invariant: exit 2.
    Internal(String),
}

impl From<moesim::Error> for CmdError {
    fn from(err: moesim::Error) -> Self {
        CmdError::Usage(err.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(err: std::io::Error) -> Self {
        CmdError::Usage(format!("io error: {err}"))
    }
}

type CmdResult = Result<(), CmdError>;

#[derive(Parser)]
#[command(
    name = "moesim",
    version,
    about = "Simulator and cost model for adaptive expert replication in MoE training clusters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a popularity trace under one or more replication policies.
    Simulate {
        /// JSON run configuration (cluster, policies, trace source).
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving per-policy JSON and CSV reports.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the closed-form memory, volume and communication-time model.
    Costmodel(CostmodelArgs),
    /// Compute a placement for one popularity vector.
    Placement {
        /// Comma-separated per-class token counts, e.g. "60,20,15,5".
        #[arg(long)]
        popularity: String,
        #[arg(long)]
        nodes: usize,
        /// Expert slots per rank.
        #[arg(long)]
        slots: usize,
        /// Expert class count; defaults to the popularity length.
        #[arg(long)]
        experts: Option<usize>,
    },
    /// Generate a seeded synthetic popularity trace CSV.
    Tracegen(TracegenArgs),
    /// Run the built-in verification suite.
    Verify,
}

#[derive(clap::Args)]
struct CostmodelArgs {
    /// Built-in cluster preset; `paper-example` is the 2048-node reference.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    experts: Option<usize>,
    /// Host link bandwidth, bytes/second.
    #[arg(long)]
    bw_pci: Option<f64>,
    /// Network bandwidth, bytes/second.
    #[arg(long)]
    bw_net: Option<f64>,
    #[arg(long)]
    grad_bytes: Option<u64>,
    #[arg(long)]
    weight_bytes: Option<u64>,
    #[arg(long)]
    optimizer_bytes: Option<u64>,
    #[arg(long)]
    tokens_per_batch: Option<u64>,
    #[arg(long)]
    capacity_factor: Option<f64>,
    /// Comma-separated k values for the k-partition bound sweep.
    #[arg(long)]
    k_sweep: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    #[value(name = "paper-example")]
    PaperExample,
}

#[derive(clap::Args)]
struct TracegenArgs {
    #[arg(long, default_value_t = 16)]
    experts: usize,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 32_768)]
    tokens: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Spiky)]
    mode: ModeArg,
    /// Standard deviation of the latent random-walk step.
    #[arg(long, default_value_t = 0.2)]
    volatility: f64,
    /// Per-iteration probability of a hot/cold latent swap (spiky mode).
    #[arg(long, default_value_t = 0.05)]
    spike_probability: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Walk,
    Spiky,
    Uniform,
}

impl From<ModeArg> for TraceMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Walk => TraceMode::Walk,
            ModeArg::Spiky => TraceMode::Spiky,
            ModeArg::Uniform => TraceMode::Uniform,
        }
    }
}

/// JSON run configuration for `simulate`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    cluster: ClusterSpec,
    policies: Vec<PolicyConfig>,
    trace: TraceSource,
    #[serde(default)]
    include_metadata_latency: bool,
    #[serde(default)]
    metadata_seconds: f64,
    #[serde(default)]
    compute_base_seconds: f64,
}

/// Exactly one of `path` or `generate` must be present.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceSource {
    path: Option<PathBuf>,
    generate: Option<TraceGenConfig>,
}

impl TraceSource {
    fn load(&self) -> Result<Trace, CmdError> {
        match (&self.path, &self.generate) {
            (Some(path), None) => {
                if !path.exists() {
                    return Err(CmdError::Usage(format!(
                        "trace file not found: {}",
                        path.display()
                    )));
                }
                Ok(load_trace(path)?)
            }
            (None, Some(cfg)) => Ok(generate(cfg)?),
            (Some(_), Some(_)) => Err(CmdError::Usage(
                "trace: set exactly one of 'path' or 'generate', not both".into(),
            )),
            (None, None) => Err(CmdError::Usage(
                "trace: set exactly one of 'path' or 'generate'".into(),
            )),
        }
    }
}

fn cmd_simulate(config_path: &Path, out_dir: &Path) -> CmdResult {
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CmdError::Usage(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    let mut deserializer = serde_json::Deserializer::from_str(&text);
    let config: RunConfig = serde_path_to_error::deserialize(&mut deserializer)
        .map_err(|e| CmdError::Usage(format!("config field '{}': {}", e.path(), e.inner())))?;

    let spec = validate_cluster(config.cluster)?;
    if config.policies.is_empty() {
        return Err(CmdError::Usage("config lists no policies".into()));
    }
    let trace = config.trace.load()?;
    let opts = SimOptions {
        include_metadata_latency: config.include_metadata_latency,
        metadata_seconds: config.metadata_seconds,
        compute_base_seconds: config.compute_base_seconds,
    };

    let reports = compare(&trace, &spec, &config.policies, &opts)?;

    std::fs::create_dir_all(out_dir)?;
    for report in &reports {
        let label = report.policy.label();
        let json = serde_json::to_string_pretty(report)
            .map_err(|e| CmdError::Internal(format!("report serialization failed: {e}")))?;
        std::fs::write(out_dir.join(format!("{label}.json")), json)?;
        std::fs::write(out_dir.join(format!("{label}.csv")), records_csv(report))?;
    }

    print!("{}", comparison_table(&reports));
    println!(
        "wrote {} report pairs to {}",
        reports.len(),
        out_dir.display()
    );
    Ok(())
}

fn gb(bytes: u64) -> String {
    if bytes.is_multiple_of(1_000_000_000) {
        format!("{} GB", bytes / 1_000_000_000)
    } else {
        format!("{:.3} GB", bytes as f64 / 1e9)
    }
}

fn cmd_costmodel(args: &CostmodelArgs) -> CmdResult {
    let spec = match args.preset {
        Some(Preset::PaperExample) => ClusterSpec::reference_example(),
        None => {
            let missing = |field: &str| {
                CmdError::Usage(format!("--{field} is required without --preset"))
            };
            ClusterSpec {
                nodes: args.nodes.ok_or_else(|| missing("nodes"))?,
                slots_per_rank: args.slots.ok_or_else(|| missing("slots"))?,
                expert_classes: args.experts.ok_or_else(|| missing("experts"))?,
                bw_pci: args.bw_pci.ok_or_else(|| missing("bw-pci"))?,
                bw_net: args.bw_net.ok_or_else(|| missing("bw-net"))?,
                grad_bytes: args.grad_bytes.ok_or_else(|| missing("grad-bytes"))?,
                weight_bytes: args.weight_bytes.ok_or_else(|| missing("weight-bytes"))?,
                optimizer_bytes: args
                    .optimizer_bytes
                    .ok_or_else(|| missing("optimizer-bytes"))?,
                tokens_per_batch: args.tokens_per_batch.unwrap_or(32_768),
                capacity_factor: args.capacity_factor.unwrap_or(1.0),
            }
        }
    };
    let spec = validate_cluster(spec)?;

    let offloaded = cost_report(&spec, OptimizerVariant::Offloaded);
    let hbm = cost_report(&spec, OptimizerVariant::HbmOnly);

    println!("quantity                       value");
    println!(
        "mem_footprint                  {}",
        gb(offloaded.mem_footprint_bytes)
    );
    println!(
        "data_grad                      {}",
        gb(offloaded.data_grad_bytes)
    );
    println!(
        "data_weight                    {}",
        gb(offloaded.data_weight_bytes)
    );
    println!(
        "data_combined                  {}",
        gb(offloaded.data_grad_bytes + offloaded.data_weight_bytes)
    );
    println!("t_grad_static                  {:.5} s", offloaded.t_grad_static);
    println!("t_weight_static                {:.5} s", offloaded.t_weight_static);
    println!(
        "t_total_static                 {:.5} s",
        offloaded.t_grad_static + offloaded.t_weight_static
    );
    println!("t_grad_dynamic                 {:.5} s", offloaded.t_grad_dynamic);
    println!("t_weight_dynamic               {:.5} s", offloaded.t_weight_dynamic);
    println!(
        "t_total_dynamic                {:.5} s",
        offloaded.t_grad_dynamic + offloaded.t_weight_dynamic
    );
    println!(
        "overhead_offloaded             {:.3} %",
        100.0 * offloaded.overhead_ratio
    );
    println!(
        "overhead_hbm_only              {:.3} %",
        100.0 * hbm.overhead_ratio
    );
    println!(
        "migrate_1_expert_weights       {:.5} s",
        migration_cost(1, &spec, MigrationPayload::Weights)
    );
    println!(
        "migrate_1_expert_optimizer     {:.5} s",
        migration_cost(1, &spec, MigrationPayload::Optimizer)
    );
    println!(
        "migrate_1_expert_both          {:.5} s",
        migration_cost(1, &spec, MigrationPayload::WeightsAndOptimizer)
    );

    if let Some(sweep) = &args.k_sweep {
        println!();
        println!("k     t_grad_bound  t_weight_bound  t_total_bound");
        for field in sweep.split(',') {
            let k: usize = field
                .trim()
                .parse()
                .map_err(|_| CmdError::Usage(format!("bad k value '{field}'")))?;
            let bound = k_partition_bound(&spec, k)?;
            println!(
                "{:<5} {:>12.5}  {:>14.5}  {:>13.5}",
                k,
                bound.t_grad_s,
                bound.t_weight_s,
                bound.total()
            );
        }
    }
    Ok(())
}

fn cmd_placement(
    popularity: &str,
    nodes: usize,
    slots: usize,
    experts: Option<usize>,
) -> CmdResult {
    let counts: Vec<u64> = popularity
        .split(',')
        .map(|field| {
            field
                .trim()
                .parse()
                .map_err(|_| CmdError::Usage(format!("bad popularity value '{field}'")))
        })
        .collect::<Result<_, _>>()?;
    if let Some(experts) = experts {
        if experts != counts.len() {
            return Err(CmdError::Usage(format!(
                "--experts {experts} does not match popularity length {}",
                counts.len()
            )));
        }
    }
    let vector = PopularityVector {
        iteration: 0,
        counts,
    };
    let placement = compute_placement(&SchedulerInput::new(&vector, nodes, slots))?;
    println!(
        "replica_counts: {}",
        placement
            .replica_counts()
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    println!(
        "slot_assignment: {}",
        placement
            .slot_assignment()
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    Ok(())
}

fn cmd_tracegen(args: &TracegenArgs) -> CmdResult {
    let cfg = TraceGenConfig {
        experts: args.experts,
        iterations: args.iterations,
        tokens_per_batch: args.tokens,
        mode: args.mode.into(),
        volatility: args.volatility,
        spike_probability: args.spike_probability,
        seed: args.seed,
    };
    let trace = generate(&cfg)?;
    save_trace(&trace, &args.out)?;
    println!(
        "wrote {} iterations x {} experts to {}",
        trace.len(),
        trace.expert_classes,
        args.out.display()
    );
    Ok(())
}

fn cmd_verify() -> ExitCode {
    let results = run_all();
    let mut failed = 0;
    for check in &results {
        println!("{}", format_check(check));
        if !check.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("all {} checks passed", results.len());
        ExitCode::SUCCESS
    } else {
        eprintln!("{failed} of {} checks failed", results.len());
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config, out } => cmd_simulate(config, out),
        Command::Costmodel(args) => cmd_costmodel(args),
        Command::Placement {
            popularity,
            nodes,
            slots,
            experts,
        } => cmd_placement(popularity, *nodes, *slots, *experts),
        Command::Tracegen(args) => cmd_tracegen(args),
        Command::Verify => return cmd_verify(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CmdError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
