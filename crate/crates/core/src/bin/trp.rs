//! `trp` command-line front end.
//!
//! Exit status: 0 on success, 1 on input or configuration errors, 2 when the
//! allocation degenerates to the zero portfolio, 3 when `verify` reports a
//! failing check.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use trp_core::flow_model::{generate_returns, FlowModelParams, Loadings, UniverseShape, GENERATOR_VERSION};
use trp_core::output;
use trp_core::propagation::{build_topology, node_labels};
use trp_core::verify::{self, Mutation, VerifyOptions};
use trp_core::{
    active_set, allocate, load_returns, load_signals, ReturnsPanel, RootMode, SignalVector, TrpConfig, TrpError,
    Variant,
};

#[derive(Parser)]
#[command(name = "trp", version, about = "Topological risk parity allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute portfolio weights from returns and signals.
    Allocate(AllocateArgs),
    /// Generate a synthetic returns panel from the nested flow model.
    Synth(SynthArgs),
    /// Print the spanning tree or the rooted topology.
    Tree(TreeArgs),
    /// Run the seeded property checks and print a JSON report.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Dot,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    leverage: f64,
    #[arg(long, default_value = "mst", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, default_value = "hub", value_parser = parse_root)]
    root: RootMode,
    /// Periods in the activity window; full history when omitted.
    #[arg(long)]
    lookback: Option<usize>,
    /// Minimum recent mean absolute return.
    #[arg(long, default_value_t = trp_core::data_model::DEFAULT_MAGNITUDE_THRESHOLD)]
    epsilon: f64,
    /// Minimum absolute signal.
    #[arg(long, default_value_t = trp_core::data_model::DEFAULT_SIGNAL_THRESHOLD)]
    tau: f64,
}

impl ModelArgs {
    fn config(&self) -> TrpConfig {
        TrpConfig {
            lookback: self.lookback,
            magnitude_threshold: self.epsilon,
            signal_threshold: self.tau,
            rho: self.rho,
            leverage: self.leverage,
            root_mode: self.root,
            ..TrpConfig::default()
        }
    }
}

#[derive(Args)]
struct AllocateArgs {
    #[arg(long)]
    returns: PathBuf,
    #[arg(long)]
    signals: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Per-name absolute weight cap.
    #[arg(long)]
    cap: Option<f64>,
    /// Weights below this magnitude are zeroed.
    #[arg(long)]
    min_weight: Option<f64>,
    /// Restore gross leverage after clipping and thresholding.
    #[arg(long)]
    renormalize: bool,
    /// Demean within each depth-one subtree (sector variant only).
    #[arg(long)]
    neutralize: bool,
    /// Apply cap and threshold to the rooted-MST variant too.
    #[arg(long)]
    postprocess_mst: bool,
    /// Accepted for interface uniformity; allocation is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    periods: usize,
    #[arg(long, default_value_t = 4)]
    sectors: usize,
    #[arg(long, default_value_t = 3)]
    baskets: usize,
    #[arg(long, default_value_t = 4)]
    assets: usize,
    #[arg(long, default_value_t = 0.3)]
    theta_m: f64,
    #[arg(long, default_value_t = 0.3)]
    theta_s: f64,
    #[arg(long, default_value_t = 0.3)]
    theta_b: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Use the single-parameter form; overrides the individual loadings.
    #[arg(long)]
    lambda: Option<f64>,
    /// Returns CSV path; the sidecar goes next to it with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TreeArgs {
    #[arg(long)]
    returns: PathBuf,
    /// Signals used for the activity filter and root choice; all ones when omitted.
    #[arg(long)]
    signals: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Emit the rooted topology instead of the undirected tree.
    #[arg(long)]
    rooted: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "dot")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    max_nodes: usize,
    /// Run only the named check; repeatable.
    #[arg(long = "check")]
    checks: Vec<String>,
    /// Inject a known fault into the factor computation.
    #[arg(long, value_enum)]
    mutate: Option<MutationArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutationArg {
    AlphaBranchPlusOne,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: TrpError| e.to_string())
}

fn parse_root(s: &str) -> Result<RootMode, String> {
    s.parse().map_err(|e: TrpError| e.to_string())
}

enum Failure {
    Input(String),
    Degenerate(String),
    Checks,
}

impl From<TrpError> for Failure {
    fn from(e: TrpError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_allocate(a: AllocateArgs) -> Result<(), Failure> {
    let panel = load_returns(&a.returns)?;
    let signals = load_signals(&a.signals, &panel)?;
    let cfg = TrpConfig {
        cap: a.cap,
        min_weight: a.min_weight,
        renormalize_after_postprocess: a.renormalize,
        neutralize_depth_one: a.neutralize,
        postprocess_mst: a.postprocess_mst,
        ..a.model.config()
    };
    let alloc = allocate(&panel, &signals, &cfg, a.model.variant)?;
    let mut out = sink(a.out.as_deref())?;
    match a.format {
        Format::Csv => output::write_weights_csv(&mut out, &panel, &signals, &cfg, &alloc)?,
        Format::Json => {
            output::write_weights_json(&mut out, &panel, &signals, &cfg, &alloc)?;
            writeln!(out)?;
        }
        Format::Dot => return Err(Failure::Input("allocate writes csv or json".into())),
    }
    out.flush()?;
    if alloc.portfolio.is_zero() {
        let msg = alloc
            .diagnostics
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Failure::Degenerate(msg));
    }
    Ok(())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    generator: &'a str,
    seed: u64,
    periods: usize,
    params: &'a FlowModelParams,
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let shape = UniverseShape {
        sectors: a.sectors,
        baskets_per_sector: a.baskets,
        assets_per_basket: a.assets,
    };
    let mut params = FlowModelParams::nested(shape, Loadings::new(a.theta_m, a.theta_s, a.theta_b, a.sigma), a.seed);
    if let Some(l) = a.lambda {
        params = params.with_lambda(l);
    }
    let panel = generate_returns(&params, a.periods)?;
    let mut csv_out = sink(Some(&a.out))?;
    panel.write_csv(&mut csv_out)?;
    csv_out.flush()?;
    let sidecar = Sidecar {
        generator: GENERATOR_VERSION,
        seed: a.seed,
        periods: a.periods,
        params: &params,
    };
    let mut meta = sink(Some(&a.out.with_extension("json")))?;
    serde_json::to_writer_pretty(&mut meta, &sidecar).map_err(TrpError::from)?;
    writeln!(meta)?;
    meta.flush()?;
    Ok(())
}

fn tree_signals(path: Option<&Path>, panel: &ReturnsPanel) -> Result<SignalVector, Failure> {
    Ok(match path {
        Some(p) => load_signals(p, panel)?,
        None => SignalVector::new(vec![1.0; panel.n_assets()])?,
    })
}

fn cmd_tree(a: TreeArgs) -> Result<(), Failure> {
    let panel = load_returns(&a.returns)?;
    let signals = tree_signals(a.signals.as_deref(), &panel)?;
    let cfg = a.model.config();
    cfg.validate(panel.n_periods())?;
    let active = active_set(&panel, &signals, &cfg)?;
    let s = signals.restrict(&active);
    let (tree, topo) = build_topology(&panel, &active, &s, &cfg, a.model.variant)?;
    let mut out = sink(a.out.as_deref())?;
    if a.rooted {
        let labels = node_labels(&panel, &active, topo.n_nodes());
        match a.format {
            Format::Json => writeln!(out, "{}", output::rooted_json(&topo, &labels)?)?,
            Format::Dot => write!(out, "{}", output::rooted_dot(&topo, &labels))?,
            Format::Csv => return Err(Failure::Input("tree writes dot or json".into())),
        }
    } else {
        let labels = node_labels(&panel, &active, tree.n_nodes());
        match a.format {
            Format::Json => writeln!(out, "{}", output::tree_json(&tree, &labels)?)?,
            Format::Dot => write!(out, "{}", output::tree_dot(&tree, &labels))?,
            Format::Csv => return Err(Failure::Input("tree writes dot or json".into())),
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Failure> {
    for c in &a.checks {
        if !verify::CHECK_NAMES.contains(&c.as_str()) {
            return Err(Failure::Input(format!("unknown check `{c}`")));
        }
    }
    let report = verify::run(&VerifyOptions {
        instances: a.instances,
        seed: a.seed,
        max_nodes: a.max_nodes,
        mutation: a
            .mutate
            .map(|MutationArg::AlphaBranchPlusOne| Mutation::AlphaBranchPlusOne),
        only: a.checks,
    });
    let mut out = sink(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(TrpError::from)?;
    writeln!(out)?;
    out.flush()?;
    for c in report.checks.iter().filter(|c| !c.passed()) {
        eprintln!("check {} failed on {} of {} instances", c.name, c.failures, c.instances);
    }
    if report.overall {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Allocate(a) => cmd_allocate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Tree(a) => cmd_tree(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Degenerate(msg)) => {
            eprintln!("degenerate portfolio: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Checks) => ExitCode::from(3),
    }
}
