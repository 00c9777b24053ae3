//! `dsc-lab`: generate, certify, solve, compile and verify layered sparse coding instances.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsc_core::coherence::CoherenceMode;
use dsc_core::lista::EnvelopeRule;
use dsc_core::model::{ChainMode, DictionaryKind};
use dsc_core::Tolerances;

#[derive(Parser, Debug)]
#[command(name = "dsc-lab", version, about = "Layered sparse coding laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// RNG seed for generation and random trials.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true)]
    pub tol_structural: Option<f64>,
    #[arg(long, global = true)]
    pub tol_equivalence: Option<f64>,
    #[arg(long, global = true)]
    pub tol_coincidence: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Global {
    pub fn tolerances(&self, base: Tolerances) -> Tolerances {
        Tolerances {
            structural: self.tol_structural.unwrap_or(base.structural),
            equivalence: self.tol_equivalence.unwrap_or(base.equivalence),
            coincidence: self.tol_coincidence.unwrap_or(base.coincidence),
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a seeded instance and write it as JSON.
    Gen(GenArgs),
    /// Mutual and generalized mutual coherence of a `.mat.txt` dictionary.
    Coherence(CoherenceArgs),
    /// Uniqueness verdicts, stability ledger and comparison bounds.
    Certify(CertifyArgs),
    /// Layered solve with a classic or learned pursuit.
    Solve(SolveArgs),
    /// LISTA-CP on layer one with a per-iteration trace; `--out` receives the schedule.
    Lista(ListaArgs),
    /// Compile a schedule into an affine + activation network.
    Compile(CompileArgs),
    /// Compare a compiled network against its iterative solver.
    VerifyNet(VerifyNetArgs),
    /// Run a seeded suite and write the artifact tree.
    Bench(BenchArgs),
    /// Re-check a suite artifact tree from disk.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Layer shape `ROWSxCOLS`, repeated per layer from the top.
    #[arg(long = "shape", required = true, value_delimiter = ',')]
    pub shape: Vec<String>,
    /// Per-layer budgets.
    #[arg(long, required = true, value_delimiter = ',')]
    pub lambda: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub bound: f64,
    #[arg(long, value_enum, default_value_t = ChainArg::ExactChain)]
    pub mode: ChainArg,
    /// ℓ2 norm of the observation noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = DictArg::Incoherent)]
    pub dictionary: DictArg,
    /// Store matrices inside the JSON instead of sibling `.mat.txt` files.
    #[arg(long)]
    pub inline: bool,
}

#[derive(Args, Debug)]
pub struct CoherenceArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Skip the generalized coherence programs.
    #[arg(long)]
    pub no_lp: bool,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    /// `relu` or `bneg:β,L,m` (LISTA only).
    #[arg(long, default_value = "relu")]
    pub activation: String,
    /// ℓ1 weight for ISTA.
    #[arg(long, default_value_t = 1e-3)]
    pub gamma: f64,
}

#[derive(Args, Debug)]
pub struct ListaArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    /// `relu` or `bneg:β,L,m`.
    #[arg(long, default_value = "relu")]
    pub activation: String,
    /// Envelope rule; defaults to support-aware for ReLU, standard otherwise.
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    /// Per-iteration CSV: k, err_l2, err_l1, s_hat, theta, bound.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompileArgs {
    #[arg(long)]
    pub schedule: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyNetArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub suite: PathBuf,
    /// Write SVG error plots next to the traces.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Artifact tree written by `bench`.
    pub dir: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ChainArg {
    ExactChain,
    ToleranceChain,
}

impl From<ChainArg> for ChainMode {
    fn from(c: ChainArg) -> Self {
        match c {
            ChainArg::ExactChain => ChainMode::ExactChain,
            ChainArg::ToleranceChain => ChainMode::ToleranceChain,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum DictArg {
    Gaussian,
    Incoherent,
}

impl From<DictArg> for DictionaryKind {
    fn from(d: DictArg) -> Self {
        match d {
            DictArg::Gaussian => DictionaryKind::Gaussian,
            DictArg::Incoherent => DictionaryKind::Incoherent,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Exact,
    Fast,
}

impl From<ModeArg> for CoherenceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => CoherenceMode::Exact,
            ModeArg::Fast => CoherenceMode::Fast,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum RuleArg {
    Standard,
    SupportAware,
}

impl From<RuleArg> for EnvelopeRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Standard => EnvelopeRule::Standard,
            RuleArg::SupportAware => EnvelopeRule::SupportAware,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodArg {
    Lista,
    Ista,
    Bp,
    L0,
    Cosparse,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
