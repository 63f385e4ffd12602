//! `spdz-gwas`: group generation, triple dispensation, synthetic data and
//! end-to-end case/control matching runs on the in-process simulator.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use spdz_gwas::dispense::{reconstruct, BlindMode, DispenseRoles, Dispenser};
use spdz_gwas::gwas::{
    random_orthonormal_basis, read_basis_csv, synth_genotypes, write_basis_csv, AcceptRule, GenotypeMatrix,
    PipelineInputs, Report, SecurePipeline,
};
use spdz_gwas::modmath::{gen_group, modexp_count, DEFAULT_GROUP_SEED};
use spdz_gwas::net::{Runtime, RuntimeConfig};
use spdz_gwas::spdz::Engine;
use spdz_gwas::Error;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("protocol aborted: {message}")]
    Protocol { message: String, transcript: Option<PathBuf> },
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Protocol { .. } => 3,
            CliError::Validation(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_protocol_abort() {
            return CliError::Protocol {
                message: e.to_string(),
                transcript: None,
            };
        }
        match e {
            Error::Parameter(_) | Error::Setup(_) | Error::Plan(_) | Error::ParamGen(_) | Error::InvalidGroup(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "spdz-gwas", version, about = "SPDZ-style MPC simulator for case/control matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a safe-prime group and write its JSON document.
    Groupgen {
        #[arg(long, default_value_t = 256)]
        bits: u64,
        /// Defaults to the seed of the shipped 256-bit group.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dispense blinded Beaver triples and report timings.
    Triples {
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// JSON-lines ledger of every share handed out.
        #[arg(long)]
        ledger: Option<PathBuf>,
        /// Spend one triple twice and exit with the resulting protocol error.
        #[arg(long)]
        reuse_demo: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Hardy-Weinberg genotype CSV.
    Synth {
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        snps: usize,
        /// Alt-allele frequency, one value or one per SNP (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "0.3")]
        freq: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Orthonormal basis CSV, optionally spanning rows of a genotype CSV.
    SynthBasis {
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        rank: usize,
        /// Genotype CSV whose leading rows (normalized) seed the basis.
        #[arg(long)]
        span: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective run config.
    ShowConfig {
        #[command(flatten)]
        common: Common,
    },
    /// Filter controls against the case basis and check λ.
    Run {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        controls: PathBuf,
        /// Report path; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        lambda_max: Option<f64>,
        #[arg(long, value_enum)]
        accept_rule: Option<RuleArg>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        parallel_controls: Option<usize>,
        /// Same decisions without cryptography.
        #[arg(long)]
        plaintext_oracle: bool,
        /// JSON-lines message log.
        #[arg(long)]
        transcript_out: Option<PathBuf>,
        /// Zero the wall-clock field so reports compare byte for byte.
        #[arg(long)]
        reproducible: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bits: Option<u64>,
    /// MPC servers.
    #[arg(long)]
    parties: Option<u16>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(b) = self.bits {
            c.bits = b;
        }
        if let Some(m) = self.parties {
            c.parties = m;
        }
        Ok(c)
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Single,
    Two,
}

impl From<ModeArg> for BlindMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Single => BlindMode::Single,
            ModeArg::Two => BlindMode::Two,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum RuleArg {
    WithinTau,
    BeyondTau,
}

impl From<RuleArg> for AcceptRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::WithinTau => AcceptRule::WithinTau,
            RuleArg::BeyondTau => AcceptRule::BeyondTau,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Writes `text` to `out`, or stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn cmd_groupgen(bits: u64, seed: Option<u64>, out: Option<&Path>) -> Result<(), CliError> {
    let seed_bytes = match seed {
        Some(s) => s.to_be_bytes().to_vec(),
        None => DEFAULT_GROUP_SEED.to_vec(),
    };
    let g = gen_group(bits, &seed_bytes).map_err(|e| CliError::Usage(e.to_string()))?;
    emit(out, &(g.to_json() + "\n"))
}

#[derive(Serialize)]
struct TriplesReport {
    count: usize,
    mode: BlindMode,
    bits: u64,
    parties: u16,
    leader: String,
    all_valid: bool,
    modexp_per_triple: f64,
    ms_total: f64,
    ms_per_triple: f64,
}

fn cmd_triples(
    count: usize,
    mode: Option<ModeArg>,
    ledger: Option<&Path>,
    reuse_demo: bool,
    common: &Common,
) -> Result<(), CliError> {
    let cfg = common.resolve()?;
    let mode = mode.map(BlindMode::from).unwrap_or(cfg.blind_mode);
    let group = cfg.group()?;
    let roles = DispenseRoles::standard(cfg.parties, &cfg.seed.to_be_bytes())?;
    let mut rt = Runtime::new(&roles.all_parties(), &cfg.seed.to_be_bytes(), RuntimeConfig::default())?;
    let mut dispenser = Dispenser::new(&mut rt, group.clone(), roles.clone(), mode)?;
    let field = group.field();

    let exps = modexp_count();
    let start = Instant::now();
    let mut triples = Vec::with_capacity(count);
    for i in 0..count {
        let mut t = dispenser.dispense(&mut rt, 1).map_err(|e| CliError::Protocol {
            message: format!("triple session {i}: {e}"),
            transcript: None,
        })?;
        triples.append(&mut t);
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let exps = modexp_count() - exps;

    let mut all_valid = true;
    for t in &triples {
        let open = |v: &spdz_gwas::spdz::SharedValue| reconstruct(field, &roles.mpc, &v.owned(&roles.mpc));
        let (a, b, c) = (open(&t.a)?, open(&t.b)?, open(&t.c)?);
        all_valid &= field.mul(&a, &b) == c;
    }
    if let Some(path) = ledger {
        let mut w = create(path)?;
        dispenser.write_ledger(&mut w)?;
        w.flush().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let per = |x: f64| if count == 0 { 0.0 } else { x / count as f64 };
    emit(
        None,
        &to_pretty(&TriplesReport {
            count,
            mode,
            bits: group.p().bits(),
            parties: cfg.parties,
            leader: roles.leader.to_string(),
            all_valid,
            modexp_per_triple: per(exps as f64),
            ms_total: elapsed,
            ms_per_triple: per(elapsed),
        }),
    )?;
    if !all_valid {
        return Err(CliError::Protocol {
            message: "a dispensed triple does not satisfy c = a·b".into(),
            transcript: None,
        });
    }
    if reuse_demo {
        let t = triples
            .first()
            .cloned()
            .ok_or_else(|| CliError::Usage("--reuse-demo needs --count of at least 1".into()))?;
        let mut engine = Engine::new(field.clone(), roles.mpc.clone(), roles.leader)?;
        let one = engine.constant(&field.one());
        engine.beaver_mult(&mut rt, &one, &one, &t)?;
        engine.beaver_mult(&mut rt, &one, &one, &t)?;
    }
    Ok(())
}

fn cmd_synth(samples: usize, snps: usize, freq: &[f64], seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let g = synth_genotypes(samples, snps, freq, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut buf = Vec::new();
    g.write_csv(&mut buf)?;
    emit(out, &String::from_utf8(buf).expect("ascii csv"))
}

fn cmd_synth_basis(
    dim: Option<usize>,
    rank: usize,
    span: Option<&Path>,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let anchors: Vec<Vec<f64>> = match span {
        Some(p) => GenotypeMatrix::read_csv(open(p)?)?
            .rows()
            .map(spdz_gwas::gwas::normalize_row)
            .collect(),
        None => Vec::new(),
    };
    let dim = match (dim, anchors.first()) {
        (Some(d), _) => d,
        (None, Some(a)) => a.len(),
        (None, None) => return Err(CliError::Usage("--dim or --span is required".into())),
    };
    let basis = random_orthonormal_basis(dim, rank, &anchors, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut buf = Vec::new();
    write_basis_csv(&basis, &mut buf)?;
    emit(out, &String::from_utf8(buf).expect("ascii csv"))
}

struct RunArgs<'a> {
    case: &'a Path,
    basis: &'a Path,
    controls: &'a Path,
    out: Option<&'a Path>,
    plaintext_oracle: bool,
    transcript_out: Option<&'a Path>,
    reproducible: bool,
}

fn cmd_run(args: RunArgs<'_>, cfg: RunConfig) -> Result<(), CliError> {
    let pipeline_cfg = cfg.pipeline(args.transcript_out.is_some())?;
    let case = GenotypeMatrix::read_csv(open(args.case)?)?;
    let basis = read_basis_csv(open(args.basis)?)?;
    let ctrl = GenotypeMatrix::read_csv(open(args.controls)?)?;
    let inputs = PipelineInputs::from_matrices(&case, basis, &ctrl)?;

    let mut report = if args.plaintext_oracle {
        Report::plaintext(&inputs, &pipeline_cfg)?
    } else {
        let pipeline = SecurePipeline::new(pipeline_cfg, cfg.group()?)?;
        let mut rt = pipeline.runtime()?;
        let result = pipeline.run(&mut rt, &inputs);
        if let Some(path) = args.transcript_out {
            let mut w = create(path)?;
            rt.transcript().write_jsonl(&mut w)?;
            w.flush().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        result.map_err(|e| match CliError::from(e) {
            CliError::Protocol { message, .. } => CliError::Protocol {
                message,
                transcript: args.transcript_out.map(Path::to_path_buf),
            },
            other => other,
        })?
    };
    if args.reproducible {
        report.runtime_ms = 0;
    }
    emit(args.out, &to_pretty(&report))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Groupgen { bits, seed, out } => cmd_groupgen(bits, seed, out.as_deref()),
        Command::Triples {
            count,
            mode,
            ledger,
            reuse_demo,
            common,
        } => cmd_triples(count, mode, ledger.as_deref(), reuse_demo, &common),
        Command::Synth {
            samples,
            snps,
            freq,
            seed,
            out,
        } => cmd_synth(samples, snps, &freq, seed, out.as_deref()),
        Command::SynthBasis {
            dim,
            rank,
            span,
            seed,
            out,
        } => cmd_synth_basis(dim, rank, span.as_deref(), seed, out.as_deref()),
        Command::ShowConfig { common } => {
            let cfg = common.resolve()?;
            cfg.pipeline(false)?;
            emit(None, &to_pretty(&cfg))
        }
        Command::Run {
            case,
            basis,
            controls,
            out,
            tau,
            lambda_max,
            accept_rule,
            mode,
            parallel_controls,
            plaintext_oracle,
            transcript_out,
            reproducible,
            common,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(t) = tau {
                cfg.tau = t;
            }
            if let Some(l) = lambda_max {
                cfg.lambda_max = l;
            }
            if let Some(r) = accept_rule {
                cfg.accept_rule = r.into();
            }
            if let Some(m) = mode {
                cfg.blind_mode = m.into();
            }
            if let Some(n) = parallel_controls {
                cfg.parallel_controls = n;
            }
            cmd_run(
                RunArgs {
                    case: &case,
                    basis: &basis,
                    controls: &controls,
                    out: out.as_deref(),
                    plaintext_oracle,
                    transcript_out: transcript_out.as_deref(),
                    reproducible,
                },
                cfg,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Protocol {
                transcript: Some(p), ..
            } = &e
            {
                eprintln!("transcript: {}", p.display());
            }
            ExitCode::from(e.code())
        }
    }
}
