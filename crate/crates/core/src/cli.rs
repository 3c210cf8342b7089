//! Command-line front end.
//!
//! Exit codes: 0 success, 1 abort (or defects / replay mismatch),
//! 2 usage, 3 I/O or unparsable input.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codebook::{
    generate_codebook, example_codebook, validate_document, BitPair, Codebook, CodebookDocument,
    CodebookError,
};
use crate::epr::{self, NoiseModel};
use crate::montecarlo::{self, Experiment, MonteCarloError, TrialMode};
use crate::netsim::{log_to_jsonl, FairnessPolicy, Strategy};
use crate::protocol::{
    decode_message, encode_message_with, fairness_gap, format_bits, parse_bits, run_message,
    run_with_codebook, DecodeResult, ProtocolConfig, ProtocolError, Role, SessionOutcome,
    Transcript, TranscriptError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ABORT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const SEED_ENV: &str = "ENTPOST_SEED";

#[derive(Debug, Parser)]
#[command(name = "entpost", version, about = "Entangled two-receiver message simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one session (or one message of several blocks) and write its transcript.
    Run(RunArgs),
    /// Run many independent seeded sessions and write CSV + JSON statistics.
    Montecarlo(MonteCarloArgs),
    /// Generate or validate codebooks.
    #[command(subcommand)]
    Codebook(CodebookCommand),
    /// Recompute the decode of a recorded transcript.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SessionFlags {
    /// Block length (EPR pairs per block).
    #[arg(long, default_value_t = crate::codebook::DEFAULT_N)]
    pub n: usize,
    /// Minimum pairwise effective distance between codebook entries.
    #[arg(long, default_value_t = crate::codebook::DEFAULT_LAMBDA)]
    pub lambda: usize,
    /// Per-side outcome flip probability.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Tolerated fraction of failed checks per candidate.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long = "confidence-target", default_value_t = 0.99)]
    pub confidence_target: f64,
    /// Master seed; falls back to $ENTPOST_SEED, then to entropy (printed).
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// honest | withhold:K | batch | lie:P
    #[arg(long = "strategy-bob", default_value = "honest")]
    pub strategy_bob: Strategy,
    /// honest | withhold:K | batch | lie:P
    #[arg(long = "strategy-sonai", default_value = "honest")]
    pub strategy_sonai: Strategy,
    #[arg(long = "policy-one-ahead", default_value_t = 1)]
    pub policy_one_ahead: usize,
    /// Idle ticks before a receiver aborts.
    #[arg(long, default_value_t = crate::netsim::DEFAULT_TIMEOUT_TICKS)]
    pub timeout: u64,
    #[arg(long = "reveal-first", default_value = "bob")]
    pub reveal_first: Role,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub flags: SessionFlags,
    /// Bit pair for one block, Bob's bit first (e.g. 10).
    #[arg(long, conflicts_with_all = ["bob_msg", "sonai_msg"])]
    pub bits: Option<BitPair>,
    /// Bob's message; one block per bit, paired with --sonai-msg.
    #[arg(long = "bob-msg", requires = "sonai_msg")]
    pub bob_msg: Option<String>,
    #[arg(long = "sonai-msg", requires = "bob_msg")]
    pub sonai_msg: Option<String>,
    /// Codebook file, or `example` for the built-in 8-pair codebook. Default: fresh from the seed.
    #[arg(long)]
    pub codebook: Option<String>,
    /// Transcript output (JSON lines).
    #[arg(long, default_value = "transcript.jsonl")]
    pub out: PathBuf,
    /// Where to write the codebook used. Default: next to --out.
    #[arg(long = "codebook-out")]
    pub codebook_out: Option<PathBuf>,
    /// Optional event log output (JSON lines).
    #[arg(long = "event-log")]
    pub event_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Honest,
    Soundness,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub flags: SessionFlags,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, value_enum, default_value = "honest")]
    pub mode: ModeArg,
    /// Fixed bit pair; random per trial when omitted.
    #[arg(long)]
    pub bits: Option<BitPair>,
    /// Wrong entry tracked in soundness mode.
    #[arg(long)]
    pub candidate: Option<BitPair>,
    /// Codebook file, or `example`. Default: fresh per trial.
    #[arg(long)]
    pub codebook: Option<String>,
    /// Worker threads (1 = sequential). Default: all cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output prefix: writes <out>.csv and <out>.json.
    #[arg(long, default_value = "montecarlo")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum CodebookCommand {
    /// Generate a codebook by rejection sampling.
    Gen {
        #[arg(long, default_value_t = crate::codebook::DEFAULT_N)]
        n: usize,
        #[arg(long, default_value_t = crate::codebook::DEFAULT_LAMBDA)]
        lambda: usize,
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
        #[arg(long, default_value = "codebook.json")]
        out: PathBuf,
    },
    /// List every defect of a codebook file.
    Validate { path: PathBuf },
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub transcript: PathBuf,
    /// Codebook file, or `example`.
    #[arg(long)]
    pub codebook: String,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long = "confidence-target", default_value_t = 0.99)]
    pub confidence_target: f64,
}

/// A failed command: message plus exit code.
#[derive(Debug)]
struct Failure(i32, String);

impl Failure {
    fn usage(m: impl ToString) -> Self {
        Failure(EXIT_USAGE, m.to_string())
    }

    fn io(m: impl ToString) -> Self {
        Failure(EXIT_IO, m.to_string())
    }

    fn abort(m: impl ToString) -> Self {
        Failure(EXIT_ABORT, m.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::io(e)
    }
}

impl From<CodebookError> for Failure {
    fn from(e: CodebookError) -> Self {
        match e {
            CodebookError::Io(_) | CodebookError::Json(_) | CodebookError::Version(_) => {
                Failure::io(e)
            }
            CodebookError::Invalid(_) => Failure::abort(e),
            _ => Failure::usage(e),
        }
    }
}

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Codebook(c) => c.into(),
            ProtocolError::Config(_) | ProtocolError::Epr(_) | ProtocolError::MessageLength(..) => {
                Failure::usage(e)
            }
            _ => Failure::abort(e),
        }
    }
}

impl From<MonteCarloError> for Failure {
    fn from(e: MonteCarloError) -> Self {
        match e {
            MonteCarloError::Protocol(p) => p.into(),
            MonteCarloError::Setup(_) => Failure::usage(e),
            _ => Failure::io(e),
        }
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Montecarlo(a) => cmd_montecarlo(a, out),
        Command::Codebook(c) => cmd_codebook(c, out),
        Command::Replay(a) => cmd_replay(a, out),
    };
    match result {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

fn resolve_seed(seed: Option<u64>, out: &mut dyn Write) -> std::io::Result<u64> {
    match seed {
        Some(s) => Ok(s),
        None => {
            let s = rand::random::<u64>();
            writeln!(out, "seed: {s} (drawn from entropy; pass --seed {s} to reproduce)")?;
            Ok(s)
        }
    }
}

fn build_config(f: &SessionFlags, seed: u64) -> Result<ProtocolConfig, Failure> {
    let config = ProtocolConfig {
        n: f.n,
        noise: NoiseModel::new(f.noise).map_err(Failure::usage)?,
        lambda: f.lambda,
        delta: f.delta,
        confidence_target: f.confidence_target,
        reveal_first: f.reveal_first,
        seed,
        policy: FairnessPolicy {
            one_ahead_limit: f.policy_one_ahead,
            timeout_ticks: f.timeout,
        },
    };
    config.validate().map_err(Failure::usage)?;
    for s in [f.strategy_bob, f.strategy_sonai] {
        s.validate(f.n).map_err(Failure::usage)?;
    }
    Ok(config)
}

fn load_codebook(spec: &str) -> Result<Codebook, Failure> {
    if spec == "example" {
        Ok(example_codebook())
    } else {
        Ok(Codebook::load(spec)?)
    }
}

fn describe(r: &DecodeResult) -> String {
    let kind = if r.exact { "exact" } else { "heuristic" };
    match r.bits {
        Some(b) => format!(
            "{} bob_bit={} sonai_bit={} confidence={} ({kind})",
            r.status, b.bob as u8, b.sonai as u8, r.confidence
        ),
        None => format!("{} confidence={} ({kind})", r.status, r.confidence),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> CmdResult {
    let seed = resolve_seed(a.flags.seed, out)?;
    let config = build_config(&a.flags, seed)?;
    let strategies = [a.flags.strategy_bob, a.flags.strategy_sonai];
    let cb = match &a.codebook {
        Some(spec) => load_codebook(spec)?,
        None => {
            let mut rng = epr::substream(seed, epr::Stream::Codebook);
            generate_codebook(config.n, config.lambda, &mut rng)?
        }
    };
    let codebook_out = a
        .codebook_out
        .clone()
        .unwrap_or_else(|| a.out.with_extension("codebook.json"));

    let outcomes: Vec<SessionOutcome> = match (&a.bob_msg, &a.sonai_msg) {
        (Some(b), Some(s)) => {
            let bad = |m: &str| Failure::usage(format!("message {m:?} must be a string of 0/1"));
            let bob = parse_bits(b).ok_or_else(|| bad(b))?;
            let sonai = parse_bits(s).ok_or_else(|| bad(s))?;
            let frame = encode_message_with(&bob, &sonai, &config, cb.clone())?;
            run_message(&frame, &config, strategies)
        }
        _ => {
            let bits = a.bits.unwrap_or(BitPair::new(false, false));
            vec![run_with_codebook(&config, &cb, bits, strategies)?]
        }
    };

    let transcript: String = outcomes.iter().map(|o| o.transcript.to_jsonl()).collect();
    write_file(&a.out, &transcript)?;
    write_file(&codebook_out, &(cb.to_json() + "\n"))?;
    if let Some(path) = &a.event_log {
        let log: String = outcomes.iter().map(|o| log_to_jsonl(&o.log)).collect();
        write_file(path, &log)?;
    }

    writeln!(out, "seed: {seed}")?;
    writeln!(out, "n: {} lambda: {} min_distance: {}", cb.n(), cb.lambda(), cb.min_distance())?;
    for (i, o) in outcomes.iter().enumerate() {
        if outcomes.len() > 1 {
            writeln!(out, "block {i}: bits {}", o.block.bits)?;
        } else {
            writeln!(out, "bits: {}", o.block.bits)?;
        }
        writeln!(out, "  bob:   {}", describe(&o.bob))?;
        writeln!(out, "  sonai: {}", describe(&o.sonai))?;
        writeln!(
            out,
            "  reveals bob={} sonai={} fairness_gap={} ticks={}",
            o.bob_sent,
            o.sonai_sent,
            fairness_gap(&o.transcript),
            o.ticks
        )?;
    }
    if outcomes.len() > 1 {
        for role in [Role::Bob, Role::Sonai] {
            let results: Vec<DecodeResult> = outcomes.iter().map(|o| *o.result(role)).collect();
            match decode_message(&results) {
                Ok((b, s)) => writeln!(
                    out,
                    "{role} recovered bob_msg={} sonai_msg={}",
                    format_bits(&b),
                    format_bits(&s)
                )?,
                Err(e) => writeln!(out, "{role} failed: {e}")?,
            }
        }
    }
    writeln!(out, "transcript: {}", a.out.display())?;
    writeln!(out, "codebook: {}", codebook_out.display())?;

    Ok(if outcomes.iter().all(SessionOutcome::both_decoded) {
        EXIT_OK
    } else {
        EXIT_ABORT
    })
}

fn cmd_montecarlo(a: MonteCarloArgs, out: &mut dyn Write) -> CmdResult {
    let seed = resolve_seed(a.flags.seed, out)?;
    let config = build_config(&a.flags, seed)?;
    let exp = Experiment {
        config,
        trials: a.trials,
        bits: a.bits,
        strategies: [a.flags.strategy_bob, a.flags.strategy_sonai],
        mode: match a.mode {
            ModeArg::Honest => TrialMode::Honest,
            ModeArg::Soundness => TrialMode::Soundness,
        },
        candidate: a.candidate,
        codebook: a.codebook.as_deref().map(load_codebook).transpose()?,
        workers: a.workers,
    };
    let (records, report) = montecarlo::run_experiment(&exp)?;
    let csv = a.out.with_extension("csv");
    let json = a.out.with_extension("json");
    montecarlo::write_csv(&csv, &report.header, &records)?;
    montecarlo::write_report(&json, &report)?;

    writeln!(out, "seed: {seed}")?;
    writeln!(out, "trials: {}", report.trials)?;
    writeln!(
        out,
        "decode_success_rate: {} ({} / {})",
        report.decode_success_rate, report.successes, report.trials
    )?;
    writeln!(out, "wrong_decodes: {} undecided: {}", report.wrong_decodes, report.undecided)?;
    for (reason, count) in &report.abort_counts {
        writeln!(out, "abort {reason}: {count}")?;
    }
    writeln!(out, "mean_confidence: {}", report.mean_confidence)?;
    if let Some(c) = &report.candidate_survival {
        writeln!(out, "candidate_survival: {} ({} / {})", c.rate, c.survived, report.trials)?;
    }
    writeln!(out, "csv: {}", csv.display())?;
    writeln!(out, "json: {}", json.display())?;
    Ok(EXIT_OK)
}

fn cmd_codebook(c: CodebookCommand, out: &mut dyn Write) -> CmdResult {
    match c {
        CodebookCommand::Gen {
            n,
            lambda,
            seed,
            out: path,
        } => {
            let seed = resolve_seed(seed, out)?;
            let mut rng = epr::substream(seed, epr::Stream::Codebook);
            let cb = generate_codebook(n, lambda, &mut rng)?;
            write_file(&path, &(cb.to_json() + "\n"))?;
            writeln!(
                out,
                "seed: {seed}\nwrote {} (n={n} lambda={lambda} min_distance={})",
                path.display(),
                cb.min_distance()
            )?;
            Ok(EXIT_OK)
        }
        CodebookCommand::Validate { path } => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
            let doc: CodebookDocument = serde_json::from_str(&text)
                .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
            let mut defects: Vec<String> =
                validate_document(&doc).iter().map(ToString::to_string).collect();
            if doc.version != crate::codebook::CODEBOOK_VERSION {
                defects.insert(0, format!("unsupported version {}", doc.version));
            }
            if defects.is_empty() {
                writeln!(out, "ok")?;
                Ok(EXIT_OK)
            } else {
                for d in &defects {
                    writeln!(out, "defect: {d}")?;
                }
                Ok(EXIT_ABORT)
            }
        }
    }
}

fn cmd_replay(a: ReplayArgs, out: &mut dyn Write) -> CmdResult {
    let cb = load_codebook(&a.codebook)?;
    let config = ProtocolConfig {
        n: cb.n(),
        noise: NoiseModel::new(a.noise).map_err(Failure::usage)?,
        lambda: cb.lambda(),
        delta: a.delta,
        confidence_target: a.confidence_target,
        ..Default::default()
    };
    config.validate().map_err(Failure::usage)?;
    let text = std::fs::read_to_string(&a.transcript)
        .map_err(|e| Failure::io(format!("{}: {e}", a.transcript.display())))?;
    let segments = Transcript::parse_jsonl(&text).map_err(|e| match e {
        TranscriptError::Parse { .. } => Failure::io(e),
        _ => Failure::abort(e),
    })?;

    let mut code = EXIT_OK;
    for (i, (t, lines)) in segments.iter().enumerate() {
        let r = t.replay(&cb, &config, Some(lines)).map_err(Failure::abort)?;
        let prefix = if segments.len() > 1 {
            format!("block {i}: ")
        } else {
            String::new()
        };
        match t.terminal() {
            Some(recorded) if *recorded == r.to_record() => {
                writeln!(out, "{prefix}{} (matches recorded)", describe(&r))?;
            }
            Some(recorded) => {
                writeln!(
                    out,
                    "{prefix}{} MISMATCH recorded {}",
                    describe(&r),
                    serde_json::to_string(recorded).expect("record serializes")
                )?;
                code = EXIT_ABORT;
            }
            None => writeln!(out, "{prefix}{} (no terminal record)", describe(&r))?,
        }
    }
    Ok(code)
}
