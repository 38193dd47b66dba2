//! Command-line front end: position planning, attention verification, decay
//! curves, the visual-fading probe and the invariant self-check suite.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or parse error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dipe_core::attention::{
    attend_reference, attend_split_detailed, AttendMode, AttentionCase, IntraImageMask,
};
use dipe_core::plan::{build_plan, IndexMode, ModalitySegment};
use dipe_core::probe::{report_to_csv, run_probe, ProbeConfig, ProbeMode};
use dipe_core::rope::{decay_bound, RopeConfig};
use dipe_core::verify;

#[derive(Parser)]
#[command(
    name = "dipe",
    version,
    about = "Anchored inter-modal position encoding tools",
    long_about = "Plans dual sequential/anchored position indices, runs split-kernel \
                  attention with an exact LogSumExp merge against a dense oracle, sweeps \
                  rotary decay curves, and probes attention mass on visual tokens under \
                  growing text distractors."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the dual position plan for a segment layout as JSON.
    Plan(PlanArgs),
    /// Run split attention on a case file; optionally check it against the
    /// dense oracle.
    Attend(AttendArgs),
    /// Emit the rotary decay-bound curve as CSV (distance, bound).
    Decay(DecayArgs),
    /// Sweep distractor lengths and report attention mass on visual tokens.
    Probe(ProbeArgs),
    /// Run the invariant suite; exits 1 if any check fails.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanModeArg {
    Mrope,
    Vanilla,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F64,
    F32,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntraImageArg {
    Causal,
    Full,
}

#[derive(Args)]
struct PlanArgs {
    /// Inline layout like "txt:3,img:2x2,txt:2".
    #[arg(long, conflicts_with = "json")]
    segments: Option<String>,
    /// JSON file with a list of segments, e.g.
    /// [{"modality":"text","length":3},{"modality":"visual","length":4,"grid":[2,2]}].
    #[arg(long)]
    json: Option<PathBuf>,
    /// Index assignment for visual segments.
    #[arg(long, value_enum, default_value = "mrope")]
    mode: PlanModeArg,
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AttendArgs {
    /// Attention case JSON file.
    case: PathBuf,
    /// Compare split execution against the dense oracle and exit 0/1.
    #[arg(long)]
    check: bool,
    #[arg(long, value_enum, default_value = "f64")]
    precision: PrecisionArg,
    /// Output path for the result JSON; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DecayArgs {
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 10000.0)]
    base: f64,
    #[arg(long, default_value_t = 16384)]
    max_dist: u64,
    #[arg(long, default_value_t = 256)]
    step: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    /// Seed; falls back to $DIPE_SEED, then 42.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 48)]
    head_dim: usize,
    /// Image grid as RxC.
    #[arg(long, default_value = "4x4")]
    grid: String,
    #[arg(long, default_value_t = 8)]
    question_len: usize,
    /// Comma-separated distractor lengths, ascending.
    #[arg(long, default_value = "0,64,256,1024,4096")]
    lengths: String,
    /// Comma-separated subset of vanilla,mrope,dipe.
    #[arg(long, default_value = "vanilla,mrope,dipe")]
    modes: String,
    #[arg(long, value_enum, default_value = "causal")]
    intra_image: IntraImageArg,
    #[arg(long, value_enum, default_value = "f64")]
    precision: PrecisionArg,
    /// Worker threads; the report is byte-identical for any value.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// CSV output path; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the full report (per-layer cells plus cross-layer means)
    /// as JSON.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Seed; falls back to $DIPE_SEED, then 42.
    #[arg(long)]
    seed: Option<u64>,
}

/// Failures that should terminate with the usage/parse exit code.
struct UsageError(String);

impl<E: std::fmt::Display> From<E> for UsageError {
    fn from(e: E) -> Self {
        UsageError(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(args) => cmd_plan(args),
        Command::Attend(args) => cmd_attend(args),
        Command::Decay(args) => cmd_decay(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(code) => code,
        Err(UsageError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, UsageError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("DIPE_SEED") {
        Ok(raw) => raw
            .parse()
            .map_err(|_| UsageError(format!("DIPE_SEED is not an integer: {raw:?}"))),
        Err(_) => Ok(42),
    }
}

fn write_out(path: &Option<PathBuf>, content: &str) -> Result<(), UsageError> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| UsageError(format!("{}: {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// Parse "txt:3,img:2x2,txt:2" into segments.
fn parse_inline_segments(spec: &str) -> Result<Vec<ModalitySegment>, UsageError> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let (kind, arg) = part
            .split_once(':')
            .ok_or_else(|| UsageError(format!("segment {part:?} is not kind:size")))?;
        match kind {
            "txt" | "text" => {
                let len: usize = arg
                    .parse()
                    .map_err(|_| UsageError(format!("bad text length {arg:?}")))?;
                if len == 0 {
                    return Err(UsageError("text length must be positive".into()));
                }
                out.push(ModalitySegment::text(len));
            }
            "img" | "image" => {
                let (rows, cols) = parse_grid(arg)?;
                if rows == 0 || cols == 0 {
                    return Err(UsageError(format!("grid {arg:?} must be at least 1x1")));
                }
                out.push(ModalitySegment::image(rows, cols));
            }
            other => return Err(UsageError(format!("unknown segment kind {other:?}"))),
        }
    }
    Ok(out)
}

fn parse_grid(raw: &str) -> Result<(usize, usize), UsageError> {
    let (r, c) = raw
        .split_once('x')
        .ok_or_else(|| UsageError(format!("bad grid {raw:?}, expected RxC")))?;
    Ok((
        r.parse()
            .map_err(|_| UsageError(format!("bad grid rows {r:?}")))?,
        c.parse()
            .map_err(|_| UsageError(format!("bad grid cols {c:?}")))?,
    ))
}

fn cmd_plan(args: PlanArgs) -> Result<ExitCode, UsageError> {
    let segments = match (&args.segments, &args.json) {
        (Some(spec), None) => parse_inline_segments(spec)?,
        (None, Some(path)) => {
            let raw = fs::read_to_string(path)
                .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&raw)?
        }
        _ => {
            return Err(UsageError(
                "supply exactly one of --segments or --json".into(),
            ))
        }
    };
    let mode = match args.mode {
        PlanModeArg::Mrope => IndexMode::Mrope,
        PlanModeArg::Vanilla => IndexMode::Vanilla,
    };
    let plan = build_plan(&segments, mode)?;
    write_out(&args.output, &(plan.to_json() + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_attend(args: AttendArgs) -> Result<ExitCode, UsageError> {
    let raw = fs::read_to_string(&args.case)
        .map_err(|e| UsageError(format!("{}: {e}", args.case.display())))?;
    let case = AttentionCase::from_json(&raw)?;
    let single_modality = case.plan.modality.windows(2).all(|w| w[0] == w[1]);

    match args.precision {
        PrecisionArg::F64 => run_attend(args, case, single_modality, 1e-9),
        PrecisionArg::F32 => run_attend(args, case.cast::<f32>(), single_modality, 1e-4),
    }
}

fn run_attend<T>(
    args: AttendArgs,
    case: AttentionCase<T>,
    single_modality: bool,
    tolerance: f64,
) -> Result<ExitCode, UsageError>
where
    T: num_traits::Float + serde::Serialize,
{
    let split = attend_split_detailed(&case)?;

    if args.check {
        let oracle = attend_reference(&case, AttendMode::Dipe)?;
        let mut max_diff = 0.0f64;
        for i in 0..case.n_tokens() {
            for h in 0..case.n_heads() {
                let dl = (oracle.lse[i][h] - split.merged.lse[i][h]).abs();
                max_diff = max_diff.max(dl.to_f64().unwrap());
                for (a, b) in oracle.output[i][h]
                    .iter()
                    .zip(split.merged.output[i][h].iter())
                {
                    max_diff = max_diff.max((*a - *b).abs().to_f64().unwrap());
                }
            }
        }
        let pass = max_diff <= tolerance;
        println!(
            "max |split - reference| = {max_diff:.3e} (tolerance {tolerance:.0e}): {}",
            if pass { "PASS" } else { "FAIL" }
        );
        if single_modality {
            let baseline = attend_reference(&case, AttendMode::Baseline)?;
            let identical = baseline == oracle;
            println!("single-modality case: anchored and baseline outputs identical: {identical}");
        }
        return Ok(if pass {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        });
    }

    let result = serde_json::json!({
        "output": split.merged.output,
        "lse": split.merged.lse,
        "alpha": split.alpha,
        "single_modality": single_modality,
    });
    write_out(&args.output, &(result.to_string() + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_decay(args: DecayArgs) -> Result<ExitCode, UsageError> {
    if args.step == 0 {
        return Err(UsageError("--step must be positive".into()));
    }
    let cfg = RopeConfig::new(args.dim, args.base)?;
    let mut csv = String::from("distance,bound\n");
    let mut d = 0;
    while d <= args.max_dist {
        csv.push_str(&format!("{d},{}\n", decay_bound(d, &cfg)));
        d += args.step;
    }
    write_out(&args.output, &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn parse_lengths(raw: &str) -> Result<Vec<usize>, UsageError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| UsageError(format!("bad length {s:?}")))
        })
        .collect()
}

fn parse_modes(raw: &str) -> Result<Vec<ProbeMode>, UsageError> {
    raw.split(',')
        .map(|s| match s.trim() {
            "vanilla" => Ok(ProbeMode::Vanilla),
            "mrope" => Ok(ProbeMode::Mrope),
            "dipe" => Ok(ProbeMode::Dipe),
            other => Err(UsageError(format!("unknown mode {other:?}"))),
        })
        .collect()
}

fn cmd_probe(args: ProbeArgs) -> Result<ExitCode, UsageError> {
    let cfg = ProbeConfig {
        seed: resolve_seed(args.seed)?,
        layers: args.layers,
        heads: args.heads,
        head_dim: args.head_dim,
        image_grid: parse_grid(&args.grid)?,
        question_len: args.question_len,
        distractor_lengths: parse_lengths(&args.lengths)?,
        modes: parse_modes(&args.modes)?,
        intra_image_mask: match args.intra_image {
            IntraImageArg::Causal => IntraImageMask::Causal,
            IntraImageArg::Full => IntraImageMask::Full,
        },
    };
    let report = match args.precision {
        PrecisionArg::F64 => run_probe::<f64>(&cfg, args.threads)?,
        PrecisionArg::F32 => run_probe::<f32>(&cfg, args.threads)?,
    };
    if let Some(path) = &args.json_out {
        let json = serde_json::to_string_pretty(&report)?;
        fs::write(path, json).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    }
    write_out(&args.output, &report_to_csv(&report))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, UsageError> {
    let seed = resolve_seed(args.seed)?;
    let outcomes = verify::run_all(seed);
    let mut all_passed = true;
    for o in &outcomes {
        println!(
            "{} {:<24} {}",
            if o.passed { "ok  " } else { "FAIL" },
            o.name,
            o.detail
        );
        all_passed &= o.passed;
    }
    println!(
        "{}/{} checks passed (seed {seed})",
        outcomes.iter().filter(|o| o.passed).count(),
        outcomes.len()
    );
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
