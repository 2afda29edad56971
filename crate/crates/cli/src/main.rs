//! `craspkit`: command-line front end for counting programs, temporal logic,
//! Diophantine encodings, fixed-point transformers and the experiments.
//!
//! Exit codes: 0 success, 1 property violated, 2 usage or parse error,
//! 3 resource guard exceeded.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crasp_core::depth2::reduce_depth2;
use crasp_core::diophantine::{compile_system, decode_witness, parse_system};
use crasp_core::families::{
    band_constancy_check, dyck_oracle, dyck_program, finite_identify, pairwise_length_complexity,
    separation_experiment, HypothesisSet,
};
use crasp_core::positive::{check_positive, compile_to_tl, decompose, PositiveError};
use crasp_core::syntax::disagreement_program;
use crasp_core::tl::{check_emptiness, distinguishing_string, TlError, TlProgram};
use crasp_core::transformer::{
    compile_positive_to_quotient_transformer, compile_positive_to_transformer,
    compile_transformer_to_positive, run_transformer, TransformerError, TransformerSpec,
};
use crasp_core::word::{parse_word, render_word, words_up_to};
use crasp_core::{
    accepts, evaluate, find_witness, measure, parse_program, Guard, GuardError, Program, VERSION,
};

#[derive(Parser)]
#[command(name = "craspkit", version, about = "Counting-program toolkit")]
struct Cli {
    /// Print a JSON report instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for searches and experiments; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Seed for sampled experiments.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a program and print it in canonical form.
    Parse { file: PathBuf },
    /// Size, depth, precision and girth.
    Measure { file: PathBuf },
    /// Evaluate a program on a word.
    Eval {
        file: PathBuf,
        word: String,
        /// Print every line's value at every position.
        #[arg(long)]
        trace: bool,
    },
    /// Shortest accepted word up to a length bound.
    Witness {
        file: PathBuf,
        #[arg(long, default_value_t = 12)]
        max_len: usize,
    },
    /// Decide emptiness of a temporal program (or a positive program, after compilation).
    Empty { file: PathBuf },
    /// Decide equivalence of two positive programs; other programs get a bounded search.
    Equiv {
        left: PathBuf,
        right: PathBuf,
        /// Search bound used when a program is outside the positive fragment.
        #[arg(long, default_value_t = 12)]
        max_len: usize,
    },
    /// Compile a positive program to temporal logic.
    CompileTl { file: PathBuf },
    /// Rewrite a positive program into single-count thresholds.
    Decompose { file: PathBuf },
    /// Reduce a program to counting depth at most 2 over an extended alphabet.
    Depth2 { file: PathBuf },
    /// Encode a Diophantine system and search for a solution witness.
    FromDioph {
        file: PathBuf,
        #[arg(long, default_value_t = 60)]
        search: usize,
        /// Also print the encoded program.
        #[arg(long)]
        emit: bool,
    },
    /// Run a transformer on a word.
    TfRun {
        spec: PathBuf,
        word: String,
        #[arg(long)]
        trace: bool,
    },
    /// Compile a positive program to a transformer.
    TfCompile {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = TfVariant::Weight)]
        variant: TfVariant,
    },
    /// Extract a positive program from a weight-rounded transformer.
    TfExtract { spec: PathBuf },
    /// Run an experiment.
    Experiment {
        #[command(subcommand)]
        kind: Experiment,
    },
    /// Identify a target among hypotheses from words up to a length.
    Identify(IdentifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TfVariant {
    Weight,
    Quotient,
}

#[derive(Subcommand)]
enum Experiment {
    /// Search each restricted program for a disagreement with bounded Dyck.
    Separation {
        #[arg(long, default_value_t = 1)]
        k: u32,
        #[arg(long, default_value_t = 2)]
        t: i64,
        /// Programs to sample when the grid is larger than this.
        #[arg(long, default_value_t = 200)]
        budget: usize,
    },
    /// Measure how inner-formula counts stay near 0 or near the position on bounded Dyck words.
    Band {
        #[arg(long, default_value_t = 1)]
        k: u32,
        /// Inner formulas as `alpha,beta`; repeat for several.
        #[arg(long = "psi", value_parser = parse_pair, required = true)]
        psis: Vec<(i64, i64)>,
        #[arg(long, default_value_t = 2)]
        min_len: usize,
        #[arg(long, default_value_t = 40)]
        max_len: usize,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Compare the bounded-Dyck program with a stack oracle on every word up to a length.
    Dyck {
        #[arg(long, default_value_t = 4)]
        k: u32,
        #[arg(long, default_value_t = 12)]
        max_len: usize,
        /// Print the program instead of checking it.
        #[arg(long)]
        emit: bool,
    },
}

#[derive(Args)]
struct IdentifyArgs {
    /// Hypothesis programs, in order.
    hypotheses: Vec<PathBuf>,
    /// Use the exact-count family `#[Qa] = 1 .. n` as hypotheses.
    #[arg(long, conflicts_with = "hypotheses")]
    exact_counts: Option<u64>,
    /// Target: a program file, or a 1-based index into the hypotheses.
    #[arg(long)]
    target: String,
    /// Training length bound.
    #[arg(long)]
    n: usize,
    /// Search bound for pairwise distinguishing words.
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    /// Size budget; defaults to the largest hypothesis.
    #[arg(long)]
    budget: Option<u64>,
}

fn parse_pair(s: &str) -> Result<(i64, i64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `alpha,beta`")?;
    Ok((
        a.trim().parse().map_err(|e| format!("{e}"))?,
        b.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

enum Failure {
    Usage(String),
    Guard(String),
}

impl From<GuardError> for Failure {
    fn from(e: GuardError) -> Self {
        Failure::Guard(e.to_string())
    }
}

impl From<PositiveError> for Failure {
    fn from(e: PositiveError) -> Self {
        match e {
            PositiveError::Guard(g) => Failure::Guard(g.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<TlError> for Failure {
    fn from(e: TlError) -> Self {
        match e {
            TlError::Guard(g) => Failure::Guard(g.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<TransformerError> for Failure {
    fn from(e: TransformerError) -> Self {
        match e {
            TransformerError::Guard(g) => Failure::Guard(g.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

/// Result of a command: text, JSON body and whether the checked property held.
struct Report {
    text: String,
    json: Value,
    ok: bool,
}

impl Report {
    fn ok(text: impl Into<String>, json: Value) -> Report {
        Report {
            text: text.into(),
            json,
            ok: true,
        }
    }

    fn violated(text: impl Into<String>, json: Value) -> Report {
        Report {
            text: text.into(),
            json,
            ok: false,
        }
    }
}

struct Ctx {
    jobs: usize,
    seed: u64,
    guard: Guard,
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Program, Failure> {
    parse_program(&read(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_spec(path: &Path) -> Result<TransformerSpec, Failure> {
    TransformerSpec::from_json(&read(path)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn word_arg(alphabet: &[String], text: &str) -> Result<Vec<usize>, Failure> {
    parse_word(alphabet, text).map_err(|e| Failure::Usage(e.to_string()))
}

fn show(alphabet: &[String], w: &[usize]) -> String {
    render_word(alphabet, w)
}

fn run(cmd: Command, ctx: &Ctx) -> Result<Report, Failure> {
    match cmd {
        Command::Parse { file } => {
            let p = load(&file)?;
            Ok(Report::ok(
                p.to_string().trim_end().to_string(),
                json!({ "program": p.to_string(), "lines": p.lines.len(), "alphabet": p.alphabet }),
            ))
        }
        Command::Measure { file } => {
            let m = measure(&load(&file)?);
            Ok(Report::ok(
                format!(
                    "size {} depth {} precision {} girth {}",
                    m.size, m.depth, m.precision, m.girth
                ),
                json!(m),
            ))
        }
        Command::Eval { file, word, trace } => {
            let p = load(&file)?;
            let w = word_arg(&p.alphabet, &word)?;
            let t = evaluate(&p, &w);
            let verdict = if t.accepted() { "accepted" } else { "rejected" };
            let mut text = verdict.to_string();
            if trace {
                for (name, vals) in t.line_names.iter().zip(&t.line_values) {
                    let row: String = vals.iter().map(|&b| if b { '1' } else { '0' }).collect();
                    let _ = write!(text, "\n{name}: {row}");
                }
            }
            Ok(Report::ok(
                text,
                json!({ "word": word, "accepted": t.accepted(), "lines": t.line_names, "values": t.line_values, "counts": t.counts }),
            ))
        }
        Command::Witness { file, max_len } => {
            let p = load(&file)?;
            let r = find_witness(&p, max_len, ctx.jobs);
            let body = json!({
                "witness": r.witness.as_ref().map(|w| show(&p.alphabet, w)),
                "length": r.witness.as_ref().map(Vec::len),
                "max_len": max_len,
                "rank": r.rank,
                "states_explored": r.states_explored,
                "exhausted_at": r.exhausted_at,
            });
            match &r.witness {
                Some(w) => Ok(Report::ok(show(&p.alphabet, w), body)),
                None => Ok(Report::violated(format!("no witness ≤ {max_len}"), body)),
            }
        }
        Command::Empty { file } => {
            let p = load(&file)?;
            let tl = match TlProgram::new(p.clone()) {
                Ok(tl) => tl,
                Err(TlError::HasCounting(_)) => compile_to_tl(&check_positive(&p)?, &ctx.guard)?,
                Err(e) => return Err(e.into()),
            };
            let c = check_emptiness(&tl, ctx.jobs);
            let body = json!({
                "empty": c.empty,
                "witness": c.witness.as_ref().map(|w| show(&p.alphabet, w)),
                "search_bound": c.search_bound,
                "temporal_subformula_count": c.temporal_subformula_count,
            });
            match &c.witness {
                None => Ok(Report::ok(
                    format!("empty (bound {})", c.search_bound),
                    body,
                )),
                Some(w) => Ok(Report::violated(
                    format!("non-empty: {}", show(&p.alphabet, w)),
                    body,
                )),
            }
        }
        Command::Equiv {
            left,
            right,
            max_len,
        } => {
            let (p, q) = (load(&left)?, load(&right)?);
            if p.alphabet != q.alphabet {
                return Err(Failure::Usage(
                    "the programs use different alphabets".into(),
                ));
            }
            match (check_positive(&p), check_positive(&q)) {
                (Ok(pp), Ok(qq)) => {
                    let c = distinguishing_string(&pp, &qq, &ctx.guard, ctx.jobs)?;
                    let body = json!({
                        "equivalent": c.equivalent,
                        "decided": true,
                        "witness": c.witness.as_ref().map(|w| show(&p.alphabet, w)),
                        "search_bound": c.search_bound,
                    });
                    match &c.witness {
                        None => Ok(Report::ok(
                            format!("equivalent (bound {})", c.search_bound),
                            body,
                        )),
                        Some(w) => Ok(Report::violated(
                            format!("distinguished by {}", show(&p.alphabet, w)),
                            body,
                        )),
                    }
                }
                _ => {
                    let d = disagreement_program(&p, &q).map_err(Failure::Usage)?;
                    let r = find_witness(&d, max_len, ctx.jobs);
                    let body = json!({
                        "equivalent": r.witness.is_none(),
                        "decided": false,
                        "witness": r.witness.as_ref().map(|w| show(&p.alphabet, w)),
                        "search_bound": max_len,
                    });
                    match &r.witness {
                        None => Ok(Report::ok(
                            format!("no difference up to length {max_len} (bounded search)"),
                            body,
                        )),
                        Some(w) => Ok(Report::violated(
                            format!("distinguished by {}", show(&p.alphabet, w)),
                            body,
                        )),
                    }
                }
            }
        }
        Command::CompileTl { file } => {
            let tl = compile_to_tl(&check_positive(&load(&file)?)?, &ctx.guard)?;
            let text = tl.program().to_string();
            Ok(Report::ok(
                text.trim_end().to_string(),
                json!({ "program": text }),
            ))
        }
        Command::Decompose { file } => {
            let d = decompose(&check_positive(&load(&file)?)?, &ctx.guard)?;
            let text = d.program().to_string();
            Ok(Report::ok(
                text.trim_end().to_string(),
                json!({ "program": text, "measure": measure(d.program()) }),
            ))
        }
        Command::Depth2 { file } => {
            let r = reduce_depth2(&load(&file)?, &ctx.guard)?;
            let text = r.program.to_string();
            Ok(Report::ok(
                text.trim_end().to_string(),
                json!({
                    "program": text,
                    "depth": r.depth(),
                    "alphabet": r.alphabet,
                    "eliminated": r.eliminated,
                    "constraints": r.constraints,
                }),
            ))
        }
        Command::FromDioph { file, search, emit } => {
            let sys = parse_system(&read(&file)?).map_err(|e| Failure::Usage(e.to_string()))?;
            let p = compile_system(&sys).map_err(|e| Failure::Usage(e.to_string()))?;
            let r = find_witness(&p, search, ctx.jobs);
            let equations: Vec<String> = sys.equations.iter().map(|e| e.to_string()).collect();
            let mut text = String::new();
            if emit {
                let _ = writeln!(text, "{}", p.to_string().trim_end());
            }
            let mut body = json!({
                "equations": equations,
                "search": search,
                "program_lines": p.lines.len(),
                "program": emit.then(|| p.to_string()),
            });
            match &r.witness {
                None => {
                    text.push_str(&format!("no witness ≤ {search}"));
                    body["witness"] = Value::Null;
                    Ok(Report::violated(text, body))
                }
                Some(w) => {
                    let d = decode_witness(&sys, &p.alphabet, w)
                        .map_err(|e| Failure::Usage(e.to_string()))?;
                    let values: Vec<String> =
                        d.values.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    text.push_str(&format!(
                        "solution {} (witness length {})",
                        values.join(" "),
                        w.len()
                    ));
                    body["witness"] = json!(show(&p.alphabet, w));
                    body["decoded"] = json!(d);
                    if d.consistent && d.satisfies {
                        Ok(Report::ok(text, body))
                    } else {
                        text.push_str("\nwitness does not decode to a solution");
                        Ok(Report::violated(text, body))
                    }
                }
            }
        }
        Command::TfRun { spec, word, trace } => {
            let t = load_spec(&spec)?;
            let w = word_arg(&t.alphabet, &word)?;
            let tr = run_transformer(&t, &w)?;
            let accepted = !w.is_empty() && tr.accepted();
            let outputs: Vec<String> = tr
                .outputs
                .iter()
                .map(|m| t.format.saturate(*m as i128).to_string())
                .collect();
            let mut text = format!(
                "{}\noutputs: {}",
                if accepted { "accepted" } else { "rejected" },
                outputs.join(" ")
            );
            if trace {
                let _ = write!(
                    text,
                    "\n{}",
                    serde_json::to_string_pretty(&tr).expect("serializable")
                );
            }
            Ok(Report::ok(
                text,
                json!({ "word": word, "accepted": accepted, "trace": tr }),
            ))
        }
        Command::TfCompile { file, variant } => {
            let p = check_positive(&load(&file)?)?;
            let t = match variant {
                TfVariant::Weight => compile_positive_to_transformer(&p, &ctx.guard)?,
                TfVariant::Quotient => compile_positive_to_quotient_transformer(&p, &ctx.guard)?,
            };
            Ok(Report::ok(
                t.to_json(),
                serde_json::to_value(&t).expect("serializable"),
            ))
        }
        Command::TfExtract { spec } => {
            let p = compile_transformer_to_positive(&load_spec(&spec)?, &ctx.guard)?;
            let text = p.program().to_string();
            Ok(Report::ok(
                text.trim_end().to_string(),
                json!({ "program": text, "measure": measure(p.program()) }),
            ))
        }
        Command::Experiment { kind } => experiment(kind, ctx),
        Command::Identify(args) => identify(args, ctx),
    }
}

fn experiment(kind: Experiment, ctx: &Ctx) -> Result<Report, Failure> {
    match kind {
        Experiment::Separation { k, t, budget } => {
            if !(1..=3).contains(&k) || !(1..=3).contains(&t) {
                return Err(Failure::Usage("separation runs at k, T in 1..=3".into()));
            }
            let r = separation_experiment(k, t, budget, ctx.seed, ctx.jobs)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let mut text = format!(
                "k={k} T={t}: {} programs ({}), {} survivors",
                r.programs,
                if r.exhaustive {
                    "exhaustive"
                } else {
                    "sampled"
                },
                r.survivors
            );
            for x in r.results.iter().filter(|x| x.witness.is_none()) {
                let _ = write!(text, "\nsurvivor: {:?}", x.program);
            }
            let ok = r.survivors == 0;
            let body = json!(r);
            Ok(if ok {
                Report::ok(text, body)
            } else {
                Report::violated(text, body)
            })
        }
        Experiment::Band {
            k,
            psis,
            min_len,
            max_len,
            samples,
        } => {
            if k == 0 {
                return Err(Failure::Usage("k must be at least 1".into()));
            }
            match band_constancy_check(&psis, k, min_len, max_len, samples, ctx.seed) {
                Ok(r) => {
                    let mut text = format!("k={k}, {} strings", r.strings_checked);
                    for p in &r.psis {
                        let _ = write!(
                            text,
                            "\n{} #a > {} #true: {:?}, observed {}, bound {}",
                            p.alpha,
                            p.beta,
                            p.regime,
                            p.observed,
                            p.geometric_bound
                                .map_or("none".to_string(), |b| b.to_string())
                        );
                    }
                    Ok(Report::ok(text, json!(r)))
                }
                Err(v) => Ok(Report::violated(v.to_string(), json!({ "violation": v }))),
            }
        }
        Experiment::Dyck { k, max_len, emit } => {
            if k == 0 {
                return Err(Failure::Usage("k must be at least 1".into()));
            }
            let p = dyck_program(k);
            if emit {
                let text = p.to_string();
                return Ok(Report::ok(
                    text.trim_end().to_string(),
                    json!({ "program": text, "measure": measure(&p) }),
                ));
            }
            let words: Vec<Vec<usize>> = words_up_to(2, max_len).collect();
            let mismatch = words.iter().find(|w| accepts(&p, w) != dyck_oracle(k, w));
            let m = measure(&p);
            let body = json!({
                "k": k,
                "max_len": max_len,
                "words": words.len(),
                "measure": m,
                "mismatch": mismatch.map(|w| show(&p.alphabet, w)),
            });
            match mismatch {
                None => Ok(Report::ok(
                    format!(
                        "{} words agree; depth {} girth {} precision {}",
                        words.len(),
                        m.depth,
                        m.girth,
                        m.precision
                    ),
                    body,
                )),
                Some(w) => Ok(Report::violated(
                    format!("mismatch on {}", show(&p.alphabet, w)),
                    body,
                )),
            }
        }
    }
}

fn identify(args: IdentifyArgs, ctx: &Ctx) -> Result<Report, Failure> {
    let h = match args.exact_counts {
        Some(n) => HypothesisSet::exact_counts(1..=n),
        None => {
            if args.hypotheses.is_empty() {
                return Err(Failure::Usage(
                    "give hypothesis files or --exact-counts".into(),
                ));
            }
            let programs = args
                .hypotheses
                .iter()
                .map(|f| Ok((f.display().to_string(), load(f)?)))
                .collect::<Result<Vec<_>, Failure>>()?;
            let budget = args.budget.unwrap_or_else(|| {
                programs
                    .iter()
                    .map(|(_, p)| measure(p).size)
                    .max()
                    .unwrap_or(0)
            });
            HypothesisSet::new(programs, budget).map_err(|e| Failure::Usage(e.to_string()))?
        }
    };
    let target = match args.target.parse::<usize>() {
        Ok(i) if (1..=h.len()).contains(&i) => h.hypotheses[i - 1].program.clone(),
        Ok(i) => {
            return Err(Failure::Usage(format!(
                "target index {i} is outside 1..={}",
                h.len()
            )))
        }
        Err(_) => load(Path::new(&args.target))?,
    };
    if target.alphabet != h.alphabet {
        return Err(Failure::Usage(
            "target alphabet differs from the hypotheses".into(),
        ));
    }
    let pairs = pairwise_length_complexity(&h, args.max_len, ctx.jobs);
    let rep = match finite_identify(&h, &|w: &[usize]| accepts(&target, w), args.n) {
        Ok(r) => r.with_guarantee(&pairs),
        Err(e) => {
            return Ok(Report::violated(
                e.to_string(),
                json!({ "error": e.to_string() }),
            ))
        }
    };
    let text = format!(
        "chose {} ({} consistent{}); length complexity {}; {}",
        rep.chosen_name,
        rep.consistent.len(),
        if rep.ambiguous { ", ambiguous" } else { "" },
        pairs
            .complexity
            .map_or("unknown".to_string(), |c| c.to_string()),
        if rep.guaranteed == Some(true) {
            "identification guaranteed"
        } else {
            "not guaranteed: training length below the length complexity"
        }
    );
    Ok(Report::ok(
        text,
        json!({ "identify": rep, "pairwise": pairs }),
    ))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let guard = match Guard::from_env() {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: CRASPKIT_GUARD: {e}");
            return ExitCode::from(2);
        }
    };
    let ctx = Ctx {
        jobs: cli.jobs.max(1),
        seed: cli.seed,
        guard,
    };
    let json_out = cli.json;
    let name = command_name(&cli.command);
    match run(cli.command, &ctx) {
        Ok(r) => {
            if json_out {
                let doc = json!({
                    "tool": "craspkit",
                    "version": VERSION,
                    "seed": ctx.seed,
                    "command": name,
                    "ok": r.ok,
                    "result": r.json,
                });
                println!(
                    "{}",
                    serde_json::to_string_pretty(&doc).expect("serializable")
                );
            } else {
                println!("{}", r.text);
            }
            ExitCode::from(if r.ok { 0 } else { 1 })
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Guard(msg)) => {
            eprintln!("resource guard: {msg}");
            ExitCode::from(3)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Parse { .. } => "parse",
        Command::Measure { .. } => "measure",
        Command::Eval { .. } => "eval",
        Command::Witness { .. } => "witness",
        Command::Empty { .. } => "empty",
        Command::Equiv { .. } => "equiv",
        Command::CompileTl { .. } => "compile-tl",
        Command::Decompose { .. } => "decompose",
        Command::Depth2 { .. } => "depth2",
        Command::FromDioph { .. } => "from-dioph",
        Command::TfRun { .. } => "tf-run",
        Command::TfCompile { .. } => "tf-compile",
        Command::TfExtract { .. } => "tf-extract",
        Command::Experiment { .. } => "experiment",
        Command::Identify(_) => "identify",
    }
}
