use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use opaqnet::baseline::{bench, bench_plot_json, write_bench_csv, BenchOptions};
use opaqnet::certificates::{check_against_report, emit_pair, PosteriorCertificate};
use opaqnet::engine::ExploreOptions;
use opaqnet::enforcement::{
    self, evaluate, model_architecture, parse_architecture, synthesize, ControlledArchitecture, EnforcementPolicy,
    SynthesisOptions, SynthesisOutcome,
};
use opaqnet::model::{parse_model, serialize_model, ModelError, NetModel};
use opaqnet::unfolding::{Pomset, TargetFamily};
use opaqnet::{bundled, oracle, verifier};
use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

const EXIT_ERROR: u8 = 1;
const EXIT_VIOLATION: u8 = 2;
const EXIT_SYNTHESIS_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "opaqnet", version, about = "Opacity verification and enforcement for quantum Petri nets")]
struct Cli {
    /// Worker threads for parallel exploration.
    #[arg(long, global = true, env = "OPAQNET_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Model file (JSON).
    model: PathBuf,
    /// Target name from the model, or a chain such as `req<fail`. Repeatable;
    /// defaults to every target of the model.
    #[arg(long = "target", short = 't')]
    targets: Vec<String>,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Evaluate posteriors after reset-class transitions too.
    #[arg(long)]
    no_cut: bool,
    #[arg(long, default_value_t = 10_000)]
    tau_bound: usize,
    /// Directory for output files; reports go to standard output otherwise.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check structural and epsilon-opacity.
    Verify(Common),
    /// Synthesize a disabling and masking policy.
    Enforce {
        #[command(flatten)]
        common: Common,
        /// Architecture sidecar overriding the model's own section.
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        max_iterations: usize,
        #[arg(long, default_value_t = 2)]
        partial_delta_cap: usize,
    },
    /// Time the interleaving baseline against quotient exploration.
    Bench {
        /// Model file; the bundled repeater by default.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,4,8")]
        m: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long, default_value_t = 120)]
        timeout_secs: u64,
        #[arg(long, short = 'o', default_value = ".")]
        out: PathBuf,
    },
    /// Run randomized equivalence suites.
    Oracle {
        #[arg(long, value_enum, default_value_t = Suite::Programs)]
        suite: Suite,
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 4)]
        max_qubits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Emit posterior certificates for each target and secrecy class.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Certify the closed loop under this policy.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        arch: Option<PathBuf>,
    },
    /// Check a certificate against a verification report.
    CheckCert { certificate: PathBuf, report: PathBuf },
    /// Print a model in canonical form.
    Fmt {
        model: PathBuf,
        /// Exit with status 2 if the file is not already canonical.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        in_place: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Programs,
    Classical,
    Concurrency,
    Interleaving,
    All,
}

struct Loaded {
    model: NetModel,
    sha256: String,
}

fn load(path: &Path) -> Result<Loaded> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let text = String::from_utf8(bytes.clone()).context("model file is not UTF-8")?;
    let model = parse_model(&text).map_err(|e| match e {
        ModelError::Validation(ds) => {
            anyhow!("{}: invalid model\n{}", path.display(), ds.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))
        }
        other => anyhow!("{}: {other}", path.display()),
    })?;
    Ok(Loaded { model, sha256: opaqnet::content_sha256(&bytes) })
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))
}

/// Resolves `--target` arguments against the model's named targets.
fn family(m: &NetModel, args: &[String]) -> Result<TargetFamily> {
    let named = TargetFamily::from_specs(&m.targets)?;
    if args.is_empty() {
        if named.targets.is_empty() {
            bail!("the model declares no targets; pass --target");
        }
        return Ok(named);
    }
    let mut out = Vec::new();
    for a in args {
        if let Some(t) = named.get(a) {
            out.push((t.name.clone(), t.pomset.clone()));
            continue;
        }
        let labels: Vec<&str> = a.split(['<', '≺']).map(str::trim).collect();
        if labels.iter().any(|l| l.is_empty()) {
            bail!("bad target `{a}`");
        }
        for l in &labels {
            if !m.alphabet.contains(*l) {
                bail!("target `{a}`: `{l}` is neither a target name nor an observable label");
            }
        }
        out.push((a.clone(), Pomset::chain(&labels)));
    }
    Ok(TargetFamily::new(out)?)
}

fn explore_options(c: &Common) -> Result<ExploreOptions> {
    if !(0.0..=1.0).contains(&c.epsilon) {
        bail!("epsilon must lie in [0, 1]");
    }
    Ok(ExploreOptions { cut: !c.no_cut, tau_bound: c.tau_bound, ..Default::default() })
}

fn emit(out: &Option<PathBuf>, file: &str, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v)? + "\n";
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(file);
            fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn architecture(m: &NetModel, arch: &Option<PathBuf>) -> Result<ControlledArchitecture> {
    Ok(match arch {
        Some(p) => parse_architecture(m, &read_json(p)?)?,
        None => model_architecture(m)?,
    })
}

fn run_verify(c: &Common) -> Result<u8> {
    let l = load(&c.model)?;
    let fam = family(&l.model, &c.targets)?;
    let mut rep = verifier::report(&l.model, &fam, c.epsilon, &explore_options(c)?)?;
    rep.model_sha256 = Some(l.sha256);
    emit(&c.out, "report.json", &rep.to_json())?;
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "structurally opaque: {}, max leakage {} (epsilon {})",
        rep.structural_opaque,
        rep.max_leakage(),
        c.epsilon
    );
    Ok(if rep.passed() { 0 } else { EXIT_VIOLATION })
}

fn run_enforce(c: &Common, arch: &Option<PathBuf>, max_iterations: usize, partial_delta_cap: usize) -> Result<u8> {
    let l = load(&c.model)?;
    let fam = family(&l.model, &c.targets)?;
    let arch = architecture(&l.model, arch)?;
    let sopts = SynthesisOptions { epsilon: c.epsilon, max_iterations, partial_delta_cap };
    let outcome = synthesize(&l.model, &arch, &fam, sopts, &explore_options(c)?)?;
    let audit = outcome.audit_json();
    let (code, policy, report) = match outcome {
        SynthesisOutcome::Success(s) => {
            let mut rep = s.report;
            rep.model_sha256 = Some(l.sha256);
            eprintln!("policy found, cost {}", enforcement::policy_cost(&s.policy, &arch));
            (0, s.policy.to_json(), rep.to_json())
        }
        SynthesisOutcome::Failure(f) => {
            eprintln!("synthesis failed: {}", f.reason);
            (EXIT_SYNTHESIS_FAILED, f.policy.to_json(), Value::Null)
        }
    };
    if c.out.is_some() {
        emit(&c.out, "policy.json", &policy)?;
        emit(&c.out, "audit.json", &audit)?;
        if !report.is_null() {
            emit(&c.out, "report.json", &report)?;
        }
    } else {
        emit(&None, "", &serde_json::json!({"policy": policy, "audit": audit, "report": report}))?;
    }
    Ok(code)
}

fn run_bench(model: &Option<PathBuf>, ms: &[usize], repetitions: usize, timeout: u64, out: &Path) -> Result<u8> {
    let m = match model {
        Some(p) => load(p)?.model,
        None => bundled::repeater(),
    };
    let opts = BenchOptions { repetitions, timeout: Duration::from_secs(timeout) };
    let recs = bench(&m, bundled::em_target, ms, opts)?;
    fs::create_dir_all(out)?;
    write_bench_csv(&out.join("bench.csv"), &recs)?;
    fs::write(out.join("bench_plot.json"), serde_json::to_string_pretty(&bench_plot_json(&recs))? + "\n")?;
    println!("{:>4} {:>8} {:>16} {:>12} {:>9}", "m", "n_seq", "interleaving_ms", "quotient_ms", "speedup");
    for r in &recs {
        println!(
            "{:>4} {:>8} {:>16.3} {:>12.3} {:>9.2}",
            r.m,
            r.n_seq,
            r.t_interleaving.as_secs_f64() * 1e3,
            r.t_quotient.as_secs_f64() * 1e3,
            r.speedup
        );
    }
    let worst = recs.iter().map(|r| r.max_deviation).fold(0.0, f64::max);
    if worst > oracle::DENSE_TOLERANCE {
        eprintln!("aggregates disagree by {worst:e}");
        return Ok(EXIT_VIOLATION);
    }
    Ok(0)
}

fn run_oracle(suite: Suite, cases: usize, max_qubits: usize, seed: u64) -> Result<u8> {
    let mut results = Vec::new();
    if matches!(suite, Suite::Programs | Suite::All) {
        results.push(oracle::program_suite(seed, cases, max_qubits));
    }
    if matches!(suite, Suite::Classical | Suite::All) {
        results.push(oracle::classical_suite(seed, cases));
    }
    if matches!(suite, Suite::Concurrency | Suite::All) {
        results.push(oracle::concurrency_suite(seed, cases));
    }
    if matches!(suite, Suite::Interleaving | Suite::All) {
        results.push(oracle::interleaving_suite(seed, cases));
    }
    let mut ok = true;
    for r in &results {
        println!("{}", r.summary());
        for (case, why) in r.failures.iter().take(5) {
            println!("  case {case}: {why}");
        }
        ok &= r.ok();
    }
    Ok(if ok { 0 } else { EXIT_VIOLATION })
}

fn run_certify(c: &Common, policy: &Option<PathBuf>, arch: &Option<PathBuf>) -> Result<u8> {
    let l = load(&c.model)?;
    let fam = family(&l.model, &c.targets)?;
    let opts = explore_options(c)?;
    let aggs = match policy {
        Some(p) => {
            let arch = architecture(&l.model, arch)?;
            let pol = EnforcementPolicy::from_json(&read_json(p)?)?;
            evaluate(&l.model, &arch, &pol, &fam, c.epsilon, &opts)?.aggregates
        }
        None => {
            let x = verifier::explore(&l.model, &fam, &opts)?;
            verifier::aggregate(&x, &l.model, &fam)?
        }
    };
    let certs: Vec<Value> = aggs
        .iter()
        .flat_map(|a| emit_pair(&l.model, a))
        .map(|cert| cert.to_json())
        .collect();
    if c.out.is_some() {
        for cert in &certs {
            let name = format!("{}.{}.cert.json", sanitize(cert["observation"].as_str().unwrap_or("O")), cert["secret_bit"]);
            emit(&c.out, &name, cert)?;
        }
    } else {
        emit(&None, "", &Value::Array(certs))?;
    }
    Ok(0)
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

fn run_check_cert(cert: &Path, report: &Path) -> Result<u8> {
    let c = PosteriorCertificate::from_json(&read_json(cert)?)?;
    let ok = check_against_report(&c, &read_json(report)?)?;
    println!("{}", if ok { "certificate matches" } else { "certificate does not match" });
    Ok(if ok { 0 } else { EXIT_VIOLATION })
}

fn run_fmt(path: &Path, check: bool, in_place: bool) -> Result<u8> {
    let original = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let l = load(path)?;
    let canonical = serialize_model(&l.model);
    if check {
        return Ok(if canonical == original { 0 } else { EXIT_VIOLATION });
    }
    if in_place {
        fs::write(path, canonical)?;
    } else {
        print!("{canonical}");
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            bail!("--jobs must be positive");
        }
        opaqnet::configure_jobs(n).map_err(|e| anyhow!(e))?;
    }
    match cli.command {
        Command::Verify(c) => run_verify(&c),
        Command::Enforce { common, arch, max_iterations, partial_delta_cap } => {
            run_enforce(&common, &arch, max_iterations, partial_delta_cap)
        }
        Command::Bench { model, m, repetitions, timeout_secs, out } => {
            run_bench(&model, &m, repetitions, timeout_secs, &out)
        }
        Command::Oracle { suite, cases, max_qubits, seed } => run_oracle(suite, cases, max_qubits, seed),
        Command::Certify { common, policy, arch } => run_certify(&common, &policy, &arch),
        Command::CheckCert { certificate, report } => run_check_cert(&certificate, &report),
        Command::Fmt { model, check, in_place } => run_fmt(&model, check, in_place),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
