mod args;

use std::ffi::OsString;
use std::io::{IsTerminal, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;
use serde_json::json;

use args::{CiArgs, Cli, Command, DataArgs, SelectArgs, SimulateArgs, TestArgs, TestingArgs};
use daar::confidence::{invert, linear_grid};
use daar::data::ingest_csv;
use daar::projection::leverage_diagnostics;
use daar::regularizer::{gamma_star, scan_lambda};
use daar::simulation::{prepare_design, run_power_curve, run_size_experiment, DgpSpec, Family, RejectionTable, SCHEMA_VERSION};
use daar::{Design, Error, LambdaChoice, Method, MonteCarloConfig, RunConfig, TestSuite};

const SUBCOMMANDS: [&str; 4] = ["test", "ci", "select-lambda", "simulate"];

/// A failure with its exit code: 2 for usage and configuration, 1 otherwise.
struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::InvalidConfig(_)) { 2 } else { 1 };
        Failure { code, kind: e.kind().to_string(), message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, kind: "usage".into(), message: message.into() }
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let argv = match with_config(argv) {
        Ok(a) => a,
        Err(f) => return report(f),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(usage(e.to_string().trim_end().to_string())),
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            return report(usage("--threads must be at least 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            return report(Failure { code: 1, kind: "threads".into(), message: e.to_string() });
        }
    }
    let outcome = match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Ci(a) => cmd_ci(a),
        Command::SelectLambda(a) => cmd_select_lambda(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    let body = json!({
        "schema_version": SCHEMA_VERSION,
        "error": { "kind": f.kind, "message": f.message },
    });
    eprintln!("{body}");
    ExitCode::from(f.code)
}

/// Splices `--key=value` pairs from the `--config` file in right after the
/// subcommand, so flags given on the command line override them.
fn with_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if s == "--config" {
            path = argv.get(i + 1).map(|p| p.to_string_lossy().into_owned());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("cannot read config `{path}`: {e}")))?;
    let table: toml::Table = text.parse().map_err(|e| usage(format!("config `{path}`: {e}")))?;
    let mut extra = Vec::new();
    for (key, value) in table {
        if key == "config" {
            return Err(usage("config files cannot include other config files"));
        }
        let flag = format!("--{}", key.replace('_', "-"));
        let rendered = match value {
            toml::Value::Boolean(true) => Some(flag),
            toml::Value::Boolean(false) => None,
            toml::Value::String(s) => Some(format!("{flag}={s}")),
            toml::Value::Integer(i) => Some(format!("{flag}={i}")),
            toml::Value::Float(f) => Some(format!("{flag}={f}")),
            toml::Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|v| match v {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                Some(format!("{flag}={}", parts.join(",")))
            }
            _ => return Err(usage(format!("config key `{key}` must be a scalar or a list"))),
        };
        extra.extend(rendered.map(OsString::from));
    }
    let at = argv
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .ok_or_else(|| usage("no subcommand given"))?;
    argv.splice(at + 1..at + 1, extra);
    Ok(argv)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n")).map_err(|e| Error::Io(format!("{}: {e}", p.display())).into()),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| Error::from(e).into())
        }
    }
}

fn load(data: &DataArgs) -> Result<Design, Failure> {
    let raw = ingest_csv(&data.data, &data.roles())?;
    Ok(prepare_design(&raw)?)
}

fn run_config(t: &TestingArgs) -> Result<RunConfig, Failure> {
    let lambda = match (t.lambda, t.lambda_fallback) {
        (Some(_), true) => return Err(usage("--lambda and --lambda-fallback are mutually exclusive")),
        (Some(l), false) => LambdaChoice::Fixed(l),
        (None, true) => LambdaChoice::SelectOrZero,
        (None, false) => LambdaChoice::Select,
    };
    if !(t.alpha > 0.0 && t.alpha < 1.0) {
        return Err(usage(format!("--alpha must lie in (0, 1), got {}", t.alpha)));
    }
    if t.draws == 0 {
        return Err(usage("--draws must be at least 1"));
    }
    Ok(RunConfig { alpha: t.alpha, draws: t.draws, weight_law: t.weights.into(), seed: t.seed, lambda })
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    n: usize,
    k: usize,
    #[serde(flatten)]
    body: &'a T,
}

fn cmd_test(a: &TestArgs) -> Result<(), Failure> {
    let cfg = run_config(&a.testing)?;
    let design = load(&a.data)?;
    let suite = TestSuite::new(&design, cfg);
    let result = suite.run(a.testing.method, a.beta0)?;
    let body = Versioned { schema_version: SCHEMA_VERSION, n: design.n(), k: design.k(), body: &result };
    write_output(a.testing.out.as_deref(), &serde_json::to_string_pretty(&body).expect("serializes"))
}

fn cmd_ci(a: &CiArgs) -> Result<(), Failure> {
    let cfg = run_config(&a.testing)?;
    let grid = linear_grid(a.grid_lo, a.grid_hi, a.grid_points).map_err(|e| usage(e.to_string()))?;
    let design = load(&a.data)?;
    let suite = TestSuite::new(&design, cfg);
    let set = invert(&suite, a.testing.method, &grid)?;
    if let Some(path) = &a.csv {
        let mut text = String::from("beta0,accepted\n");
        for (b, acc) in set.grid.iter().zip(&set.accepted) {
            text.push_str(&format!("{b},{acc}\n"));
        }
        std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    let body = Versioned { schema_version: SCHEMA_VERSION, n: design.n(), k: design.k(), body: &set };
    write_output(a.testing.out.as_deref(), &serde_json::to_string_pretty(&body).expect("serializes"))
}

fn cmd_select_lambda(a: &SelectArgs) -> Result<(), Failure> {
    let design = load(&a.data)?;
    let f = design.factors();
    let sel = scan_lambda(f, a.grid_size)?;
    let lambda = sel.lambda.ok_or(Error::DegenerateInstruments { theta_bar: sel.theta_bar })?;
    let p = design.projection(lambda)?;
    let lev = leverage_diagnostics(&p);
    let g = gamma_star(f);
    let body = json!({
        "schema_version": SCHEMA_VERSION,
        "n": design.n(),
        "k": design.k(),
        "rank": f.rank(),
        "lambda": lambda,
        "theta_bar": sel.theta_bar,
        "bound": 1.0 / (design.n() as f64).sqrt(),
        "p_n": lev.p_n,
        "q_n": lev.q_n,
        "k_lambda": p.k_theta(),
        "gamma_star": g.gamma_star,
        "r_n": g.r_n,
        "grid": sel.grid_evaluations,
    });
    write_output(a.out.as_deref(), &serde_json::to_string_pretty(&body).expect("serializes"))
}

fn parse_tests(s: &str) -> Result<Vec<Method>, Failure> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    let mut out: Vec<Method> = Vec::new();
    for part in daar::data::split_list(s) {
        let m: Method = part.parse().map_err(|e: Error| usage(e.to_string()))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(usage("--tests names no method"));
    }
    Ok(out)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let mut spec = match a.family() {
        Family::Dkm => DgpSpec::dkm(a.k, a.mu2, a.first_stage()),
        Family::Hausman => DgpSpec::hausman(a.k),
    };
    if let Some(n) = a.n {
        spec = spec.with_n(n);
    }
    if let Some(b) = a.beta {
        spec = spec.with_beta(b).with_beta0(b);
    }
    if let Some(b0) = a.beta0 {
        spec = spec.with_beta0(b0);
    }
    let beta_grid = match &a.beta_grid {
        Some(g) => {
            if a.null {
                return Err(usage("--null and --beta-grid are mutually exclusive"));
            }
            let values = daar::data::split_list(g)
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| usage(format!("bad --beta-grid value `{v}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            Some(values)
        }
        None => None,
    };
    let mc = MonteCarloConfig {
        replications: a.replications,
        bootstrap_draws: a.draws,
        alpha: a.alpha,
        master_seed: a.seed,
        tests: parse_tests(&a.tests)?,
        beta_grid,
    };
    spec.validate().map_err(to_usage)?;
    mc.validate().map_err(to_usage)?;
    let table = if mc.beta_grid.is_some() { run_power_curve(&spec, &mc)? } else { run_size_experiment(&spec, &mc)? };
    match &a.out {
        Some(prefix) => {
            let csv_path = prefix.with_extension("csv");
            let json_path = prefix.with_extension("json");
            let file = std::fs::File::create(&csv_path).map_err(|e| Error::Io(format!("{}: {e}", csv_path.display())))?;
            table.write_csv(std::io::BufWriter::new(file))?;
            std::fs::write(&json_path, format!("{}\n", table.to_json()))
                .map_err(|e| Error::Io(format!("{}: {e}", json_path.display())))?;
            print_summary(&table, &mut std::io::stdout().lock());
        }
        None => {
            write_output(None, &table.to_json())?;
            print_summary(&table, &mut std::io::stderr().lock());
        }
    }
    Ok(())
}

fn to_usage(e: Error) -> Failure {
    match e {
        Error::InvalidConfig(m) | Error::InvalidSparsity(m) => usage(m),
        e @ Error::UnsupportedK(_) => usage(e.to_string()),
        e => e.into(),
    }
}

fn print_summary(table: &RejectionTable, out: &mut dyn Write) {
    let color = std::env::var_os("NO_COLOR").is_none() && std::io::stdout().is_terminal();
    let header = format!("{:<8} {:>5} {:>8} {:>8} {:>8} {:>12} {:>8}", "method", "K", "beta", "rate", "mc_se", "regularizer", "failures");
    let _ = if color { writeln!(out, "\x1b[1m{header}\x1b[0m") } else { writeln!(out, "{header}") };
    for r in &table.rows {
        let reg = r.mean_regularizer.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(
            out,
            "{:<8} {:>5} {:>8.3} {:>8.4} {:>8.4} {:>12} {:>8}",
            r.method.as_str(),
            r.k,
            r.beta,
            r.rejection_rate,
            r.mc_se,
            reg,
            r.failures
        );
    }
}
