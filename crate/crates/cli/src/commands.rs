use std::fs;
use std::io::Write;
use std::path::Path;

use kemeny_core::birth_death::{analyze_bd, design_from_f, truncate};
use kemeny_core::exact::matrix_to_csv;
use kemeny_core::{
    default_tolerance, deviation_matrix, kemeny_exact, kemeny_via_trace, step_count_identity,
    visit_deficit, BirthDeathSpec, ChainFile, ChainKind, Horizon, MarkovChain, RateRule,
    SeriesOptions, SeriesResult, SimConfig, ValidationOptions,
};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::CliError;
use crate::{AnalyzeArgs, BdArgs, DesignArgs, Estimator, Method, SimulateArgs};

/// Exact values are computed for comparison only up to this many states.
const EXACT_COMPARISON_LIMIT: usize = 2000;

type Report = Map<String, Value>;

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn header(command: &str, config: Value) -> Report {
    let mut r = Map::new();
    r.insert(
        "tool".into(),
        json!({"name": "kemeny", "version": env!("CARGO_PKG_VERSION")}),
    );
    r.insert("command".into(), json!(command));
    r.insert("config".into(), config);
    r
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))
}

fn load_chain(path: &Path, validation_tol: f64) -> Result<MarkovChain, CliError> {
    let file = ChainFile::parse(&read(path)?)?;
    Ok(file.into_chain(ValidationOptions { tol: validation_tol })?)
}

pub fn emit(report: &Report, out: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    match out {
        Some(path) => write_file(path, &text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::BadInput(format!("stdout: {e}")))
        }
    }
}

pub fn run_analyze(args: &AnalyzeArgs) -> Result<Report, CliError> {
    let chain = load_chain(&args.input, args.validation_tol)?;
    let tol = args.tol.unwrap_or_else(|| default_tolerance(&chain));
    let mut config = to_value(args);
    config["tol"] = json!(tol);
    let mut r = header("analyze", config);
    r.insert("kind".into(), to_value(&chain.kind()));
    r.insert("size".into(), json!(chain.size()));
    r.insert("warnings".into(), to_value(&chain.warnings()));

    if args.method == Method::Trace {
        let kprime = kemeny_via_trace(&chain)?;
        r.insert("kprime".into(), json!(kprime));
        if chain.kind() == ChainKind::Discrete {
            r.insert("k".into(), json!(kprime + 1.0));
        }
        r.insert("deviation_trace".into(), json!(kprime));
        if let Some(path) = &args.deviation_csv {
            write_file(path, &matrix_to_csv(&deviation_matrix(&chain, tol)?.d))?;
        }
        if args.mfpt_csv.is_some() || args.hitting_csv.is_some() {
            return Err(CliError::BadInput(
                "hitting and mfpt matrices need --method hitting or both".into(),
            ));
        }
        return Ok(r);
    }

    let report = kemeny_exact(&chain, tol)?;
    if let Value::Object(fields) = to_value(&report) {
        for (k, v) in fields {
            if k != "kind" && k != "size" {
                r.insert(k, v);
            }
        }
    }
    if args.method == Method::Both {
        let delta = report.route_delta();
        r.insert("route_delta".into(), json!(delta));
        if !(delta <= tol * (1.0 + report.kprime.abs())) {
            return Err(CliError::Numerical(format!(
                "hitting route {} and trace route {} differ by {delta:e}",
                report.kprime, report.deviation_trace
            )));
        }
    } else {
        r.remove("deviation_trace");
    }
    if report.hunter_bound_ok == Some(false) {
        log::error!("Hunter's bound K >= (m+1)/2 fails for this chain");
    }
    if let Some(path) = &args.mfpt_csv {
        let mfpt = report
            .mfpt
            .as_ref()
            .ok_or_else(|| CliError::BadInput("mean first passage matrix needs a dtmc".into()))?;
        write_file(path, &matrix_to_csv(mfpt))?;
    }
    if let Some(path) = &args.hitting_csv {
        write_file(path, &matrix_to_csv(&report.hitting))?;
    }
    if let Some(path) = &args.deviation_csv {
        write_file(path, &matrix_to_csv(&report.deviation))?;
    }
    Ok(r)
}

#[derive(Debug, Serialize)]
struct LadderRow {
    n: usize,
    kprime: f64,
    /// `|K'(N) - K'|` when `K'` is finite, else the change from the previous rung.
    abs_delta: Option<f64>,
}

pub fn run_bd(args: &BdArgs) -> Result<Report, CliError> {
    let spec = BirthDeathSpec::from_json(&read(&args.config)?)?;
    let opts = SeriesOptions::new(args.rtol, args.max_terms);
    let mut config = to_value(args);
    config["spec"] = to_value(&spec);
    let mut r = header("bd", config);

    let report = analyze_bd(&spec, &opts)?;
    let e_pi = report.e_pi_theta0.as_ref().and_then(SeriesResult::value);
    r.insert("theta".into(), json!(report.theta.value()));
    r.insert("e_pi_theta0".into(), json!(e_pi));
    r.insert("kprime".into(), json!(report.kprime.value()));
    r.insert("terms_used".into(), json!(report.theta.terms_used()));
    r.insert("verdicts".into(), to_value(&report));

    if let Some(levels) = &args.ladder {
        let limit = report.kprime.value();
        let mut rows: Vec<LadderRow> = Vec::with_capacity(levels.len());
        for &n in levels {
            let chain = truncate(&spec, n)?;
            let kprime = kemeny_exact(&chain, default_tolerance(&chain))?.kprime;
            let abs_delta = match limit {
                Some(k) => Some((kprime - k).abs()),
                None => rows.last().map(|prev| (kprime - prev.kprime).abs()),
            };
            rows.push(LadderRow { n, kprime, abs_delta });
        }
        if let Some(path) = &args.ladder_csv {
            let mut csv = String::from("N,kprime,abs_delta\n");
            for row in &rows {
                let delta = row.abs_delta.map(|d| d.to_string()).unwrap_or_default();
                csv.push_str(&format!("{},{},{}\n", row.n, row.kprime, delta));
            }
            write_file(path, &csv)?;
        }
        r.insert("ladder".into(), to_value(&rows));
    }
    Ok(r)
}

pub fn run_simulate(args: &SimulateArgs) -> Result<Report, CliError> {
    let chain = load_chain(&args.input, 1e-12)?;
    let horizon = match chain.kind() {
        ChainKind::Discrete => {
            if !(args.horizon >= 0.0 && args.horizon.fract() == 0.0 && args.horizon < 2f64.powi(53)) {
                return Err(CliError::BadInput(format!(
                    "a dtmc horizon must be a whole number of steps, got {}",
                    args.horizon
                )));
            }
            Horizon::Steps(args.horizon as u64)
        }
        ChainKind::Continuous => Horizon::Time(args.horizon),
    };
    let cfg = SimConfig::new(horizon, args.trajectories, args.seed);
    let mut r = header("simulate", to_value(args));

    let (estimate, pair) = match args.estimator {
        Estimator::Deficit => {
            let (Some(i), Some(j)) = (args.start, args.target) else {
                return Err(CliError::BadInput("the deficit estimator needs --start and --target".into()));
            };
            (visit_deficit(&chain, i, j, &cfg)?, Some((i, j)))
        }
        Estimator::Stepcount => {
            if args.start.is_some() {
                log::warn!("--start is ignored by the step-count estimator");
            }
            (step_count_identity(&chain, &cfg)?, None)
        }
    };
    if estimate.mixing_warning {
        log::warn!("half-horizon and full-horizon estimates disagree; the horizon may be too short");
    }
    if let Value::Object(fields) = to_value(&estimate) {
        r.extend(fields);
    }

    if chain.size() <= EXACT_COMPARISON_LIMIT {
        match kemeny_exact(&chain, default_tolerance(&chain)) {
            Ok(exact) => {
                let value = match pair {
                    Some((i, j)) if i == j => 0.0,
                    Some((i, j)) => exact.pi[j] * exact.hitting[(i, j)],
                    None => exact.kprime,
                };
                r.insert("exact".into(), json!(value));
                r.insert(
                    "within_3se".into(),
                    json!((estimate.value - value).abs() <= 3.0 * estimate.std_error),
                );
            }
            Err(e) => log::warn!("exact comparison skipped: {e}"),
        }
    }
    Ok(r)
}

pub fn run_design(args: &DesignArgs) -> Result<Report, CliError> {
    let parse = |name: &str, text: &str| -> Result<RateRule, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::BadInput(format!("{name}: {e}")))
    };
    let f = parse("f rule", &args.f_rule)?;
    let lambda = parse("lambda rule", &args.lambda_rule)?;
    let spec = design_from_f(f, lambda)?;
    if args.emit_config {
        return match to_value(&spec) {
            Value::Object(m) => Ok(m),
            _ => unreachable!("spec is a JSON object"),
        };
    }
    let mut config = to_value(args);
    config["f_rule"] = serde_json::from_str(&args.f_rule).unwrap_or(Value::Null);
    config["lambda_rule"] = serde_json::from_str(&args.lambda_rule).unwrap_or(Value::Null);
    let mut r = header("design", config);
    let mu: Vec<Option<f64>> = (1..=10).map(|j| spec.mu(j).ok()).collect();
    r.insert("spec".into(), to_value(&spec));
    r.insert("mu_1_to_10".into(), json!(mu));
    Ok(r)
}
