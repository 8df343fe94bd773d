//! Command-line entry point: configuration, deterministic orchestration,
//! and JSON/CSV result export.
//!
//! Every subcommand resolves its options from an optional JSON config file
//! overlaid by flags, validates them, runs, and writes a [`ResultEnvelope`].
//! Exit codes: `0` all verdicts pass, `1` a verdict failed, `2` usage or
//! validation error, `3` numerical failure. Identical configuration and seed
//! produce byte-identical envelopes except for the wall-time field.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::characters;
use crate::curvature::{cfc_certify, BallSampler, BodySampler, PointSampler};
use crate::error::Error;
use crate::gallery::{
    integrate_sphere_geodesic, make_flat_euclidean, make_hilbert_metric, make_quadric_metric,
    make_round_sphere, normalize_sphere_state, quadric_f_closed, quadric_f_newton,
    reversibility_defect, ConvexBodySpec, QuadricSpec,
};
use crate::metric::{fundamental_tensor, MetricOracle};
use crate::spray::integrate_geodesic;
use crate::surface::{
    build_cfc_coframe, integrate_beta_geodesic, magnetic_closure_defect, magnetic_residual,
    make_zoll_revolution, structure_equation_residual, trajectory_hausdorff, zoll_to_cfc_data,
    OddProfile,
};

/// Flat option set shared by all subcommands; a JSON config file may supply
/// any of these, and flags win over the file.
#[derive(Args, Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    /// JSON config file with the same field names as the flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<String>,

    /// Metric kind: quadric | round-sphere | hilbert-ball |
    /// hilbert-superellipse | flat.
    #[arg(long)]
    pub metric: Option<String>,

    /// Quadric phases, comma-separated radians, sorted ascending in [0, π).
    #[arg(long)]
    pub p: Option<String>,

    /// Dimension parameter (sphere base dimension, table size, ...).
    #[arg(long)]
    pub n: Option<u32>,

    /// Upper bound for identity verification sweeps.
    #[arg(long)]
    pub n_max: Option<u32>,

    /// Chart dimension for flat / ball metrics.
    #[arg(long)]
    pub dim: Option<usize>,

    /// Convex body: ball | superellipse.
    #[arg(long)]
    pub body: Option<String>,

    /// Odd rotational profile coefficients `c_j` of `(1−t²)·Σ c_j t^{2j+1}`,
    /// comma-separated.
    #[arg(long)]
    pub h_coeffs: Option<String>,

    /// Sample count for seeded computations.
    #[arg(long)]
    pub samples: Option<usize>,

    /// PRNG seed; mandatory for any sampled computation.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Expected curvature constant, when asserting one.
    #[arg(long)]
    pub c: Option<f64>,

    /// Integration length (arclength).
    #[arg(long)]
    pub length: Option<f64>,

    /// Integration step.
    #[arg(long)]
    pub step: Option<f64>,

    /// Grid resolution.
    #[arg(long)]
    pub grid: Option<usize>,

    /// Comma-separated grid resolutions for convergence studies.
    #[arg(long)]
    pub grids: Option<String>,

    /// Start point and heading for surface trajectories.
    #[arg(long)]
    pub start_u: Option<f64>,
    #[arg(long)]
    pub start_v: Option<f64>,
    #[arg(long)]
    pub heading: Option<f64>,

    /// Output path, or `-` for standard output.
    #[arg(long)]
    pub out: Option<String>,

    /// Output format: json | csv (csv only for trajectory dumps).
    #[arg(long)]
    pub format: Option<String>,

    /// Tolerance overrides, `name=value` (repeatable).
    #[arg(long = "tol", value_name = "NAME=VALUE")]
    #[serde(skip)]
    pub tol_flags: Vec<String>,

    /// Tolerance overrides from the config file.
    #[serde(default)]
    #[arg(skip)]
    pub tolerances: BTreeMap<String, f64>,
}

impl RunOptions {
    fn overlay(file: RunOptions, flags: RunOptions) -> RunOptions {
        RunOptions {
            config: flags.config.clone(),
            metric: flags.metric.or(file.metric),
            p: flags.p.or(file.p),
            n: flags.n.or(file.n),
            n_max: flags.n_max.or(file.n_max),
            dim: flags.dim.or(file.dim),
            body: flags.body.or(file.body),
            h_coeffs: flags.h_coeffs.or(file.h_coeffs),
            samples: flags.samples.or(file.samples),
            seed: flags.seed.or(file.seed),
            c: flags.c.or(file.c),
            length: flags.length.or(file.length),
            step: flags.step.or(file.step),
            grid: flags.grid.or(file.grid),
            grids: flags.grids.or(file.grids),
            start_u: flags.start_u.or(file.start_u),
            start_v: flags.start_v.or(file.start_v),
            heading: flags.heading.or(file.heading),
            out: flags.out.or(file.out),
            format: flags.format.or(file.format),
            tol_flags: flags.tol_flags,
            tolerances: file.tolerances,
        }
    }

    /// Resolved tolerance: flag overrides file overrides default.
    fn tolerance(&self, name: &str, default: f64) -> f64 {
        for spec in &self.tol_flags {
            if let Some((k, v)) = spec.split_once('=') {
                if k == name {
                    if let Ok(x) = v.parse() {
                        return x;
                    }
                }
            }
        }
        self.tolerances.get(name).copied().unwrap_or(default)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "finsler",
    version,
    about = "Numerical toolkit for Finsler metrics of constant flag curvature"
)]
struct TopLevel {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Sample flag curvature and certify constancy.
    CurvatureCertify(RunOptions),
    /// Trace a geodesic and report closure and planarity defects.
    GeodesicTrace(RunOptions),
    /// Cross-check the closed-form quadric metric against its Newton oracle.
    QuadricEval(RunOptions),
    /// Evaluate a Hilbert metric: convexity scan and norm identities.
    HilbertEval(RunOptions),
    /// Check a rotational profile: magnetic residual and geodesic closure.
    ZollCheck(RunOptions),
    /// Integrate a magnetic geodesic and compare with the base geodesic.
    BetaGeodesic(RunOptions),
    /// Structure-equation residuals over a grid refinement sweep.
    StructureResidual(RunOptions),
    /// Print the involutivity character table.
    CartanCharacters(RunOptions),
    /// Probe reversibility of a metric.
    Reversibility(RunOptions),
}

/// One named pass/fail check against a threshold.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    /// "<" when the value must stay below the threshold, ">" when above.
    pub direction: String,
}

impl Verdict {
    fn below(name: &str, value: f64, threshold: f64) -> Self {
        Verdict {
            name: name.into(),
            pass: value < threshold,
            value,
            threshold,
            direction: "<".into(),
        }
    }

    fn above(name: &str, value: f64, threshold: f64) -> Self {
        Verdict {
            name: name.into(),
            pass: value > threshold,
            value,
            threshold,
            direction: ">".into(),
        }
    }
}

/// Envelope written for every run.
#[derive(Debug, Serialize)]
pub struct ResultEnvelope {
    pub subcommand: String,
    pub version: String,
    pub config: Value,
    pub payload: Value,
    pub verdicts: Vec<Verdict>,
    pub wall_time_ms: f64,
}

fn usage_error(msg: &str) -> i32 {
    eprintln!("error: {msg}");
    eprintln!("usage: finsler <subcommand> --help");
    2
}

fn parse_csv_f64(s: &str, field: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| format!("{field}: cannot parse '{t}': {e}"))
        })
        .collect()
}

fn parse_csv_usize(s: &str, field: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| format!("{field}: cannot parse '{t}': {e}"))
        })
        .collect()
}

/// Loads the config file (when given) and overlays flags on top.
pub fn load_config(opts: RunOptions) -> Result<RunOptions, String> {
    let merged = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("config {path}: {e}"))?;
            let file: RunOptions =
                serde_json::from_str(&text).map_err(|e| format!("config {path}: {e}"))?;
            RunOptions::overlay(file, opts)
        }
        None => opts,
    };
    Ok(merged)
}

fn build_metric(opts: &RunOptions) -> Result<MetricOracle, String> {
    let kind = opts.metric.as_deref().ok_or(
        "metric: required (quadric | round-sphere | hilbert-ball | hilbert-superellipse | flat)",
    )?;
    match kind {
        "quadric" => {
            let p = opts.p.as_deref().ok_or("p: required for quadric metrics")?;
            let phases = parse_csv_f64(p, "p")?;
            let spec = QuadricSpec::new(phases).map_err(|e| format!("p: {e}"))?;
            Ok(make_quadric_metric(spec))
        }
        "round-sphere" => {
            let n = opts.n.unwrap_or(1) as usize;
            make_round_sphere(n).map_err(|e| format!("n: {e}"))
        }
        "hilbert-ball" => Ok(make_hilbert_metric(ConvexBodySpec::Ball {
            dim: opts.dim.unwrap_or(2),
        })),
        "hilbert-superellipse" => Ok(make_hilbert_metric(ConvexBodySpec::Superellipse)),
        "flat" => Ok(make_flat_euclidean(opts.dim.unwrap_or(2))),
        other => Err(format!("metric: unknown kind '{other}'")),
    }
}

fn default_sampler(opts: &RunOptions, oracle: &MetricOracle) -> Box<dyn PointSampler> {
    match opts.metric.as_deref() {
        Some("hilbert-ball") => Box::new(BodySampler {
            body: ConvexBodySpec::Ball {
                dim: opts.dim.unwrap_or(2),
            },
            margin: 0.2,
        }),
        Some("hilbert-superellipse") => Box::new(BodySampler {
            body: ConvexBodySpec::Superellipse,
            margin: 0.2,
        }),
        _ => Box::new(BallSampler {
            dim: oracle.dim(),
            radius: 2.0,
        }),
    }
}

fn profile_from(opts: &RunOptions) -> Result<OddProfile, String> {
    let coeffs = match &opts.h_coeffs {
        Some(s) => parse_csv_f64(s, "h_coeffs")?,
        None => vec![],
    };
    let profile = OddProfile::odd_poly(&coeffs);
    // Validated here, before dispatch: a bad profile is a usage error.
    profile.check().map_err(|e| format!("h_coeffs: {e}"))?;
    Ok(profile)
}

fn config_echo(opts: &RunOptions) -> Value {
    serde_json::to_value(opts).expect("options serialize")
}

fn write_output(out: &Option<String>, text: &str) -> Result<(), String> {
    match out.as_deref() {
        None | Some("-") => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| e.to_string())?;
            Ok(())
        }
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{path}: {e}")),
    }
}

fn finish(
    subcommand: &str,
    opts: &RunOptions,
    payload: Value,
    verdicts: Vec<Verdict>,
    started: Instant,
) -> i32 {
    let all_pass = verdicts.iter().all(|v| v.pass);
    let envelope = ResultEnvelope {
        subcommand: subcommand.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config_echo(opts),
        payload,
        verdicts,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    let mut text = serde_json::to_string_pretty(&envelope).expect("envelope serializes");
    text.push('\n');
    if let Err(e) = write_output(&opts.out, &text) {
        return usage_error(&e);
    }
    for v in &envelope.verdicts {
        eprintln!(
            "[{}] {} = {:.6e} {} {:.1e}",
            if v.pass { "pass" } else { "FAIL" },
            v.name,
            v.value,
            v.direction,
            v.threshold
        );
    }
    if all_pass {
        0
    } else {
        1
    }
}

fn numerical_failure(e: Error) -> i32 {
    eprintln!("numerical failure: {e}");
    3
}

/// Entry point used by both the binary and the tests.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_threads();
    let top = match TopLevel::try_parse_from(argv) {
        Ok(t) => t,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let (name, raw) = match top.cmd {
        Cmd::CurvatureCertify(o) => ("curvature-certify", o),
        Cmd::GeodesicTrace(o) => ("geodesic-trace", o),
        Cmd::QuadricEval(o) => ("quadric-eval", o),
        Cmd::HilbertEval(o) => ("hilbert-eval", o),
        Cmd::ZollCheck(o) => ("zoll-check", o),
        Cmd::BetaGeodesic(o) => ("beta-geodesic", o),
        Cmd::StructureResidual(o) => ("structure-residual", o),
        Cmd::CartanCharacters(o) => ("cartan-characters", o),
        Cmd::Reversibility(o) => ("reversibility", o),
    };
    let opts = match load_config(raw) {
        Ok(o) => o,
        Err(e) => return usage_error(&e),
    };
    let started = Instant::now();
    let outcome = match name {
        "curvature-certify" => cmd_curvature_certify(&opts, started),
        "geodesic-trace" => cmd_geodesic_trace(&opts, started),
        "quadric-eval" => cmd_quadric_eval(&opts, started),
        "hilbert-eval" => cmd_hilbert_eval(&opts, started),
        "zoll-check" => cmd_zoll_check(&opts, started),
        "beta-geodesic" => cmd_beta_geodesic(&opts, started),
        "structure-residual" => cmd_structure_residual(&opts, started),
        "cartan-characters" => cmd_cartan_characters(&opts, started),
        "reversibility" => cmd_reversibility(&opts, started),
        _ => unreachable!(),
    };
    match outcome {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => usage_error(&msg),
        Err(CliError::Numerical(e)) => numerical_failure(e),
    }
}

enum CliError {
    Usage(String),
    Numerical(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Numerical(e)
    }
}

impl From<String> for CliError {
    fn from(s: String) -> Self {
        CliError::Usage(s)
    }
}

fn init_threads() {
    if let Ok(n) = std::env::var("FINSLER_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

fn require_seed(opts: &RunOptions) -> Result<u64, CliError> {
    opts.seed
        .ok_or_else(|| CliError::Usage("seed: required for sampled computations".into()))
}

fn cmd_curvature_certify(opts: &RunOptions, started: Instant) -> Result<i32, CliError> {
    let oracle = build_metric(opts).map_err(CliError::Usage)?;
    let seed = require_seed(opts)?;
    let samples = opts.samples.unwrap_or(200);
    let sampler = default_sampler(opts, &oracle);
    let report = cfc_certify(&oracle, sampler.as_ref(), samples, seed, opts.c)?;

    let kind = opts.metric.as_deref().unwrap_or("");
    let mut verdicts = Vec::new();
    match kind {
        "round-sphere" => {
            verdicts.push(Verdict::below(
                "max_abs_dev",
                report.max_abs_dev,
                opts.tolerance("max_abs_dev", 1e-6),
            ));
        }
        "quadric" => {
            verdicts.push(Verdict::below(
                "mean_abs_dev",
                report.mean_abs_dev,
                opts.tolerance("mean_abs_dev", 5e-4),
            ));
            verdicts.push(Verdict::below(
                "max_abs_dev",
                report.max_abs_dev,
                opts.tolerance("max_abs_dev", 5e-3),
            ));
        }
        "hilbert-ball" => {
            verdicts.push(Verdict::below(
                "std_dev",
                report.std_dev,
                opts.tolerance("std_dev", 1e-4),
            ));
            verdicts.push(Verdict::below(
                "mean_error_vs_minus_one",
                (report.c_estimate - (-1.0)).abs(),
                opts.tolerance("mean_error", 1e-3),
            ));
        }
        "hilbert-superellipse" => {
            verdicts.push(Verdict::below(
                "std_dev",
                report.std_dev,
                opts.tolerance("std_dev", 1e-3),
            ));
        }
        _ => {
            verdicts.push(Verdict::below(
                "max_abs_dev",
                report.max_abs_dev,
                opts.tolerance("max_abs_dev", 1e-6),
            ));
        }
    }
    let payload = serde_json::to_value(&report).expect("report serializes");
    Ok(finish(
        "curvature-certify",
        opts,
        payload,
        verdicts,
        started,
    ))
}

fn cmd_geodesic_trace(opts: &RunOptions, started: Instant) -> Result<i32, CliError> {
    let kind = opts.metric.as_deref().unwrap_or("quadric");
    let length = opts.length.unwrap_or(2.0 * std::f64::consts::PI);
    let step = opts.step.unwrap_or(1e-3);
    match kind {
        "quadric" | "round-sphere" => {
            let spec = if kind == "round-sphere" {
                QuadricSpec::new(vec![0.0; opts.n.unwrap_or(1) as usize + 1])
                    .map_err(|e| CliError::Usage(e.to_string()))?
            } else {
                let p = opts
                    .p
                    .as_deref()
                    .ok_or_else(|| CliError::Usage("p: required for quadric metrics".into()))?;
                QuadricSpec::new(parse_csv_f64(p, "p").map_err(CliError::Usage)?)
                    .map_err(|e| CliError::Usage(format!("p: {e}")))?
            };
            // Canonical initial data: a fixed oblique flag on the sphere.
            let dim = spec.ambient_dim();
            let mut v0 = vec![0.0; dim];
            v0[0] = 1.0;
            let mut w0 = vec![0.3; dim];
            w0[0] = 0.0;
            w0[1] = 1.0;
            let (v0, w0) = normalize_sphere_state(&spec, &v0, &w0)?;
            let traj = integrate_sphere_geodesic(&spec, &v0, &w0, length, step)?;
            let closure = traj.closure_defect();
            let planarity = traj.planarity_defect()?;

            if opts.format.as_deref() == Some("csv") {
                let mut text = String::new();
                let m = dim;
                let header: Vec<String> = std::iter::once("s".to_string())
                    .chain((1..=m).map(|i| format!("u{i}")))
                    .chain((1..=m).map(|i| format!("y{i}")))
                    .collect();
                text.push_str(&header.join(","));
                text.push('\n');
                for s in &traj.samples {
                    let mut row = vec![format!("{}", s.s)];
                    row.extend(s.v.iter().map(|c| format!("{c}")));
                    row.extend(s.w.iter().map(|c| format!("{c}")));
                    text.push_str(&row.join(","));
                    text.push('\n');
                }
                write_output(&opts.out, &text).map_err(CliError::Usage)?;
                eprintln!("closure_defect = {closure:.3e}, planarity_defect = {planarity:.3e}");
                return Ok(0);
            }

            let payload = json!({
                "samples": traj.samples.len(),
                "unit_speed_drift": traj.unit_speed_drift,
                "closure_defect": closure,
                "planarity_defect": planarity,
                "endpoint_v": traj.samples.last().unwrap().v,
                "endpoint_w": traj.samples.last().unwrap().w,
            });
            let verdicts = vec![
                Verdict::below("closure_defect", closure, opts.tolerance("closure", 1e-4)),
                Verdict::below(
                    "planarity_defect",
                    planarity,
                    opts.tolerance("planarity", 1e-6),
                ),
            ];
            Ok(finish("geodesic-trace", opts, payload, verdicts, started))
        }
        _ => {
            let oracle = build_metric(opts).map_err(CliError::Usage)?;
            let m = oracle.dim();
            let x0 = vec![0.0; m];
            let mut y0 = vec![0.0; m];
            y0[0] = 1.0;
            let f = oracle.eval_f(&x0, &y0)?;
            let y0: Vec<f64> = y0.iter().map(|c| c / f).collect();
            let traj = integrate_geodesic(&oracle, &x0, &y0, length, step)?;

            if opts.format.as_deref() == Some("csv") {
                let mut text = String::new();
                let header: Vec<String> = std::iter::once("s".to_string())
                    .chain((1..=m).map(|i| format!("u{i}")))
                    .chain((1..=m).map(|i| format!("y{i}")))
                    .collect();
                text.push_str(&header.join(","));
                text.push('\n');
                for s in &traj.samples {
                    let mut row = vec![format!("{}", s.s)];
                    row.extend(s.x.iter().map(|c| format!("{c}")));
                    row.extend(s.y.iter().map(|c| format!("{c}")));
                    text.push_str(&row.join(","));
                    text.push('\n');
                }
                write_output(&opts.out, &text).map_err(CliError::Usage)?;
                return Ok(0);
            }

            let payload = json!({
                "samples": traj.samples.len(),
                "truncated": traj.truncated,
                "unit_speed_drift": traj.unit_speed_drift,
                "endpoint_x": traj.endpoint().x,
                "endpoint_y": traj.endpoint().y,
            });
            let verdicts = vec![Verdict::below(
                "unit_speed_drift",
                traj.unit_speed_drift,
                opts.tolerance("drift", 1e-6),
            )];
            Ok(finish("geodesic-trace", opts, payload, verdicts, started))
        }
    }
}

fn cmd_quadric_eval(opts: &RunOptions, started: Instant) -> Result<i32, CliError> {
    use rand::Rng;
    use rand::SeedableRng;
    let p = opts
        .p
        .as_deref()
        .ok_or_else(|| CliError::Usage("p: required".into()))?;
    let spec = QuadricSpec::new(parse_csv_f64(p, "p").map_err(CliError::Usage)?)
        .map_err(|e| CliError::Usage(format!("p: {e}")))?;
    let seed = require_seed(opts)?;
    let samples = opts.samples.unwrap_or(1000);

    let dim = spec.ambient_dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut produced = 0usize;
    while produced < samples {
        let v_raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n: f64 = v_raw.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n < 0.2 {
            continue;
        }
        let v: Vec<f64> = v_raw.iter().map(|c| c / n).collect();
        let y_raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot: f64 = v.iter().zip(&y_raw).map(|(a, b)| a * b).sum();
        let y: Vec<f64> = (0..dim).map(|i| y_raw[i] - dot * v[i]).collect();
        if y.iter().map(|c| c * c).sum::<f64>() < 1e-3 {
            continue;
        }
        let fc = quadric_f_closed(&spec, &v, &y)?;
        let fnewt = quadric_f_newton(&spec, &v, &y)?;
        max_rel = max_rel.max((fc - fnewt).abs() / fc);
        produced += 1;
    }

    let payload = json!({
        "samples": samples,
        "max_relative_difference": max_rel,
    });
    let verdicts = vec![Verdict::below(
        "closed_vs_newton",
        max_rel,
        opts.tolerance("agreement", 1e-9),
    )];
    Ok(finish("quadric-eval", opts, payload, verdicts, started))
}

fn cmd_hilbert_eval(opts: &RunOptions, started: Instant) -> Result<i32, CliError> {
    use rand::SeedableRng;
    let body = match opts.body.as_deref().unwrap_or("ball") {
        "ball" => ConvexBodySpec::Ball {
            dim: opts.dim.unwrap_or(2),
        },
        "superellipse" => ConvexBodySpec::Superellipse,
        other => return Err(CliError::Usage(format!("body: unknown '{other}'"))),
    };
    let oracle = make_hilbert_metric(body.clone());
    let seed = require_seed(opts)?;
    let samples = opts.samples.unwrap_or(100);

    let sampler = BodySampler {
        body: body.clone(),
        margin: 0.15,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut min_eig = f64::INFINITY;
    let mut max_euler = 0.0f64;
    for _ in 0..samples {
        let (x, y, _) = crate::curvature::sample_flag(&oracle, &sampler, &mut rng)?;
        let g = fundamental_tensor(&oracle, &x, &y)?;
        min_eig = min_eig.min(g.smallest_eigenvalue);
        let f = oracle.eval_f(&x, &y)?;
        let yv = nalgebra::DVector::from_row_slice(&y);
        let euler = (g.inner(&yv, &yv) - f * f).abs() / (f * f);
        max_euler = max_euler.max(euler);
    }

    let payload = json!({
        "body": format!("{body:?}"),
        "samples": samples,
        "min_fundamental_eigenvalue": min_eig,
        "max_euler_identity_defect": max_euler,
    });
    let verdicts = vec![
        Verdict::above("convexity", min_eig, opts.tolerance("convexity", 0.0)),
        Verdict::below("euler_identity", max_euler, opts.tolerance("euler", 1e-6)),
    ];
    Ok(finish("hilbert-eval", opts, payload, verdicts, started))
}

fn cmd_zoll_check(opts: &RunOptions, started: Instant) -> Result<i32, CliError> {
    let profile = profile_from(opts).map_err(CliError::Usage)?;
    let grid = opts.grid.unwrap_or(128);
    let zoll = make_zoll_revolution(profile)?;
    let derived = zoll_to_cfc_data(&zoll)?;
    let residual = magnetic_residual(&derived, grid)?;

    let heading = opts.heading.unwrap_or(0.7);
    let step = opts.step.unwrap_or(1e-3);
    let traj = integrate_beta_geodesic(
        &zoll,
        (std::f64::consts::FRAC_PI_2, 0.0),
        heading,
        2.0 * std::f64::consts::PI,
        step,
    )?;
    let closure = magnetic_closure_defect(&traj);

    let payload = json!({
        "grid": grid,
        "magnetic_residual": residual,
        "geodesic_closure_defect": closure,
        "truncated": traj.truncated,
    });
    let verdicts = vec![
        Verdict::below(
            "magnetic_residual",
            residual,
            opts.tolerance("residual", 1e-5),
        ),
        Verdict::below("closure_defect", closure, opts.tolerance("closure", 1e-4)),
    ];
    Ok(finish("zoll-check", opts, payload, verdicts, started))
}

fn cmd_beta_geodesic(opts: &RunOptions, started: Instant) -> Result<i32, CliError> {
    let profile = profile_from(opts).map_err(CliError::Usage)?;
    let zoll = make_zoll_revolution(profile)?;
    let derived = zoll_to_cfc_data(&zoll)?;
    let start = (
        opts.start_u.unwrap_or(std::f64::consts::FRAC_PI_2),
        opts.start_v.unwrap_or(0.0),
    );
    let heading = opts.heading.unwrap_or(0.7);
    let step = opts.step.unwrap_or(1e-3);
    let length = opts.length.unwrap_or(8.0);

    let beta_traj = integrate_beta_geodesic(&derived, start, heading, length, step)?;
    let base_traj =
        integrate_beta_geodesic(&zoll, start, heading, 2.0 * std::f64::consts::PI, step)?;
    let hausdorff = trajectory_hausdorff(&beta_traj, &base_traj);

    if opts.format.as_deref() == Some("csv") {
        let mut text = String::from("s,u,v,chi\n");
        for s in &beta_traj.samples {
            text.push_str(&format!("{},{},{},{}\n", s.s, s.u, s.v, s.chi));
        }
        write_output(&opts.out, &text).map_err(CliError::Usage)?;
        eprintln!("hausdorff_vs_base = {hausdorff:.3e}");
        return Ok(0);
    }

    let payload = json!({
        "samples": beta_traj.samples.len(),
        "truncated": beta_traj.truncated,
        "hausdorff_vs_base_geodesic": hausdorff,
    });
    let verdicts = vec![Verdict::below(
        "hausdorff_vs_base",
        hausdorff,
        opts.tolerance("hausdorff", 1e-5),
    )];
    Ok(finish("beta-geodesic", opts, payload, verdicts, started))
}

fn cmd_structure_residual(opts: &RunOptions, started: Instant) -> Result<i32, CliError> {
    let profile = profile_from(opts).map_err(CliError::Usage)?;
    let grids = match &opts.grids {
        Some(g) => parse_csv_usize(g, "grids").map_err(CliError::Usage)?,
        None => vec![32, 64, 128],
    };
    if grids.len() < 2 {
        return Err(CliError::Usage(
            "grids: need at least two resolutions".into(),
        ));
    }
    let zoll = make_zoll_revolution(profile)?;
    let derived = zoll_to_cfc_data(&zoll)?;
    let coframe = build_cfc_coframe(&derived)?;

    let mut rows = Vec::new();
    for &g in &grids {
        let r = structure_equation_residual(&coframe, g)?;
        rows.push((g, r));
    }
    let mut min_order = f64::INFINITY;
    for w in rows.windows(2) {
        let (g0, r0) = w[0];
        let (g1, r1) = w[1];
        let ratio = g1 as f64 / g0 as f64;
        for c in 0..3 {
            // Guard the rounding floor: orders are meaningless below it.
            if r0[c].max(r1[c]) > 1e-12 {
                let order = (r0[c] / r1[c]).ln() / ratio.ln();
                min_order = min_order.min(order);
            }
        }
    }
    let finest = rows.last().unwrap().1;
    let worst_finest = finest.iter().cloned().fold(0.0f64, f64::max);

    let payload = json!({
        "grids": grids,
        "residuals": rows.iter().map(|(g, r)| json!({
            "grid": g,
            "r1": r[0], "r2": r[1], "r3": r[2],
        })).collect::<Vec<_>>(),
        "min_observed_order": if min_order.is_finite() { min_order } else { -1.0 },
        "finest_max_residual": worst_finest,
    });
    let verdicts = vec![
        Verdict::below(
            "finest_max_residual",
            worst_finest,
            opts.tolerance("residual", 1e-5),
        ),
        Verdict::above(
            "min_observed_order",
            if min_order.is_finite() {
                min_order
            } else {
                99.0
            },
            opts.tolerance("order", 2.0),
        ),
    ];
    Ok(finish(
        "structure-residual",
        opts,
        payload,
        verdicts,
        started,
    ))
}

fn cmd_cartan_characters(opts: &RunOptions, started: Instant) -> Result<i32, CliError> {
    let n = opts.n.unwrap_or(2);
    let n_max = opts.n_max.unwrap_or(12);
    let table = characters::cartan_characters(n)?;
    eprint!("{}", characters::render_table(&table));
    let identities = characters::verify_involutivity_identities(n_max);

    let payload = json!({
        "table": serde_json::to_value(&table).expect("table serializes"),
        "identities_checked_up_to": n_max,
        "identities_ok": identities.is_ok(),
        "first_failure": identities.err(),
    });
    let verdicts = vec![Verdict {
        name: "identities".into(),
        pass: identities.is_ok(),
        value: if identities.is_ok() { 1.0 } else { 0.0 },
        threshold: 1.0,
        direction: "=".into(),
    }];
    Ok(finish(
        "cartan-characters",
        opts,
        payload,
        verdicts,
        started,
    ))
}

fn cmd_reversibility(opts: &RunOptions, started: Instant) -> Result<i32, CliError> {
    let oracle = build_metric(opts).map_err(CliError::Usage)?;
    let seed = require_seed(opts)?;
    let samples = opts.samples.unwrap_or(100);
    let defect = reversibility_defect(&oracle, samples, seed)?;

    let claim = oracle.claims_reversible();
    let verdict = if claim {
        Verdict::below(
            "reversibility_defect",
            defect,
            opts.tolerance("reversible", 1e-10),
        )
    } else {
        Verdict::above(
            "reversibility_defect",
            defect,
            opts.tolerance("nonreversible", 1e-3),
        )
    };
    let payload = json!({
        "metric": oracle.name(),
        "claims_reversible": claim,
        "samples": samples,
        "defect": defect,
    });
    Ok(finish(
        "reversibility",
        opts,
        payload,
        vec![verdict],
        started,
    ))
}
