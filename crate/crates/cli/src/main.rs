//! Batch driver for the constellation laboratory.
//!
//! One subcommand per pipeline stage: `sieve`, `wtrick`, `lf-check`,
//! `box-norm`, `von-neumann-fuzz`, `measure`, `count`, `scaling`.
//!
//! Report contract:
//!
//! * JSON commands print exactly one pretty-printed envelope
//!   `{"schema":1, "version", "command", "seed", "config", "result"}` to
//!   stdout (or `--out FILE`). The bytes depend only on the config and
//!   seed — never on wall time or thread count — so reports diff cleanly
//!   across runs. Wall time goes to stderr.
//! * CSV commands (`lf-check`, `scaling`) print a header plus one row per
//!   data point; their `seconds` column is the one timing that lands on
//!   stdout, for plotting.
//! * Exit codes: 0 success, 1 validation or usage error, 2 budget
//!   refusal, 3 numerical-integrity failure.
//!
//! The env var `CONSTLAB_THREADS` overrides `--threads`; both pin the
//! global worker pool. Results are identical for every thread count.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use constlab_core::boxnorm::{
    box_norm, index_table, random_dominated_instance, von_neumann_check, BoxInstance,
};
use constlab_core::constellations::{count_fast, hits, normalized_count, scaling_report, Shape};
use constlab_core::forms::{lf_condition_scan, LinearFormSystem};
use constlab_core::measures::{measure, CylinderEvent, CylinderSpec, EventMode, MeasureParams};
use constlab_core::sieve::PrimeTable;
use constlab_core::wtrick::{build_weight, rescale_subset, select_residues, WTrickParams};
use constlab_core::{sieve_primes, DenseSubset, Error, NuRef, Ratio, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "constlab",
    version,
    about = "Desk-scale laboratory for prime constellations and their weighted averages"
)]
struct Cli {
    /// Worker threads for parallel counting; the CONSTLAB_THREADS env var
    /// overrides this flag. Defaults to one thread per logical CPU.
    #[arg(long, global = true, value_name = "T")]
    threads: Option<usize>,

    /// Destination file for the primary payload: the binary prime table
    /// for `sieve`, hit lines for `count --list-hits`, the report
    /// otherwise. Defaults to stdout.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sieve all primes up to a limit and report the count.
    Sieve {
        /// Inclusive sieving limit (at least 2).
        #[arg(long)]
        limit: u64,
    },

    /// Select a residue class, rescale the window, and report the
    /// normalized weight means per coordinate.
    Wtrick {
        /// Original scale N.
        #[arg(long)]
        n: u64,
        /// Primorial threshold w; W is the product of primes <= w.
        #[arg(long)]
        w: u64,
        /// Window offset fraction as an exact rational, e.g. 1/4.
        #[arg(long, default_value = "1/4", value_name = "Q")]
        delta_prime: String,
        /// Grid dimension d.
        #[arg(long)]
        dim: usize,
        /// Point-set file (one lattice point per line, space-separated
        /// coordinates). Defaults to the d-fold prime grid.
        #[arg(long, value_name = "FILE")]
        subset: Option<PathBuf>,
    },

    /// Scan the linear-forms average over a kappa grid and emit CSV.
    LfCheck {
        /// Form-system file (JSON): {"d", "m", "forms"}.
        #[arg(long, value_name = "FILE")]
        forms: PathBuf,
        /// Original scale N.
        #[arg(long)]
        n: u64,
        /// Primorial threshold w.
        #[arg(long)]
        w: u64,
        /// Window offset fraction, e.g. 1/4.
        #[arg(long, default_value = "1/4", value_name = "Q")]
        delta_prime: String,
        /// Comma-separated kappa grid, e.g. 0.01,0.05,0.1.
        #[arg(long, value_name = "K[,K...]")]
        kappa: String,
        /// Lower box-length fraction lambda.
        #[arg(long)]
        lambda: f64,
        /// Deviation tolerance; rows exceeding it are flagged on stderr.
        #[arg(long)]
        eps: f64,
    },

    /// Compute one weighted box norm from an instance file.
    BoxNorm {
        /// Instance file (JSON), as produced by the fuzz counterexample
        /// dump: {"schema", "b_size", "h", "nu", "f"} with per-subset
        /// tables keyed by comma-joined element indices.
        #[arg(long, value_name = "FILE")]
        instance: PathBuf,
        /// Comma-separated subset of index positions, e.g. 0,2.
        /// Defaults to the full index set.
        #[arg(long, value_name = "I[,I...]")]
        bprime: Option<String>,
        /// Print the mixed-radix index table to stderr.
        #[arg(long)]
        debug: bool,
    },

    /// Stress the generalized von Neumann inequality on random dominated
    /// instances; any violation exits with code 3.
    VonNeumannFuzz {
        /// Number of random instances.
        #[arg(long)]
        count: u64,
        /// RNG seed; identical seeds replay identical instances.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Evaluate one cylinder-event measure under prime (or file) weights.
    Measure {
        /// Per-coordinate index sets: comma lists joined by semicolons,
        /// e.g. "0,1;0" for a two-dimensional grid.
        #[arg(long, value_name = "SETS")]
        omega: String,
        /// Anchor points as "(c,...);(c,...)"; empty for none.
        #[arg(long, default_value = "", value_name = "PTS")]
        b0: String,
        /// Event mode: superset or exact.
        #[arg(long, default_value = "superset")]
        mode: String,
        /// Original scale N.
        #[arg(long)]
        n: u64,
        /// Primorial threshold w.
        #[arg(long)]
        w: u64,
        /// Window offset fraction, e.g. 1/4.
        #[arg(long, default_value = "1/4", value_name = "Q")]
        delta_prime: String,
        /// Dilation-range fraction in (0, 1]; the measure averages over
        /// M = max(1, floor(kappa * N')) dilations.
        #[arg(long)]
        kappa: f64,
        /// Point-set file at the original scale. Defaults to the prime grid.
        #[arg(long, value_name = "FILE")]
        subset: Option<PathBuf>,
    },

    /// Count dilated constellations of a shape inside a point set.
    Count {
        /// Shape file (JSON): {"d", "vectors"}.
        #[arg(long, value_name = "FILE")]
        shape: PathBuf,
        /// Box bound N; points range over [1, N]^d, dilations over [1, N-1].
        #[arg(long)]
        limit: u64,
        /// Point-set file. Defaults to the d-fold prime grid.
        #[arg(long, value_name = "FILE")]
        subset: Option<PathBuf>,
        /// Stream every hit as a line "r a_1 ... a_d" before the report.
        #[arg(long)]
        list_hits: bool,
    },

    /// Count one shape across a grid of bounds and emit scaling CSV.
    Scaling {
        /// Shape file (JSON): {"d", "vectors"}.
        #[arg(long, value_name = "FILE")]
        shape: PathBuf,
        /// Comma-separated bounds; scientific notation allowed, e.g.
        /// 1e4,3e4,1e5.
        #[arg(long, value_name = "N[,N...]")]
        grid: String,
    },
}

/// The one JSON report wrapper. Field order is fixed by declaration;
/// nothing time- or thread-dependent is allowed inside.
#[derive(Serialize)]
struct Envelope<C: Serialize, R: Serialize> {
    schema: u32,
    version: &'static str,
    command: &'static str,
    seed: Option<u64>,
    config: C,
    result: R,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests exit 0 on stdout; usage errors
            // (unknown command, bad flag) land on stderr with exit 1.
            let code = u8::from(err.use_stderr());
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let start = Instant::now();
    match run(cli) {
        Ok(command) => {
            eprintln!("{command}: {:.3}s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<&'static str> {
    // The worker-thread count is execution detail, not experiment
    // configuration: results are identical for every value, so it is
    // pinned here and deliberately kept out of every report.
    if let Some(t) = resolve_threads(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure {t} worker threads: {e}")))?;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Cmd::Sieve { limit } => {
            cmd_sieve(limit, out)?;
            Ok("sieve")
        }
        Cmd::Wtrick { n, w, delta_prime, dim, subset } => {
            cmd_wtrick(n, w, &delta_prime, dim, subset.as_deref(), out)?;
            Ok("wtrick")
        }
        Cmd::LfCheck { forms, n, w, delta_prime, kappa, lambda, eps } => {
            cmd_lf_check(&forms, n, w, &delta_prime, &kappa, lambda, eps, out)?;
            Ok("lf-check")
        }
        Cmd::BoxNorm { instance, bprime, debug } => {
            cmd_box_norm(&instance, bprime.as_deref(), debug, out)?;
            Ok("box-norm")
        }
        Cmd::VonNeumannFuzz { count, seed } => {
            cmd_von_neumann_fuzz(count, seed, out)?;
            Ok("von-neumann-fuzz")
        }
        Cmd::Measure { omega, b0, mode, n, w, delta_prime, kappa, subset } => {
            cmd_measure(&omega, &b0, &mode, n, w, &delta_prime, kappa, subset.as_deref(), out)?;
            Ok("measure")
        }
        Cmd::Count { shape, limit, subset, list_hits } => {
            cmd_count(&shape, limit, subset.as_deref(), list_hits, out)?;
            Ok("count")
        }
        Cmd::Scaling { shape, grid } => {
            cmd_scaling(&shape, &grid, out)?;
            Ok("scaling")
        }
    }
}

// ---------------------------------------------------------------------------
// Plumbing.

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    let from_env = match std::env::var("CONSTLAB_THREADS") {
        Ok(raw) => {
            let t = raw.trim().parse::<usize>().map_err(|_| {
                Error::Config(format!(
                    "CONSTLAB_THREADS must be a positive integer, got {raw:?}"
                ))
            })?;
            Some(t)
        }
        Err(std::env::VarError::NotPresent) => None,
        Err(std::env::VarError::NotUnicode(_)) => {
            return Err(Error::Config("CONSTLAB_THREADS is not valid UTF-8".into()))
        }
    };
    let chosen = from_env.or(flag);
    if chosen == Some(0) {
        return Err(Error::Config("thread count must be positive".into()));
    }
    Ok(chosen)
}

/// Write `payload` to `out` when given, else to stdout.
fn emit_payload(out: Option<&Path>, payload: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, payload)?,
        None => std::io::stdout().lock().write_all(payload.as_bytes())?,
    }
    Ok(())
}

/// Serialize the envelope and send it to `out`/stdout with a trailing
/// newline.
fn emit_json<C: Serialize, R: Serialize>(
    out: Option<&Path>,
    command: &'static str,
    seed: Option<u64>,
    config: C,
    result: R,
) -> Result<()> {
    let envelope = Envelope { schema: 1, version: env!("CARGO_PKG_VERSION"), command, seed, config, result };
    let mut text = serde_json::to_string_pretty(&envelope)
        .map_err(|e| Error::Config(format!("cannot serialize the report: {e}")))?;
    text.push('\n');
    emit_payload(out, &text)
}

fn read_file(path: &Path, what: &str) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {what} {}: {e}", path.display())))
}

fn path_echo(path: Option<&Path>) -> Option<String> {
    path.map(|p| p.display().to_string())
}

/// Load the point set: an explicit file when given, the d-fold prime grid
/// otherwise.
fn load_subset(
    path: Option<&Path>,
    table: &PrimeTable,
    d: usize,
    bound: u64,
) -> Result<DenseSubset> {
    match path {
        Some(p) => {
            let text = read_file(p, "subset file")?;
            let a = DenseSubset::parse_text(&text, bound, "subset file")?;
            if a.d() != d {
                return Err(Error::Config(format!(
                    "subset file {} holds {}-dimensional points but the command needs dimension {d}",
                    p.display(),
                    a.d()
                )));
            }
            Ok(a)
        }
        None => DenseSubset::prime_grid(table, d, bound),
    }
}

/// Shape file that can disagree with itself, unlike [`Shape`]; the `d`
/// field is cross-checked against the vectors after parsing.
#[derive(serde::Deserialize)]
struct ShapeFile {
    d: usize,
    vectors: Vec<Vec<i64>>,
}

fn load_shape(path: &Path) -> Result<Shape> {
    let text = read_file(path, "shape file")?;
    let file: ShapeFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("cannot parse shape file {}: {e}", path.display())))?;
    let shape = Shape::new(file.vectors)?;
    if shape.d() != file.d {
        return Err(Error::Config(format!(
            "shape file {}: field \"d\" says {} but the \"vectors\" are {}-dimensional",
            path.display(),
            file.d,
            shape.d()
        )));
    }
    Ok(shape)
}

fn parse_ratio(text: &str) -> Result<Ratio> {
    Ratio::parse(text)
}

/// "0,1;0" -> [[0,1],[0]].
fn parse_omega(text: &str) -> Result<Vec<Vec<i64>>> {
    text.split(';')
        .map(|part| {
            part.split(',')
                .map(|c| {
                    c.trim().parse::<i64>().map_err(|_| {
                        Error::Config(format!("--omega: cannot parse index {c:?} as an integer"))
                    })
                })
                .collect()
        })
        .collect()
}

/// "(0,0);(1,1)" -> [[0,0],[1,1]]; empty input -> [].
fn parse_points(text: &str) -> Result<Vec<Vec<i64>>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(';')
        .map(|part| {
            let part = part.trim();
            let inner = part
                .strip_prefix('(')
                .and_then(|s| s.strip_suffix(')'))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "--b0: point {part:?} must be wrapped in parentheses, like (0,1)"
                    ))
                })?;
            inner
                .split(',')
                .map(|c| {
                    c.trim().parse::<i64>().map_err(|_| {
                        Error::Config(format!(
                            "--b0: cannot parse coordinate {c:?} as an integer"
                        ))
                    })
                })
                .collect()
        })
        .collect()
}

fn parse_kappa_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<f64>()
                .map_err(|_| Error::Config(format!("--kappa: cannot parse {part:?} as a number")))
        })
        .collect()
}

/// Comma-separated bounds with scientific notation: "1e4,3e4" -> [10000, 30000].
fn parse_grid(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|part| {
            let part = part.trim();
            let value = part
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("--grid: cannot parse {part:?} as a number")))?;
            if !(value.is_finite() && value >= 2.0 && value.fract() == 0.0 && value < 2f64.powi(53))
            {
                return Err(Error::Config(format!(
                    "--grid: bound {part:?} must be an integer of at least 2"
                )));
            }
            Ok(value as u64)
        })
        .collect()
}

/// "0,2" -> sorted, deduplicated index positions, validated against the
/// instance arity; `None` selects the full index set.
fn parse_index_subset(text: Option<&str>, b_size: usize) -> Result<Vec<usize>> {
    let mut positions = match text {
        None => (0..b_size).collect::<Vec<_>>(),
        Some(raw) => raw
            .split(',')
            .map(|part| {
                let part = part.trim();
                part.parse::<usize>().map_err(|_| {
                    Error::Config(format!("--bprime: cannot parse {part:?} as an index"))
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    positions.sort_unstable();
    positions.dedup();
    if let Some(&bad) = positions.iter().find(|&&i| i >= b_size) {
        return Err(Error::Config(format!(
            "--bprime: index {bad} is out of range for an instance with {b_size} positions"
        )));
    }
    Ok(positions)
}

/// Sieve far enough to cover every W-tricked candidate `W*x + b_i`; the
/// window itself only needs `n`, but the weights probe slightly past it.
fn weight_table(
    base: &PrimeTable,
    ctx: &constlab_core::WTrickContext,
) -> Result<Option<PrimeTable>> {
    let needed = (0..ctx.d()).map(|i| ctx.max_candidate(i)).max().unwrap_or(0);
    if needed > base.limit() {
        Ok(Some(sieve_primes(needed)?))
    } else {
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// Commands.

#[derive(Serialize)]
struct SieveConfig {
    limit: u64,
    out: Option<String>,
}

fn cmd_sieve(limit: u64, out: Option<&Path>) -> Result<()> {
    let table = sieve_primes(limit)?;
    if let Some(path) = out {
        let file = fs::File::create(path)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", path.display())))?;
        let mut writer = BufWriter::new(file);
        table.write_binary(&mut writer)?;
        writer.flush()?;
    }
    let config = SieveConfig { limit, out: path_echo(out) };
    let result = json!({ "limit": limit, "count": table.count() });
    // --out holds the binary table, so the report always goes to stdout.
    emit_json(None, "sieve", None, config, result)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct WtrickConfig {
    n: u64,
    w: u64,
    delta_prime: String,
    dim: usize,
    subset: Option<String>,
}

fn cmd_wtrick(
    n: u64,
    w: u64,
    delta_prime: &str,
    dim: usize,
    subset: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let delta = parse_ratio(delta_prime)?;
    let table = sieve_primes(n)?;
    let a = load_subset(subset, &table, dim, n)?;
    let params = WTrickParams { w, delta_prime: delta, n };
    let selection = select_residues(&a, &params)?;
    let ctx = selection.context;
    let bigger = weight_table(&table, &ctx)?;
    let wt = bigger.as_ref().unwrap_or(&table);
    let mut means = Vec::with_capacity(dim);
    for i in 0..dim {
        means.push(build_weight(wt, &ctx, i)?.mean);
    }
    let config = WtrickConfig {
        n,
        w,
        delta_prime: delta_prime.trim().to_string(),
        dim,
        subset: path_echo(subset),
    };
    let result = json!({
        "W": ctx.primorial.value,
        "phi": ctx.primorial.totient,
        "residues": ctx.residues,
        "nPrime": ctx.n_prime,
        "weightMeans": means,
    });
    emit_json(out, "wtrick", None, config, result)
}

#[allow(clippy::too_many_arguments)]
fn cmd_lf_check(
    forms: &Path,
    n: u64,
    w: u64,
    delta_prime: &str,
    kappa: &str,
    lambda: f64,
    eps: f64,
    out: Option<&Path>,
) -> Result<()> {
    let text = read_file(forms, "form-system file")?;
    let system: LinearFormSystem = serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!("cannot parse form-system file {}: {e}", forms.display()))
    })?;
    system.validate()?;
    let kappas = parse_kappa_grid(kappa)?;
    let delta = parse_ratio(delta_prime)?;
    let table = sieve_primes(n)?;
    let a = DenseSubset::prime_grid(&table, system.d, n)?;
    let params = WTrickParams { w, delta_prime: delta, n };
    let selection = select_residues(&a, &params)?;
    let ctx = selection.context;
    let bigger = weight_table(&table, &ctx)?;
    let wt = bigger.as_ref().unwrap_or(&table);
    let fields = (0..system.d)
        .map(|i| build_weight(wt, &ctx, i))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<NuRef> = fields.iter().map(|f| f.nu()).collect();
    let rows = lf_condition_scan(&system, &weights, ctx.n_prime, &kappas, lambda, eps)?;
    let mut csv = String::from("kappa,value,deviation,terms,seconds\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            row.kappa, row.report.value, row.report.deviation, row.report.term_count, row.report.seconds
        ));
    }
    emit_payload(out, &csv)?;
    for row in rows.iter().filter(|r| !r.within_eps) {
        eprintln!(
            "lf-check: kappa {} deviation {} exceeds eps {eps}",
            row.kappa, row.report.deviation
        );
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BoxNormConfig {
    instance: String,
    b_prime: Vec<usize>,
    debug: bool,
}

fn cmd_box_norm(
    instance: &Path,
    bprime: Option<&str>,
    debug: bool,
    out: Option<&Path>,
) -> Result<()> {
    let text = read_file(instance, "instance file")?;
    let inst = BoxInstance::from_json(&text)?;
    let positions = parse_index_subset(bprime, inst.b_size)?;
    let mask = positions.iter().fold(0usize, |acc, &i| acc | (1 << i));
    if debug {
        eprint!("{}", index_table(&inst, mask));
    }
    let norm = box_norm(&inst, mask)?;
    let config = BoxNormConfig {
        instance: instance.display().to_string(),
        b_prime: positions.clone(),
        debug,
    };
    let result = json!({ "bPrime": positions, "norm": norm });
    emit_json(out, "box-norm", None, config, result)
}

#[derive(Serialize)]
struct FuzzConfig {
    count: u64,
}

fn cmd_von_neumann_fuzz(count: u64, seed: u64, out: Option<&Path>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0u64;
    let mut first: Option<serde_json::Value> = None;
    for _ in 0..count {
        let b_size = rng.gen_range(1..=3usize);
        let h = rng.gen_range(2..=6usize);
        let inst = random_dominated_instance(&mut rng, b_size, h);
        let report = von_neumann_check(&inst)?;
        if !report.holds {
            failures += 1;
            if first.is_none() {
                let dump: serde_json::Value = serde_json::from_str(&inst.to_json())
                    .expect("instance dump is valid JSON");
                first = Some(json!({
                    "lhs": report.lhs,
                    "rhs": report.rhs,
                    "slack": report.slack,
                    "instance": dump,
                }));
            }
        }
    }
    let config = FuzzConfig { count };
    let result = json!({
        "count": count,
        "failures": failures,
        "firstCounterexample": first,
    });
    emit_json(out, "von-neumann-fuzz", Some(seed), config, result)?;
    if failures > 0 {
        return Err(Error::NumericalIntegrity(format!(
            "{failures} of {count} fuzz instances violated the inequality"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct MeasureConfig {
    omega: Vec<Vec<i64>>,
    b0: Vec<Vec<i64>>,
    mode: EventMode,
    n: u64,
    w: u64,
    delta_prime: String,
    kappa: f64,
    /// Derived dilation range M = max(1, floor(kappa * N')).
    m: u64,
    subset: Option<String>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_measure(
    omega: &str,
    b0: &str,
    mode: &str,
    n: u64,
    w: u64,
    delta_prime: &str,
    kappa: f64,
    subset: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let omega_sets = parse_omega(omega)?;
    let b0_points = parse_points(b0)?;
    let mode = match mode {
        "superset" => EventMode::Superset,
        "exact" => EventMode::Exact,
        other => {
            return Err(Error::Config(format!(
                "--mode must be superset or exact, got {other:?}"
            )))
        }
    };
    if !(kappa > 0.0 && kappa <= 1.0 && kappa.is_finite()) {
        return Err(Error::Config(format!(
            "--kappa must lie in (0, 1], got {kappa}"
        )));
    }
    let spec = CylinderSpec::new(omega_sets)?;
    let d = spec.d();
    let event = CylinderEvent::new(spec, b0_points, mode)?;
    let delta = parse_ratio(delta_prime)?;
    let table = sieve_primes(n)?;
    let a = load_subset(subset, &table, d, n)?;
    let params = WTrickParams { w, delta_prime: delta, n };
    let selection = select_residues(&a, &params)?;
    let ctx = selection.context;
    let bigger = weight_table(&table, &ctx)?;
    let wt = bigger.as_ref().unwrap_or(&table);
    let fields = (0..d).map(|i| build_weight(wt, &ctx, i)).collect::<Result<Vec<_>>>()?;
    let weights: Vec<NuRef> = fields.iter().map(|f| f.nu()).collect();
    let rescaled = rescale_subset(&a, &ctx)?;
    let m = ((kappa * ctx.n_prime as f64).floor() as u64).max(1);
    let mparams = MeasureParams { n_prime: ctx.n_prime, m };
    let report = measure(&event, &rescaled, &weights, &mparams)?;
    eprintln!("measure: evaluated in {:.3}s", report.seconds);
    let config = MeasureConfig {
        omega: event.spec().omega().to_vec(),
        b0: event.b0().to_vec(),
        mode,
        n,
        w,
        delta_prime: delta_prime.trim().to_string(),
        kappa,
        m,
        subset: path_echo(subset),
    };
    emit_json(out, "measure", None, config, report)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct CountConfig {
    shape: String,
    limit: u64,
    subset: Option<String>,
    list_hits: bool,
}

fn cmd_count(
    shape_path: &Path,
    limit: u64,
    subset: Option<&Path>,
    list_hits: bool,
    out: Option<&Path>,
) -> Result<()> {
    let shape = load_shape(shape_path)?;
    let table = sieve_primes(limit)?;
    let a = load_subset(subset, &table, shape.d(), limit)?;
    let config = CountConfig {
        shape: shape_path.display().to_string(),
        limit,
        subset: path_echo(subset),
        list_hits,
    };
    if list_hits {
        // Hit lines take the --out slot; the report then goes to stdout.
        let start = Instant::now();
        let mut sink: Box<dyn Write> = match out {
            Some(path) => Box::new(BufWriter::new(fs::File::create(path).map_err(|e| {
                Error::Config(format!("cannot create {}: {e}", path.display()))
            })?)),
            None => Box::new(BufWriter::new(std::io::stdout().lock())),
        };
        let total = hits(&shape, &a, |r, point| {
            write!(sink, "{r}")?;
            for c in point {
                write!(sink, " {c}")?;
            }
            writeln!(sink)?;
            Ok(())
        })?;
        sink.flush()?;
        drop(sink);
        eprintln!("count: streamed hits in {:.3}s", start.elapsed().as_secs_f64());
        let result = json!({
            "n": limit,
            "count": total,
            "normalized": normalized_count(&shape, limit, total),
        });
        emit_json(None, "count", None, config, result)
    } else {
        let report = count_fast(&shape, &a)?;
        eprintln!("count: evaluated in {:.3}s", report.seconds);
        emit_json(out, "count", None, config, report)
    }
}

fn cmd_scaling(shape_path: &Path, grid: &str, out: Option<&Path>) -> Result<()> {
    let shape = load_shape(shape_path)?;
    let bounds = parse_grid(grid)?;
    let rows = scaling_report(&shape, &bounds, |n| {
        let table = sieve_primes(n)?;
        DenseSubset::prime_grid(&table, shape.d(), n)
    })?;
    let mut csv = String::from("N,count,normalized,seconds\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{:.6}\n",
            row.n, row.count, row.normalized, row.seconds
        ));
    }
    emit_payload(out, &csv)
}
