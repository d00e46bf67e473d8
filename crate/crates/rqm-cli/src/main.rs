//! `rqm` — PMF inspection, privacy bound evaluation, divergence sweeps,
//! and federated training simulation, with reproducible seeded CSV/JSON
//! outputs.

mod config;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rqm_core::accountant::{
    aggregate_divergence, balanced_split, divergence_sweep, max_divergence, theorem1_bound,
    worst_case_neighbors, Alpha, DivergenceQuery, Mechanism, SweepAxis, SweepRow, SweepSpec,
};
use rqm_core::distribution::{rqm_pmf, rqm_pmf_bruteforce};
use rqm_core::mechanism::{decode_level, RqmParams};
use rqm_core::pbm::{pbm_pmf, PbmParams};
use rqm_core::selftest::run_selftest;
use rqm_core::sim::{run_training, DatasetSpec, ModelSpec, SimConfig, SimMechanism};

const FORMAT_VERSION: u32 = 1;

// Exit codes: 0 success, 1 validation error, 2 internal consistency
// failure, 3 selftest failure.
#[derive(Debug)]
enum CliError {
    Validation(String),
    Internal(String),
    Selftest,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Internal(_) => 2,
            CliError::Selftest => 3,
        }
    }
}

impl From<rqm_core::Error> for CliError {
    fn from(e: rqm_core::Error) -> Self {
        match e {
            rqm_core::Error::InternalConsistency(msg) => CliError::Internal(msg),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("io error: {e}"))
    }
}

type CliResult<T> = Result<T, CliError>;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

#[derive(Parser)]
#[command(
    name = "rqm",
    version,
    about = "Randomized quantization mechanism toolkit"
)]
struct Cli {
    /// TOML config file; one [section] per subcommand. Explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; all randomness derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the exact output distribution of a mechanism for one input.
    Pmf(PmfArgs),
    /// Evaluate the analytic single-device privacy bound.
    Bound(BoundArgs),
    /// Renyi divergence between aggregated outputs on neighboring inputs.
    Divergence(DivergenceArgs),
    /// Tabulate RQM-vs-PBM divergences along a parameter axis.
    Sweep(SweepArgs),
    /// Run the federated DP-SGD simulation and write metric CSVs.
    Simulate(SimulateArgs),
    /// Run the reduced-scale invariant suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct PmfArgs {
    /// Mechanism: rqm or pbm.
    #[arg(long)]
    mech: Option<String>,
    /// Scalar input in [-c, c].
    #[arg(long, allow_negative_numbers = true)]
    x: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Range extension (rqm). Defaults to c.
    #[arg(long)]
    delta: Option<f64>,
    /// Number of quantization levels (rqm).
    #[arg(long)]
    m: Option<usize>,
    /// Interior-level inclusion probability (rqm).
    #[arg(long)]
    q: Option<f64>,
    /// Binomial encoding slope (pbm).
    #[arg(long)]
    theta: Option<f64>,
    /// Binomial trial count (pbm). Defaults to m - 1.
    #[arg(long)]
    trials: Option<usize>,
    /// Add a brute-force oracle column (rqm, m <= 20).
    #[arg(long)]
    oracle: bool,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    /// Also print the numeric max divergence at (c, -c) and check
    /// domination.
    #[arg(long)]
    compare_numeric: bool,
}

#[derive(Args)]
struct DivergenceArgs {
    #[arg(long)]
    mech: Option<String>,
    /// Renyi order: a number > 1, or "inf".
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated device inputs.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
    /// Comma-separated neighboring inputs (one entry differs).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x_prime: Option<Vec<f64>>,
}

#[derive(Args)]
struct SweepArgs {
    /// Preset: fig3, d15, or d35. Writes one CSV per axis into --out
    /// (a directory).
    #[arg(long)]
    preset: Option<String>,
    /// Manual axis: n, alpha, or x.
    #[arg(long)]
    axis: Option<String>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Renyi order for n- and x-axis sweeps.
    #[arg(long)]
    alpha: Option<f64>,
    /// Largest device count for n-axis sweeps (rows n = 1..n_max).
    #[arg(long)]
    n_max: Option<usize>,
    /// Device count for alpha-axis sweeps.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha_min: Option<f64>,
    #[arg(long)]
    alpha_max: Option<f64>,
    #[arg(long)]
    alpha_points: Option<usize>,
    /// Deterministic neighbor split; defaults to the balanced split.
    #[arg(long)]
    split_k: Option<usize>,
    /// Use the seeded random +-c neighbor assignment instead.
    #[arg(long)]
    neighbor_seed: Option<u64>,
    /// Output file (manual sweep) or directory (preset).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    total_devices: Option<usize>,
    #[arg(long)]
    devices_per_round: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    clipping: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    samples_per_device: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    heterogeneity: Option<f64>,
    /// Comma-separated mechanisms: noise_free, rqm, pbm.
    #[arg(long, value_delimiter = ',')]
    mechanisms: Option<Vec<String>>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Record the per-round decode bias diagnostic.
    #[arg(long)]
    diagnostic: bool,
    /// Output directory for the metric CSVs and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Negative control: run against a deliberately broken evaluation and
    /// expect failure.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Validation(msg) => eprintln!("error: {msg}"),
                CliError::Internal(msg) => eprintln!("internal consistency failure: {msg}"),
                CliError::Selftest => eprintln!("selftest failed"),
            }
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let file = config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Pmf(args) => cmd_pmf(args, &file.pmf, cli.seed),
        Command::Bound(args) => cmd_bound(args, &file.bound),
        Command::Divergence(args) => cmd_divergence(args, &file.divergence),
        Command::Sweep(args) => cmd_sweep(args, &file.sweep, cli.seed),
        Command::Simulate(args) => cmd_simulate(args, &file.simulate, cli.seed),
        Command::Selftest(args) => cmd_selftest(args),
    }
}

fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| validation(format!("missing required parameter {flag}")))
}

fn write_table(
    out: Option<&Path>,
    meta: &[String],
    header: &str,
    rows: &[String],
) -> CliResult<()> {
    let mut text = String::new();
    for line in meta {
        writeln!(text, "# {line}").unwrap();
    }
    writeln!(text, "{header}").unwrap();
    for row in rows {
        writeln!(text, "{row}").unwrap();
    }
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn rqm_params_from(
    c: Option<f64>,
    delta: Option<f64>,
    m: Option<usize>,
    q: Option<f64>,
) -> CliResult<RqmParams> {
    let c = require(c, "--c")?;
    let delta = delta.unwrap_or(c);
    let m = m.unwrap_or(16);
    let q = require(q, "--q")?;
    Ok(RqmParams::new(c, delta, m, q)?)
}

fn pbm_params_from(
    c: Option<f64>,
    theta: Option<f64>,
    trials: Option<usize>,
    m: Option<usize>,
) -> CliResult<PbmParams> {
    let c = require(c, "--c")?;
    let theta = require(theta, "--theta")?;
    // Default to matched support cardinality with an m-level quantizer.
    let trials = trials.unwrap_or_else(|| m.unwrap_or(16).saturating_sub(1));
    Ok(PbmParams::new(c, theta, trials)?)
}

fn cmd_pmf(args: PmfArgs, section: &config::PmfSection, seed: u64) -> CliResult<()> {
    let mech = args
        .mech
        .or_else(|| section.mech.clone())
        .unwrap_or_else(|| "rqm".into());
    let x = require(args.x.or(section.x), "--x")?;
    let mut meta = vec![
        format!("format_version={FORMAT_VERSION}"),
        format!("seed={seed}"),
    ];
    match mech.as_str() {
        "rqm" => {
            let params = rqm_params_from(
                args.c.or(section.c),
                args.delta.or(section.delta),
                args.m.or(section.m),
                args.q.or(section.q),
            )?;
            meta.push(format!(
                "mech=rqm x={x} c={} delta={} m={} q={}",
                params.c(),
                params.delta(),
                params.m(),
                params.q()
            ));
            let pmf = rqm_pmf(x, &params)?;
            let oracle = if args.oracle {
                Some(rqm_pmf_bruteforce(x, &params)?)
            } else {
                None
            };
            let header = if oracle.is_some() {
                "index,level,probability,oracle_probability"
            } else {
                "index,level,probability"
            };
            let rows: Vec<String> = (0..params.m())
                .map(|i| {
                    let level = decode_level(i, &params).unwrap();
                    match &oracle {
                        Some(bf) => {
                            format!("{i},{level},{:.17e},{:.17e}", pmf.probs()[i], bf.probs()[i])
                        }
                        None => format!("{i},{level},{:.17e}", pmf.probs()[i]),
                    }
                })
                .collect();
            write_table(args.output.as_deref(), &meta, header, &rows)
        }
        "pbm" => {
            if args.oracle {
                return Err(validation("--oracle applies to the rqm mechanism only"));
            }
            let params = pbm_params_from(
                args.c.or(section.c),
                args.theta.or(section.theta),
                args.trials.or(section.trials),
                args.m.or(section.m),
            )?;
            meta.push(format!(
                "mech=pbm x={x} c={} theta={} trials={}",
                params.c(),
                params.theta(),
                params.trials()
            ));
            let pmf = pbm_pmf(x, &params)?;
            let rows: Vec<String> = pmf
                .probs()
                .iter()
                .enumerate()
                .map(|(i, p)| format!("{i},{i},{p:.17e}"))
                .collect();
            write_table(
                args.output.as_deref(),
                &meta,
                "index,level,probability",
                &rows,
            )
        }
        other => Err(validation(format!(
            "unknown mechanism '{other}' (expected rqm or pbm)"
        ))),
    }
}

fn cmd_bound(args: BoundArgs, section: &config::BoundSection) -> CliResult<()> {
    let params = rqm_params_from(
        args.c.or(section.c),
        args.delta.or(section.delta),
        args.m.or(section.m),
        args.q.or(section.q),
    )?;
    let bound = theorem1_bound(&params);
    println!("analytic_bound={bound}");
    if args.compare_numeric {
        let p = rqm_pmf(params.c(), &params)?;
        let q = rqm_pmf(-params.c(), &params)?;
        let numeric = max_divergence(&p, &q)?;
        println!("numeric_max_divergence={numeric}");
        if numeric > bound + 1e-9 {
            return Err(CliError::Internal(format!(
                "numeric max divergence {numeric} exceeds analytic bound {bound}"
            )));
        }
    }
    Ok(())
}

fn parse_alpha(text: &str) -> CliResult<Alpha> {
    if text.eq_ignore_ascii_case("inf") || text.eq_ignore_ascii_case("infinity") {
        return Ok(Alpha::Infinity);
    }
    let value: f64 = text
        .parse()
        .map_err(|_| validation(format!("cannot parse Renyi order '{text}'")))?;
    let alpha = Alpha::Finite(value);
    alpha.validate()?;
    Ok(alpha)
}

fn cmd_divergence(args: DivergenceArgs, section: &config::DivergenceSection) -> CliResult<()> {
    let mech_name = args
        .mech
        .or_else(|| section.mech.clone())
        .unwrap_or_else(|| "rqm".into());
    let alpha = parse_alpha(
        &args
            .alpha
            .or_else(|| section.alpha.clone())
            .unwrap_or_else(|| "2".into()),
    )?;
    let mechanism = match mech_name.as_str() {
        "rqm" => Mechanism::Rqm(rqm_params_from(
            args.c.or(section.c),
            args.delta.or(section.delta),
            args.m.or(section.m),
            args.q.or(section.q),
        )?),
        "pbm" => Mechanism::Pbm(pbm_params_from(
            args.c.or(section.c),
            args.theta.or(section.theta),
            args.trials.or(section.trials),
            args.m.or(section.m),
        )?),
        other => {
            return Err(validation(format!(
                "unknown mechanism '{other}' (expected rqm or pbm)"
            )))
        }
    };
    let inputs = require(args.x.or_else(|| section.x.clone()), "--x")?;
    let inputs_prime = require(
        args.x_prime.or_else(|| section.x_prime.clone()),
        "--x-prime",
    )?;
    let eps = aggregate_divergence(&DivergenceQuery {
        alpha,
        mechanism,
        inputs,
        inputs_prime,
    })?;
    println!("epsilon={eps}");
    Ok(())
}

fn log_spaced(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo * (hi / lo).powf(i as f64 / (points - 1) as f64))
        .collect()
}

fn sweep_rows(table: &[SweepRow]) -> Vec<String> {
    table
        .iter()
        .map(|r| format!("{},{:.17e},{:.17e}", r.axis_value, r.eps_rqm, r.eps_pbm))
        .collect()
}

struct PresetPair {
    name: &'static str,
    delta_ratio: f64,
    q: f64,
    theta: f64,
}

fn preset_pair(name: &str) -> CliResult<PresetPair> {
    match name {
        "fig3" => Ok(PresetPair {
            name: "fig3",
            delta_ratio: 1.0,
            q: 0.42,
            theta: 0.25,
        }),
        "d15" => Ok(PresetPair {
            name: "d15",
            delta_ratio: 2.33,
            q: 0.42,
            theta: 0.15,
        }),
        "d35" => Ok(PresetPair {
            name: "d35",
            delta_ratio: 0.429,
            q: 0.49,
            theta: 0.35,
        }),
        other => Err(validation(format!(
            "unknown preset '{other}' (expected fig3, d15, or d35)"
        ))),
    }
}

fn cmd_sweep(args: SweepArgs, section: &config::SweepSection, seed: u64) -> CliResult<()> {
    let neighbor_seed = args.neighbor_seed.or(section.neighbor_seed);
    let preset = args.preset.or_else(|| section.preset.clone());

    if let Some(name) = preset {
        let pair = preset_pair(&name)?;
        let out_dir = require(args.out, "--out (directory for preset output)")?;
        std::fs::create_dir_all(&out_dir)?;
        let c = args.c.or(section.c).unwrap_or(1.5);
        let m = args.m.or(section.m).unwrap_or(16);
        let rqm = RqmParams::new(c, pair.delta_ratio * c, m, pair.q)?;
        // Preset uses support {0..m}; see the pmf support ambiguity note.
        let trials = args.trials.or(section.trials).unwrap_or(m);
        let pbm = PbmParams::new(c, pair.theta, trials)?;
        let meta_base = vec![
            format!("format_version={FORMAT_VERSION}"),
            format!("seed={seed}"),
            format!(
                "preset={} c={c} m={m} delta={} q={} theta={} trials={trials}",
                pair.name,
                rqm.delta(),
                rqm.q(),
                pbm.theta()
            ),
        ];

        let mut outputs = Vec::new();
        let n_table = divergence_sweep(&SweepSpec {
            rqm,
            pbm,
            axis: SweepAxis::DeviceCount {
                n_values: (1..=40).collect(),
                alpha: Alpha::Finite(2.0),
            },
            neighbor_seed,
        })?;
        let path = out_dir.join(format!("{}_n_axis.csv", pair.name));
        let mut meta = meta_base.clone();
        meta.push("axis=n alpha=2".into());
        write_table(
            Some(&path),
            &meta,
            "n,eps_rqm,eps_pbm",
            &sweep_rows(&n_table),
        )?;
        outputs.push(path);

        for n in [1usize, 40] {
            let table = divergence_sweep(&SweepSpec {
                rqm,
                pbm,
                axis: SweepAxis::Order {
                    alphas: log_spaced(2.0, 1000.0, 30),
                    n,
                },
                neighbor_seed,
            })?;
            let path = out_dir.join(format!("{}_alpha_axis_n{n}.csv", pair.name));
            let mut meta = meta_base.clone();
            meta.push(format!("axis=alpha n={n}"));
            write_table(
                Some(&path),
                &meta,
                "alpha,eps_rqm,eps_pbm",
                &sweep_rows(&table),
            )?;
            outputs.push(path);
        }
        for p in &outputs {
            println!("wrote {}", p.display());
        }
        return Ok(());
    }

    let axis_name = require(args.axis.or_else(|| section.axis.clone()), "--axis")?;
    let rqm = rqm_params_from(
        args.c.or(section.c),
        args.delta.or(section.delta),
        args.m.or(section.m),
        args.q.or(section.q),
    )?;
    let pbm = pbm_params_from(
        args.c.or(section.c),
        args.theta.or(section.theta),
        args.trials.or(section.trials),
        args.m.or(section.m),
    )?;
    let (axis, header) = match axis_name.as_str() {
        "n" => {
            let n_max = args.n_max.or(section.n_max).unwrap_or(40);
            let alpha = Alpha::Finite(args.alpha.or(section.alpha).unwrap_or(2.0));
            (
                SweepAxis::DeviceCount {
                    n_values: (1..=n_max).collect(),
                    alpha,
                },
                "n,eps_rqm,eps_pbm",
            )
        }
        "alpha" => {
            let lo = args.alpha_min.or(section.alpha_min).unwrap_or(2.0);
            let hi = args.alpha_max.or(section.alpha_max).unwrap_or(1000.0);
            let points = args.alpha_points.or(section.alpha_points).unwrap_or(30);
            (
                SweepAxis::Order {
                    alphas: log_spaced(lo, hi, points),
                    n: args.n.or(section.n).unwrap_or(1),
                },
                "alpha,eps_rqm,eps_pbm",
            )
        }
        "x" => {
            let c = rqm.c();
            let xs = (0..21).map(|i| -c + 2.0 * c * i as f64 / 20.0).collect();
            let alpha = Alpha::Finite(args.alpha.or(section.alpha).unwrap_or(2.0));
            (SweepAxis::Input { xs, alpha }, "x,eps_rqm,eps_pbm")
        }
        other => {
            return Err(validation(format!(
                "unknown axis '{other}' (expected n, alpha, or x)"
            )))
        }
    };

    // split_k is honored by materializing the fixed-split query directly.
    if let Some(split_k) = args.split_k.or(section.split_k) {
        if let SweepAxis::DeviceCount { n_values, alpha } = &axis {
            let rows: Vec<String> = n_values
                .iter()
                .map(|&n| -> CliResult<String> {
                    let k = split_k.min(balanced_split(n).max(split_k).min(n - 1));
                    let (x, xp) = worst_case_neighbors(n, rqm.c(), k.min(n - 1))?;
                    let eps_rqm = aggregate_divergence(&DivergenceQuery {
                        alpha: *alpha,
                        mechanism: Mechanism::Rqm(rqm),
                        inputs: x.clone(),
                        inputs_prime: xp.clone(),
                    })?;
                    let eps_pbm = aggregate_divergence(&DivergenceQuery {
                        alpha: *alpha,
                        mechanism: Mechanism::Pbm(pbm),
                        inputs: x,
                        inputs_prime: xp,
                    })?;
                    Ok(format!("{n},{eps_rqm:.17e},{eps_pbm:.17e}"))
                })
                .collect::<CliResult<_>>()?;
            let meta = vec![
                format!("format_version={FORMAT_VERSION}"),
                format!("seed={seed}"),
                format!(
                    "axis=n split_k={split_k} c={} delta={} m={} q={} theta={} trials={}",
                    rqm.c(),
                    rqm.delta(),
                    rqm.m(),
                    rqm.q(),
                    pbm.theta(),
                    pbm.trials()
                ),
            ];
            return write_table(args.out.as_deref(), &meta, header, &rows);
        }
        return Err(validation("--split-k only applies to the n axis"));
    }

    let table = divergence_sweep(&SweepSpec {
        rqm,
        pbm,
        axis,
        neighbor_seed,
    })?;
    let meta = vec![
        format!("format_version={FORMAT_VERSION}"),
        format!("seed={seed}"),
        format!(
            "axis={axis_name} c={} delta={} m={} q={} theta={} trials={} neighbor_seed={:?}",
            rqm.c(),
            rqm.delta(),
            rqm.m(),
            rqm.q(),
            pbm.theta(),
            pbm.trials(),
            neighbor_seed
        ),
    ];
    write_table(args.out.as_deref(), &meta, header, &sweep_rows(&table))
}

#[derive(serde::Serialize)]
struct ResolvedSimulate {
    total_devices: usize,
    devices_per_round: usize,
    rounds: usize,
    learning_rate: f64,
    clipping: f64,
    feature_dim: usize,
    classes: usize,
    samples_per_device: usize,
    separation: f64,
    heterogeneity: f64,
    mechanisms: Vec<String>,
    m: usize,
    delta: f64,
    q: f64,
    theta: f64,
    trials: usize,
    diagnostic: bool,
    seed: u64,
}

#[derive(serde::Serialize)]
struct Manifest {
    tool_version: &'static str,
    format_version: u32,
    config: ResolvedSimulate,
    config_hash: String,
    outputs: Vec<String>,
}

fn cmd_simulate(args: SimulateArgs, section: &config::SimulateSection, seed: u64) -> CliResult<()> {
    let out_dir = require(args.out, "--out")?;
    let resolved = ResolvedSimulate {
        total_devices: args.total_devices.or(section.total_devices).unwrap_or(20),
        devices_per_round: args
            .devices_per_round
            .or(section.devices_per_round)
            .unwrap_or(8),
        rounds: args.rounds.or(section.rounds).unwrap_or(200),
        learning_rate: args.learning_rate.or(section.learning_rate).unwrap_or(0.8),
        clipping: args.clipping.or(section.clipping).unwrap_or(0.5),
        feature_dim: args.feature_dim.or(section.feature_dim).unwrap_or(3),
        classes: args.classes.or(section.classes).unwrap_or(3),
        samples_per_device: args
            .samples_per_device
            .or(section.samples_per_device)
            .unwrap_or(40),
        separation: args.separation.or(section.separation).unwrap_or(3.0),
        heterogeneity: args.heterogeneity.or(section.heterogeneity).unwrap_or(0.5),
        mechanisms: args
            .mechanisms
            .or_else(|| section.mechanisms.clone())
            .unwrap_or_else(|| vec!["noise_free".into(), "rqm".into(), "pbm".into()]),
        m: args.m.or(section.m).unwrap_or(16),
        delta: args
            .delta
            .or(section.delta)
            .unwrap_or(args.clipping.or(section.clipping).unwrap_or(0.5)),
        q: args.q.or(section.q).unwrap_or(0.42),
        theta: args.theta.or(section.theta).unwrap_or(0.25),
        trials: args
            .trials
            .or(section.trials)
            .unwrap_or(args.m.or(section.m).unwrap_or(16) - 1),
        diagnostic: args.diagnostic || section.diagnostic.unwrap_or(false),
        seed,
    };

    let config_json = serde_json::to_string_pretty(&resolved)
        .map_err(|e| CliError::Internal(format!("config serialization: {e}")))?;
    let config_hash = format!("{:x}", Sha256::digest(config_json.as_bytes()));

    std::fs::create_dir_all(&out_dir)?;
    let model = ModelSpec {
        feature_dim: resolved.feature_dim,
        classes: resolved.classes,
    };
    let dataset = DatasetSpec {
        samples_per_device: resolved.samples_per_device,
        separation: resolved.separation,
        heterogeneity: resolved.heterogeneity,
    };

    let mut outputs = Vec::new();
    let mut combined_rows = Vec::new();
    for name in &resolved.mechanisms {
        let mechanism = match name.as_str() {
            "noise_free" => SimMechanism::NoiseFree,
            "rqm" => SimMechanism::Rqm(RqmParams::new(
                resolved.clipping,
                resolved.delta,
                resolved.m,
                resolved.q,
            )?),
            "pbm" => SimMechanism::Pbm(PbmParams::new(
                resolved.clipping,
                resolved.theta,
                resolved.trials,
            )?),
            other => {
                return Err(validation(format!(
                    "unknown mechanism '{other}' (expected noise_free, rqm, or pbm)"
                )))
            }
        };
        let sim_config = SimConfig {
            total_devices: resolved.total_devices,
            devices_per_round: resolved.devices_per_round,
            rounds: resolved.rounds,
            learning_rate: resolved.learning_rate,
            clipping: resolved.clipping,
            mechanism,
            model,
            dataset,
            master_seed: seed,
            diagnostic_mode: resolved.diagnostic,
        };
        let run = run_training(&sim_config)?;

        let meta = vec![
            format!("format_version={FORMAT_VERSION}"),
            format!("seed={seed}"),
            format!("mechanism={name} config_hash={config_hash}"),
        ];
        let rows: Vec<String> = run
            .metrics
            .iter()
            .map(|m| {
                format!(
                    "{},{:.17e},{:.17e},{},{name},{seed}",
                    m.round, m.loss, m.accuracy, m.bits_per_device
                )
            })
            .collect();
        let path = out_dir.join(format!("metrics_{name}.csv"));
        write_table(
            Some(&path),
            &meta,
            "round,loss,accuracy,bits_per_device,mechanism,seed",
            &rows,
        )?;
        combined_rows.extend(rows);
        outputs.push(path);
    }

    let combined_path = out_dir.join("metrics_combined.csv");
    let meta = vec![
        format!("format_version={FORMAT_VERSION}"),
        format!("seed={seed}"),
        format!("config_hash={config_hash}"),
    ];
    write_table(
        Some(&combined_path),
        &meta,
        "round,loss,accuracy,bits_per_device,mechanism,seed",
        &combined_rows,
    )?;
    outputs.push(combined_path);

    let manifest_path = out_dir.join("manifest.json");
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        format_version: FORMAT_VERSION,
        config: resolved,
        config_hash,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Internal(format!("manifest serialization: {e}")))?,
    )?;
    for p in outputs.iter().chain(std::iter::once(&manifest_path)) {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_selftest(args: SelftestArgs) -> CliResult<()> {
    let report = run_selftest(args.inject_fault);
    for suite in &report.suites {
        println!(
            "{}: {} ({})",
            suite.name,
            if suite.passed { "PASS" } else { "FAIL" },
            suite.detail
        );
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::Selftest)
    }
}
