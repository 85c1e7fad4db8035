//! Command-line front end. Every subcommand renders to a `String` so the
//! binary stays a thin wrapper and the output can be checked in tests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use crate::accumulate::{gemm, AccumFormat, AccumStrategy, AccumulatorConfig, Matrix};
use crate::analysis::{
    comm_time, crossover_elements, group_size_sweep, CostModel, ExperimentReport, Generator,
    GradientSpec, SignMode, SweepConfig,
};
use crate::aps::{Bucket, ScalingPolicy};
use crate::collectives::Topology;
use crate::softfloat::{round_wide, to_bits, FloatFormat, RoundingMode};

#[derive(Debug, Parser)]
#[command(
    name = "apsim",
    version,
    about = "Low-precision all-reduce simulator with auto-precision scaling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the representable range of the standard formats and any extra ones.
    Formats {
        #[arg(long = "format", value_name = "E,M")]
        formats: Vec<FloatFormat>,
    },
    /// Round a decimal value into a format and show its encoding.
    Cast {
        #[arg(allow_hyphen_values = true)]
        value: String,
        #[arg(long, value_name = "E,M", default_value = "5,2")]
        format: FloatFormat,
        #[arg(long, value_enum, default_value_t = RoundingArg::Ne)]
        rounding: RoundingArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run ring plus the given hierarchical group sizes and report round-off error.
    Simulate(RunArgs),
    /// Like `simulate`, defaulting to every group size that divides the node count.
    Sweep(RunArgs),
    /// Compare modeled communication time of APS against a wider baseline format.
    Cost(CostArgs),
    /// Multiply random matrices in a low-precision format and report the error.
    GemmDemo(GemmArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundingArg {
    Ne,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Sequential,
    Kahan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignArg {
    Symmetric,
    Positive,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long = "group-size", value_name = "K")]
    pub group_sizes: Vec<usize>,
    #[arg(long = "format", value_name = "E,M")]
    pub formats: Vec<String>,
    /// aps, none or loss-scale:EXP
    #[arg(long, allow_hyphen_values = true)]
    pub policy: Option<String>,
    #[arg(long, value_enum)]
    pub rounding: Option<RoundingArg>,
    #[arg(long, value_enum)]
    pub accumulate: Option<StrategyArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// lognormal:MU,SIGMA, normal:MU,SIGMA or file:PATH
    #[arg(long, allow_hyphen_values = true)]
    pub dist: Option<String>,
    #[arg(long, value_enum)]
    pub sign: Option<SignArg>,
    #[arg(long)]
    pub elements: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Write the CSV report here instead of standard output.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CostArgs {
    #[arg(long, default_value_t = 256)]
    pub nodes: usize,
    #[arg(long = "group-size", value_name = "K")]
    pub group_sizes: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub elements: usize,
    /// Format sent after APS scaling.
    #[arg(long, value_name = "E,M", default_value = "5,2")]
    pub format: FloatFormat,
    /// Format sent without APS.
    #[arg(long, value_name = "E,M", default_value = "5,10")]
    pub baseline: FloatFormat,
    #[arg(long, default_value_t = 5.0e-6, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0e-9, allow_negative_numbers = true)]
    pub beta: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GemmArgs {
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Element format of the inputs.
    #[arg(long, value_name = "E,M", default_value = "5,10")]
    pub format: FloatFormat,
    /// Accumulator format, or `fp32` for native binary32.
    #[arg(long, value_name = "E,M", default_value = "5,10")]
    pub accumulator: String,
    #[arg(long, value_enum, default_value_t = RoundingArg::Ne)]
    pub rounding: RoundingArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Validated settings for `simulate` and `sweep`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sweep: SweepConfig,
    pub spec: GradientSpec,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    nodes: Option<usize>,
    group_sizes: Option<Vec<usize>>,
    formats: Option<Vec<String>>,
    policy: Option<String>,
    rounding: Option<RoundingArg>,
    accumulate: Option<StrategyArg>,
    seed: Option<u64>,
    dist: Option<String>,
    sign: Option<SignArg>,
    elements: Option<usize>,
    alpha: Option<f64>,
    beta: Option<f64>,
    out: Option<PathBuf>,
    #[serde(default)]
    bucket: Vec<BucketFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BucketFile {
    name: String,
    layers: Vec<String>,
    format: Option<String>,
}

fn parse_format(field: &str, s: &str) -> Result<FloatFormat> {
    s.parse().map_err(|e| anyhow!("{field}: {e}"))
}

fn rounding_mode(r: RoundingArg, seed: u64) -> RoundingMode {
    match r {
        RoundingArg::Ne => RoundingMode::NearestEven,
        RoundingArg::Stochastic => RoundingMode::Stochastic { seed },
    }
}

impl RunConfig {
    /// Merges flags over the optional config file and validates everything.
    /// `sweep_defaults` fills in every divisor group size when none is given.
    pub fn resolve(args: &RunArgs, sweep_defaults: bool) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("--config: cannot read {}", path.display()))?;
                toml::from_str::<ConfigFile>(&text)
                    .map_err(|e| anyhow!("--config {}: {e}", path.display()))?
            }
            None => ConfigFile::default(),
        };

        let nodes = args.nodes.or(file.nodes).unwrap_or(8);
        if nodes == 0 {
            bail!("nodes: must be at least 1");
        }
        let mut group_sizes = if args.group_sizes.is_empty() {
            file.group_sizes.unwrap_or_default()
        } else {
            args.group_sizes.clone()
        };
        if group_sizes.is_empty() && sweep_defaults {
            group_sizes = (2..=nodes).filter(|&k| nodes.is_multiple_of(k)).collect();
        }
        for &k in &group_sizes {
            Topology::hierarchical(nodes, k).map_err(|e| anyhow!("group-size: {e}"))?;
        }

        let format_strs = if args.formats.is_empty() {
            file.formats.unwrap_or_default()
        } else {
            args.formats.clone()
        };
        let formats = if format_strs.is_empty() {
            vec![FloatFormat::FP8_E5M2]
        } else {
            format_strs
                .iter()
                .map(|s| parse_format("format", s))
                .collect::<Result<_>>()?
        };

        let policy = match args.policy.as_ref().or(file.policy.as_ref()) {
            Some(p) => p
                .parse::<ScalingPolicy>()
                .map_err(|e| anyhow!("policy: {e}"))?,
            None => ScalingPolicy::Aps,
        };
        let seed = args.seed.or(file.seed).unwrap_or(0);
        let rounding = rounding_mode(
            args.rounding.or(file.rounding).unwrap_or(RoundingArg::Ne),
            seed,
        );
        let strategy = match args
            .accumulate
            .or(file.accumulate)
            .unwrap_or(StrategyArg::Sequential)
        {
            StrategyArg::Sequential => AccumStrategy::Sequential,
            StrategyArg::Kahan => AccumStrategy::Kahan,
        };

        let generator = match args.dist.as_ref().or(file.dist.as_ref()) {
            Some(d) => d.parse::<Generator>().map_err(|e| anyhow!("dist: {e}"))?,
            None => Generator::default(),
        };
        let is_file = matches!(generator, Generator::FromFile(_));
        let elements = args
            .elements
            .or(file.elements)
            .unwrap_or(if is_file { 0 } else { 1000 });
        if elements == 0 && !is_file {
            bail!("elements: must be at least 1");
        }
        let sign = match args.sign.or(file.sign).unwrap_or(SignArg::Symmetric) {
            SignArg::Symmetric => SignMode::Symmetric,
            SignArg::Positive => SignMode::Positive,
        };
        let spec = GradientSpec {
            generator,
            elements,
            sign,
        };

        let alpha = args
            .alpha
            .or(file.alpha)
            .unwrap_or(CostModel::default().alpha);
        let beta = args.beta.or(file.beta).unwrap_or(CostModel::default().beta);
        let cost = CostModel::new(alpha, beta).map_err(|e| anyhow!("alpha/beta: {e}"))?;

        let buckets = file
            .bucket
            .into_iter()
            .map(|b| {
                let mut bucket = Bucket::new(b.name.clone(), b.layers);
                if let Some(f) = b.format {
                    bucket = bucket
                        .with_format(parse_format(&format!("bucket {:?} format", b.name), &f)?);
                }
                Ok(bucket)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut sweep = SweepConfig::new(nodes, group_sizes, formats[0], policy);
        sweep.formats = formats;
        sweep.rounding = rounding;
        sweep.strategy = strategy;
        sweep.cost = cost;
        sweep.seed = seed;
        sweep.buckets = buckets;
        Ok(RunConfig {
            sweep,
            spec,
            out: args.out.clone().or(file.out),
        })
    }

    pub fn run(&self) -> Result<ExperimentReport> {
        group_size_sweep(&self.spec, &self.sweep).map_err(|e| anyhow!("{e}"))
    }
}

/// One line of the formats table.
#[derive(Debug, Clone, PartialEq)]
pub struct FormatRow {
    pub label: String,
    pub format: FloatFormat,
    /// Smallest positive value is `2^min_exp`.
    pub min_exp: i32,
    pub max_exp: i32,
}

/// The five standard formats followed by `extra`.
pub fn format_rows(extra: &[FloatFormat]) -> Vec<FormatRow> {
    let standard = [
        ("IEEE 754 FP32", FloatFormat::FP32),
        ("IEEE 754 FP16", FloatFormat::FP16),
        ("BFloat16", FloatFormat::BF16),
        ("FP16 (6,9)", FloatFormat::FP16_E6M9),
        ("FP8 (5,2)", FloatFormat::FP8_E5M2),
    ];
    standard
        .into_iter()
        .map(|(l, f)| (l.to_string(), f))
        .chain(extra.iter().map(|&f| (format!("custom {f}"), f)))
        .map(|(label, format)| FormatRow {
            label,
            format,
            min_exp: format.min_subnormal_exp(),
            max_exp: format.upper_bound_exp(),
        })
        .collect()
}

pub fn cmd_formats(extra: &[FloatFormat]) -> String {
    let mut out = format!(
        "{:<16} {:>8} {:>8}  {}\n",
        "format", "exp bits", "man bits", "range"
    );
    for r in format_rows(extra) {
        let range = format!("[2^{}, 2^{}]", r.min_exp, r.max_exp);
        writeln!(
            out,
            "{:<16} {:>8} {:>8}  {range}",
            r.label,
            r.format.exp_bits(),
            r.format.man_bits()
        )
        .expect("write to String");
    }
    out
}

fn show_value(x: f32) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "+Inf".into()
        } else {
            "-Inf".into()
        }
    } else {
        format!("{x:?}")
    }
}

/// Bit pattern as `0bS_EEEEE_MM`.
pub fn show_bits(bits: u32, f: FloatFormat) -> String {
    let (e, m) = (f.exp_bits() as usize, f.man_bits() as usize);
    let sign = bits >> (e + m) & 1;
    let exp = bits >> m & ((1 << e) - 1);
    let mut s = format!("0b{sign}_{exp:0e$b}");
    if m > 0 {
        let man = bits & ((1 << m) - 1);
        write!(s, "_{man:0m$b}").expect("write to String");
    }
    s
}

pub fn cmd_cast(value: &str, format: FloatFormat, rounding: RoundingMode) -> Result<String> {
    let x: f64 = value
        .trim()
        .parse()
        .map_err(|_| anyhow!("value: cannot parse {value:?} as a number"))?;
    // Parsing to binary64 first is exact enough: rounding again to at most
    // 24 significant bits gives the correctly rounded result.
    let q = round_wide(x, format, rounding, 0);
    let bits = to_bits(q, format).map_err(|e| anyhow!("value: {e}"))?;
    Ok(format!("{}  {}\n", show_value(q), show_bits(bits, format)))
}

/// CSV report and the human summary.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(String, String)> {
    let report = cfg.run()?;
    Ok((report.to_csv(), report.summary()))
}

pub fn cmd_cost(args: &CostArgs) -> Result<String> {
    let m = CostModel::new(args.alpha, args.beta).map_err(|e| anyhow!("alpha/beta: {e}"))?;
    let mut topologies = vec![Topology::ring(args.nodes).map_err(|e| anyhow!("nodes: {e}"))?];
    let ks = if args.group_sizes.is_empty() && args.nodes.is_multiple_of(16) {
        vec![16]
    } else {
        args.group_sizes.clone()
    };
    for k in ks {
        topologies
            .push(Topology::hierarchical(args.nodes, k).map_err(|e| anyhow!("group-size: {e}"))?);
    }
    let low = args.format.width() as f64 / 8.0;
    let high = args.baseline.width() as f64 / 8.0;
    let n = args.elements as f64;
    let mut out = format!(
        "{:<22} {:>6} {:>14} {:>14} {:>8} {:>16}\n",
        "topology",
        "steps",
        format!("aps {} (s)", args.format),
        format!("{} (s)", args.baseline),
        "speedup",
        "crossover elems"
    );
    for t in topologies {
        let aps = comm_time(t, n * low, 1.0, &m);
        let base = comm_time(t, n * high, 0.0, &m);
        let crossover = crossover_elements(t, low, high, 1.0, &m);
        writeln!(
            out,
            "{:<22} {:>6} {:>14.6e} {:>14.6e} {:>8.3} {:>16.1}",
            t.to_string(),
            t.step_count(),
            aps,
            base,
            base / aps,
            crossover
        )
        .expect("write to String");
    }
    Ok(out)
}

pub fn cmd_gemm_demo(args: &GemmArgs) -> Result<String> {
    if args.size == 0 {
        bail!("size: must be at least 1");
    }
    let accum = match args.accumulator.trim() {
        "fp32" | "binary32" => AccumFormat::Binary32,
        s => AccumFormat::Custom(parse_format("accumulator", s)?),
    };
    let n = args.size;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut random =
        |len: usize| -> Vec<f32> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let a = Matrix::new(n, n, random(n * n)).map_err(|e| anyhow!("{e}"))?;
    let b = Matrix::new(n, n, random(n * n)).map_err(|e| anyhow!("{e}"))?;
    let rounding = rounding_mode(args.rounding, args.seed);

    // Exact product of the quantized inputs, in binary64.
    let qa: Vec<f64> = a
        .data()
        .iter()
        .map(|&x| round_wide(x as f64, args.format, rounding, 0) as f64)
        .collect();
    let qb: Vec<f64> = b
        .data()
        .iter()
        .map(|&x| round_wide(x as f64, args.format, rounding, 0) as f64)
        .collect();

    let mut out = format!(
        "{n}x{n} inputs in {}, accumulator {}\n",
        args.format,
        args.accumulator.trim()
    );
    writeln!(
        out,
        "{:<12} {:>14} {:>14}",
        "strategy", "max abs err", "mean abs err"
    )
    .expect("write to String");
    for (label, strategy) in [
        ("sequential", AccumStrategy::Sequential),
        ("kahan", AccumStrategy::Kahan),
    ] {
        let cfg = AccumulatorConfig::new(accum, strategy).with_rounding(rounding);
        let c = gemm(&a, &b, args.format, &cfg).map_err(|e| anyhow!("{e}"))?;
        let mut max_err = 0.0f64;
        let mut total = 0.0f64;
        for r in 0..n {
            for col in 0..n {
                let exact: f64 = (0..n).map(|k| qa[r * n + k] * qb[k * n + col]).sum();
                let err = (c.get(r, col) as f64 - exact).abs();
                max_err = max_err.max(err);
                total += err;
            }
        }
        writeln!(
            out,
            "{label:<12} {max_err:>14.6e} {:>14.6e}",
            total / (n * n) as f64
        )
        .expect("write to String");
    }
    if matches!(rounding, RoundingMode::Stochastic { .. }) {
        out.push_str("(reference uses nearest-even input quantization)\n");
    }
    Ok(out)
}

fn write_output(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("out: cannot write {}", path.display()))
}

/// Runs a parsed command. Returns what goes to standard output and what
/// goes to standard error.
pub fn run(cli: Cli) -> Result<(String, String)> {
    match cli.command {
        Command::Formats { formats } => Ok((cmd_formats(&formats), String::new())),
        Command::Cast {
            value,
            format,
            rounding,
            seed,
        } => Ok((
            cmd_cast(&value, format, rounding_mode(rounding, seed))?,
            String::new(),
        )),
        Command::Simulate(args) => simulate(&args, false),
        Command::Sweep(args) => simulate(&args, true),
        Command::Cost(args) => Ok((cmd_cost(&args)?, String::new())),
        Command::GemmDemo(args) => Ok((cmd_gemm_demo(&args)?, String::new())),
    }
}

fn simulate(args: &RunArgs, sweep_defaults: bool) -> Result<(String, String)> {
    let cfg = RunConfig::resolve(args, sweep_defaults)?;
    let (csv, summary) = cmd_simulate(&cfg)?;
    match &cfg.out {
        Some(path) => {
            write_output(path, &csv)?;
            Ok((summary, String::new()))
        }
        None => Ok((csv, summary)),
    }
}
