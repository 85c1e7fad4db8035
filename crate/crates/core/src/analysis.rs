//! Error metrics, synthetic gradients, raw tensor files, the alpha-beta
//! communication cost model and group-size sweeps.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::accumulate::{AccumFormat, AccumStrategy, AccumulatorConfig};
use crate::aps::{ApsError, Bucket, Census, GradientTensor, ScalingPolicy};
use crate::collectives::{
    allreduce_values, aps_sync, step_count, Cluster, CollectiveError, SyncOptions, Topology,
    Transport,
};
use crate::softfloat::{packed_len, FloatFormat, RoundingMode};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("reference gradient is all zero; round-off error is undefined")]
    AllZeroReference,
    #[error("length mismatch: reference has {reference} elements, result has {result}")]
    LengthMismatch { reference: usize, result: usize },
    #[error("invalid gradient spec: {0}")]
    Spec(String),
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error(transparent)]
    Collective(#[from] CollectiveError),
    #[error(transparent)]
    Aps(#[from] ApsError),
}

fn file_error(path: &Path, reason: impl fmt::Display) -> AnalysisError {
    AnalysisError::File {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Mean of `|(h - l) / h|` over the elements where `h != 0`.
pub fn round_off_error(
    grad_h: &GradientTensor,
    grad_l: &GradientTensor,
) -> Result<f64, AnalysisError> {
    round_off_error_values(grad_h.values(), grad_l.values())
}

pub fn round_off_error_values(h: &[f32], l: &[f32]) -> Result<f64, AnalysisError> {
    if h.len() != l.len() {
        return Err(AnalysisError::LengthMismatch {
            reference: h.len(),
            result: l.len(),
        });
    }
    let (total, count) = h.iter().zip(l).filter(|(&h, _)| h != 0.0).fold(
        (0.0f64, 0usize),
        |(total, count), (&h, &l)| {
            let (h, l) = (h as f64, l as f64);
            let term = if l.is_finite() {
                ((h - l) / h).abs()
            } else {
                f64::INFINITY
            };
            (total + term, count + 1)
        },
    );
    if count == 0 {
        return Err(AnalysisError::AllZeroReference);
    }
    Ok(total / count as f64)
}

/// Source distribution of synthetic gradients.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// Magnitudes `exp(N(mu, sigma))`.
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    Normal {
        mu: f64,
        sigma: f64,
    },
    /// Raw little-endian binary32 file, optionally with a layer manifest.
    FromFile(PathBuf),
}

impl Default for Generator {
    fn default() -> Self {
        Generator::Lognormal {
            mu: -10.0,
            sigma: 2.0,
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Lognormal { mu, sigma } => write!(f, "lognormal:{mu},{sigma}"),
            Generator::Normal { mu, sigma } => write!(f, "normal:{mu},{sigma}"),
            Generator::FromFile(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for Generator {
    type Err = AnalysisError;

    /// `lognormal:MU,SIGMA`, `normal:MU,SIGMA` or `file:PATH`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| AnalysisError::Spec(format!("{s:?}: expected KIND:ARGS")))?;
        let pair = || -> Result<(f64, f64), AnalysisError> {
            let bad = || AnalysisError::Spec(format!("{s:?}: expected two numbers MU,SIGMA"));
            let (a, b) = args.split_once(',').ok_or_else(bad)?;
            Ok((
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ))
        };
        match kind.trim() {
            "lognormal" => {
                let (mu, sigma) = pair()?;
                Ok(Generator::Lognormal { mu, sigma })
            }
            "normal" => {
                let (mu, sigma) = pair()?;
                Ok(Generator::Normal { mu, sigma })
            }
            "file" if !args.is_empty() => Ok(Generator::FromFile(PathBuf::from(args))),
            _ => Err(AnalysisError::Spec(format!("{s:?}: unknown distribution"))),
        }
    }
}

/// Sign applied to lognormal magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignMode {
    /// Each element is negated with probability 1/2.
    #[default]
    Symmetric,
    Positive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSpec {
    pub generator: Generator,
    /// Elements per node. For files, 0 takes the whole file.
    pub elements: usize,
    pub sign: SignMode,
}

impl GradientSpec {
    pub fn lognormal(mu: f64, sigma: f64, elements: usize) -> Self {
        GradientSpec {
            generator: Generator::Lognormal { mu, sigma },
            elements,
            sign: SignMode::Symmetric,
        }
    }

    pub fn normal(mu: f64, sigma: f64, elements: usize) -> Self {
        GradientSpec {
            generator: Generator::Normal { mu, sigma },
            elements,
            sign: SignMode::Symmetric,
        }
    }

    pub fn from_file(path: impl Into<PathBuf>, elements: usize) -> Self {
        GradientSpec {
            generator: Generator::FromFile(path.into()),
            elements,
            sign: SignMode::Symmetric,
        }
    }

    pub fn with_sign(mut self, sign: SignMode) -> Self {
        self.sign = sign;
        self
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        match self.generator {
            Generator::Lognormal { mu, sigma } | Generator::Normal { mu, sigma } => {
                if !(mu.is_finite() && sigma.is_finite() && sigma >= 0.0) {
                    return Err(AnalysisError::Spec(format!(
                        "mu={mu}, sigma={sigma}: need finite mu and sigma >= 0"
                    )));
                }
                if self.elements == 0 {
                    return Err(AnalysisError::Spec("element count must be positive".into()));
                }
            }
            Generator::FromFile(_) => {}
        }
        Ok(())
    }
}

fn sample(spec: &GradientSpec, seed: u64, node: usize) -> Result<Vec<f32>, AnalysisError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64);
    let n = spec.elements;
    let values: Vec<f32> = match spec.generator {
        Generator::Lognormal { mu, sigma } => {
            let d = LogNormal::new(mu, sigma).map_err(|e| AnalysisError::Spec(e.to_string()))?;
            (0..n)
                .map(|_| {
                    let m = d.sample(&mut rng) as f32;
                    let negative = spec.sign == SignMode::Symmetric && rng.random::<bool>();
                    if negative {
                        -m
                    } else {
                        m
                    }
                })
                .collect()
        }
        Generator::Normal { mu, sigma } => {
            let d = Normal::new(mu, sigma).map_err(|e| AnalysisError::Spec(e.to_string()))?;
            (0..n)
                .map(|_| {
                    let x = d.sample(&mut rng) as f32;
                    if spec.sign == SignMode::Positive {
                        x.abs()
                    } else {
                        x
                    }
                })
                .collect()
        }
        Generator::FromFile(_) => unreachable!("files are not sampled"),
    };
    // Clamp the far tail into binary32 so no sample is infinite.
    Ok(values
        .into_iter()
        .map(|x| x.clamp(-f32::MAX, f32::MAX))
        .collect())
}

/// One tensor drawn from `spec`; deterministic in `seed`.
pub fn generate(spec: &GradientSpec, seed: u64) -> Result<GradientTensor, AnalysisError> {
    let mut nodes = generate_cluster(spec, 1, seed)?;
    let layers = nodes.pop().expect("one node");
    let values = layers
        .into_iter()
        .flat_map(GradientTensor::into_values)
        .collect();
    Ok(GradientTensor::flat("grad", values)?)
}

/// Per-node layers for a `p`-node cluster.
///
/// Synthetic generators give node `i` its own random stream and a single
/// layer named `grad`. Files keep the layers of their manifest (or one
/// `grad` layer without one); if the file holds `p` consecutive copies of
/// the layout, node `i` reads copy `i`, otherwise every node reads copy 0.
pub fn generate_cluster(
    spec: &GradientSpec,
    p: usize,
    seed: u64,
) -> Result<Vec<Vec<GradientTensor>>, AnalysisError> {
    spec.validate()?;
    match &spec.generator {
        Generator::FromFile(path) => cluster_from_file(path, spec.elements, p),
        _ => (0..p)
            .into_par_iter()
            .map(|node| {
                Ok(vec![GradientTensor::flat(
                    "grad",
                    sample(spec, seed, node)?,
                )?])
            })
            .collect(),
    }
}

fn cluster_from_file(
    path: &Path,
    elements: usize,
    p: usize,
) -> Result<Vec<Vec<GradientTensor>>, AnalysisError> {
    let data = read_raw(path)?;
    let layout = match read_manifest(&manifest_path(path))? {
        Some(records) => {
            if elements != 0 {
                return Err(file_error(
                    path,
                    "element count cannot be set for a file with a manifest",
                ));
            }
            records
        }
        None => {
            let n = if elements == 0 { data.len() } else { elements };
            vec![LayerRecord {
                name: "grad".into(),
                offset: 0,
                count: n,
                shape: vec![n],
            }]
        }
    };
    let per_node = layout.iter().map(|r| r.offset + r.count).max().unwrap_or(0);
    if per_node == 0 {
        return Err(file_error(path, "no elements to read"));
    }
    if data.len() < per_node {
        return Err(file_error(
            path,
            format!("holds {} values, layout needs {per_node}", data.len()),
        ));
    }
    let distinct = data.len() >= per_node * p;
    (0..p)
        .map(|node| {
            let base = if distinct { node * per_node } else { 0 };
            layout
                .iter()
                .map(|r| {
                    let values = data[base + r.offset..base + r.offset + r.count].to_vec();
                    if let Some(i) = values.iter().position(|x| !x.is_finite()) {
                        return Err(file_error(
                            path,
                            format!("layer {:?} element {i} is not finite", r.name),
                        ));
                    }
                    Ok(GradientTensor::new(
                        r.name.clone(),
                        values,
                        r.shape.clone(),
                    )?)
                })
                .collect()
        })
        .collect()
}

/// One manifest line: `name offset count shape`, shape written as `AxBxC`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerRecord {
    name: String,
    offset: usize,
    count: usize,
    shape: Vec<usize>,
}

/// Sidecar manifest path: the data path with `.manifest` appended.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn read_raw(path: &Path) -> Result<Vec<f32>, AnalysisError> {
    let bytes = fs::read(path).map_err(|e| file_error(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(file_error(
            path,
            format!(
                "{} bytes is not a whole number of binary32 values",
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect())
}

fn read_manifest(path: &Path) -> Result<Option<Vec<LayerRecord>>, AnalysisError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(file_error(path, e)),
    };
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| file_error(path, format!("line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, offset, count, shape] = fields[..] else {
            return Err(bad("expected `name offset count shape`"));
        };
        let offset = offset.parse().map_err(|_| bad("bad offset"))?;
        let count = count.parse().map_err(|_| bad("bad element count"))?;
        let shape = shape
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad("bad shape"))?;
        records.push(LayerRecord {
            name: name.to_string(),
            offset,
            count,
            shape,
        });
    }
    Ok(Some(records))
}

/// Writes the layers back to back as little-endian binary32 plus a
/// sidecar manifest.
pub fn write_tensors(path: &Path, layers: &[GradientTensor]) -> Result<(), AnalysisError> {
    let mut bytes = Vec::new();
    let mut manifest = String::new();
    let mut offset = 0;
    for t in layers {
        bytes.extend(t.values().iter().flat_map(|x| x.to_le_bytes()));
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        writeln!(
            manifest,
            "{} {offset} {} {}",
            t.name(),
            t.len(),
            shape.join("x")
        )
        .expect("write to String");
        offset += t.len();
    }
    fs::write(path, bytes).map_err(|e| file_error(path, e))?;
    let mpath = manifest_path(path);
    fs::write(&mpath, manifest).map_err(|e| file_error(&mpath, e))
}

/// Reads layers written by [`write_tensors`].
pub fn read_tensors(path: &Path) -> Result<Vec<GradientTensor>, AnalysisError> {
    let mut nodes = cluster_from_file(path, 0, 1)?;
    Ok(nodes.pop().expect("one node"))
}

/// Alpha-beta model: each step costs `alpha + bytes * beta` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            alpha: 5.0e-6,
            beta: 1.0e-9,
        }
    }
}

impl CostModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, AnalysisError> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(AnalysisError::Spec(format!(
                "alpha={alpha}, beta={beta}: must be finite and >= 0"
            )));
        }
        Ok(CostModel { alpha, beta })
    }
}

/// Bytes moved per unit of payload, summed over all steps: ring phases
/// send `1/chunks` of the payload per step, intra-group phases all of it.
fn byte_weight(t: Topology) -> f64 {
    match t {
        Topology::Ring { nodes } => 2.0 * (nodes - 1) as f64 / nodes as f64,
        Topology::Hierarchical { nodes, group_size } => {
            let masters = nodes / group_size;
            4.0 * (group_size - 1) as f64 + 2.0 * (masters - 1) as f64 / masters as f64
        }
    }
}

/// Modeled time of one all-reduce of `bytes`; zero bytes cost nothing.
pub fn allreduce_time(t: Topology, bytes: f64, m: &CostModel) -> f64 {
    if bytes <= 0.0 {
        return 0.0;
    }
    step_count(t) as f64 * m.alpha + byte_weight(t) * bytes * m.beta
}

/// Payload all-reduce plus the metadata all-reduce.
pub fn comm_time(t: Topology, payload_bytes: f64, metadata_bytes: f64, m: &CostModel) -> f64 {
    allreduce_time(t, payload_bytes, m) + allreduce_time(t, metadata_bytes, m)
}

/// Smallest element count above which sending `low_bytes` per element plus
/// `metadata_bytes` of exponents beats sending `high_bytes` per element.
/// Infinite if the low format saves nothing.
pub fn crossover_elements(
    t: Topology,
    low_bytes: f64,
    high_bytes: f64,
    metadata_bytes: f64,
    m: &CostModel,
) -> f64 {
    let saving_per_element = byte_weight(t) * (high_bytes - low_bytes) * m.beta;
    if saving_per_element <= 0.0 {
        return f64::INFINITY;
    }
    allreduce_time(t, metadata_bytes, m) / saving_per_element
}

/// One configuration's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub topology: Topology,
    pub format: FloatFormat,
    pub policy: ScalingPolicy,
    pub round_off_error: f64,
    pub census: Census,
    pub steps: usize,
    pub modeled_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

pub const CSV_HEADER: &str =
    "topology,k,exp_bits,man_bits,policy,round_off_error,underflow,overflow,steps,modeled_time_s";

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{:e}",
                r.topology.kind(),
                r.topology.group_size(),
                r.format.exp_bits(),
                r.format.man_bits(),
                r.policy,
                r.round_off_error,
                r.census.underflow,
                r.census.overflow,
                r.steps,
                r.modeled_time_s
            )
            .expect("write to String");
        }
        out
    }

    /// Aligned table for terminals.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{:<22} {:>7} {:>12} {:>14} {:>10} {:>10} {:>6} {:>12}\n",
            "topology",
            "format",
            "policy",
            "round-off",
            "underflow",
            "overflow",
            "steps",
            "time (s)"
        );
        for r in &self.rows {
            writeln!(
                out,
                "{:<22} {:>7} {:>12} {:>13.4}% {:>10} {:>10} {:>6} {:>12.4e}",
                r.topology.to_string(),
                r.format.to_string(),
                r.policy.to_string(),
                r.round_off_error * 100.0,
                r.census.underflow,
                r.census.overflow,
                r.steps,
                r.modeled_time_s
            )
            .expect("write to String");
        }
        out
    }
}

/// Everything a sweep needs besides the gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub nodes: usize,
    /// Hierarchical group sizes; each must divide `nodes`.
    pub group_sizes: Vec<usize>,
    /// Also run a plain ring.
    pub include_ring: bool,
    pub formats: Vec<FloatFormat>,
    pub policy: ScalingPolicy,
    pub rounding: RoundingMode,
    pub strategy: AccumStrategy,
    pub cost: CostModel,
    pub seed: u64,
    /// Synchronization buckets; empty means one bucket for the whole model.
    /// A bucket without its own format uses the configuration's format.
    pub buckets: Vec<Bucket>,
}

impl SweepConfig {
    pub fn new(
        nodes: usize,
        group_sizes: Vec<usize>,
        format: FloatFormat,
        policy: ScalingPolicy,
    ) -> Self {
        SweepConfig {
            nodes,
            group_sizes,
            include_ring: true,
            formats: vec![format],
            policy,
            rounding: RoundingMode::NearestEven,
            strategy: AccumStrategy::Sequential,
            cost: CostModel::default(),
            seed: 0,
            buckets: Vec::new(),
        }
    }

    /// Topologies in report order: ring first, then group sizes as given.
    pub fn topologies(&self) -> Result<Vec<Topology>, AnalysisError> {
        let mut out = Vec::new();
        if self.include_ring {
            out.push(Topology::ring(self.nodes)?);
        }
        for &k in &self.group_sizes {
            out.push(Topology::hierarchical(self.nodes, k)?);
        }
        Ok(out)
    }
}

/// Runs one configuration against its same-order binary32 reference.
/// The error is taken over the whole model; census and modeled time are
/// summed over buckets.
pub fn run_configuration(
    layers: &[Vec<GradientTensor>],
    topology: Topology,
    format: FloatFormat,
    cfg: &SweepConfig,
) -> Result<ReportRow, AnalysisError> {
    let accum = AccumulatorConfig::new(AccumFormat::Custom(format), cfg.strategy)
        .with_rounding(cfg.rounding);
    let cluster = Cluster::new(topology, layers.to_vec(), format)?.with_accumulator(accum);
    let buckets = if cfg.buckets.is_empty() {
        vec![cluster.whole_model_bucket()]
    } else {
        cfg.buckets.clone()
    };
    let results = aps_sync(&cluster, cfg.policy, &buckets, SyncOptions::default())?;

    let low: Vec<f32> = results
        .iter()
        .flat_map(|r| r.tensor.values().iter().copied())
        .collect();
    let reference = allreduce_values(
        topology,
        &cluster.flattened(),
        FloatFormat::FP32,
        &AccumulatorConfig::binary32(),
        Transport::InMemory,
        0,
    )?;
    let mut census = Census::default();
    let mut modeled_time_s = 0.0;
    for r in &results {
        census += r.census;
        let metadata_bytes = if cfg.policy == ScalingPolicy::Aps {
            1.0
        } else {
            0.0
        };
        modeled_time_s += comm_time(
            topology,
            packed_len(r.format, r.tensor.len()) as f64,
            metadata_bytes,
            &cfg.cost,
        );
    }
    Ok(ReportRow {
        topology,
        format,
        policy: cfg.policy,
        round_off_error: round_off_error_values(&reference.values, &low)?,
        census,
        steps: step_count(topology),
        modeled_time_s,
    })
}

/// Ring plus every hierarchical group size, for each format, on gradients
/// drawn from `spec`. Configurations run in parallel; the report does not
/// depend on scheduling.
pub fn group_size_sweep(
    spec: &GradientSpec,
    cfg: &SweepConfig,
) -> Result<ExperimentReport, AnalysisError> {
    let layers = generate_cluster(spec, cfg.nodes, cfg.seed)?;
    let topologies = cfg.topologies()?;
    let jobs: Vec<(FloatFormat, Topology)> = cfg
        .formats
        .iter()
        .flat_map(|&f| topologies.iter().map(move |&t| (f, t)))
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(f, t)| run_configuration(&layers, t, f, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentReport { rows })
}
