//! Deterministic in-process simulation of ring and hierarchical all-reduce
//! with per-addition low-precision rounding, and the APS gradient
//! synchronization pipeline built on top of it.
//!
//! All simulation is single-threaded per reduction. Buckets may be
//! processed in parallel; results are bitwise identical either way.

mod topology;
mod wire;

use rayon::prelude::*;
use thiserror::Error;

use crate::accumulate::{AccumFormat, AccumStrategy, AccumulatorConfig, Arith};
use crate::aps::{self, ApsError, Bucket, Census, GradientTensor, ScalingPolicy};
use crate::softfloat::{round_to_format, FloatFormat, RoundingMode, SoftFloatError};

pub use topology::{step_count, Topology};
pub use wire::{WireMessage, HEADER_LEN};

pub(crate) use topology::chunk_bounds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollectiveError {
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("cluster: {0}")]
    Cluster(String),
    #[error("wire message: {0}")]
    Wire(String),
    #[error(transparent)]
    Format(#[from] SoftFloatError),
    #[error(transparent)]
    Aps(#[from] ApsError),
    #[error("bucket {bucket:?}: {count} partial sums overflowed under APS scaling")]
    ApsOverflow { bucket: String, count: usize },
    #[error("nodes disagree after all-reduce at element {index}")]
    Asymmetric { index: usize },
}

/// How values travel between simulated nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    /// Buffers are copied directly.
    #[default]
    InMemory,
    /// Every hop is encoded to a [`WireMessage`] byte stream and decoded again.
    Wire,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SyncOptions {
    pub transport: Transport,
    /// Process buckets concurrently.
    pub parallel: bool,
}

/// Counters gathered while simulating one reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReduceStats {
    /// Ring steps executed (reduce-scatter plus all-gather).
    pub ring_steps: usize,
    pub messages: usize,
    /// Bytes that crossed the wire; zero for in-memory transport.
    pub wire_bytes: usize,
    /// Additions of finite operands that produced a non-finite result.
    pub overflowed_partials: usize,
}

/// A set of nodes holding same-shaped per-layer gradients.
#[derive(Debug, Clone)]
pub struct Cluster {
    topology: Topology,
    nodes: Vec<Vec<GradientTensor>>,
    format: FloatFormat,
    accum: AccumulatorConfig,
}

impl Cluster {
    /// `nodes[i]` lists node `i`'s layers in model order. Additions are
    /// accumulated in the element format unless [`Cluster::with_accumulator`]
    /// says otherwise.
    pub fn new(
        topology: Topology,
        nodes: Vec<Vec<GradientTensor>>,
        format: FloatFormat,
    ) -> Result<Self, CollectiveError> {
        if nodes.len() != topology.nodes() {
            return Err(CollectiveError::Cluster(format!(
                "{} nodes given, {topology} expects {}",
                nodes.len(),
                topology.nodes()
            )));
        }
        let reference = &nodes[0];
        for (i, node) in nodes.iter().enumerate().skip(1) {
            let same = node.len() == reference.len()
                && node
                    .iter()
                    .zip(reference)
                    .all(|(a, b)| a.name() == b.name() && a.shape() == b.shape());
            if !same {
                return Err(CollectiveError::Cluster(format!(
                    "node {i} layers differ from node 0"
                )));
            }
        }
        Ok(Cluster {
            topology,
            nodes,
            format,
            accum: AccumulatorConfig::sequential(format),
        })
    }

    /// One unnamed layer per node.
    pub fn from_values(
        topology: Topology,
        values: Vec<Vec<f32>>,
        format: FloatFormat,
    ) -> Result<Self, CollectiveError> {
        let nodes = values
            .into_iter()
            .map(|v| GradientTensor::flat("grad", v).map(|t| vec![t]))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(topology, nodes, format)
    }

    pub fn with_accumulator(mut self, accum: AccumulatorConfig) -> Self {
        self.accum = accum;
        self
    }

    pub fn with_rounding(mut self, rounding: RoundingMode) -> Self {
        self.accum.rounding = rounding;
        self
    }

    pub fn with_topology(mut self, topology: Topology) -> Result<Self, CollectiveError> {
        if topology.nodes() != self.topology.nodes() {
            return Err(CollectiveError::Topology(format!(
                "{topology} does not match {} nodes",
                self.nodes.len()
            )));
        }
        self.topology = topology;
        Ok(self)
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn format(&self) -> FloatFormat {
        self.format
    }

    pub fn accumulator(&self) -> &AccumulatorConfig {
        &self.accum
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.nodes[0].iter().map(|t| t.name()).collect()
    }

    pub fn node(&self, i: usize) -> &[GradientTensor] {
        &self.nodes[i]
    }

    /// Each node's layers concatenated in model order.
    pub fn flattened(&self) -> Vec<Vec<f32>> {
        self.fused(0..self.nodes[0].len())
    }

    fn fused(&self, layers: std::ops::Range<usize>) -> Vec<Vec<f32>> {
        self.nodes
            .iter()
            .map(|node| {
                node[layers.clone()]
                    .iter()
                    .flat_map(|t| t.values().iter().copied())
                    .collect()
            })
            .collect()
    }

    /// One bucket covering the whole model.
    pub fn whole_model_bucket(&self) -> Bucket {
        Bucket::new(
            "model",
            self.layer_names().into_iter().map(String::from).collect(),
        )
    }
}

/// Result of an all-reduce: the tensor every node ends up holding.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub values: Vec<f32>,
    pub stats: ReduceStats,
}

/// Simulation state for one all-reduce.
struct Sim<'a> {
    format: FloatFormat,
    accum: &'a AccumulatorConfig,
    transport: Transport,
    scale_exp: i16,
    stats: ReduceStats,
}

// Stochastic rounding streams are keyed by (stage, node, element).
const STAGE_INPUT: u64 = 1;
const STAGE_RING: u64 = 2;
const STAGE_GROUP: u64 = 3;
const STAGE_GROUP_CAST: u64 = 4;

fn stream_key(stage: u64, node: usize, element: usize) -> u64 {
    // splitmix64 over the packed key so nearby keys land on unrelated streams.
    let mut z = (stage << 56) ^ ((node as u64) << 32) ^ element as u64;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl<'a> Sim<'a> {
    fn new(
        format: FloatFormat,
        accum: &'a AccumulatorConfig,
        transport: Transport,
        scale_exp: i16,
    ) -> Self {
        Sim {
            format,
            accum,
            transport,
            scale_exp,
            stats: ReduceStats::default(),
        }
    }

    fn to_element(&self, x: f32, key: u64) -> f32 {
        round_to_format(x, self.format, self.accum.rounding, key)
    }

    /// One ring addition, rounded through the accumulator and then into
    /// the element format. A single addition has nothing to compensate, so
    /// Kahan only matters inside groups.
    fn add(&mut self, partial: f32, local: f32, key: u64) -> f32 {
        let mut arith = Arith::new(self.accum, key);
        let sum = self.to_element(arith.add(partial, local), key.wrapping_add(1));
        if !sum.is_finite() && partial.is_finite() && local.is_finite() {
            self.stats.overflowed_partials += 1;
        }
        sum
    }

    fn send(&mut self, values: &[f32]) -> Result<Vec<f32>, CollectiveError> {
        self.stats.messages += 1;
        match self.transport {
            Transport::InMemory => Ok(values.to_vec()),
            Transport::Wire => {
                let bytes = WireMessage::new(values, self.format, self.scale_exp)?.to_bytes();
                self.stats.wire_bytes += bytes.len();
                let msg = WireMessage::from_bytes(&bytes)?;
                if msg.format() != self.format {
                    return Err(CollectiveError::Wire("format changed in transit".into()));
                }
                Ok(msg.values())
            }
        }
    }

    /// Ring all-reduce among `ids`, whose buffers are `bufs`.
    ///
    /// Reduce-scatter: in step `s`, node `i` forwards chunk `(i - s) mod p`
    /// to node `i + 1`, which adds its own contribution. Chunk `c` thus
    /// absorbs nodes `c, c+1, ..., c-1` in that order. All-gather then
    /// circulates the finished chunks.
    fn ring(&mut self, ids: &[usize], bufs: &mut [Vec<f32>]) -> Result<(), CollectiveError> {
        let p = bufs.len();
        if p == 1 {
            return Ok(());
        }
        let bounds = chunk_bounds(bufs[0].len(), p);
        for s in 0..p - 1 {
            let mut inbox = Vec::with_capacity(p);
            for (i, buf) in bufs.iter().enumerate() {
                let c = (i + p - s) % p;
                inbox.push(((i + 1) % p, c, self.send(&buf[bounds[c].clone()])?));
            }
            for (dst, c, partial) in inbox {
                let range = bounds[c].clone();
                for (offset, (x, &received)) in bufs[dst][range.clone()]
                    .iter_mut()
                    .zip(&partial)
                    .enumerate()
                {
                    let key = stream_key(STAGE_RING, ids[dst], range.start + offset);
                    *x = self.add(received, *x, key);
                }
            }
            self.stats.ring_steps += 1;
        }
        for s in 0..p - 1 {
            let mut inbox = Vec::with_capacity(p);
            for (i, buf) in bufs.iter().enumerate() {
                let c = (i + 1 + p - s) % p;
                inbox.push(((i + 1) % p, c, self.send(&buf[bounds[c].clone()])?));
            }
            for (dst, c, done) in inbox {
                bufs[dst][bounds[c].clone()].copy_from_slice(&done);
            }
            self.stats.ring_steps += 1;
        }
        Ok(())
    }

    /// Master-side reduction of one group: workers are added in ascending
    /// node id, each addition cast to the element format. Kahan keeps its
    /// compensation in the accumulator format and measures the loss of
    /// that cast.
    fn reduce_group(
        &mut self,
        ids: &[usize],
        bufs: &[Vec<f32>],
    ) -> Result<Vec<f32>, CollectiveError> {
        let master = ids[0];
        let mut sum = bufs[0].clone();
        let mut compensation = vec![0.0f32; sum.len()];
        let mut arith = Arith::new(self.accum, stream_key(STAGE_GROUP, master, 0));
        for (w, worker) in bufs.iter().enumerate().skip(1) {
            let received = self.send(worker)?;
            for (j, &x) in received.iter().enumerate() {
                let key = stream_key(STAGE_GROUP_CAST, ids[w], j);
                let before = sum[j];
                let next = match self.accum.strategy {
                    AccumStrategy::Sequential => self.to_element(arith.add(before, x), key),
                    AccumStrategy::Kahan => {
                        let y = arith.sub(x, compensation[j]);
                        let t = self.to_element(arith.add(before, y), key);
                        let gained = arith.sub(t, before);
                        compensation[j] = arith.sub(gained, y);
                        t
                    }
                };
                if !next.is_finite() && before.is_finite() && x.is_finite() {
                    self.stats.overflowed_partials += 1;
                }
                sum[j] = next;
            }
        }
        Ok(sum)
    }
}

fn check_symmetric(bufs: &[Vec<f32>]) -> Result<(), CollectiveError> {
    for b in &bufs[1..] {
        if let Some(index) = b
            .iter()
            .zip(&bufs[0])
            .position(|(x, y)| x.to_bits() != y.to_bits())
        {
            return Err(CollectiveError::Asymmetric { index });
        }
    }
    Ok(())
}

/// All-reduce (SUM) of per-node buffers under `topology`.
///
/// Inputs are first cast to `format`; every addition is rounded as
/// described on [`Sim`]. Returns the tensor all nodes agree on.
pub fn allreduce_values(
    topology: Topology,
    inputs: &[Vec<f32>],
    format: FloatFormat,
    accum: &AccumulatorConfig,
    transport: Transport,
    scale_exp: i16,
) -> Result<Reduction, CollectiveError> {
    let p = topology.nodes();
    if inputs.len() != p {
        return Err(CollectiveError::Cluster(format!(
            "{} inputs for {p} nodes",
            inputs.len()
        )));
    }
    let len = inputs[0].len();
    if inputs.iter().any(|v| v.len() != len) {
        return Err(CollectiveError::Cluster(
            "node buffers differ in length".into(),
        ));
    }
    let mut sim = Sim::new(format, accum, transport, scale_exp);
    let mut bufs: Vec<Vec<f32>> = inputs
        .iter()
        .enumerate()
        .map(|(node, v)| {
            v.iter()
                .enumerate()
                .map(|(j, &x)| sim.to_element(x, stream_key(STAGE_INPUT, node, j)))
                .collect()
        })
        .collect();

    match topology {
        Topology::Ring { .. } => {
            let ids: Vec<usize> = (0..p).collect();
            sim.ring(&ids, &mut bufs)?;
        }
        Topology::Hierarchical { group_size: k, .. } => {
            let groups = p / k;
            let mut masters = Vec::with_capacity(groups);
            for g in 0..groups {
                let ids: Vec<usize> = (g * k..(g + 1) * k).collect();
                masters.push(sim.reduce_group(&ids, &bufs[g * k..(g + 1) * k])?);
            }
            let master_ids: Vec<usize> = (0..groups).map(|g| g * k).collect();
            sim.ring(&master_ids, &mut masters)?;
            for (group, reduced) in bufs.chunks_mut(k).zip(masters) {
                for worker in &mut group[1..] {
                    *worker = sim.send(&reduced)?;
                }
                group[0] = reduced;
            }
        }
    }
    check_symmetric(&bufs)?;
    let values = bufs.swap_remove(0);
    Ok(Reduction {
        values,
        stats: sim.stats,
    })
}

fn reduce_cluster(c: &Cluster, topology: Topology) -> Result<GradientTensor, CollectiveError> {
    let r = allreduce_values(
        topology,
        &c.flattened(),
        c.format,
        &c.accum,
        Transport::InMemory,
        0,
    )?;
    Ok(GradientTensor::reduced("allreduce", r.values))
}

/// Ring all-reduce over every node of the cluster, regardless of its topology.
pub fn ring_allreduce(c: &Cluster) -> Result<GradientTensor, CollectiveError> {
    reduce_cluster(c, Topology::ring(c.node_count())?)
}

/// Hierarchical all-reduce with the cluster's group size.
pub fn hierarchical_allreduce(c: &Cluster) -> Result<GradientTensor, CollectiveError> {
    match c.topology {
        Topology::Hierarchical { .. } => reduce_cluster(c, c.topology),
        Topology::Ring { .. } => Err(CollectiveError::Topology(
            "cluster is configured as a ring".into(),
        )),
    }
}

/// All-reduce with the cluster's own topology.
pub fn allreduce(c: &Cluster) -> Result<GradientTensor, CollectiveError> {
    reduce_cluster(c, c.topology)
}

/// Outcome of synchronizing one bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketResult {
    pub bucket: String,
    pub format: FloatFormat,
    /// Log2 of the scaling factor applied before the cast.
    pub scale_exp: i32,
    /// Summed gradient, back in binary32 and unscaled. Without APS an
    /// overflowing sum can leave Inf or NaN here.
    pub tensor: GradientTensor,
    /// Casting losses of the scaled inputs, pooled over all nodes.
    pub census: Census,
    pub stats: ReduceStats,
}

/// Exponent all-reduce (MAX) over per-node metadata. `None` marks an
/// all-zero node; on the wire it travels as `i16::MIN`.
fn max_metadata(
    local: &[Option<i16>],
    format: FloatFormat,
    transport: Transport,
) -> Result<Option<i16>, CollectiveError> {
    let mut global: Option<i16> = None;
    for &m in local {
        let m = match transport {
            Transport::InMemory => m,
            Transport::Wire => {
                let bytes = WireMessage::metadata(format, m.unwrap_or(i16::MIN)).to_bytes();
                let exp = WireMessage::from_bytes(&bytes)?.scale_exp;
                (exp != i16::MIN).then_some(exp)
            }
        };
        global = global.max(m);
    }
    Ok(global)
}

fn sync_bucket(
    c: &Cluster,
    bucket: &Bucket,
    layers: std::ops::Range<usize>,
    policy: ScalingPolicy,
    options: SyncOptions,
) -> Result<BucketResult, CollectiveError> {
    let format = bucket.format.unwrap_or(c.format);
    let accum = match bucket.format {
        Some(f) if c.accum.format == AccumFormat::Custom(c.format) => AccumulatorConfig {
            format: AccumFormat::Custom(f),
            ..c.accum
        },
        _ => c.accum,
    };
    let inputs = c.fused(layers);
    let p = c.node_count();

    let scale_exp = match policy {
        ScalingPolicy::NoScale => 0,
        ScalingPolicy::ConstantLossScale { factor_exp } => factor_exp,
        ScalingPolicy::Aps => {
            let local = inputs
                .iter()
                .map(|v| {
                    aps::find_max_exp(v)?
                        .map(|e| aps::exponent_metadata(e, p))
                        .transpose()
                })
                .collect::<Result<Vec<_>, ApsError>>()?;
            aps::scaling_exponent_from_metadata(
                format,
                max_metadata(&local, format, options.transport)?,
            )
        }
    };
    let header_exp = i16::try_from(scale_exp).map_err(|_| ApsError::MetadataRange(scale_exp))?;

    let scaled = inputs
        .iter()
        .map(|v| aps::scale_values(&bucket.name, v, scale_exp))
        .collect::<Result<Vec<_>, _>>()?;
    let mut census = Census::default();
    for v in &scaled {
        census += aps::census(v, format);
    }

    let reduced = allreduce_values(
        c.topology,
        &scaled,
        format,
        &accum,
        options.transport,
        header_exp,
    )?;
    if policy == ScalingPolicy::Aps && reduced.stats.overflowed_partials > 0 {
        return Err(CollectiveError::ApsOverflow {
            bucket: bucket.name.clone(),
            count: reduced.stats.overflowed_partials,
        });
    }
    let values = aps::scale_values(&bucket.name, &reduced.values, -scale_exp)?;
    Ok(BucketResult {
        bucket: bucket.name.clone(),
        format,
        scale_exp,
        tensor: GradientTensor::reduced(bucket.name.clone(), values),
        census,
        stats: reduced.stats,
    })
}

/// Synchronizes every bucket: local max exponent, MAX all-reduce of the
/// exponent metadata, scale by `2^f`, cast, low-precision SUM all-reduce,
/// cast back and unscale. `NoScale` skips the scaling; the constant loss
/// scale uses its fixed exponent for every bucket.
///
/// Buckets must partition the model's layers in order.
pub fn aps_sync(
    c: &Cluster,
    policy: ScalingPolicy,
    buckets: &[Bucket],
    options: SyncOptions,
) -> Result<Vec<BucketResult>, CollectiveError> {
    let model = c.layer_names();
    let mut next = 0;
    let mut ranges = Vec::with_capacity(buckets.len());
    for b in buckets {
        let r = b.resolve(&model)?;
        if r.start != next {
            return Err(CollectiveError::Cluster(format!(
                "bucket {:?} does not continue at layer {next}",
                b.name
            )));
        }
        next = r.end;
        ranges.push(r);
    }
    if next != model.len() {
        return Err(CollectiveError::Cluster(
            "buckets do not cover every layer".into(),
        ));
    }

    if options.parallel {
        buckets
            .par_iter()
            .zip(ranges.into_par_iter())
            .map(|(b, r)| sync_bucket(c, b, r, policy, options))
            .collect()
    } else {
        buckets
            .iter()
            .zip(ranges)
            .map(|(b, r)| sync_bucket(c, b, r, policy, options))
            .collect()
    }
}
