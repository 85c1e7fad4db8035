//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Tolerances and sample sizes are fixed below.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use apsim::accumulate::{reduce_sum, AccumulatorConfig};
use apsim::analysis::{
    comm_time, crossover_elements, group_size_sweep, CostModel, GradientSpec, SignMode, SweepConfig,
};
use apsim::aps::{self, find_max_exp, Bucket, GradientTensor, ScalingPolicy};
use apsim::cli::format_rows;
use apsim::collectives::{aps_sync, step_count, Cluster, SyncOptions, Topology, Transport};
use apsim::softfloat::{cast_down, decode, encode, from_bits, to_bits, FloatFormat, RoundingMode};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome, Option<Duration>);

const CAST_PROBES_PER_FORMAT: usize = 100_000;
const POW2_PAIRS: usize = 100_000;
const TRANSPARENCY_CLUSTERS: usize = 1_000;
const TREND_SEEDS: u64 = 20;
const TREND_MIN_WINS: usize = 18; // 90% of 20
const TREND_ELEMENTS: usize = 10_000;
const KAHAN_VECTORS: usize = 1_000;
const KAHAN_MIN_WIN_RATE: f64 = 0.95;
const RING_EQUIV_CLUSTERS: usize = 100;
const CODEC_VALUES_PER_FORMAT: usize = 100_000;

fn all_formats() -> impl Iterator<Item = FloatFormat> {
    (1..=8u8).flat_map(|e| (0..=23u8).map(move |m| FloatFormat::new(e, m).unwrap()))
}

fn pow2(k: i32) -> f64 {
    2f64.powi(k)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Every positive encoding of `f` in order, decoded from its fields, with
/// the infinity encoding standing in as `2^(bias+1)`.
fn magnitude_table(f: FloatFormat) -> Vec<f64> {
    let (e, m) = (f.exp_bits() as i32, f.man_bits() as i32);
    let bias = (1 << (e - 1)) - 1;
    let mut table = Vec::new();
    for field in 0..(1 << e) - 1 {
        for man in 0..1u64 << m {
            let v = if field == 0 {
                man as f64 * pow2(1 - bias - m)
            } else {
                ((1u64 << m) + man) as f64 * pow2(field - bias - m)
            };
            table.push(v);
        }
    }
    table.push(pow2(bias + 1));
    table
}

/// Nearest entry of the table, ties to the even encoding index.
fn oracle_round(x: f32, table: &[f64]) -> f32 {
    let a = (x as f64).abs();
    let inf = table.len() - 1;
    let idx = if a >= table[inf] {
        inf
    } else {
        let i = table.partition_point(|&t| t <= a) - 1;
        let (lo, hi) = (a - table[i], table[i + 1] - a);
        if lo < hi || (lo == hi && i % 2 == 0) {
            i
        } else {
            i + 1
        }
    };
    let mag = if idx == inf {
        f32::INFINITY
    } else {
        table[idx] as f32
    };
    if x.is_sign_negative() {
        -mag
    } else {
        mag
    }
}

fn random_probe(rng: &mut ChaCha8Rng, f: FloatFormat, table: &[f64]) -> f32 {
    let sign = if rng.random::<bool>() { -1.0 } else { 1.0 };
    match rng.random_range(0..10) {
        // Arbitrary binary32 bit patterns, NaN excluded.
        0 => loop {
            let x = f32::from_bits(rng.random());
            if !x.is_nan() {
                return x;
            }
        },
        // Exact midpoints between neighbouring encodings.
        1 | 2 => {
            let i = rng.random_range(0..table.len() - 1);
            sign * ((table[i] + table[i + 1]) / 2.0) as f32
        }
        // Random significands spanning the format's range and a little beyond.
        _ => {
            let lo = f.min_subnormal_exp() - 3;
            let hi = f.upper_bound_exp() + 3;
            let k = rng.random_range(lo..=hi);
            let frac: f64 = 1.0 + rng.random::<f64>();
            sign * (frac * pow2(k)) as f32
        }
    }
}

fn c1_format_ranges() -> Outcome {
    let expected = [
        (FloatFormat::FP32, -149, 127),
        (FloatFormat::FP16, -24, 15),
        (FloatFormat::BF16, -133, 127),
        (FloatFormat::FP16_E6M9, -39, 31),
        (FloatFormat::FP8_E5M2, -16, 15),
    ];
    let rows = format_rows(&[]);
    ensure(rows.len() == expected.len(), || {
        format!("{} rows", rows.len())
    })?;
    for (row, &(f, lo, hi)) in rows.iter().zip(&expected) {
        ensure(
            row.format == f && row.min_exp == lo && row.max_exp == hi,
            || {
                format!(
                    "{f}: got [2^{}, 2^{}], want [2^{lo}, 2^{hi}]",
                    row.min_exp, row.max_exp
                )
            },
        )?;
        let (min, max_exp) = apsim::softfloat::derive_range(f);
        ensure(min as f64 == pow2(lo) && max_exp == hi, || {
            format!("{f}: derive_range gives ({min:e}, {max_exp})")
        })?;
    }
    Ok("5 formats match".into())
}

fn c2_step_counts() -> Outcome {
    let ring = step_count(Topology::ring(256).unwrap());
    let hier = step_count(Topology::hierarchical(256, 16).unwrap());
    let detail = format!("Ring(256) = {ring} (want 510), Hierarchical(256,16) = {hier} (want 74)");
    if ring == 510 && hier == 74 {
        Ok(detail)
    } else {
        Err(format!("{detail}; 4(k-1)+2(p/k-1) at p=256, k=16 is 90"))
    }
}

fn c3_rounding_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut formats = 0;
    for f in all_formats().filter(|f| f.width() <= 12) {
        formats += 1;
        let table = magnitude_table(f);
        for _ in 0..CAST_PROBES_PER_FORMAT {
            let x = random_probe(&mut rng, f, &table);
            let want = oracle_round(x, &table);
            let got = cast_down(x, f, RoundingMode::NearestEven)
                .map_err(|e| format!("{f} {x:e}: {e}"))?
                .value();
            ensure(got.to_bits() == want.to_bits(), || {
                format!("{f}: cast_down({x:e}) = {got:e}, oracle {want:e}")
            })?;
        }
    }
    Ok(format!(
        "{formats} formats x {CAST_PROBES_PER_FORMAT} probes, 0 mismatches"
    ))
}

fn c4_power_of_two() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let formats: Vec<FloatFormat> = all_formats().collect();
    for _ in 0..POW2_PAIRS {
        // Scaling round trip in binary32, staying in the normal range.
        let x = f32::from_bits(
            rng.random::<u32>() & 0x807f_ffff | (rng.random_range(1..=254u32) << 23),
        );
        let e = ((x.to_bits() >> 23) & 0xff) as i32 - 127;
        let k = rng.random_range(-126 - e..=127 - e);
        let t = GradientTensor::flat("x", vec![x]).unwrap();
        let scaled = aps::scale(&t, k).map_err(|e| e.to_string())?;
        ensure(scaled.values()[0] as f64 == x as f64 * pow2(k), || {
            format!("scale({x:e}, {k}) inexact")
        })?;
        let back = aps::unscale(&scaled, k).map_err(|e| e.to_string())?;
        ensure(back.values()[0].to_bits() == x.to_bits(), || {
            format!("unscale(scale({x:e}, {k})) != x")
        })?;

        // A normal value of a format stays representable when shifted within its normal range.
        let f = formats[rng.random_range(0..formats.len())];
        if f.exp_bits() < 2 {
            continue;
        }
        let max_field = (1u32 << f.exp_bits()) - 2;
        let field = rng.random_range(1..=max_field);
        let man = rng.random::<u32>() & ((1u32 << f.man_bits()) - 1);
        let bits = (rng.random::<bool>() as u32) << (f.exp_bits() + f.man_bits())
            | field << f.man_bits()
            | man;
        let q = from_bits(bits, f);
        let shift = rng.random_range(1 - field as i32..=max_field as i32 - field as i32);
        let shifted = aps::mul_pow2(q, shift);
        let got = cast_down(shifted, f, RoundingMode::NearestEven)
            .map_err(|e| e.to_string())?
            .value();
        ensure(got.to_bits() == shifted.to_bits(), || {
            format!("{f}: cast_down({shifted:e}) = {got:e}")
        })?;
    }
    Ok(format!("{POW2_PAIRS} pairs, 0 failures"))
}

fn random_topology(rng: &mut ChaCha8Rng, p: usize) -> Topology {
    let divisors: Vec<usize> = (1..=p).filter(|&k| p.is_multiple_of(k)).collect();
    if rng.random::<bool>() {
        Topology::ring(p).unwrap()
    } else {
        Topology::hierarchical(p, divisors[rng.random_range(0..divisors.len())]).unwrap()
    }
}

fn random_values(
    rng: &mut ChaCha8Rng,
    n: usize,
    exp_range: std::ops::RangeInclusive<i32>,
) -> Vec<f32> {
    (0..n)
        .map(|_| {
            if rng.random_range(0..10) == 0 {
                return 0.0;
            }
            let sign = if rng.random::<bool>() { -1.0 } else { 1.0 };
            sign * ((1.0 + rng.random::<f64>()) * pow2(rng.random_range(exp_range.clone()))) as f32
        })
        .collect()
}

fn bitwise_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn c5_full_precision_transparency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..TRANSPARENCY_CLUSTERS {
        let p = rng.random_range(1..=16);
        let n = rng.random_range(1..=24);
        let t = random_topology(&mut rng, p);
        let values = (0..p)
            .map(|_| random_values(&mut rng, n, -40..=40))
            .collect();
        let c = Cluster::from_values(t, values, FloatFormat::FP32).unwrap();
        let b = [c.whole_model_bucket()];
        let with = aps_sync(&c, ScalingPolicy::Aps, &b, SyncOptions::default())
            .map_err(|e| e.to_string())?;
        let without = aps_sync(&c, ScalingPolicy::NoScale, &b, SyncOptions::default())
            .map_err(|e| e.to_string())?;
        ensure(
            bitwise_equal(with[0].tensor.values(), without[0].tensor.values()),
            || format!("cluster {i} ({t}) differs with APS at (8,23)"),
        )?;
    }
    Ok(format!(
        "{TRANSPARENCY_CLUSTERS} clusters bitwise identical"
    ))
}

fn c6_group_size_trend() -> Outcome {
    // Positive lognormal magnitudes, mu = -10, sigma = 1.
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..TREND_SEEDS {
        let spec =
            GradientSpec::lognormal(-10.0, 1.0, TREND_ELEMENTS).with_sign(SignMode::Positive);
        let mut cfg = SweepConfig::new(
            256,
            vec![4, 8, 16, 32, 64],
            FloatFormat::FP8_E5M2,
            ScalingPolicy::Aps,
        );
        cfg.seed = seed;
        let report = group_size_sweep(&spec, &cfg).map_err(|e| e.to_string())?;
        let e: Vec<f64> = report.rows.iter().map(|r| r.round_off_error).collect();
        let (ring, k4, k16, k64) = (e[0], e[1], e[3], e[5]);
        let ok = e[1..].iter().all(|&h| ring > h) && k16 < k4 && k16 < k64;
        wins += ok as usize;
        if seed == 0 {
            lines.push(format!("seed 0: ring {ring:.4}, k=4..64 {:.4?}", &e[1..]));
        }
    }
    let detail = format!(
        "{wins}/{TREND_SEEDS} seeds show the trend; {}",
        lines.join("")
    );
    if wins >= TREND_MIN_WINS {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c7_underflow_rescue() -> Outcome {
    let n_nodes = 256;
    let spec = GradientSpec::lognormal(-30.0, 1.0, 1_000).with_sign(SignMode::Positive);
    let mut cfg = SweepConfig::new(
        n_nodes,
        vec![16],
        FloatFormat::FP8_E5M2,
        ScalingPolicy::NoScale,
    );
    cfg.include_ring = false;
    cfg.seed = 7;
    let layers =
        apsim::analysis::generate_cluster(&spec, n_nodes, cfg.seed).map_err(|e| e.to_string())?;
    let global_max = layers
        .iter()
        .filter_map(|l| find_max_exp(l[0].values()).unwrap())
        .max()
        .ok_or("all-zero family")?;
    let bound = -(16 + aps::ceil_log2(n_nodes));
    ensure(global_max < bound, || {
        format!("family max exponent {global_max} is not below {bound}")
    })?;

    let none = group_size_sweep(&spec, &cfg)
        .map_err(|e| e.to_string())?
        .rows[0]
        .round_off_error;
    cfg.policy = ScalingPolicy::Aps;
    let with_aps = group_size_sweep(&spec, &cfg)
        .map_err(|e| e.to_string())?
        .rows[0]
        .round_off_error;
    let detail =
        format!("max exponent {global_max}; Hierarchical(256,16): none {none}, aps {with_aps:.4}");
    if none == 1.0 && with_aps < 0.5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c8_no_overflow() -> Outcome {
    let formats = [
        FloatFormat::FP8_E5M2,
        FloatFormat::FP8_E4M3,
        FloatFormat::FP4_E3M0,
    ];
    let mut runs = 0;
    for p in [2usize, 16, 256] {
        // A binary32 magnitude whose p-fold sum stays below half of f32::MAX,
        // so the rounded sum still fits after unscaling; each format's
        // largest finite value; and a few others.
        let binary32_cap = f32::MAX / (2 * p) as f32;
        let magnitudes = [
            binary32_cap,
            57344.0,
            240.0,
            8.0,
            1.0,
            1.0e-20,
            f32::from_bits(1),
        ];
        let topologies: Vec<Topology> = std::iter::once(Topology::ring(p).unwrap())
            .chain(
                (1..=p)
                    .filter(|&k| p.is_multiple_of(k))
                    .map(|k| Topology::hierarchical(p, k).unwrap()),
            )
            .collect();
        for &f in &formats {
            for &v in magnitudes.iter().chain([f.max_finite()].iter()) {
                for sign in [1.0f32, -1.0] {
                    for &t in &topologies {
                        let c = Cluster::from_values(t, vec![vec![sign * v; 4]; p], f).unwrap();
                        let out = aps_sync(
                            &c,
                            ScalingPolicy::Aps,
                            &[c.whole_model_bucket()],
                            SyncOptions::default(),
                        )
                        .map_err(|e| format!("{t} {f} value {v:e}: {e}"))?;
                        let infs = out[0]
                            .tensor
                            .values()
                            .iter()
                            .filter(|x| x.is_infinite())
                            .count();
                        ensure(infs == 0, || {
                            format!("{t} {f} value {v:e}: {infs} Inf elements")
                        })?;
                        runs += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{runs} reductions, 0 Inf elements"))
}

fn c9_kahan() -> Outcome {
    // A large term that cancels at the end, with many small terms in between
    // that fall below half an ulp of the running sum.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = FloatFormat::FP16;
    let seq = AccumulatorConfig::sequential(f);
    let kahan = AccumulatorConfig::kahan(f);
    let mut wins = 0;
    for _ in 0..KAHAN_VECTORS {
        let n = rng.random_range(100..=400);
        let big = pow2(rng.random_range(8..=12)) as f32;
        let mut v = vec![big];
        for _ in 0..n {
            v.push((rng.random_range(0.05..0.5) * pow2(-rng.random_range(0..3))) as f32);
        }
        v.push(-big);
        let exact: f64 = v.iter().map(|&x| x as f64).sum();
        let e_seq = (reduce_sum(&v, &seq) as f64 - exact).abs();
        let e_kahan = (reduce_sum(&v, &kahan) as f64 - exact).abs();
        wins += (e_kahan < e_seq) as usize;
    }
    let rate = wins as f64 / KAHAN_VECTORS as f64;
    let detail = format!("Kahan more accurate on {wins}/{KAHAN_VECTORS} vectors");
    if rate >= KAHAN_MIN_WIN_RATE {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c10_group_size_one_is_ring() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let formats: Vec<FloatFormat> = all_formats().collect();
    for i in 0..RING_EQUIV_CLUSTERS {
        let p = rng.random_range(1..=32);
        let n = rng.random_range(1..=12);
        let values: Vec<Vec<f32>> = (0..p)
            .map(|_| random_values(&mut rng, n, -30..=30))
            .collect();
        for &f in &formats {
            let ring = Cluster::from_values(Topology::ring(p).unwrap(), values.clone(), f).unwrap();
            let hier = ring
                .clone()
                .with_topology(Topology::hierarchical(p, 1).unwrap())
                .unwrap();
            let b = [ring.whole_model_bucket()];
            let a = aps_sync(&ring, ScalingPolicy::Aps, &b, SyncOptions::default())
                .map_err(|e| e.to_string())?;
            let h = aps_sync(&hier, ScalingPolicy::Aps, &b, SyncOptions::default())
                .map_err(|e| e.to_string())?;
            ensure(
                bitwise_equal(a[0].tensor.values(), h[0].tensor.values()),
                || format!("cluster {i}, p={p}, {f}: Hierarchical(p,1) differs from Ring(p)"),
            )?;
        }
    }
    Ok(format!(
        "{RING_EQUIV_CLUSTERS} clusters x {} formats bitwise identical",
        formats.len()
    ))
}

fn c11_wire_codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut formats = 0;
    for f in all_formats() {
        formats += 1;
        let mask = (1u64 << f.width()) - 1;
        let patterns: Vec<u32> = (0..CODEC_VALUES_PER_FORMAT)
            .map(|_| (rng.random::<u64>() & mask) as u32)
            .collect();
        let values: Vec<f32> = patterns.iter().map(|&b| from_bits(b, f)).collect();
        let packed = encode(&values, f).map_err(|e| format!("{f}: {e}"))?;
        ensure(
            packed.bytes().len() == (CODEC_VALUES_PER_FORMAT * f.width() as usize).div_ceil(8),
            || format!("{f}: packed length {}", packed.bytes().len()),
        )?;
        let back = decode(&packed);
        ensure(bitwise_equal(&values, &back), || {
            format!("{f}: decode(encode(x)) != x")
        })?;
        for (&bits, &x) in patterns.iter().zip(&values) {
            if !x.is_nan() {
                ensure(to_bits(x, f).unwrap() == bits, || {
                    format!("{f}: pattern {bits:#x} does not round-trip")
                })?;
            }
        }
    }

    let mut clusters = 0;
    for f in [
        FloatFormat::FP8_E5M2,
        FloatFormat::FP8_E4M3,
        FloatFormat::FP4_E3M0,
        FloatFormat::FP16,
        FloatFormat::BF16,
    ] {
        for _ in 0..20 {
            let p = rng.random_range(1..=16);
            let t = random_topology(&mut rng, p);
            let nodes: Vec<Vec<GradientTensor>> = {
                let a = (0..p)
                    .map(|_| random_values(&mut rng, 7, -20..=0))
                    .collect::<Vec<_>>();
                let b = (0..p)
                    .map(|_| random_values(&mut rng, 5, 0..=20))
                    .collect::<Vec<_>>();
                a.into_iter()
                    .zip(b)
                    .map(|(a, b)| {
                        vec![
                            GradientTensor::flat("a", a).unwrap(),
                            GradientTensor::flat("b", b).unwrap(),
                        ]
                    })
                    .collect()
            };
            let c = Cluster::new(t, nodes, f).unwrap();
            let buckets = [
                Bucket::new("a", vec!["a".into()]),
                Bucket::new("b", vec!["b".into()]),
            ];
            let mem = aps_sync(&c, ScalingPolicy::Aps, &buckets, SyncOptions::default())
                .map_err(|e| e.to_string())?;
            let wire = aps_sync(
                &c,
                ScalingPolicy::Aps,
                &buckets,
                SyncOptions {
                    transport: Transport::Wire,
                    parallel: false,
                },
            )
            .map_err(|e| e.to_string())?;
            for (m, w) in mem.iter().zip(&wire) {
                ensure(
                    m.scale_exp == w.scale_exp
                        && bitwise_equal(m.tensor.values(), w.tensor.values()),
                    || format!("{t} {f}: wire path differs in bucket {}", m.bucket),
                )?;
            }
            clusters += 1;
        }
    }
    Ok(format!("{formats} formats x {CODEC_VALUES_PER_FORMAT} values round-trip; {clusters} clusters identical over the wire"))
}

fn c12_cost_crossover() -> Outcome {
    let m = CostModel::new(5.0e-6, 1.0e-9).unwrap();
    let t = Topology::hierarchical(256, 16).unwrap();
    // 60 intra-group steps move the whole payload, 30 ring steps move 1/16 of it.
    let oracle = |bytes: f64| {
        if bytes == 0.0 {
            0.0
        } else {
            90.0 * m.alpha + m.beta * (60.0 * bytes + 30.0 * bytes / 16.0)
        }
    };
    for l in [10_000usize, 30_000, 100_000, 1_000_000, 10_000_000] {
        let n = l as f64;
        let aps = comm_time(t, n, 1.0, &m);
        let half = comm_time(t, 2.0 * n, 0.0, &m);
        let (aps_o, half_o) = (oracle(n) + oracle(1.0), oracle(2.0 * n));
        ensure(
            (aps - aps_o).abs() <= 1e-12 * aps_o && (half - half_o).abs() <= 1e-12 * half_o,
            || format!("L={l}: model {aps:e}/{half:e}, closed form {aps_o:e}/{half_o:e}"),
        )?;
        ensure(aps < half, || {
            format!("L={l}: APS {aps:e} s not below 16-bit {half:e} s")
        })?;
    }
    let crossover = crossover_elements(t, 1.0, 2.0, 1.0, &m);
    ensure(crossover < 10_000.0, || format!("crossover {crossover}"))?;
    Ok(format!(
        "APS cheaper for L > {crossover:.1}; at 1e4: {:.3e} s vs {:.3e} s",
        comm_time(t, 1e4, 1.0, &m),
        comm_time(t, 2e4, 0.0, &m)
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        (
            1,
            "format ranges",
            c1_format_ranges,
            Some(Duration::from_secs(1)),
        ),
        (
            2,
            "step counts",
            c2_step_counts,
            Some(Duration::from_secs(1)),
        ),
        (
            3,
            "rounding oracle",
            c3_rounding_oracle,
            Some(Duration::from_secs(120)),
        ),
        (4, "power-of-two exactness", c4_power_of_two, None),
        (
            5,
            "APS transparency at (8,23)",
            c5_full_precision_transparency,
            None,
        ),
        (
            6,
            "group-size trend",
            c6_group_size_trend,
            Some(Duration::from_secs(300)),
        ),
        (7, "underflow rescue", c7_underflow_rescue, None),
        (8, "no-overflow invariant", c8_no_overflow, None),
        (9, "Kahan superiority", c9_kahan, None),
        (
            10,
            "Hierarchical(k=1) equals ring",
            c10_group_size_one_is_ring,
            None,
        ),
        (11, "wire codec", c11_wire_codec, None),
        (12, "cost model crossover", c12_cost_crossover, None),
    ];
    let mut failed = 0;
    for (id, name, check, limit) in criteria {
        let start = Instant::now();
        let mut outcome = check();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&outcome, limit) {
            if elapsed > limit {
                outcome = Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS  {id:>2}. {name} [{elapsed:.2?}]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {id:>2}. {name} [{elapsed:.2?}]: {detail}");
            }
        }
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
