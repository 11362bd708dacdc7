//! Transform invariants as seeded checks, shared by the proptest suite and
//! the acceptance runner.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};

use disclosure_core::chart_spec::{
    AggregateOp, AggregateSpec, Band, BandCuts, BinSize, ChartSpec, Channel, Classify, Encoding, MarkType, SampleSize,
    Subsample, Transform,
};
use disclosure_core::data_model::{Dataset, FieldKind, FieldSchema, Value};
use disclosure_core::stats::{kde, quantile};
use disclosure_core::transform_engine::evaluate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Check = fn(&mut ChaCha8Rng) -> Result<(), String>;

pub const CHECKS: [(&str, Check); 6] = [
    ("count conservation", count_conservation),
    ("bin partition", bin_partition),
    ("subsample subset", subsample_subset),
    ("quantile monotonicity", quantile_monotonicity),
    ("kde integral", kde_integral),
    ("evaluate determinism", evaluate_determinism),
];

/// 1 to 80 rows with `g` nominal and `v` quantitative, about a tenth of
/// `v` null. Values are drawn from one of several shapes, ties included.
pub fn random_table(rng: &mut ChaCha8Rng) -> Dataset {
    let n = rng.gen_range(1..=80);
    let shape = rng.gen_range(0..4);
    let rows = (0..n)
        .map(|_| {
            let v = match shape {
                0 => rng.gen_range(-50.0..50.0f64),
                1 => rng.gen_range(0..6) as f64,
                2 => (if rng.gen_bool(0.5) { 10.0 } else { 1000.0 }) + rng.gen_range(0.0..3.0f64),
                _ => rng.gen_range(0.0..1.0f64).powi(4) * 1e4,
            };
            let v = if rng.gen_bool(0.1) { Value::Null } else { Value::Num((v * 100.0).round() / 100.0) };
            vec![Value::Text(["a", "b", "c", "d"][rng.gen_range(0..4)].to_string()), v]
        })
        .collect();
    Dataset::new(
        vec![FieldSchema::new("g", FieldKind::Nominal), FieldSchema::new("v", FieldKind::Quantitative)],
        rows,
    )
    .expect("rows fit the schema")
}

fn values(ds: &Dataset) -> Vec<(usize, f64)> {
    ds.numeric_column("v").expect("v is numeric")
}

pub fn count_conservation(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let ds = random_table(rng);
    let spec = ChartSpec::new(MarkType::Bar)
        .transform(Transform::Aggregate {
            groupby: vec!["g".into()],
            ops: vec![AggregateSpec { op: AggregateOp::Count, field: None, as_name: "n".into() }],
        })
        .encode(Channel::X, Encoding::field("g"))
        .encode(Channel::Y, Encoding::field("n"));
    let view = evaluate(&spec, &ds).map_err(|e| e.to_string())?;
    let total: f64 = view.instances.iter().filter_map(|i| i.num(Channel::Y)).sum();
    if total != ds.len() as f64 {
        return Err(format!("counts sum to {total}, table has {} rows", ds.len()));
    }
    let union: BTreeSet<usize> = view.instances.iter().flat_map(|i| i.source_rows.iter().copied()).collect();
    if union.len() != ds.len() {
        return Err(format!("provenance covers {} of {} rows", union.len(), ds.len()));
    }
    Ok(())
}

pub fn bin_partition(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let ds = random_table(rng);
    let vals = values(&ds);
    if vals.is_empty() {
        return Ok(());
    }
    let size = if rng.gen_bool(0.5) {
        BinSize::Count(rng.gen_range(1..=20))
    } else {
        BinSize::Width([0.5, 1.0, 7.0, 25.0, 300.0][rng.gen_range(0..5)])
    };
    let spec = ChartSpec::new(MarkType::Point)
        .transform(Transform::Classify(Classify { field: "v".into(), size, as_name: "b".into() }))
        .encode(Channel::X, Encoding::field("b"))
        .encode(Channel::Y, Encoding::field("v"));
    let view = evaluate(&spec, &ds).map_err(|e| e.to_string())?;
    let Some(info) = view.channels.get(&Channel::X) else { return Err("x channel missing".into()) };
    let disclosure_core::transform_engine::Derivation::Binned { origin, width } = info.lineage.derivation else {
        return Err(format!("x derivation is {:?}", info.lineage.derivation));
    };
    let (min, max) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, v)| (a.min(*v), b.max(*v)));
    if origin > min {
        return Err(format!("origin {origin} above min {min}"));
    }
    let mut seen = BTreeSet::new();
    for inst in &view.instances {
        let (Some(b), Some(v)) = (inst.num(Channel::X), inst.num(Channel::Y)) else { continue };
        let k = (b - origin) / width;
        if (k - k.round()).abs() > 1e-6 {
            return Err(format!("bin start {b} off the lattice from {origin} by {width}"));
        }
        let inside = b <= v + 1e-9 * width.max(1.0) && (v < b + width || (v == max && v <= b + width + 1e-9));
        if !inside {
            return Err(format!("value {v} outside its bin [{b}, {})", b + width));
        }
        for r in &inst.source_rows {
            if !seen.insert(*r) {
                return Err(format!("row {r} in two bins"));
            }
        }
    }
    if seen.len() != vals.len() {
        return Err(format!("{} of {} non-null rows binned", seen.len(), vals.len()));
    }
    Ok(())
}

pub fn subsample_subset(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let ds = random_table(rng);
    let size = if rng.gen_bool(0.5) {
        SampleSize::N(rng.gen_range(0..100))
    } else {
        SampleSize::Fraction(rng.gen_range(0.01..=1.0))
    };
    let spec = ChartSpec::new(MarkType::Point)
        .transform(Transform::Subsample(Subsample { size, seed: rng.gen() }))
        .encode(Channel::X, Encoding::field("g"));
    let view = evaluate(&spec, &ds).map_err(|e| e.to_string())?;
    let mut seen = BTreeSet::new();
    for inst in &view.instances {
        if inst.source_rows.len() != 1 {
            return Err(format!("instance with {} source rows", inst.source_rows.len()));
        }
        let r = *inst.source_rows.iter().next().expect("one row");
        if r >= ds.len() || !seen.insert(r) {
            return Err(format!("row {r} repeated or out of range"));
        }
    }
    if let SampleSize::N(n) = size {
        if seen.len() != n.min(ds.len()) {
            return Err(format!("kept {} rows, asked for {n} of {}", seen.len(), ds.len()));
        }
    }
    Ok(())
}

pub fn quantile_monotonicity(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let ds = random_table(rng);
    let vals: Vec<f64> = values(&ds).into_iter().map(|p| p.1).collect();
    if vals.is_empty() {
        return Ok(());
    }
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=40 {
        let q = quantile(&vals, i as f64 / 40.0).map_err(|e| e.to_string())?;
        if q < prev {
            return Err(format!("quantile decreased at q={}: {q} < {prev}", i as f64 / 40.0));
        }
        prev = q;
    }
    let k = rng.gen_range(2..=10);
    let spec = ChartSpec::new(MarkType::Point)
        .transform(Transform::Band(Band { field: "v".into(), cuts: BandCuts::Quantiles(k), as_name: "q".into() }))
        .encode(Channel::X, Encoding::field("v"))
        .encode(Channel::Y, Encoding::field("q"));
    let view = evaluate(&spec, &ds).map_err(|e| e.to_string())?;
    let mut pairs: Vec<(f64, f64)> =
        view.instances.iter().filter_map(|i| Some((i.num(Channel::X)?, i.num(Channel::Y)?))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if let Some(w) = pairs.windows(2).find(|w| w[1].1 < w[0].1) {
        return Err(format!("band label drops from {:?} to {:?}", w[0], w[1]));
    }
    Ok(())
}

pub fn kde_integral(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let ds = random_table(rng);
    let vals: Vec<f64> = values(&ds).into_iter().map(|p| p.1).collect();
    if vals.iter().all(|v| Some(v) == vals.first()) {
        return match kde(&vals, None, 64) {
            Err(_) => Ok(()),
            Ok(_) => Err("degenerate input accepted".into()),
        };
    }
    let bw = if rng.gen_bool(0.3) { Some(rng.gen_range(0.05..50.0)) } else { None };
    let grid = rng.gen_range(16..=512);
    let curve = kde(&vals, bw, grid).map_err(|e| e.to_string())?;
    let area = curve.trapezoid_integral();
    if (area - 1.0).abs() > 1e-3 {
        return Err(format!("integral {area} over {} values, h {}, grid {grid}", vals.len(), curve.bandwidth));
    }
    Ok(())
}

fn digest(s: &str) -> u64 {
    let mut h = DefaultHasher::new();
    s.hash(&mut h);
    h.finish()
}

pub fn evaluate_determinism(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let ds = random_table(rng);
    let spec = ChartSpec::new(MarkType::Point)
        .transform(Transform::Subsample(Subsample { size: SampleSize::Fraction(0.5), seed: rng.gen() }))
        .transform(Transform::Aggregate {
            groupby: vec!["g".into()],
            ops: vec![AggregateSpec { op: AggregateOp::Mean, field: Some("v".into()), as_name: "m".into() }],
        })
        .encode(Channel::X, Encoding::field("g"))
        .encode(Channel::Y, Encoding::field("m"));
    let a = evaluate(&spec, &ds).map_err(|e| e.to_string())?.canonical_json();
    let b = evaluate(&spec.clone(), &ds.clone()).map_err(|e| e.to_string())?.canonical_json();
    if digest(&a) != digest(&b) || a != b {
        return Err("two evaluations differ".into());
    }
    Ok(())
}
