//! Brute-force reference for Gap, Outlier and IndividualPoint verdicts on
//! small tables. Works from the raw rows and the chart alone: it enumerates
//! mark spans and bins itself and never looks at a rendered view.

use std::collections::{BTreeMap, BTreeSet};

use disclosure_core::chart_spec::{AggregateOp, BinSize, ChartSpec, Channel, Encoding, MarkType, MarkParams};
use disclosure_core::data_model::{Dataset, FieldKind, FieldSchema, SignalBinding, SignalKind, Value};
use disclosure_core::signal_rubric::{RubricParams, Verdict};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// The chart shapes the oracle understands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Strip { size: f64 },
    Scatter { size: f64 },
    OffAxis,
    Ticks { size: f64 },
    CountBins { bins: u32 },
    WidthBins { width: f64 },
    GroupCount,
    GroupMeanBar,
    GroupMeanPoint,
}

#[derive(Debug, Clone)]
pub struct Case {
    pub dataset: Dataset,
    pub shape: Shape,
    pub spec: ChartSpec,
    pub binding: SignalBinding,
}

fn spec_for(shape: Shape) -> ChartSpec {
    let sized = |mark, size| {
        let mut s = ChartSpec::new(mark);
        s.mark_params = MarkParams { size, ..MarkParams::default() };
        s
    };
    match shape {
        Shape::Strip { size } => sized(MarkType::Point, size).encode(Channel::X, Encoding::field("v")),
        Shape::Scatter { size } => sized(MarkType::Point, size)
            .encode(Channel::X, Encoding::field("v"))
            .encode(Channel::Y, Encoding::field("w")),
        Shape::OffAxis => ChartSpec::new(MarkType::Point)
            .encode(Channel::X, Encoding::field("w"))
            .encode(Channel::Y, Encoding::field("g")),
        Shape::Ticks { size } => sized(MarkType::Tick, size).encode(Channel::X, Encoding::field("v")),
        Shape::CountBins { bins } => ChartSpec::new(MarkType::Bar)
            .encode(Channel::X, Encoding::field("v").with_bin(BinSize::Count(bins)))
            .encode(Channel::Y, Encoding::count()),
        Shape::WidthBins { width } => ChartSpec::new(MarkType::Bar)
            .encode(Channel::X, Encoding::field("v").with_bin(BinSize::Width(width)))
            .encode(Channel::Y, Encoding::count()),
        Shape::GroupCount => ChartSpec::new(MarkType::Bar)
            .encode(Channel::X, Encoding::field("g"))
            .encode(Channel::Y, Encoding::count()),
        Shape::GroupMeanBar => ChartSpec::new(MarkType::Bar)
            .encode(Channel::X, Encoding::field("g"))
            .encode(Channel::Y, Encoding::field("v").with_aggregate(AggregateOp::Mean)),
        Shape::GroupMeanPoint => ChartSpec::new(MarkType::Point)
            .encode(Channel::X, Encoding::field("g"))
            .encode(Channel::Y, Encoding::field("v").with_aggregate(AggregateOp::Mean)),
    }
}

/// A table of 4 to 12 rows with columns `id`, `g`, `v`, `w`.
pub fn random_dataset(rng: &mut ChaCha8Rng) -> Dataset {
    let n = rng.gen_range(4..=12);
    let schema = vec![
        FieldSchema::new("id", FieldKind::Nominal),
        FieldSchema::new("g", FieldKind::Nominal),
        FieldSchema::new("v", FieldKind::Quantitative),
        FieldSchema::new("w", FieldKind::Quantitative),
    ];
    let clustered = rng.gen_bool(0.5);
    let rows = (0..n)
        .map(|i| {
            let v = if rng.gen_bool(0.15) {
                rng.gen_range(150.0..400.0f64)
            } else if clustered {
                let c = if rng.gen_bool(0.5) { 20.0 } else { 70.0 };
                c + rng.gen_range(-6.0..6.0f64)
            } else {
                rng.gen_range(0.0..100.0f64)
            };
            vec![
                Value::Text(format!("r{i}")),
                Value::Text(["a", "b", "c"][rng.gen_range(0..3)].to_string()),
                Value::Num((v * 10.0).round() / 10.0),
                Value::Num(rng.gen_range(0.0..50.0f64).round()),
            ]
        })
        .collect();
    Dataset::new(schema, rows).expect("generated rows fit the schema")
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let dataset = random_dataset(rng);
    let size = [0.005, 0.01, 0.02, 0.05][rng.gen_range(0..4)];
    let shape = match rng.gen_range(0..9) {
        0 => Shape::Strip { size },
        1 => Shape::Scatter { size },
        2 => Shape::OffAxis,
        3 => Shape::Ticks { size },
        4 => Shape::CountBins { bins: rng.gen_range(2..=8) },
        5 => Shape::WidthBins { width: [5.0, 10.0, 20.0, 40.0][rng.gen_range(0..4)] },
        6 => Shape::GroupCount,
        7 => Shape::GroupMeanBar,
        _ => Shape::GroupMeanPoint,
    };
    let binding = match rng.gen_range(0..6) {
        0 | 1 => SignalBinding::new(SignalKind::Gap, ["v"]),
        2 | 3 => SignalBinding::new(SignalKind::Outlier, ["v"]),
        4 => SignalBinding::new(SignalKind::IndividualPoint, [["v", "id", "g", "w"][rng.gen_range(0..4)]]),
        _ => SignalBinding::new(SignalKind::IndividualPoint, ["id", "g"]),
    };
    Case { dataset, shape, spec: spec_for(shape), binding }
}

fn column(ds: &Dataset, name: &str) -> Vec<f64> {
    let idx = ds.field_index(name).expect("field exists");
    ds.rows.iter().map(|r| r[idx].as_f64().expect("numeric column")).collect()
}

fn labels(ds: &Dataset, name: &str) -> Vec<String> {
    let idx = ds.field_index(name).expect("field exists");
    ds.rows.iter().map(|r| r[idx].label()).collect()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    v
}

/// Quantile by linear interpolation between closest ranks.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] * (1.0 - (pos - lo as f64)) + sorted[hi] * (pos - lo as f64)
}

fn fences(values: &[f64]) -> (f64, f64) {
    let s = sorted(values.to_vec());
    let (q1, q3) = (quantile(&s, 0.25), quantile(&s, 0.75));
    (q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1))
}

/// Bin index of every row, and the bin width.
fn bins_of(values: &[f64], shape: Shape) -> (Vec<i64>, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match shape {
        Shape::CountBins { bins } => {
            let w = if max > min { (max - min) / bins as f64 } else { 1.0 };
            let idx = values
                .iter()
                .map(|v| (((v - min) / w).floor() as i64).min(bins as i64 - 1))
                .collect();
            (idx, w)
        }
        Shape::WidthBins { width } => {
            let origin = (min / width).floor() * width;
            (values.iter().map(|v| ((v - origin) / width).floor() as i64).collect(), width)
        }
        _ => unreachable!("not a binned shape"),
    }
}

fn bin_origin(values: &[f64], shape: Shape) -> f64 {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    match shape {
        Shape::WidthBins { width } => (min / width).floor() * width,
        _ => min,
    }
}

/// Groups in order of first appearance: (label, member rows).
fn groups(ds: &Dataset) -> Vec<(String, Vec<usize>)> {
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, g) in labels(ds, "g").into_iter().enumerate() {
        match out.iter_mut().find(|(l, _)| *l == g) {
            Some((_, rows)) => rows.push(i),
            None => out.push((g, vec![i])),
        }
    }
    out
}

/// Length of `[lo, hi]` not covered by any span, by enumerating every
/// elementary segment between span endpoints.
fn uncovered(lo: f64, hi: f64, spans: &[(f64, f64)]) -> f64 {
    let mut cuts = vec![lo, hi];
    for &(a, b) in spans {
        for x in [a, b] {
            if x > lo && x < hi {
                cuts.push(x);
            }
        }
    }
    let cuts = sorted(cuts);
    cuts.windows(2)
        .filter(|w| {
            let mid = (w[0] + w[1]) / 2.0;
            !spans.iter().any(|&(a, b)| a <= mid && mid <= b)
        })
        .map(|w| w[1] - w[0])
        .sum()
}

fn true_gaps(values: &[f64], gap_frac: f64) -> Vec<(f64, f64)> {
    let s = sorted(values.to_vec());
    let floor = gap_frac * (s[s.len() - 1] - s[0]);
    if floor <= 0.0 {
        return Vec::new();
    }
    s.windows(2).filter(|w| w[1] - w[0] >= floor).map(|w| (w[0], w[1])).collect()
}

fn encodes_v(shape: Shape) -> bool {
    !matches!(shape, Shape::OffAxis | Shape::GroupCount)
}

fn gap_oracle(case: &Case, p: &RubricParams) -> Verdict {
    let v = column(&case.dataset, "v");
    let gaps = true_gaps(&v, p.gap_frac);
    if gaps.is_empty() || !encodes_v(case.shape) {
        return Verdict::Hidden;
    }
    let range = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut verdict = Verdict::Hidden;
    for (lo, hi) in gaps {
        let width = hi - lo;
        let one = match case.shape {
            Shape::Strip { size } | Shape::Scatter { size } | Shape::Ticks { size } => {
                let half = size / 2.0 * range;
                let spans: Vec<(f64, f64)> = v.iter().map(|x| (x - half, x + half)).collect();
                let free = uncovered(lo, hi, &spans) / width;
                if free <= 0.0 {
                    Verdict::Hidden
                } else if width <= p.resolution * range {
                    Verdict::Ambiguous
                } else if free > p.overlap_frac {
                    Verdict::Revealed
                } else {
                    Verdict::Ambiguous
                }
            }
            Shape::CountBins { .. } | Shape::WidthBins { .. } => {
                let (idx, w) = bins_of(&v, case.shape);
                let origin = bin_origin(&v, case.shape);
                let filled: BTreeSet<i64> = idx.iter().copied().collect();
                let (first, last) = (*filled.iter().next().unwrap(), *filled.iter().next_back().unwrap());
                let slots: Vec<(f64, f64, bool)> = (first..=last)
                    .map(|k| (origin + k as f64 * w, origin + (k + 1) as f64 * w, filled.contains(&k)))
                    .collect();
                let overlap = |a: f64, b: f64| (b.min(hi) - a.max(lo)).max(0.0);
                let touching = slots.iter().any(|s| overlap(s.0, s.1) > 0.0);
                if !touching || w / width > 2.0 {
                    Verdict::Hidden
                } else {
                    let empty: f64 = slots.iter().filter(|s| !s.2).map(|s| overlap(s.0, s.1)).sum();
                    if empty / width > p.overlap_frac {
                        Verdict::Revealed
                    } else {
                        Verdict::Ambiguous
                    }
                }
            }
            _ => Verdict::Hidden,
        };
        verdict = verdict.max(one);
    }
    verdict
}

/// Separation verdict for marks at `values`, each standing for `members`.
fn separation(values: &[f64], members: &[Vec<usize>], truth: &BTreeSet<usize>, span: f64, p: &RubricParams) -> Verdict {
    let (lo, hi) = fences(values);
    let inside: Vec<f64> = values.iter().copied().filter(|x| *x >= lo && *x <= hi).collect();
    let mut best: Option<f64> = None;
    for (x, rows) in values.iter().zip(members) {
        let beyond = *x < lo || *x > hi;
        if beyond && rows.iter().any(|r| truth.contains(r)) {
            let sep = inside.iter().map(|u| (u - x).abs()).fold(f64::INFINITY, f64::min) / span;
            best = Some(best.map_or(sep, |b: f64| b.max(sep)));
        }
    }
    match best {
        None => Verdict::Hidden,
        Some(s) if s > p.resolution => Verdict::Revealed,
        Some(_) => Verdict::Ambiguous,
    }
}

fn outlier_oracle(case: &Case, p: &RubricParams) -> Verdict {
    let v = column(&case.dataset, "v");
    let (lo, hi) = fences(&v);
    let truth: BTreeSet<usize> = (0..v.len()).filter(|&i| v[i] < lo || v[i] > hi).collect();
    if truth.is_empty() || !encodes_v(case.shape) {
        return Verdict::Hidden;
    }
    let range = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min);
    match case.shape {
        Shape::Strip { .. } | Shape::Scatter { .. } | Shape::Ticks { .. } => {
            let members: Vec<Vec<usize>> = (0..v.len()).map(|i| vec![i]).collect();
            separation(&v, &members, &truth, range, p)
        }
        Shape::GroupMeanBar | Shape::GroupMeanPoint => {
            let gs = groups(&case.dataset);
            let means: Vec<f64> = gs.iter().map(|(_, rows)| rows.iter().map(|&r| v[r]).sum::<f64>() / rows.len() as f64).collect();
            let members: Vec<Vec<usize>> = gs.into_iter().map(|(_, rows)| rows).collect();
            let (mn, mx) = (
                means.iter().copied().fold(f64::INFINITY, f64::min),
                means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            );
            let span = if mx > mn { mx - mn } else { range };
            separation(&means, &members, &truth, span, p)
        }
        Shape::CountBins { .. } | Shape::WidthBins { .. } => {
            let (idx, _) = bins_of(&v, case.shape);
            let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for (row, k) in idx.iter().enumerate() {
                members.entry(*k).or_default().push(row);
            }
            let bulk: Vec<i64> = members
                .iter()
                .filter(|(_, rows)| rows.iter().any(|r| !truth.contains(r)))
                .map(|(k, _)| *k)
                .collect();
            let mut verdict = Verdict::Hidden;
            for (k, rows) in &members {
                if !rows.iter().any(|r| truth.contains(r)) || bulk.contains(k) {
                    continue;
                }
                let dist = bulk.iter().map(|b| (b - k).abs()).min();
                let one = if dist.is_some_and(|d| d >= 2) { Verdict::Revealed } else { Verdict::Ambiguous };
                verdict = verdict.max(one);
            }
            verdict
        }
        _ => Verdict::Hidden,
    }
}

fn identity_oracle(case: &Case, p: &RubricParams) -> Verdict {
    let ds = &case.dataset;
    let is_identity = |f: &str| match f {
        "v" | "w" => true,
        other => {
            let l = labels(ds, other);
            l.iter().collect::<BTreeSet<_>>().len() == l.len()
        }
    };
    let ids: Vec<&String> = case.binding.relevant_fields.iter().filter(|f| is_identity(f)).collect();
    let raw_fields: &[&str] = match case.shape {
        Shape::Strip { .. } | Shape::Ticks { .. } => &["v"],
        Shape::Scatter { .. } => &["v", "w"],
        Shape::OffAxis => &["w", "g"],
        Shape::GroupCount | Shape::GroupMeanBar | Shape::GroupMeanPoint => &["g"],
        Shape::CountBins { .. } | Shape::WidthBins { .. } => &[],
    };
    if ids.iter().any(|f| raw_fields.contains(&f.as_str())) {
        return Verdict::Revealed;
    }
    let k_star = match case.shape {
        Shape::CountBins { .. } | Shape::WidthBins { .. } => {
            let (idx, _) = bins_of(&column(ds, "v"), case.shape);
            let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
            for k in idx {
                *counts.entry(k).or_default() += 1;
            }
            counts.into_values().min().unwrap_or(0)
        }
        Shape::GroupCount | Shape::GroupMeanBar | Shape::GroupMeanPoint => {
            groups(ds).iter().map(|(_, rows)| rows.len()).min().unwrap_or(0)
        }
        _ => 1,
    };
    if k_star >= p.k_safe {
        Verdict::Hidden
    } else {
        Verdict::Ambiguous
    }
}

pub fn verdict(case: &Case, params: &RubricParams) -> Verdict {
    match case.binding.signal_kind {
        SignalKind::Gap => gap_oracle(case, params),
        SignalKind::Outlier => outlier_oracle(case, params),
        SignalKind::IndividualPoint => identity_oracle(case, params),
        other => panic!("oracle does not cover {other}"),
    }
}

/// Copy of `params` with the named parameter scaled by `factor`. Integer
/// parameters move to the next whole value in the direction of the scale.
pub fn perturbed(params: &RubricParams, name: &str, factor: f64) -> Option<RubricParams> {
    let mut p = *params;
    let slot = match name {
        "gap_frac" => &mut p.gap_frac,
        "overlap_frac" => &mut p.overlap_frac,
        "resolution" => &mut p.resolution,
        "density_floor" => &mut p.density_floor,
        "density_dip" => &mut p.density_dip,
        "peak_prominence" => &mut p.peak_prominence,
        "cv_threshold" => &mut p.cv_threshold,
        "k_safe" => {
            let k = p.k_safe as f64 * factor;
            p.k_safe = if factor > 1.0 { k.ceil() as usize } else { k.floor() as usize };
            return p.validate().is_ok().then_some(p);
        }
        _ => return None,
    };
    *slot *= factor;
    p.validate().is_ok().then_some(p)
}
