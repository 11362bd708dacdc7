//! Evaluates a [`ChartSpec`] against a [`Dataset`] into a [`RenderedView`]:
//! the mark instances a reader would see, each tagged with the dataset rows
//! that produced it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart_spec::{
    AggregateOp, AggregateSpec, BandCuts, BinSize, Channel, ChartSpec, MarkParams, MarkType, SampleSize,
    Transform, DENSITY_FIELD,
};
use crate::data_model::{Dataset, Domain, FieldKind, Value};
use crate::stats::{self, quantile_sorted};

pub use crate::stats::{kde, quantile, DensityCurve};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("step {step}: {message}")]
    Step { step: String, message: String },
}

fn step_err(step: impl Into<String>, message: impl Into<String>) -> EvalError {
    EvalError::Step {
        step: step.into(),
        message: message.into(),
    }
}

/// How the values in a column came to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Derivation {
    Raw,
    Binned { origin: f64, width: f64 },
    Banded { edges: Vec<f64> },
    Derived,
    Aggregated { op: AggregateOp },
    Count,
    Smoothed { bandwidth: f64 },
    Density { bandwidth: f64 },
}

impl Derivation {
    /// True when the column carries a per-instance quantity rather than data values.
    pub fn is_quantity(&self) -> bool {
        matches!(
            self,
            Derivation::Aggregated { .. } | Derivation::Count | Derivation::Density { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub sources: BTreeSet<String>,
    pub derivation: Derivation,
}

/// What a channel shows: the column it reads and how that column was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub field: Option<String>,
    pub kind: FieldKind,
    pub lineage: Lineage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierPoint {
    pub value: f64,
    pub source_rows: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<OutlierPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkInstance {
    pub channel_values: BTreeMap<Channel, Value>,
    pub source_rows: BTreeSet<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_stats: Option<BoxStats>,
}

impl MarkInstance {
    pub fn num(&self, channel: Channel) -> Option<f64> {
        self.channel_values.get(&channel).and_then(Value::as_f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedView {
    pub mark: MarkType,
    pub mark_params: MarkParams,
    pub instances: Vec<MarkInstance>,
    pub domains: BTreeMap<Channel, Domain>,
    pub channels: BTreeMap<Channel, ChannelInfo>,
    pub pipeline_echo: Vec<Transform>,
}

impl RenderedView {
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("view serializes")
    }

    /// Client-facing form: provenance row ids are replaced by their count.
    pub fn to_client_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("view serializes");
        redact(&mut v);
        v
    }

    /// Every source row referenced anywhere in the view, boxplot outliers included.
    pub fn all_source_rows(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for inst in &self.instances {
            out.extend(&inst.source_rows);
            if let Some(s) = &inst.derived_stats {
                for o in &s.outliers {
                    out.extend(&o.source_rows);
                }
            }
        }
        out
    }
}

fn redact(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            if let Some(rows) = map.remove("source_rows") {
                let n = rows.as_array().map(|a| a.len()).unwrap_or(0);
                map.insert("source_count".into(), n.into());
            }
            map.values_mut().for_each(redact);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(redact),
        _ => {}
    }
}

#[derive(Debug, Clone)]
struct Column {
    name: String,
    kind: FieldKind,
    lineage: Lineage,
}

#[derive(Debug, Clone)]
struct Row {
    values: Vec<Value>,
    source: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
struct Table {
    columns: Vec<Column>,
    rows: Vec<Row>,
}

/// Total order on cells for grouping: null, then numbers, then text.
pub(crate) fn cmp_values(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Null, Value::Null) => Ordering::Equal,
        (Value::Null, _) => Ordering::Less,
        (_, Value::Null) => Ordering::Greater,
        (Value::Num(x), Value::Num(y)) => x.total_cmp(y),
        (Value::Num(_), Value::Text(_)) => Ordering::Less,
        (Value::Text(_), Value::Num(_)) => Ordering::Greater,
        (Value::Text(x), Value::Text(y)) => x.cmp(y),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Key(Vec<Value>);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match cmp_values(a, b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

impl Table {
    fn from_dataset(ds: &Dataset) -> Table {
        Table {
            columns: ds
                .schema
                .iter()
                .map(|f| Column {
                    name: f.name.clone(),
                    kind: f.kind,
                    lineage: Lineage {
                        sources: BTreeSet::from([f.name.clone()]),
                        derivation: Derivation::Raw,
                    },
                })
                .collect(),
            rows: ds
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| Row {
                    values: r.clone(),
                    source: BTreeSet::from([i]),
                })
                .collect(),
        }
    }

    fn index(&self, name: &str, step: &str) -> Result<usize, EvalError> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| step_err(step, format!("unknown field `{name}`")))
    }

    fn numbers(&self, idx: usize) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.values[idx].as_f64()).collect()
    }

    fn push_column(&mut self, column: Column, values: Vec<Value>) {
        if let Some(pos) = self.columns.iter().position(|c| c.name == column.name) {
            self.columns[pos] = column;
            for (r, v) in self.rows.iter_mut().zip(values) {
                r.values[pos] = v;
            }
        } else {
            self.columns.push(column);
            for (r, v) in self.rows.iter_mut().zip(values) {
                r.values.push(v);
            }
        }
    }
}

fn aggregate_values(op: AggregateOp, values: &[Value], counting_rows: bool) -> Value {
    if op == AggregateOp::Count {
        let n = if counting_rows {
            values.len()
        } else {
            values.iter().filter(|v| !v.is_null()).count()
        };
        return Value::Num(n as f64);
    }
    let mut nums: Vec<f64> = values.iter().filter_map(Value::as_f64).collect();
    if nums.is_empty() {
        return Value::Null;
    }
    nums.sort_by(|a, b| a.total_cmp(b));
    let v = match op {
        AggregateOp::Sum => nums.iter().sum(),
        AggregateOp::Mean => nums.iter().sum::<f64>() / nums.len() as f64,
        AggregateOp::Median => quantile_sorted(&nums, 0.5),
        AggregateOp::Min => nums[0],
        AggregateOp::Max => nums[nums.len() - 1],
        AggregateOp::Count => unreachable!(),
    };
    Value::Num(v)
}

fn aggregate_lineage(op: AggregateOp, source: Option<&Column>) -> Lineage {
    Lineage {
        sources: source.map(|c| c.lineage.sources.clone()).unwrap_or_default(),
        derivation: if op == AggregateOp::Count {
            Derivation::Count
        } else {
            Derivation::Aggregated { op }
        },
    }
}

/// Groups rows by the key columns, in key order.
fn group_rows(table: &Table, keys: &[usize]) -> BTreeMap<Key, Vec<usize>> {
    let mut groups: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
    for (i, r) in table.rows.iter().enumerate() {
        let key = Key(keys.iter().map(|&k| r.values[k].clone()).collect());
        groups.entry(key).or_default().push(i);
    }
    groups
}

fn apply_aggregate(table: &Table, groupby: &[String], ops: &[AggregateSpec], step: &str) -> Result<Table, EvalError> {
    let keys: Vec<usize> = groupby.iter().map(|g| table.index(g, step)).collect::<Result<_, _>>()?;
    let mut measures = Vec::new();
    for spec in ops {
        let idx = match &spec.field {
            Some(f) => Some(table.index(f, step)?),
            None => None,
        };
        measures.push((spec, idx));
    }
    let mut columns: Vec<Column> = keys.iter().map(|&k| table.columns[k].clone()).collect();
    for (spec, idx) in &measures {
        columns.push(Column {
            name: spec.as_name.clone(),
            kind: FieldKind::Quantitative,
            lineage: aggregate_lineage(spec.op, idx.map(|i| &table.columns[i])),
        });
    }
    let mut rows = Vec::new();
    for (key, members) in group_rows(table, &keys) {
        let mut values = key.0;
        for (spec, idx) in &measures {
            let cells: Vec<Value> = members
                .iter()
                .map(|&m| idx.map(|i| table.rows[m].values[i].clone()).unwrap_or(Value::Num(1.0)))
                .collect();
            values.push(aggregate_values(spec.op, &cells, idx.is_none()));
        }
        let source = members.iter().flat_map(|&m| table.rows[m].source.iter().copied()).collect();
        rows.push(Row { values, source });
    }
    Ok(Table { columns, rows })
}

/// Resolves bin sizing against the observed values to `(origin, width, bins)`.
pub(crate) fn bin_layout(size: BinSize, values: &[f64]) -> Option<(f64, f64, Option<u32>)> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !min.is_finite() {
        return None;
    }
    Some(match size {
        BinSize::Width(w) => ((min / w).floor() * w, w, None),
        BinSize::Count(c) => {
            let w = if max > min { (max - min) / c as f64 } else { 1.0 };
            (min, w, Some(c))
        }
    })
}

pub(crate) fn bin_start(v: f64, origin: f64, width: f64, bins: Option<u32>) -> f64 {
    let mut k = ((v - origin) / width).floor();
    if let Some(c) = bins {
        k = k.min(c as f64 - 1.0);
    }
    origin + k.max(0.0) * width
}

fn apply_classify(table: &mut Table, field: &str, size: BinSize, as_name: &str, step: &str) -> Result<(), EvalError> {
    let idx = table.index(field, step)?;
    let nums = table.numbers(idx);
    let (origin, width, bins) = bin_layout(size, &nums).unwrap_or((0.0, 1.0, None));
    let values = table
        .rows
        .iter()
        .map(|r| match r.values[idx].as_f64() {
            Some(v) => Value::Num(bin_start(v, origin, width, bins)),
            None => Value::Null,
        })
        .collect();
    let column = Column {
        name: as_name.to_string(),
        kind: FieldKind::Quantitative,
        lineage: Lineage {
            sources: table.columns[idx].lineage.sources.clone(),
            derivation: Derivation::Binned { origin, width },
        },
    };
    table.push_column(column, values);
    Ok(())
}

fn band_edges(cuts: &BandCuts, nums: &[f64]) -> Vec<f64> {
    match cuts {
        BandCuts::Cutpoints(c) => c.clone(),
        BandCuts::Quantiles(k) => {
            let mut sorted = nums.to_vec();
            sorted.sort_by(|a, b| a.total_cmp(b));
            if sorted.is_empty() {
                return Vec::new();
            }
            let mut edges: Vec<f64> = (1..*k).map(|i| quantile_sorted(&sorted, i as f64 / *k as f64)).collect();
            edges.dedup();
            edges
        }
    }
}

/// Index of the band holding `v`: the number of edges at or below it.
pub fn band_index(edges: &[f64], v: f64) -> usize {
    edges.partition_point(|e| *e <= v)
}

fn apply_smooth(table: &Table, field: &str, bandwidth: Option<f64>, grid_n: usize, step: &str) -> Result<Table, EvalError> {
    let idx = table.index(field, step)?;
    let points: Vec<(f64, &BTreeSet<usize>)> = table
        .rows
        .iter()
        .filter_map(|r| r.values[idx].as_f64().map(|v| (v, &r.source)))
        .collect();
    let nums: Vec<f64> = points.iter().map(|p| p.0).collect();
    let curve = stats::kde(&nums, bandwidth, grid_n).map_err(|e| step_err(step, e.to_string()))?;
    let h = curve.bandwidth;
    let reach = 3.0 * h * (1.0 + 1e-9);
    let sources = table.columns[idx].lineage.sources.clone();
    let columns = vec![
        Column {
            name: field.to_string(),
            kind: FieldKind::Quantitative,
            lineage: Lineage {
                sources: sources.clone(),
                derivation: Derivation::Smoothed { bandwidth: h },
            },
        },
        Column {
            name: DENSITY_FIELD.to_string(),
            kind: FieldKind::Quantitative,
            lineage: Lineage {
                sources,
                derivation: Derivation::Density { bandwidth: h },
            },
        },
    ];
    let rows = curve
        .grid
        .iter()
        .zip(&curve.density)
        .map(|(&x, &d)| Row {
            values: vec![Value::Num(x), Value::Num(d)],
            source: points
                .iter()
                .filter(|(v, _)| (v - x).abs() <= reach)
                .flat_map(|(_, s)| s.iter().copied())
                .collect(),
        })
        .collect();
    Ok(Table { columns, rows })
}

fn apply_transform(mut table: Table, t: &Transform, i: usize) -> Result<Table, EvalError> {
    let step = format!("transforms[{i}]");
    match t {
        Transform::Aggregate { groupby, ops } => apply_aggregate(&table, groupby, ops, &step),
        Transform::Classify(c) => {
            apply_classify(&mut table, &c.field, c.size, &c.as_name, &step)?;
            Ok(table)
        }
        Transform::Band(b) => {
            let idx = table.index(&b.field, &step)?;
            let edges = band_edges(&b.cuts, &table.numbers(idx));
            let values = table
                .rows
                .iter()
                .map(|r| match r.values[idx].as_f64() {
                    Some(v) => Value::Num(band_index(&edges, v) as f64),
                    None => Value::Null,
                })
                .collect();
            let column = Column {
                name: b.as_name.clone(),
                kind: FieldKind::Ordinal,
                lineage: Lineage {
                    sources: table.columns[idx].lineage.sources.clone(),
                    derivation: Derivation::Banded { edges },
                },
            };
            table.push_column(column, values);
            Ok(table)
        }
        Transform::Derive { expr, as_name } => {
            let mut sources = BTreeSet::new();
            let mut lookup_idx = BTreeMap::new();
            for f in expr.fields() {
                let idx = table.index(&f, &step)?;
                sources.extend(table.columns[idx].lineage.sources.iter().cloned());
                lookup_idx.insert(f, idx);
            }
            let values = table
                .rows
                .iter()
                .map(|r| {
                    let lookup = |name: &str| lookup_idx.get(name).and_then(|&i| r.values[i].as_f64());
                    expr.eval(&lookup).map(Value::Num).unwrap_or(Value::Null)
                })
                .collect();
            let column = Column {
                name: as_name.clone(),
                kind: FieldKind::Quantitative,
                lineage: Lineage {
                    sources,
                    derivation: Derivation::Derived,
                },
            };
            table.push_column(column, values);
            Ok(table)
        }
        Transform::Subsample(s) => {
            let len = table.rows.len();
            let n = match s.size {
                SampleSize::N(n) => n.min(len),
                SampleSize::Fraction(f) => ((f * len as f64).round() as usize).clamp(usize::from(len > 0), len),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            let mut keep = rand::seq::index::sample(&mut rng, len, n).into_vec();
            keep.sort_unstable();
            let rows = keep.into_iter().map(|k| table.rows[k].clone()).collect();
            Ok(Table {
                columns: table.columns,
                rows,
            })
        }
        Transform::Smooth { field, bandwidth, grid_n } => apply_smooth(&table, field, *bandwidth, *grid_n, &step),
        Transform::Filter { predicate } => {
            let idx = table.index(&predicate.field, &step)?;
            table.rows.retain(|r| predicate.matches(&r.values[idx]));
            Ok(table)
        }
    }
}

struct Resolved {
    channel: Channel,
    column: Option<usize>,
    aggregate: Option<AggregateOp>,
    info: ChannelInfo,
}

fn resolve_channels(spec: &ChartSpec, table: &mut Table) -> Result<Vec<Resolved>, EvalError> {
    let mut out = Vec::new();
    for (&channel, enc) in &spec.encoding {
        let step = format!("encoding.{channel}");
        let column = match (&enc.field, enc.bin) {
            (Some(f), Some(bin)) => {
                let name = format!("\u{0}bin:{channel}:{f}");
                apply_classify(table, f, bin, &name, &step)?;
                Some(table.index(&name, &step)?)
            }
            (Some(f), None) => Some(table.index(f, &step)?),
            (None, _) => None,
        };
        let info = match (enc.aggregate, column) {
            (Some(op), col) => ChannelInfo {
                field: enc.field.clone(),
                kind: FieldKind::Quantitative,
                lineage: aggregate_lineage(op, col.map(|c| &table.columns[c])),
            },
            (None, Some(c)) => ChannelInfo {
                field: enc.field.clone(),
                kind: table.columns[c].kind,
                lineage: table.columns[c].lineage.clone(),
            },
            (None, None) => return Err(step_err(step, "encoding has neither field nor aggregate")),
        };
        out.push(Resolved {
            channel,
            column,
            aggregate: enc.aggregate,
            info,
        });
    }
    Ok(out)
}

fn raw_instances(table: &Table, chans: &[Resolved]) -> Vec<MarkInstance> {
    table
        .rows
        .iter()
        .filter_map(|r| {
            let mut channel_values = BTreeMap::new();
            for c in chans {
                let v = c.column.map(|i| r.values[i].clone()).unwrap_or(Value::Null);
                if c.channel.is_positional() && v.is_null() {
                    return None;
                }
                channel_values.insert(c.channel, v);
            }
            Some(MarkInstance {
                channel_values,
                source_rows: r.source.clone(),
                derived_stats: None,
            })
        })
        .collect()
}

fn grouped_instances(table: &Table, chans: &[Resolved]) -> Vec<MarkInstance> {
    let keys: Vec<(Channel, usize)> = chans
        .iter()
        .filter(|c| c.aggregate.is_none())
        .filter_map(|c| c.column.map(|i| (c.channel, i)))
        .collect();
    let key_cols: Vec<usize> = keys.iter().map(|k| k.1).collect();
    group_rows(table, &key_cols)
        .into_iter()
        .map(|(key, members)| {
            let mut channel_values: BTreeMap<Channel, Value> =
                keys.iter().map(|k| k.0).zip(key.0).collect();
            for c in chans {
                if let Some(op) = c.aggregate {
                    let cells: Vec<Value> = members
                        .iter()
                        .map(|&m| c.column.map(|i| table.rows[m].values[i].clone()).unwrap_or(Value::Num(1.0)))
                        .collect();
                    channel_values.insert(c.channel, aggregate_values(op, &cells, c.column.is_none()));
                }
            }
            MarkInstance {
                channel_values,
                source_rows: members.iter().flat_map(|&m| table.rows[m].source.iter().copied()).collect(),
                derived_stats: None,
            }
        })
        .collect()
}

fn boxplot_instances(table: &Table, chans: &[Resolved]) -> Result<Vec<MarkInstance>, EvalError> {
    let measure = chans
        .iter()
        .find(|c| {
            matches!(c.channel, Channel::X | Channel::Y)
                && c.info.kind.is_numeric()
                && matches!(c.info.lineage.derivation, Derivation::Raw | Derivation::Derived | Derivation::Smoothed { .. })
        })
        .ok_or_else(|| step_err("encoding", "boxplot needs a quantitative positional channel"))?;
    let m_idx = measure.column.expect("measure channel reads a column");
    let keys: Vec<(Channel, usize)> = chans
        .iter()
        .filter(|c| c.channel != measure.channel)
        .filter_map(|c| c.column.map(|i| (c.channel, i)))
        .collect();
    let key_cols: Vec<usize> = keys.iter().map(|k| k.1).collect();
    let mut out = Vec::new();
    for (key, members) in group_rows(table, &key_cols) {
        let mut pts: Vec<(f64, &BTreeSet<usize>)> = members
            .iter()
            .filter_map(|&m| table.rows[m].values[m_idx].as_f64().map(|v| (v, &table.rows[m].source)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let sorted: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let q1 = quantile_sorted(&sorted, 0.25);
        let median = quantile_sorted(&sorted, 0.5);
        let q3 = quantile_sorted(&sorted, 0.75);
        let lower_fence = q1 - 1.5 * (q3 - q1);
        let upper_fence = q3 + 1.5 * (q3 - q1);
        let inside = || sorted.iter().copied().filter(|v| *v >= lower_fence && *v <= upper_fence);
        let outliers = pts
            .iter()
            .filter(|(v, _)| *v < lower_fence || *v > upper_fence)
            .map(|(v, s)| OutlierPoint {
                value: *v,
                source_rows: (*s).clone(),
            })
            .collect();
        let mut channel_values: BTreeMap<Channel, Value> = keys.iter().map(|k| k.0).zip(key.0).collect();
        channel_values.insert(measure.channel, Value::Num(median));
        out.push(MarkInstance {
            channel_values,
            source_rows: pts.iter().flat_map(|p| p.1.iter().copied()).collect(),
            derived_stats: Some(BoxStats {
                q1,
                median,
                q3,
                lower_fence,
                upper_fence,
                lower_whisker: inside().fold(f64::INFINITY, f64::min),
                upper_whisker: inside().fold(f64::NEG_INFINITY, f64::max),
                outliers,
            }),
        });
    }
    Ok(out)
}

fn channel_domain(channel: Channel, info: &ChannelInfo, instances: &[MarkInstance]) -> Option<Domain> {
    let values = instances.iter().filter_map(|i| i.channel_values.get(&channel)).filter(|v| !v.is_null());
    match &info.lineage.derivation {
        Derivation::Banded { edges } => Some(Domain::Categorical {
            values: (0..=edges.len()).map(|i| i.to_string()).collect(),
        }),
        _ if info.kind.is_categorical() => {
            let mut seen: Vec<String> = Vec::new();
            for v in values {
                let l = v.label();
                if !seen.contains(&l) {
                    seen.push(l);
                }
            }
            (!seen.is_empty()).then_some(Domain::Categorical { values: seen })
        }
        derivation => {
            let mut nums: Vec<f64> = values.filter_map(Value::as_f64).collect();
            for inst in instances {
                if let (Some(s), Some(_)) = (&inst.derived_stats, inst.channel_values.get(&channel)) {
                    if info.lineage.derivation == Derivation::Raw || !info.lineage.derivation.is_quantity() {
                        nums.extend([s.lower_whisker, s.upper_whisker, s.q1, s.q3]);
                        nums.extend(s.outliers.iter().map(|o| o.value));
                    }
                }
            }
            if nums.is_empty() {
                return None;
            }
            let mut min = nums.iter().copied().fold(f64::INFINITY, f64::min);
            let mut max = nums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            match derivation {
                Derivation::Binned { width, .. } => max += width,
                Derivation::Count | Derivation::Density { .. } => min = min.min(0.0),
                _ => {}
            }
            if !min.is_finite() || !max.is_finite() {
                return None;
            }
            max = max.max(min);
            Some(Domain::Quantitative { min, max })
        }
    }
}

/// Runs the pipeline, then encoding-level bins and aggregates, then emits marks.
pub fn evaluate(spec: &ChartSpec, dataset: &Dataset) -> Result<RenderedView, EvalError> {
    let mut table = Table::from_dataset(dataset);
    for (i, t) in spec.transforms.iter().enumerate() {
        table = apply_transform(table, t, i)?;
    }
    let chans = resolve_channels(spec, &mut table)?;
    let instances = if spec.mark == MarkType::Boxplot {
        boxplot_instances(&table, &chans)?
    } else if chans.iter().any(|c| c.aggregate.is_some()) {
        grouped_instances(&table, &chans)
    } else {
        raw_instances(&table, &chans)
    };
    let mut domains = BTreeMap::new();
    let mut channels = BTreeMap::new();
    for c in chans {
        if let Some(d) = channel_domain(c.channel, &c.info, &instances) {
            domains.insert(c.channel, d);
        }
        channels.insert(c.channel, c.info);
    }
    Ok(RenderedView {
        mark: spec.mark,
        mark_params: spec.mark_params,
        instances,
        domains,
        channels,
        pipeline_echo: spec.transforms.clone(),
    })
}
