//! The declarative chart language senders author in.
//!
//! A [`ChartSpec`] is a mark, its parameters, an ordered transform pipeline
//! and a set of channel encodings. The wire format is strict JSON: unknown
//! keys are rejected so that grading is never ambiguous about what a chart
//! asked for. See `docs/chart-spec.schema.json` for the published schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{FieldKind, FieldSchema, Value};
use crate::expr::Expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkType {
    Point,
    Tick,
    Line,
    Area,
    Bar,
    Rect,
    Arc,
    Boxplot,
    Trail,
}

impl MarkType {
    pub const ALL: [MarkType; 9] = [
        MarkType::Point,
        MarkType::Tick,
        MarkType::Line,
        MarkType::Area,
        MarkType::Bar,
        MarkType::Rect,
        MarkType::Arc,
        MarkType::Boxplot,
        MarkType::Trail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MarkType::Point => "point",
            MarkType::Tick => "tick",
            MarkType::Line => "line",
            MarkType::Area => "area",
            MarkType::Bar => "bar",
            MarkType::Rect => "rect",
            MarkType::Arc => "arc",
            MarkType::Boxplot => "boxplot",
            MarkType::Trail => "trail",
        }
    }

    pub fn from_name(name: &str) -> Option<MarkType> {
        MarkType::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl fmt::Display for MarkType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    X,
    Y,
    Color,
    Size,
    Theta,
    Detail,
}

impl Channel {
    pub fn is_positional(self) -> bool {
        matches!(self, Channel::X | Channel::Y | Channel::Theta)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Channel::X => "x",
            Channel::Y => "y",
            Channel::Color => "color",
            Channel::Size => "size",
            Channel::Theta => "theta",
            Channel::Detail => "detail",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateOp {
    Count,
    Sum,
    Mean,
    Median,
    Min,
    Max,
}

impl fmt::Display for AggregateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("enum serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

/// Bin sizing: an explicit width or a target bin count over the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BinWire", into = "BinWire")]
pub enum BinSize {
    Width(f64),
    Count(u32),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BinWire {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<u32>,
}

impl TryFrom<BinWire> for BinSize {
    type Error = String;
    fn try_from(w: BinWire) -> Result<Self, String> {
        match (w.width, w.count) {
            (Some(width), None) => Ok(BinSize::Width(width)),
            (None, Some(count)) => Ok(BinSize::Count(count)),
            _ => Err("exactly one of `width` or `count` is required".into()),
        }
    }
}

impl From<BinSize> for BinWire {
    fn from(b: BinSize) -> Self {
        match b {
            BinSize::Width(w) => BinWire { width: Some(w), count: None },
            BinSize::Count(c) => BinWire { width: None, count: Some(c) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Encoding {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<FieldKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggregateOp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin: Option<BinSize>,
}

impl Encoding {
    pub fn field(name: impl Into<String>) -> Self {
        Self {
            field: Some(name.into()),
            kind: None,
            aggregate: None,
            bin: None,
        }
    }

    pub fn count() -> Self {
        Self {
            field: None,
            kind: None,
            aggregate: Some(AggregateOp::Count),
            bin: None,
        }
    }

    pub fn with_aggregate(mut self, op: AggregateOp) -> Self {
        self.aggregate = Some(op);
        self
    }

    pub fn with_bin(mut self, bin: BinSize) -> Self {
        self.bin = Some(bin);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateSpec {
    pub op: AggregateOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(rename = "as")]
    pub as_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Classify {
    pub field: String,
    #[serde(flatten)]
    pub size: BinSize,
    #[serde(rename = "as")]
    pub as_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BandWire", into = "BandWire")]
pub struct Band {
    pub field: String,
    pub cuts: BandCuts,
    pub as_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BandCuts {
    Cutpoints(Vec<f64>),
    Quantiles(u32),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BandWire {
    field: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cutpoints: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quantiles: Option<u32>,
    #[serde(rename = "as")]
    as_name: String,
}

impl TryFrom<BandWire> for Band {
    type Error = String;
    fn try_from(w: BandWire) -> Result<Self, String> {
        let cuts = match (w.cutpoints, w.quantiles) {
            (Some(c), None) => BandCuts::Cutpoints(c),
            (None, Some(k)) => BandCuts::Quantiles(k),
            _ => return Err("exactly one of `cutpoints` or `quantiles` is required".into()),
        };
        Ok(Band {
            field: w.field,
            cuts,
            as_name: w.as_name,
        })
    }
}

impl From<Band> for BandWire {
    fn from(b: Band) -> Self {
        let (cutpoints, quantiles) = match b.cuts {
            BandCuts::Cutpoints(c) => (Some(c), None),
            BandCuts::Quantiles(k) => (None, Some(k)),
        };
        BandWire {
            field: b.field,
            cutpoints,
            quantiles,
            as_name: b.as_name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SubsampleWire", into = "SubsampleWire")]
pub struct Subsample {
    pub size: SampleSize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSize {
    N(usize),
    Fraction(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubsampleWire {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fraction: Option<f64>,
    seed: u64,
}

impl TryFrom<SubsampleWire> for Subsample {
    type Error = String;
    fn try_from(w: SubsampleWire) -> Result<Self, String> {
        let size = match (w.n, w.fraction) {
            (Some(n), None) => SampleSize::N(n),
            (None, Some(f)) => SampleSize::Fraction(f),
            _ => return Err("exactly one of `n` or `fraction` is required".into()),
        };
        Ok(Subsample { size, seed: w.seed })
    }
}

impl From<Subsample> for SubsampleWire {
    fn from(s: Subsample) -> Self {
        let (n, fraction) = match s.size {
            SampleSize::N(n) => (Some(n), None),
            SampleSize::Fraction(f) => (None, Some(f)),
        };
        SubsampleWire { n, fraction, seed: s.seed }
    }
}

fn default_grid_n() -> usize {
    128
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predicate {
    pub field: String,
    pub cmp: Comparison,
    pub value: Value,
}

impl Predicate {
    pub fn matches(&self, v: &Value) -> bool {
        use std::cmp::Ordering;
        let ord = match (v, &self.value) {
            (Value::Num(a), Value::Num(b)) => a.partial_cmp(b),
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (Value::Null, _) => return false,
            (a, b) => Some(a.label().cmp(&b.label())),
        };
        let Some(ord) = ord else { return false };
        match self.cmp {
            Comparison::Eq => ord == Ordering::Equal,
            Comparison::Ne => ord != Ordering::Equal,
            Comparison::Lt => ord == Ordering::Less,
            Comparison::Le => ord != Ordering::Greater,
            Comparison::Gt => ord == Ordering::Greater,
            Comparison::Ge => ord != Ordering::Less,
        }
    }
}

/// One step of the disclosure-tactic pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum Transform {
    #[serde(rename_all = "lowercase")]
    Aggregate {
        #[serde(default)]
        groupby: Vec<String>,
        ops: Vec<AggregateSpec>,
    },
    Classify(Classify),
    Band(Band),
    Derive {
        expr: Expr,
        #[serde(rename = "as")]
        as_name: String,
    },
    Subsample(Subsample),
    Smooth {
        field: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bandwidth: Option<f64>,
        #[serde(default = "default_grid_n")]
        grid_n: usize,
    },
    Filter { predicate: Predicate },
}

pub const TRANSFORM_OPS: [&str; 7] = [
    "aggregate", "classify", "band", "derive", "subsample", "smooth", "filter",
];

/// Name of the density column produced by a Smooth step.
pub const DENSITY_FIELD: &str = "density";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Linear,
    Monotone,
    Step,
}

fn default_size() -> f64 {
    0.01
}
fn default_opacity() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkParams {
    /// Mark extent as a fraction of the positional axis range.
    #[serde(default = "default_size")]
    pub size: f64,
    #[serde(default = "default_opacity")]
    pub opacity: f64,
    #[serde(default)]
    pub interpolation: Interpolation,
    /// Boxplot only: draw points beyond the fences.
    #[serde(default = "default_true")]
    pub show_outlier_points: bool,
}

impl Default for MarkParams {
    fn default() -> Self {
        Self {
            size: default_size(),
            opacity: default_opacity(),
            interpolation: Interpolation::Linear,
            show_outlier_points: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub mark: MarkType,
    #[serde(default)]
    pub mark_params: MarkParams,
    #[serde(default)]
    pub transforms: Vec<Transform>,
    pub encoding: BTreeMap<Channel, Encoding>,
}

impl ChartSpec {
    pub fn new(mark: MarkType) -> Self {
        Self {
            mark,
            mark_params: MarkParams::default(),
            transforms: Vec::new(),
            encoding: BTreeMap::new(),
        }
    }

    pub fn encode(mut self, channel: Channel, enc: Encoding) -> Self {
        self.encoding.insert(channel, enc);
        self
    }

    pub fn transform(mut self, t: Transform) -> Self {
        self.transforms.push(t);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("chart spec serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("chart spec serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("parse error at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown mark `{0}`")]
    UnknownMark(String),
    #[error("unknown transform `{0}`")]
    UnknownTransform(String),
}

impl From<serde_json::Error> for SpecError {
    fn from(e: serde_json::Error) -> Self {
        SpecError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// Parses the strict JSON wire form, filling defaults for omitted mark params.
pub fn parse_chart_spec(text: &str) -> Result<ChartSpec, SpecError> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    if let Some(mark) = raw.get("mark").and_then(|m| m.as_str()) {
        if MarkType::from_name(mark).is_none() {
            return Err(SpecError::UnknownMark(mark.to_string()));
        }
    }
    if let Some(steps) = raw.get("transforms").and_then(|t| t.as_array()) {
        for step in steps {
            if let Some(op) = step.get("op").and_then(|o| o.as_str()) {
                if !TRANSFORM_OPS.contains(&op) {
                    return Err(SpecError::UnknownTransform(op.to_string()));
                }
            }
        }
    }
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TacticKind {
    EncodedValues,
    Aggregation,
    Banding,
    Classification,
    DerivedValues,
    Subsampling,
    Smoothing,
}

/// Disclosure tactics exercised by a spec. `EncodedValues` is always present.
pub fn tactics_used(spec: &ChartSpec) -> BTreeSet<TacticKind> {
    let mut out = BTreeSet::from([TacticKind::EncodedValues]);
    for t in &spec.transforms {
        out.insert(match t {
            Transform::Aggregate { .. } => TacticKind::Aggregation,
            Transform::Classify(_) => TacticKind::Classification,
            Transform::Band(_) => TacticKind::Banding,
            Transform::Derive { .. } => TacticKind::DerivedValues,
            Transform::Subsample(_) | Transform::Filter { .. } => TacticKind::Subsampling,
            Transform::Smooth { .. } => TacticKind::Smoothing,
        });
    }
    for enc in spec.encoding.values() {
        if enc.aggregate.is_some() {
            out.insert(TacticKind::Aggregation);
        }
        if enc.bin.is_some() {
            out.insert(TacticKind::Classification);
        }
    }
    if spec.mark == MarkType::Boxplot {
        out.insert(TacticKind::Aggregation);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    UnknownField { field: String, context: String },
    IllegalChannelSet { mark: MarkType, reason: String },
    AggregateOnNominal { field: String },
    BinOnNominal { field: String },
    CollidingName { name: String },
    KindMismatch { field: String, declared: FieldKind, actual: FieldKind },
    InvalidParameter { context: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// What validation knows about a column at some point in the pipeline.
#[derive(Debug, Clone, Copy)]
struct ColumnFacts {
    kind: FieldKind,
    aggregated: bool,
    binned: bool,
}

struct Validator {
    columns: Vec<(String, ColumnFacts)>,
    violations: Vec<Violation>,
}

impl Validator {
    fn get(&self, name: &str) -> Option<ColumnFacts> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, f)| *f)
    }

    fn require(&mut self, name: &str, context: &str) -> Option<ColumnFacts> {
        let f = self.get(name);
        if f.is_none() {
            self.violations.push(Violation::UnknownField {
                field: name.to_string(),
                context: context.to_string(),
            });
        }
        f
    }

    fn require_numeric(&mut self, name: &str, context: &str, binning: bool) -> bool {
        match self.require(name, context) {
            Some(f) if f.kind.is_numeric() => true,
            Some(_) => {
                self.violations.push(if binning {
                    Violation::BinOnNominal { field: name.to_string() }
                } else {
                    Violation::AggregateOnNominal { field: name.to_string() }
                });
                false
            }
            None => false,
        }
    }

    fn add(&mut self, name: &str, facts: ColumnFacts, reserved: &BTreeSet<String>) {
        if self.get(name).is_some() || reserved.contains(name) {
            self.violations.push(Violation::CollidingName { name: name.to_string() });
        }
        self.columns.push((name.to_string(), facts));
    }

    fn invalid(&mut self, context: &str, message: impl Into<String>) {
        self.violations.push(Violation::InvalidParameter {
            context: context.to_string(),
            message: message.into(),
        });
    }

    fn check_bin(&mut self, context: &str, size: BinSize) {
        match size {
            BinSize::Width(w) if !(w.is_finite() && w > 0.0) => self.invalid(context, "bin width must be positive"),
            BinSize::Count(0) => self.invalid(context, "bin count must be at least 1"),
            _ => {}
        }
    }

    fn transform(&mut self, idx: usize, t: &Transform) {
        let ctx = format!("transforms[{idx}]");
        let none = BTreeSet::new();
        match t {
            Transform::Aggregate { groupby, ops } => {
                let mut next = Vec::new();
                for g in groupby {
                    if let Some(f) = self.require(g, &ctx) {
                        next.push((g.clone(), f));
                    }
                }
                let mut outputs = Vec::new();
                for spec in ops {
                    match (spec.op, &spec.field) {
                        (AggregateOp::Count, Some(f)) => {
                            self.require(f, &ctx);
                        }
                        (AggregateOp::Count, None) => {}
                        (_, Some(f)) => {
                            self.require_numeric(f, &ctx, false);
                        }
                        (op, None) => self.invalid(&ctx, format!("aggregate `{op}` needs a field")),
                    }
                    outputs.push(spec.as_name.clone());
                }
                let reserved: BTreeSet<String> = self.columns.iter().map(|(n, _)| n.clone()).collect();
                self.columns = next;
                for name in outputs {
                    self.add(
                        &name,
                        ColumnFacts {
                            kind: FieldKind::Quantitative,
                            aggregated: true,
                            binned: false,
                        },
                        &reserved,
                    );
                }
            }
            Transform::Classify(c) => {
                self.require_numeric(&c.field, &ctx, true);
                self.check_bin(&ctx, c.size);
                self.add(
                    &c.as_name,
                    ColumnFacts {
                        kind: FieldKind::Quantitative,
                        aggregated: false,
                        binned: true,
                    },
                    &none,
                );
            }
            Transform::Band(b) => {
                self.require_numeric(&b.field, &ctx, true);
                match &b.cuts {
                    BandCuts::Cutpoints(c) => {
                        if c.is_empty() || c.windows(2).any(|w| !(w[0] < w[1])) || c.iter().any(|v| !v.is_finite()) {
                            self.invalid(&ctx, "cutpoints must be non-empty and strictly increasing");
                        }
                    }
                    BandCuts::Quantiles(k) if *k < 2 => self.invalid(&ctx, "quantiles must be at least 2"),
                    _ => {}
                }
                self.add(
                    &b.as_name,
                    ColumnFacts {
                        kind: FieldKind::Ordinal,
                        aggregated: false,
                        binned: true,
                    },
                    &none,
                );
            }
            Transform::Derive { expr, as_name } => {
                for f in expr.fields() {
                    self.require_numeric(&f, &ctx, false);
                }
                self.add(
                    as_name,
                    ColumnFacts {
                        kind: FieldKind::Quantitative,
                        aggregated: false,
                        binned: false,
                    },
                    &none,
                );
            }
            Transform::Subsample(s) => match s.size {
                SampleSize::N(0) => self.invalid(&ctx, "subsample n must be at least 1"),
                SampleSize::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                    self.invalid(&ctx, "subsample fraction must lie in (0, 1]")
                }
                _ => {}
            },
            Transform::Smooth { field, bandwidth, grid_n } => {
                let ok = self.require_numeric(field, &ctx, true);
                if let Some(h) = bandwidth {
                    if !(h.is_finite() && *h > 0.0) {
                        self.invalid(&ctx, "bandwidth must be positive");
                    }
                }
                if *grid_n < 16 {
                    self.invalid(&ctx, "grid_n must be at least 16");
                }
                if field == DENSITY_FIELD {
                    self.violations.push(Violation::CollidingName { name: DENSITY_FIELD.into() });
                }
                let facts = self.get(field).filter(|_| ok).unwrap_or(ColumnFacts {
                    kind: FieldKind::Quantitative,
                    aggregated: false,
                    binned: false,
                });
                self.columns = vec![
                    (field.clone(), facts),
                    (
                        DENSITY_FIELD.to_string(),
                        ColumnFacts {
                            kind: FieldKind::Quantitative,
                            aggregated: true,
                            binned: false,
                        },
                    ),
                ];
            }
            Transform::Filter { predicate } => {
                if let Some(f) = self.require(&predicate.field, &ctx) {
                    let ordered = !matches!(predicate.cmp, Comparison::Eq | Comparison::Ne);
                    if ordered && f.kind.is_numeric() && predicate.value.as_f64().is_none() {
                        self.invalid(&ctx, "ordered comparison on a numeric field needs a numeric literal");
                    }
                }
            }
        }
    }
}

/// Resolved view of one encoding after validation.
#[derive(Debug, Clone, Copy)]
struct EncFacts {
    numeric: bool,
    categorical: bool,
    quantity: bool,
    binned: bool,
}

/// Checks a spec against a dataset schema. Every failure is a report entry.
pub fn validate_spec(spec: &ChartSpec, schema: &[FieldSchema]) -> ValidationReport {
    let mut v = Validator {
        columns: schema
            .iter()
            .map(|f| {
                (
                    f.name.clone(),
                    ColumnFacts {
                        kind: f.kind,
                        aggregated: false,
                        binned: false,
                    },
                )
            })
            .collect(),
        violations: Vec::new(),
    };

    let p = spec.mark_params;
    if !(p.size.is_finite() && p.size > 0.0 && p.size < 1.0) {
        v.invalid("mark_params", "size must lie in (0, 1)");
    }
    if !(p.opacity > 0.0 && p.opacity <= 1.0) {
        v.invalid("mark_params", "opacity must lie in (0, 1]");
    }

    for (i, t) in spec.transforms.iter().enumerate() {
        v.transform(i, t);
    }

    let mut facts: BTreeMap<Channel, EncFacts> = BTreeMap::new();
    for (channel, enc) in &spec.encoding {
        let ctx = format!("encoding.{channel}");
        let col = match &enc.field {
            Some(f) => v.require(f, &ctx),
            None => {
                if enc.aggregate != Some(AggregateOp::Count) {
                    v.invalid(&ctx, "encoding needs a field unless it is a count");
                }
                None
            }
        };
        if let (Some(col), Some(declared), Some(name)) = (col, enc.kind, &enc.field) {
            if declared.is_numeric() != col.kind.is_numeric() {
                v.violations.push(Violation::KindMismatch {
                    field: name.clone(),
                    declared,
                    actual: col.kind,
                });
            }
        }
        if let (Some(op), Some(col), Some(name)) = (enc.aggregate, col, &enc.field) {
            if op != AggregateOp::Count && !col.kind.is_numeric() {
                v.violations.push(Violation::AggregateOnNominal { field: name.clone() });
            }
        }
        if let Some(bin) = enc.bin {
            v.check_bin(&ctx, bin);
            if let (Some(col), Some(name)) = (col, &enc.field) {
                if !col.kind.is_numeric() {
                    v.violations.push(Violation::BinOnNominal { field: name.clone() });
                }
            }
            if enc.aggregate.is_some() {
                v.invalid(&ctx, "an encoding cannot be both binned and aggregated");
            }
        }
        let is_count = enc.aggregate == Some(AggregateOp::Count);
        let numeric = is_count || col.map(|c| c.kind.is_numeric()).unwrap_or(false);
        facts.insert(
            *channel,
            EncFacts {
                numeric,
                categorical: col.map(|c| c.kind.is_categorical()).unwrap_or(false) && enc.aggregate.is_none(),
                quantity: enc.aggregate.is_some() || col.map(|c| c.aggregated).unwrap_or(false),
                binned: enc.bin.is_some() || col.map(|c| c.binned).unwrap_or(false),
            },
        );
    }

    check_channels(spec, &facts, &mut v.violations);
    ValidationReport { violations: v.violations }
}

fn check_channels(spec: &ChartSpec, facts: &BTreeMap<Channel, EncFacts>, out: &mut Vec<Violation>) {
    let mark = spec.mark;
    let mut illegal = |reason: &str| {
        out.push(Violation::IllegalChannelSet {
            mark,
            reason: reason.to_string(),
        })
    };
    let x = facts.get(&Channel::X).copied();
    let y = facts.get(&Channel::Y).copied();
    if mark != MarkType::Arc && facts.contains_key(&Channel::Theta) {
        illegal("theta is only legal on arc");
    }
    match mark {
        MarkType::Point | MarkType::Tick | MarkType::Line | MarkType::Area | MarkType::Trail => {
            if x.is_none() {
                illegal("x is required");
            }
        }
        MarkType::Bar => match (x, y) {
            (Some(x), Some(y)) => {
                if !(x.quantity || x.binned || y.quantity || y.binned) {
                    illegal("bar needs one aggregated or binned positional channel");
                }
            }
            _ => illegal("bar requires x and y"),
        },
        MarkType::Rect => match (x, y) {
            (Some(x), Some(y)) => {
                if !(x.binned || x.categorical) || !(y.binned || y.categorical) {
                    illegal("rect requires binned or categorical x and y");
                }
            }
            _ => illegal("rect requires x and y"),
        },
        MarkType::Arc => {
            match facts.get(&Channel::Theta) {
                Some(t) if t.quantity => {}
                Some(_) => illegal("arc theta must be aggregated"),
                None => illegal("arc requires theta"),
            }
            match facts.get(&Channel::Color) {
                Some(c) if c.categorical || c.binned => {}
                _ => illegal("arc requires a categorical color channel"),
            }
        }
        MarkType::Boxplot => {
            let is_measure = |f: &EncFacts| f.numeric && !f.binned && !f.quantity;
            let measures = [x, y].iter().flatten().filter(|f| is_measure(f)).count();
            if measures != 1 {
                illegal("boxplot needs exactly one quantitative positional channel");
            }
            for f in [x, y].iter().flatten() {
                if !is_measure(f) && !f.categorical {
                    illegal("boxplot grouping channel must be categorical");
                }
            }
            if spec.encoding.values().any(|e| e.aggregate.is_some()) {
                illegal("boxplot encodings cannot be aggregated");
            }
        }
    }
}
