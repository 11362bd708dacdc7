//! Ground-truth signal extraction, per-mark detection heuristics and the
//! satisfied / risked / broken scorecard.
//!
//! Every numeric threshold lives in [`RubricParams`] and every decision is
//! written to an [`Evidence`] trace so a grader can see exactly which
//! comparison produced a verdict.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart_spec::{tactics_used, validate_spec, AggregateOp, Channel, ChartSpec, MarkType, TacticKind};
use crate::data_model::{Dataset, PuzzleSpec, SignalBinding, SignalKind};
use crate::stats::{self, gaussian, linspace, peaks_with_prominence, quantile_sorted};
use crate::transform_engine::{evaluate, ChannelInfo, Derivation, EvalError, RenderedView};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RubricParams {
    pub gap_frac: f64,
    pub overlap_frac: f64,
    pub resolution: f64,
    pub density_floor: f64,
    pub density_dip: f64,
    pub peak_prominence: f64,
    pub k_safe: usize,
    pub cv_threshold: f64,
}

impl Default for RubricParams {
    fn default() -> Self {
        Self {
            gap_frac: 0.05,
            overlap_frac: 0.8,
            resolution: 0.01,
            density_floor: 0.05,
            density_dip: 0.25,
            peak_prominence: 0.2,
            k_safe: 5,
            cv_threshold: 0.3,
        }
    }
}

impl RubricParams {
    pub fn validate(&self) -> Result<(), RubricError> {
        let frac = |v: f64| v > 0.0 && v < 1.0;
        let ok = frac(self.gap_frac)
            && frac(self.overlap_frac)
            && frac(self.resolution)
            && frac(self.density_floor)
            && frac(self.density_dip)
            && self.density_floor < self.density_dip
            && frac(self.peak_prominence)
            && self.k_safe >= 2
            && self.cv_threshold > 0.0;
        if ok {
            Ok(())
        } else {
            Err(RubricError::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Hidden,
    Ambiguous,
    Revealed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Adherence {
    Satisfied,
    Risked,
    Broken,
}

impl Adherence {
    pub fn for_constraint(v: Verdict) -> Adherence {
        match v {
            Verdict::Revealed => Adherence::Broken,
            Verdict::Ambiguous => Adherence::Risked,
            Verdict::Hidden => Adherence::Satisfied,
        }
    }

    pub fn for_need(v: Verdict) -> Adherence {
        match v {
            Verdict::Revealed => Adherence::Satisfied,
            Verdict::Ambiguous => Adherence::Risked,
            Verdict::Hidden => Adherence::Broken,
        }
    }
}

impl fmt::Display for Adherence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Mark types that can, in principle, carry each signal.
pub fn markset(kind: SignalKind) -> &'static [MarkType] {
    use MarkType::*;
    match kind {
        SignalKind::Gap => &[Arc, Area, Bar, Point, Line, Rect, Tick, Trail],
        SignalKind::Peak => &[Area, Bar, Line, Point, Rect, Tick],
        SignalKind::Outlier => &[Area, Bar, Boxplot, Line, Point, Rect, Tick, Trail],
        SignalKind::Saturation => &[Area, Bar, Line, Point, Rect, Tick, Trail],
        SignalKind::IndividualPoint | SignalKind::IndividualLocation => &[Area, Bar, Boxplot, Line, Point, Rect, Tick],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRule {
    pub kind: SignalKind,
    pub relevant_fields: Vec<String>,
    pub markset: Vec<MarkType>,
    pub params: RubricParams,
}

impl SignalRule {
    pub fn new(binding: &SignalBinding, params: RubricParams) -> Self {
        Self {
            kind: binding.signal_kind,
            relevant_fields: binding.relevant_fields.clone(),
            markset: markset(binding.signal_kind).to_vec(),
            params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub heuristic: String,
    pub mark: MarkType,
    pub parameter: String,
    pub measured: f64,
    pub threshold: f64,
    pub outcome: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub binding: SignalBinding,
    pub verdict: Verdict,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub need_adherence: Adherence,
    pub constraint_adherence: Adherence,
    pub need_evidence: Evidence,
    pub constraint_evidence: Evidence,
    pub tactics: BTreeSet<TacticKind>,
}

impl ScoreCard {
    /// One line per trace entry, for instructor review.
    pub fn explain(&self) -> String {
        let mut out = String::new();
        for (role, adherence, ev) in [
            ("need", self.need_adherence, &self.need_evidence),
            ("constraint", self.constraint_adherence, &self.constraint_evidence),
        ] {
            out.push_str(&format!(
                "{role} {} {:?}: {adherence} ({:?})\n",
                ev.binding.signal_kind, ev.binding.relevant_fields, ev.verdict
            ));
            for t in &ev.trace {
                out.push_str(&format!(
                    "  {} [{}] {} measured={} threshold={} -> {:?}\n",
                    t.heuristic,
                    t.mark,
                    t.parameter,
                    fmt_num(t.measured),
                    fmt_num(t.threshold),
                    t.outcome
                ));
            }
        }
        let tactics: Vec<String> = self.tactics.iter().map(|t| format!("{t:?}")).collect();
        out.push_str(&format!("tactics: {}\n", tactics.join(", ")));
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{:.4}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RubricError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("dataset mismatch: row {row} referenced but dataset has {len} rows")]
    DatasetMismatch { row: usize, len: usize },
    #[error("binding error: {0}")]
    Binding(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid rubric parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGaps {
    pub field: String,
    pub min: f64,
    pub max: f64,
    pub gaps: Vec<Interval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruePeak {
    pub location: f64,
    pub prominence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldPeaks {
    pub field: String,
    pub min: f64,
    pub max: f64,
    pub grid_step: f64,
    pub peaks: Vec<TruePeak>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFences {
    pub field: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TruthSet {
    Gaps { fields: Vec<FieldGaps> },
    Peaks { fields: Vec<FieldPeaks> },
    Outliers { rows: BTreeSet<usize>, fences: Vec<FieldFences> },
    Saturation { unit: String, concentration: BTreeMap<String, f64>, cv: f64 },
    Identity { rows: BTreeSet<usize> },
}

const TRUTH_GRID: usize = 512;

fn numeric_fields(dataset: &Dataset, binding: &SignalBinding) -> Result<Vec<(String, Vec<(usize, f64)>)>, RubricError> {
    let mut out = Vec::new();
    for f in &binding.relevant_fields {
        let schema = dataset
            .field(f)
            .ok_or_else(|| RubricError::Binding(format!("unknown field `{f}`")))?;
        if !schema.kind.is_numeric() {
            continue;
        }
        let col = dataset.numeric_column(f).map_err(|e| RubricError::Binding(e.to_string()))?;
        if col.len() < 4 {
            return Err(RubricError::DegenerateData(format!(
                "`{f}` has {} non-null values, need at least 4",
                col.len()
            )));
        }
        out.push((f.clone(), col));
    }
    if out.is_empty() {
        return Err(RubricError::Binding(format!(
            "{} needs a quantitative relevant field",
            binding.signal_kind
        )));
    }
    Ok(out)
}

fn sorted_values(col: &[(usize, f64)]) -> Vec<f64> {
    let mut v: Vec<f64> = col.iter().map(|c| c.1).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Maximal empty stretches between consecutive sorted values that are at
/// least `gap_frac` of the range wide.
pub fn find_gaps(values: &[f64], gap_frac: f64) -> Vec<Interval> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let (Some(&min), Some(&max)) = (v.first(), v.last()) else {
        return Vec::new();
    };
    let floor = gap_frac * (max - min);
    if floor <= 0.0 {
        return Vec::new();
    }
    v.windows(2)
        .filter(|w| w[1] - w[0] >= floor)
        .map(|w| Interval { lo: w[0], hi: w[1] })
        .collect()
}

/// Kernel density on `[min, max]` with reflection at both boundaries, so a
/// flat sample stays flat up to the edges.
pub fn reflected_density(values: &[f64], grid_n: usize) -> Result<(Vec<f64>, Vec<f64>), RubricError> {
    let h = stats::silverman_bandwidth(values).map_err(|e| RubricError::DegenerateData(e.to_string()))?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = linspace(min, max, grid_n);
    let dens = grid
        .iter()
        .map(|&x| {
            values
                .iter()
                .map(|&v| gaussian((x - v) / h) + gaussian((x - (2.0 * min - v)) / h) + gaussian((x - (2.0 * max - v)) / h))
                .sum::<f64>()
                / (values.len() as f64 * h)
        })
        .collect();
    Ok((grid, dens))
}

fn prominent_peaks(xs: &[f64], ys: &[f64], frac: f64) -> Vec<TruePeak> {
    let top = ys.iter().copied().fold(0.0, f64::max);
    peaks_with_prominence(ys)
        .into_iter()
        .filter(|(_, p)| *p >= frac * top && *p > 0.0)
        .map(|(i, p)| TruePeak {
            location: xs[i],
            prominence: p,
        })
        .collect()
}

fn finest_categorical(dataset: &Dataset, fields: &[String]) -> Option<(String, usize)> {
    fields
        .iter()
        .filter(|f| dataset.field(f).map(|s| s.kind.is_categorical()).unwrap_or(false))
        .filter_map(|f| {
            let idx = dataset.field_index(f)?;
            let distinct: BTreeSet<String> = dataset
                .rows
                .iter()
                .filter(|r| !r[idx].is_null())
                .map(|r| r[idx].label())
                .collect();
            Some((f.clone(), distinct.len()))
        })
        .max_by_key(|(_, n)| *n)
}

fn grid_cells(points: &[Vec<f64>], bins: usize) -> BTreeMap<String, f64> {
    let dims = points.first().map(|p| p.len()).unwrap_or(0);
    let bounds: Vec<(f64, f64)> = (0..dims)
        .map(|d| {
            let lo = points.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
            let hi = points.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    let mut cells = BTreeMap::new();
    for p in points {
        let key: Vec<String> = p
            .iter()
            .zip(&bounds)
            .map(|(v, (lo, hi))| {
                let span = hi - lo;
                let k = if span > 0.0 {
                    (((v - lo) / span) * bins as f64).floor().min(bins as f64 - 1.0)
                } else {
                    0.0
                };
                format!("{k}")
            })
            .collect();
        *cells.entry(key.join(",")).or_insert(0.0) += 1.0;
    }
    cells
}

/// Extracts what is actually true in the data for a binding.
pub fn ground_truth(dataset: &Dataset, binding: &SignalBinding, params: &RubricParams) -> Result<TruthSet, RubricError> {
    binding
        .validate(&dataset.schema)
        .map_err(|e| RubricError::Binding(e.to_string()))?;
    match binding.signal_kind {
        SignalKind::Gap => {
            let fields = numeric_fields(dataset, binding)?
                .into_iter()
                .map(|(field, col)| {
                    let v = sorted_values(&col);
                    FieldGaps {
                        field,
                        min: v[0],
                        max: v[v.len() - 1],
                        gaps: find_gaps(&v, params.gap_frac),
                    }
                })
                .collect();
            Ok(TruthSet::Gaps { fields })
        }
        SignalKind::Peak => {
            let mut fields = Vec::new();
            for (field, col) in numeric_fields(dataset, binding)? {
                let v = sorted_values(&col);
                let (grid, dens) = reflected_density(&v, TRUTH_GRID)?;
                fields.push(FieldPeaks {
                    field,
                    min: v[0],
                    max: v[v.len() - 1],
                    grid_step: grid[1] - grid[0],
                    peaks: prominent_peaks(&grid, &dens, params.peak_prominence),
                });
            }
            Ok(TruthSet::Peaks { fields })
        }
        SignalKind::Outlier => {
            let mut rows = BTreeSet::new();
            let mut fences = Vec::new();
            for (field, col) in numeric_fields(dataset, binding)? {
                let v = sorted_values(&col);
                let q1 = quantile_sorted(&v, 0.25);
                let q3 = quantile_sorted(&v, 0.75);
                let (lower, upper) = (q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1));
                rows.extend(col.iter().filter(|(_, x)| *x < lower || *x > upper).map(|(i, _)| *i));
                fences.push(FieldFences { field, lower, upper });
            }
            Ok(TruthSet::Outliers { rows, fences })
        }
        SignalKind::Saturation => {
            let (unit, concentration) = match finest_categorical(dataset, &binding.relevant_fields) {
                Some((unit, _)) => {
                    let idx = dataset.field_index(&unit).expect("validated field");
                    let mut table = BTreeMap::new();
                    for r in dataset.rows.iter().filter(|r| !r[idx].is_null()) {
                        *table.entry(r[idx].label()).or_insert(0.0) += 1.0;
                    }
                    (unit, table)
                }
                None => {
                    let cols = numeric_fields(dataset, binding)?;
                    let cols: Vec<_> = cols.into_iter().take(2).collect();
                    let by_row: Vec<BTreeMap<usize, f64>> =
                        cols.iter().map(|(_, c)| c.iter().copied().collect()).collect();
                    let points: Vec<Vec<f64>> = (0..dataset.len())
                        .filter_map(|i| by_row.iter().map(|m| m.get(&i).copied()).collect())
                        .collect();
                    let names: Vec<&str> = cols.iter().map(|c| c.0.as_str()).collect();
                    (format!("grid({})", names.join(",")), grid_cells(&points, 10))
                }
            };
            if concentration.values().sum::<f64>() < 4.0 {
                return Err(RubricError::DegenerateData(format!("`{unit}` has fewer than 4 observations")));
            }
            let counts: Vec<f64> = concentration.values().copied().collect();
            let cv = stats::coefficient_of_variation(&counts).unwrap_or(0.0);
            Ok(TruthSet::Saturation { unit, concentration, cv })
        }
        SignalKind::IndividualPoint | SignalKind::IndividualLocation => {
            let present = binding
                .relevant_fields
                .iter()
                .filter_map(|f| dataset.field_index(f))
                .map(|idx| dataset.rows.iter().filter(|r| !r[idx].is_null()).count())
                .max()
                .unwrap_or(0);
            if present < 4 {
                return Err(RubricError::DegenerateData("fewer than 4 identified rows".into()));
            }
            Ok(TruthSet::Identity {
                rows: (0..dataset.len()).collect(),
            })
        }
    }
}

const POSITIONAL: [Channel; 3] = [Channel::X, Channel::Y, Channel::Theta];

struct Detector<'a> {
    view: &'a RenderedView,
    dataset: &'a Dataset,
    params: RubricParams,
    relevant: BTreeSet<String>,
    trace: Vec<TraceEntry>,
}

impl<'a> Detector<'a> {
    fn note(&mut self, heuristic: &str, parameter: &str, measured: f64, threshold: f64, outcome: Verdict) -> Verdict {
        self.trace.push(TraceEntry {
            heuristic: heuristic.to_string(),
            mark: self.view.mark,
            parameter: parameter.to_string(),
            measured,
            threshold,
            outcome,
        });
        outcome
    }

    /// Channels whose column descends from `field`.
    fn showing(&self, field: &str, channels: &[Channel]) -> Vec<(Channel, &'a ChannelInfo)> {
        self.view
            .channels
            .iter()
            .filter(|(c, info)| channels.contains(c) && info.lineage.sources.contains(field))
            .map(|(c, info)| (*c, info))
            .collect()
    }

    fn any_relevant_encoded(&self) -> bool {
        self.view
            .channels
            .values()
            .any(|info| info.lineage.sources.iter().any(|s| self.relevant.contains(s)))
    }

    fn points(&self, channel: Channel) -> Vec<(f64, &'a BTreeSet<usize>)> {
        self.view
            .instances
            .iter()
            .filter_map(|i| i.num(channel).map(|v| (v, &i.source_rows)))
            .collect()
    }

    fn axis_span(&self, channel: Channel, fallback: f64) -> f64 {
        match self.view.domains.get(&channel) {
            Some(crate::data_model::Domain::Quantitative { min, max }) if max > min => max - min,
            _ => fallback,
        }
    }

    fn quantity_channel(&self, exclude: Channel) -> Option<(Channel, &'a ChannelInfo)> {
        [Channel::Y, Channel::X, Channel::Theta, Channel::Size, Channel::Color]
            .into_iter()
            .filter(|c| *c != exclude)
            .find_map(|c| {
                self.view
                    .channels
                    .get(&c)
                    .filter(|i| matches!(i.lineage.derivation, Derivation::Count | Derivation::Density { .. }))
                    .map(|i| (c, i))
            })
    }

    /// Density profile drawn by a Smooth step, sorted by position.
    fn smooth_profile(&self, channel: Channel) -> Option<(Vec<f64>, Vec<f64>)> {
        let (dc, _) = self
            .view
            .channels
            .iter()
            .find(|(_, i)| matches!(i.lineage.derivation, Derivation::Density { .. }))?;
        let mut pts: Vec<(f64, f64)> = self
            .view
            .instances
            .iter()
            .filter_map(|i| Some((i.num(channel)?, i.num(*dc)?)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        (pts.len() >= 2).then(|| pts.into_iter().unzip())
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] || x >= xs[xs.len() - 1] {
        return 0.0;
    }
    let i = xs.partition_point(|v| *v <= x);
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    if x1 == x0 {
        y0
    } else {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Length of `gap` not covered by any `[v − half, v + half]`.
fn uncovered_length(gap: Interval, centers: &[f64], half: f64) -> f64 {
    let mut spans: Vec<(f64, f64)> = centers
        .iter()
        .map(|v| ((v - half).max(gap.lo), (v + half).min(gap.hi)))
        .filter(|(a, b)| b > a)
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut covered = 0.0;
    let mut cursor = gap.lo;
    for (a, b) in spans {
        let a = a.max(cursor);
        if b > a {
            covered += b - a;
            cursor = b;
        }
    }
    gap.width() - covered
}

/// One rendered interval along an axis and whether any mark sits in it.
#[derive(Debug, Clone, Copy)]
struct Slot {
    lo: f64,
    hi: f64,
    filled: bool,
}

fn slots_for(info: &ChannelInfo, values: &[f64], data: (f64, f64)) -> Option<Vec<Slot>> {
    match &info.lineage.derivation {
        Derivation::Binned { origin, width } => {
            let present: BTreeSet<i64> = values.iter().map(|v| ((v - origin) / width).round() as i64).collect();
            let last = *present.iter().max()?;
            let first = *present.iter().min()?;
            Some(
                (first..=last)
                    .map(|k| Slot {
                        lo: origin + k as f64 * width,
                        hi: origin + (k + 1) as f64 * width,
                        filled: present.contains(&k),
                    })
                    .collect(),
            )
        }
        Derivation::Banded { edges } => {
            let present: BTreeSet<usize> = values.iter().map(|v| v.round() as usize).collect();
            let mut bounds = vec![data.0.min(edges.first().copied().unwrap_or(data.0))];
            bounds.extend(edges.iter().copied());
            bounds.push(data.1.max(edges.last().copied().unwrap_or(data.1)));
            Some(
                bounds
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| Slot {
                        lo: w[0],
                        hi: w[1],
                        filled: present.contains(&i),
                    })
                    .collect(),
            )
        }
        _ => None,
    }
}

fn overlap(a: (f64, f64), b: Interval) -> f64 {
    (a.1.min(b.hi) - a.0.max(b.lo)).max(0.0)
}

impl<'a> Detector<'a> {
    fn gap_verdict(&mut self, truth: &[FieldGaps]) -> Verdict {
        let mut verdict = Verdict::Hidden;
        let total: usize = truth.iter().map(|f| f.gaps.len()).sum();
        if total == 0 {
            self.note("NoTrueGap", "gap_frac", 0.0, self.params.gap_frac, Verdict::Hidden);
            return verdict;
        }
        for fg in truth {
            let range = fg.max - fg.min;
            for &gap in &fg.gaps {
                if self.view.mark == MarkType::Arc {
                    for (_, info) in self.showing(&fg.field, &[Channel::Color]) {
                        let v = self.gap_legend(info, gap, fg);
                        verdict = verdict.max(v);
                    }
                    continue;
                }
                for (ch, info) in self.showing(&fg.field, &POSITIONAL) {
                    let v = self.gap_on_channel(ch, info, gap, fg, range);
                    verdict = verdict.max(v);
                }
            }
        }
        verdict
    }

    fn gap_on_channel(&mut self, ch: Channel, info: &ChannelInfo, gap: Interval, fg: &FieldGaps, range: f64) -> Verdict {
        let p = self.params;
        let mark = self.view.mark;
        let values: Vec<f64> = self.points(ch).into_iter().map(|p| p.0).collect();
        let line_like = matches!(mark, MarkType::Line | MarkType::Trail | MarkType::Area) && ch == Channel::X;
        match &info.lineage.derivation {
            Derivation::Smoothed { .. } => {
                let Some((xs, ys)) = self.smooth_profile(ch) else {
                    return self.note("SmoothWithoutDensity", "density_floor", 0.0, p.density_floor, Verdict::Hidden);
                };
                let top = ys.iter().copied().fold(0.0, f64::max);
                let samples: Vec<f64> = linspace(gap.lo, gap.hi, 101)
                    .into_iter()
                    .map(|x| interp(&xs, &ys, x) / top)
                    .collect();
                let floor = samples.iter().filter(|d| **d <= p.density_floor).count() as f64 / samples.len() as f64;
                let dip = samples.iter().copied().fold(f64::INFINITY, f64::min);
                if floor > p.overlap_frac {
                    self.note("DensityBaseline", "overlap_frac", floor, p.overlap_frac, Verdict::Revealed)
                } else if dip <= p.density_dip {
                    self.note("DensityDip", "density_dip", dip, p.density_dip, Verdict::Ambiguous)
                } else {
                    self.note("DensityDip", "density_dip", dip, p.density_dip, Verdict::Hidden)
                }
            }
            Derivation::Raw | Derivation::Binned { .. } if line_like => {
                let mut xs = values.clone();
                xs.sort_by(|a, b| a.total_cmp(b));
                xs.dedup();
                let Some(i) = xs.windows(2).position(|w| w[0] <= gap.lo && w[1] > gap.lo) else {
                    return self.note("LineNoSpan", "overlap_frac", 0.0, p.overlap_frac, Verdict::Hidden);
                };
                let spanned = (xs[i + 1].min(gap.hi) - gap.lo) / gap.width();
                let interpolation = self.view.mark_params.interpolation;
                if interpolation == crate::chart_spec::Interpolation::Linear {
                    let outcome = if spanned > p.overlap_frac {
                        Verdict::Revealed
                    } else {
                        Verdict::Ambiguous
                    };
                    self.note("LineJump", "overlap_frac", spanned, p.overlap_frac, outcome)
                } else {
                    let mut spacing: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
                    spacing.sort_by(|a, b| a.total_cmp(b));
                    let smoothing = 2.0 * quantile_sorted(&spacing, 0.5);
                    let outcome = if smoothing > gap.width() {
                        Verdict::Hidden
                    } else {
                        Verdict::Ambiguous
                    };
                    self.note("LineSmoothing", "overlap_frac", smoothing / gap.width(), 1.0, outcome)
                }
            }
            Derivation::Raw => {
                let span = self.axis_span(ch, range);
                let half = self.view.mark_params.size / 2.0 * span;
                let coverage = uncovered_length(gap, &values, half) / gap.width();
                if coverage <= 0.0 {
                    return self.note("MarkCoverage", "overlap_frac", coverage, p.overlap_frac, Verdict::Hidden);
                }
                if gap.width() <= p.resolution * span {
                    return self.note("GapResolution", "resolution", gap.width() / span, p.resolution, Verdict::Ambiguous);
                }
                let outcome = if coverage > p.overlap_frac {
                    Verdict::Revealed
                } else {
                    Verdict::Ambiguous
                };
                self.note("MarkCoverage", "overlap_frac", coverage, p.overlap_frac, outcome)
            }
            Derivation::Binned { .. } | Derivation::Banded { .. } => {
                let Some(slots) = slots_for(info, &values, (fg.min, fg.max)) else {
                    return self.note("BinCoverage", "overlap_frac", 0.0, p.overlap_frac, Verdict::Hidden);
                };
                let touching: Vec<&Slot> = slots.iter().filter(|s| overlap((s.lo, s.hi), gap) > 0.0).collect();
                let ratio = touching
                    .iter()
                    .map(|s| (s.hi - s.lo) / gap.width())
                    .fold(f64::INFINITY, f64::min);
                if ratio > 2.0 {
                    return self.note("BinWidth", "gap_frac", ratio, 2.0, Verdict::Hidden);
                }
                let empty: f64 = slots.iter().filter(|s| !s.filled).map(|s| overlap((s.lo, s.hi), gap)).sum();
                let coverage = empty / gap.width();
                let outcome = if coverage > p.overlap_frac {
                    Verdict::Revealed
                } else {
                    Verdict::Ambiguous
                };
                self.note("EmptyBinCoverage", "overlap_frac", coverage, p.overlap_frac, outcome)
            }
            _ => self.note("AggregatedOnly", "gap_frac", 0.0, p.gap_frac, Verdict::Hidden),
        }
    }

    fn gap_legend(&mut self, info: &ChannelInfo, gap: Interval, fg: &FieldGaps) -> Verdict {
        let values: Vec<f64> = self.points(Channel::Color).into_iter().map(|p| p.0).collect();
        let slots = slots_for(info, &values, (fg.min, fg.max)).unwrap_or_default();
        let n = slots.len();
        let hits = slots
            .iter()
            .enumerate()
            .filter(|(i, s)| *i > 0 && *i + 1 < n && !s.filled && overlap((s.lo, s.hi), gap) > 0.0)
            .count();
        let outcome = if hits > 0 { Verdict::Revealed } else { Verdict::Hidden };
        self.note("LegendEmptyCategory", "gap_frac", hits as f64, 1.0, outcome)
    }
}

fn slot_of(info: &ChannelInfo, slots: &[Slot], v: f64) -> Option<usize> {
    match &info.lineage.derivation {
        Derivation::Banded { .. } => Some(v.round() as usize).filter(|i| *i < slots.len()),
        _ => {
            let w = slots.first().map(|s| s.hi - s.lo)?;
            slots.iter().position(|s| (s.lo - v).abs() <= w * 1e-9)
        }
    }
}

fn match_peaks(truth: &[TruePeak], rendered: &[TruePeak], tol: f64) -> usize {
    let mut order: Vec<&TruePeak> = truth.iter().collect();
    order.sort_by(|a, b| b.prominence.total_cmp(&a.prominence));
    let mut used = vec![false; rendered.len()];
    let mut matched = 0;
    for t in order {
        let best = rendered
            .iter()
            .enumerate()
            .filter(|(i, r)| !used[*i] && (r.location - t.location).abs() <= tol)
            .min_by(|a, b| (a.1.location - t.location).abs().total_cmp(&(b.1.location - t.location).abs()));
        if let Some((i, _)) = best {
            used[i] = true;
            matched += 1;
        }
    }
    matched
}

impl<'a> Detector<'a> {
    fn has_other_aggregate(&self, ch: Channel) -> bool {
        self.view
            .channels
            .iter()
            .any(|(c, i)| *c != ch && matches!(i.lineage.derivation, Derivation::Aggregated { .. }))
    }

    /// Bar heights per bin, zero-filled and padded so edge bins can peak.
    fn binned_profile(&self, ch: Channel, origin: f64, width: f64) -> Option<(Vec<f64>, Vec<f64>, f64)> {
        if self.has_other_aggregate(ch) {
            return None;
        }
        let quantity = self.quantity_channel(ch).filter(|(_, i)| i.lineage.derivation == Derivation::Count);
        let mut heights: BTreeMap<i64, f64> = BTreeMap::new();
        for inst in &self.view.instances {
            let Some(v) = inst.num(ch) else { continue };
            let h = match quantity {
                Some((q, _)) => inst.num(q).unwrap_or(0.0),
                None => inst.source_rows.len() as f64,
            };
            *heights.entry(((v - origin) / width).round() as i64).or_insert(0.0) += h;
        }
        let first = *heights.keys().next()?;
        let last = *heights.keys().last()?;
        let (xs, ys) = (first - 1..=last + 1)
            .map(|k| (origin + (k as f64 + 0.5) * width, heights.get(&k).copied().unwrap_or(0.0)))
            .unzip();
        Some((xs, ys, width))
    }

    /// What a reader sees in a strip of raw marks: their density.
    fn raw_profile(&self, ch: Channel) -> Option<(Vec<f64>, Vec<f64>, f64)> {
        let quantity = self.quantity_channel(ch).filter(|(_, i)| i.lineage.derivation == Derivation::Count);
        let mut values = Vec::new();
        for inst in &self.view.instances {
            let Some(v) = inst.num(ch) else { continue };
            let reps = match quantity {
                Some((q, _)) => inst.num(q).unwrap_or(0.0).round().max(0.0) as usize,
                None => 1,
            };
            values.extend(std::iter::repeat(v).take(reps));
        }
        let curve = stats::kde(&values, None, TRUTH_GRID).ok()?;
        let step = curve.step();
        Some((curve.grid, curve.density, step))
    }

    fn peak_verdict(&mut self, truth: &[FieldPeaks]) -> Verdict {
        let p = self.params;
        let mut verdict = Verdict::Hidden;
        if truth.iter().all(|f| f.peaks.is_empty()) {
            self.note("NoTruePeak", "peak_prominence", 0.0, p.peak_prominence, Verdict::Hidden);
            return verdict;
        }
        for fp in truth.iter().filter(|f| !f.peaks.is_empty()) {
            let extrema = self.view.channels.values().any(|i| {
                i.lineage.sources.contains(&fp.field)
                    && matches!(
                        i.lineage.derivation,
                        Derivation::Aggregated {
                            op: AggregateOp::Min | AggregateOp::Max
                        }
                    )
            });
            if extrema {
                verdict = verdict.max(self.note("AggregatedExtrema", "peak_prominence", 1.0, 1.0, Verdict::Revealed));
            }
            for (ch, info) in self.showing(&fp.field, &POSITIONAL) {
                let profile = match info.lineage.derivation {
                    Derivation::Smoothed { .. } => self.smooth_profile(ch).map(|(x, y)| {
                        let step = x[1] - x[0];
                        (x, y, step)
                    }),
                    Derivation::Binned { origin, width } => self.binned_profile(ch, origin, width),
                    Derivation::Raw => self.raw_profile(ch),
                    _ => None,
                };
                let Some((xs, ys, step)) = profile else {
                    self.note("NoDistributionProfile", "peak_prominence", 0.0, p.peak_prominence, Verdict::Hidden);
                    continue;
                };
                let rendered = prominent_peaks(&xs, &ys, p.peak_prominence);
                let tol = (p.resolution * (fp.max - fp.min)).max(step).max(fp.grid_step);
                let matched = match_peaks(&fp.peaks, &rendered, tol);
                let outcome = if matched == fp.peaks.len() {
                    Verdict::Revealed
                } else if matched > 0 {
                    Verdict::Ambiguous
                } else {
                    Verdict::Hidden
                };
                verdict = verdict.max(self.note("PeaksMatched", "resolution", matched as f64, fp.peaks.len() as f64, outcome));
            }
        }
        verdict
    }

    fn outlier_verdict(&mut self, rows: &BTreeSet<usize>, fences: &[FieldFences]) -> Verdict {
        let p = self.params;
        if rows.is_empty() {
            self.note("NoTrueOutlier", "resolution", 0.0, p.resolution, Verdict::Hidden);
            return Verdict::Hidden;
        }
        if self.view.mark == MarkType::Boxplot {
            return self.boxplot_outliers(rows, fences);
        }
        let mut verdict = Verdict::Hidden;
        for ff in fences {
            let range = self
                .dataset
                .numeric_column(&ff.field)
                .map(|c| {
                    let v = sorted_values(&c);
                    v[v.len() - 1] - v[0]
                })
                .unwrap_or(1.0);
            for (ch, info) in self.showing(&ff.field, &POSITIONAL) {
                let v = match &info.lineage.derivation {
                    Derivation::Smoothed { .. } => self.smooth_outliers(ch, &ff.field, rows),
                    Derivation::Binned { .. } | Derivation::Banded { .. } => self.binned_outliers(ch, info, rows, ff),
                    Derivation::Count | Derivation::Density { .. } => {
                        self.note("AggregatedOnly", "resolution", 0.0, p.resolution, Verdict::Hidden)
                    }
                    _ => self.point_outliers(ch, rows, range),
                };
                verdict = verdict.max(v);
            }
        }
        verdict
    }

    fn boxplot_outliers(&mut self, rows: &BTreeSet<usize>, fences: &[FieldFences]) -> Verdict {
        let measured = fences
            .iter()
            .any(|f| !self.showing(&f.field, &[Channel::X, Channel::Y]).is_empty());
        if !measured {
            return self.note("RelevantFieldNotEncoded", "resolution", 0.0, self.params.resolution, Verdict::Hidden);
        }
        if !self.view.mark_params.show_outlier_points {
            return self.note("BoxplotOutlierPoints", "show_outlier_points", 0.0, 1.0, Verdict::Hidden);
        }
        let drawn: BTreeSet<usize> = self
            .view
            .instances
            .iter()
            .filter_map(|i| i.derived_stats.as_ref())
            .flat_map(|s| s.outliers.iter().flat_map(|o| o.source_rows.iter().copied()))
            .collect();
        let hits = drawn.intersection(rows).count();
        let outcome = if hits > 0 {
            Verdict::Revealed
        } else if !drawn.is_empty() {
            Verdict::Ambiguous
        } else {
            Verdict::Hidden
        };
        self.note("BoxplotOutlierPoints", "show_outlier_points", hits as f64, 1.0, outcome)
    }

    fn point_outliers(&mut self, ch: Channel, rows: &BTreeSet<usize>, range: f64) -> Verdict {
        let p = self.params;
        let pts = self.points(ch);
        let vals: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let Ok((lo, hi)) = stats::tukey_fences(&vals) else {
            return self.note("BeyondFences", "resolution", 0.0, p.resolution, Verdict::Hidden);
        };
        let inside: Vec<f64> = vals.iter().copied().filter(|v| *v >= lo && *v <= hi).collect();
        let span = self.axis_span(ch, range);
        let mut best: Option<f64> = None;
        for (v, src) in &pts {
            if (*v >= lo && *v <= hi) || src.is_disjoint(rows) {
                continue;
            }
            let sep = inside.iter().map(|u| (u - v).abs()).fold(f64::INFINITY, f64::min) / span;
            best = Some(best.map_or(sep, |b: f64| b.max(sep)));
        }
        match best {
            None => self.note("BeyondFences", "resolution", 0.0, p.resolution, Verdict::Hidden),
            Some(sep) if sep > p.resolution => self.note("OutlierSeparation", "resolution", sep, p.resolution, Verdict::Revealed),
            Some(sep) => self.note("OutlierSeparation", "resolution", sep, p.resolution, Verdict::Ambiguous),
        }
    }

    fn binned_outliers(&mut self, ch: Channel, info: &ChannelInfo, rows: &BTreeSet<usize>, ff: &FieldFences) -> Verdict {
        let pts = self.points(ch);
        let vals: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let data = self
            .dataset
            .numeric_column(&ff.field)
            .map(|c| {
                let v = sorted_values(&c);
                (v[0], v[v.len() - 1])
            })
            .unwrap_or((0.0, 1.0));
        let Some(slots) = slots_for(info, &vals, data) else {
            return self.note("OutlierBin", "empty_bins", 0.0, 1.0, Verdict::Hidden);
        };
        let mut members: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); slots.len()];
        for (v, src) in &pts {
            if let Some(i) = slot_of(info, &slots, *v) {
                members[i].extend(src.iter().copied());
            }
        }
        let bulk: Vec<usize> = (0..slots.len()).filter(|&i| members[i].iter().any(|r| !rows.contains(r))).collect();
        let mut verdict = Verdict::Hidden;
        let mut seen = false;
        for i in 0..slots.len() {
            if members[i].is_disjoint(rows) {
                continue;
            }
            seen = true;
            if bulk.contains(&i) {
                verdict = verdict.max(self.note("OutlierBinMerged", "empty_bins", 0.0, 1.0, Verdict::Hidden));
                continue;
            }
            let dist = bulk.iter().map(|&j| i.abs_diff(j)).min();
            let outcome = match dist {
                Some(d) if d >= 2 => Verdict::Revealed,
                _ => Verdict::Ambiguous,
            };
            let empty = dist.map(|d| d as f64 - 1.0).unwrap_or(0.0);
            verdict = verdict.max(self.note("OutlierBinSeparated", "empty_bins", empty, 1.0, outcome));
        }
        if !seen {
            self.note("OutlierBin", "empty_bins", 0.0, 1.0, Verdict::Hidden);
        }
        verdict
    }

    fn smooth_outliers(&mut self, ch: Channel, field: &str, rows: &BTreeSet<usize>) -> Verdict {
        let p = self.params;
        let Some((xs, ys)) = self.smooth_profile(ch) else {
            return self.note("SmoothWithoutDensity", "density_floor", 0.0, p.density_floor, Verdict::Hidden);
        };
        let top = ys.iter().copied().fold(0.0, f64::max);
        let col = self.dataset.numeric_column(field).unwrap_or_default();
        let bulk: Vec<f64> = col.iter().filter(|(i, _)| !rows.contains(i)).map(|c| c.1).collect();
        let mut verdict = Verdict::Hidden;
        for (_, v) in col.iter().filter(|(i, _)| rows.contains(i)) {
            let at = interp(&xs, &ys, *v) / top;
            if at <= p.density_floor {
                verdict = verdict.max(self.note("OutlierBump", "density_floor", at, p.density_floor, Verdict::Hidden));
                continue;
            }
            let Some(u) = bulk.iter().copied().min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs())) else {
                continue;
            };
            let dip = linspace(v.min(u), v.max(u), 101)
                .into_iter()
                .map(|x| interp(&xs, &ys, x) / top)
                .fold(f64::INFINITY, f64::min);
            let outcome = if dip <= p.density_floor {
                Verdict::Revealed
            } else if dip <= p.density_dip {
                Verdict::Ambiguous
            } else {
                Verdict::Hidden
            };
            let param = if outcome == Verdict::Revealed { "density_floor" } else { "density_dip" };
            let threshold = if outcome == Verdict::Revealed { p.density_floor } else { p.density_dip };
            verdict = verdict.max(self.note("OutlierDip", param, dip, threshold, outcome));
        }
        verdict
    }

    fn cv_outcome(&mut self, heuristic: &str, cv: f64) -> Verdict {
        let t = self.params.cv_threshold;
        let outcome = if cv > t {
            Verdict::Revealed
        } else if cv == t {
            Verdict::Ambiguous
        } else {
            Verdict::Hidden
        };
        self.note(heuristic, "cv_threshold", cv, t, outcome)
    }

    fn saturation_verdict(&mut self) -> Verdict {
        let quantities: Vec<Channel> = self
            .view
            .channels
            .iter()
            .filter(|(_, i)| matches!(i.lineage.derivation, Derivation::Count | Derivation::Density { .. }))
            .map(|(c, _)| *c)
            .collect();
        let mut verdict = Verdict::Hidden;
        for ch in &quantities {
            let vals: Vec<f64> = self.points(*ch).into_iter().map(|p| p.0).collect();
            if vals.len() < 2 {
                continue;
            }
            let cv = stats::coefficient_of_variation(&vals).unwrap_or(0.0);
            verdict = verdict.max(self.cv_outcome("QuantityVariation", cv));
        }
        if !quantities.is_empty() {
            return verdict;
        }
        let raw: Vec<Channel> = self
            .view
            .channels
            .iter()
            .filter(|(c, i)| {
                POSITIONAL.contains(c)
                    && i.kind.is_numeric()
                    && i.lineage.derivation == Derivation::Raw
                    && i.lineage.sources.iter().any(|s| self.relevant.contains(s))
            })
            .map(|(c, _)| *c)
            .take(2)
            .collect();
        if raw.is_empty() {
            return self.note("NoConcentrationQuantity", "cv_threshold", 0.0, self.params.cv_threshold, Verdict::Hidden);
        }
        let mut points = Vec::new();
        for inst in &self.view.instances {
            let Some(pt) = raw.iter().map(|c| inst.num(*c)).collect::<Option<Vec<f64>>>() else {
                continue;
            };
            for _ in 0..inst.source_rows.len().max(1) {
                points.push(pt.clone());
            }
        }
        let cells: Vec<f64> = grid_cells(&points, 10).into_values().collect();
        let cv = stats::coefficient_of_variation(&cells).unwrap_or(0.0);
        self.cv_outcome("PointDensityVariation", cv)
    }

    fn identity_fields(&self, binding: &SignalBinding) -> BTreeSet<String> {
        binding
            .relevant_fields
            .iter()
            .filter(|f| {
                let (Some(schema), Some(idx)) = (self.dataset.field(f), self.dataset.field_index(f)) else {
                    return false;
                };
                if schema.kind.is_numeric() {
                    return true;
                }
                let present: Vec<String> = self
                    .dataset
                    .rows
                    .iter()
                    .filter(|r| !r[idx].is_null())
                    .map(|r| r[idx].label())
                    .collect();
                let distinct: BTreeSet<&String> = present.iter().collect();
                distinct.len() == present.len()
            })
            .cloned()
            .collect()
    }

    fn smoothed_neighbourhood(&self) -> Option<usize> {
        let (ch, info) = self
            .view
            .channels
            .iter()
            .find(|(_, i)| matches!(i.lineage.derivation, Derivation::Smoothed { .. }))?;
        let Derivation::Smoothed { bandwidth } = info.lineage.derivation else {
            return None;
        };
        let field = info.lineage.sources.iter().next().filter(|_| info.lineage.sources.len() == 1)?;
        let col = self.dataset.numeric_column(field).ok()?;
        self.view
            .instances
            .iter()
            .filter_map(|i| i.num(*ch))
            .map(|x| col.iter().filter(|(_, v)| (v - x).abs() <= bandwidth).count())
            .filter(|n| *n > 0)
            .min()
    }

    fn identity_verdict(&mut self, binding: &SignalBinding) -> Verdict {
        let k_safe = self.params.k_safe as f64;
        let ids = self.identity_fields(binding);
        let encoded = self.view.channels.values().any(|i| {
            i.lineage.derivation == Derivation::Raw && i.lineage.sources.iter().any(|s| ids.contains(s))
        });
        if encoded {
            return self.note("IdentityEncoded", "k_safe", 1.0, k_safe, Verdict::Revealed);
        }
        let k_star = self.smoothed_neighbourhood().or_else(|| {
            let mut sizes: Vec<usize> = self
                .view
                .instances
                .iter()
                .map(|i| i.source_rows.len())
                .filter(|n| *n > 0)
                .collect();
            if self.view.mark_params.show_outlier_points {
                for s in self.view.instances.iter().filter_map(|i| i.derived_stats.as_ref()) {
                    sizes.extend(s.outliers.iter().map(|o| o.source_rows.len()));
                }
            }
            sizes.into_iter().min()
        });
        match k_star {
            None => self.note("NoMarks", "k_safe", 0.0, k_safe, Verdict::Hidden),
            Some(k) if k >= self.params.k_safe => self.note("MinProvenance", "k_safe", k as f64, k_safe, Verdict::Hidden),
            Some(1) => self.note("SingletonProvenance", "k_safe", 1.0, k_safe, Verdict::Ambiguous),
            Some(k) => self.note("SmallProvenance", "k_safe", k as f64, k_safe, Verdict::Ambiguous),
        }
    }
}

/// Runs the heuristic for `binding` over a rendered view.
pub fn detect(
    view: &RenderedView,
    binding: &SignalBinding,
    dataset: &Dataset,
    params: &RubricParams,
) -> Result<Evidence, RubricError> {
    let truth = ground_truth(dataset, binding, params)?;
    detect_with_truth(view, binding, dataset, params, &truth)
}

/// [`detect`] with a precomputed ground truth, for scoring many views of one dataset.
pub fn detect_with_truth(
    view: &RenderedView,
    binding: &SignalBinding,
    dataset: &Dataset,
    params: &RubricParams,
    truth: &TruthSet,
) -> Result<Evidence, RubricError> {
    if let Some(&row) = view.all_source_rows().iter().next_back() {
        if row >= dataset.len() {
            return Err(RubricError::DatasetMismatch { row, len: dataset.len() });
        }
    }
    let mut d = Detector {
        view,
        dataset,
        params: *params,
        relevant: binding.relevant_fields.iter().cloned().collect(),
        trace: Vec::new(),
    };
    let kind = binding.signal_kind;
    let verdict = if !markset(kind).contains(&view.mark) {
        d.note("MarkOutsideMarkset", "markset", 0.0, 1.0, Verdict::Hidden)
    } else if !kind.is_identity() && !d.any_relevant_encoded() {
        d.note("RelevantFieldNotEncoded", "markset", 0.0, 1.0, Verdict::Hidden)
    } else {
        match truth {
            TruthSet::Gaps { fields } => d.gap_verdict(fields),
            TruthSet::Peaks { fields } => d.peak_verdict(fields),
            TruthSet::Outliers { rows, fences } => d.outlier_verdict(rows, fences),
            TruthSet::Saturation { .. } => d.saturation_verdict(),
            TruthSet::Identity { .. } => d.identity_verdict(binding),
        }
    };
    Ok(Evidence {
        binding: binding.clone(),
        verdict,
        trace: d.trace,
    })
}

/// Evaluates `spec` once and grades it against both sides of the puzzle.
pub fn score(spec: &ChartSpec, dataset: &Dataset, puzzle: &PuzzleSpec, params: &RubricParams) -> Result<ScoreCard, RubricError> {
    params.validate()?;
    let need = ground_truth(dataset, &puzzle.need, params)?;
    let constraint = ground_truth(dataset, &puzzle.constraint, params)?;
    score_with_truth(spec, dataset, puzzle, params, &need, &constraint)
}

/// [`score`] with both ground truths precomputed.
pub fn score_with_truth(
    spec: &ChartSpec,
    dataset: &Dataset,
    puzzle: &PuzzleSpec,
    params: &RubricParams,
    need_truth: &TruthSet,
    constraint_truth: &TruthSet,
) -> Result<ScoreCard, RubricError> {
    params.validate()?;
    let report = validate_spec(spec, &dataset.schema);
    if !report.is_valid() {
        return Err(RubricError::InvalidSpec(
            serde_json::to_string(&report.violations).expect("violations serialize"),
        ));
    }
    let view = evaluate(spec, dataset)?;
    let need_evidence = detect_with_truth(&view, &puzzle.need, dataset, params, need_truth)?;
    let constraint_evidence = detect_with_truth(&view, &puzzle.constraint, dataset, params, constraint_truth)?;
    Ok(ScoreCard {
        need_adherence: Adherence::for_need(need_evidence.verdict),
        constraint_adherence: Adherence::for_constraint(constraint_evidence.verdict),
        need_evidence,
        constraint_evidence,
        tactics: tactics_used(spec),
    })
}
