//! Tabular datasets, field schemas and puzzle definitions.
//!
//! Datasets are loaded from CSV against an explicit schema; nothing is
//! inferred. Row ids are positional (`0..n`) and never read from a column,
//! so provenance tracking stays independent of identifier fields.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{0}` is not part of the schema")]
    UnexpectedColumn(String),
    #[error("duplicate field `{0}` in schema")]
    DuplicateField(String),
    #[error("row {row}: field `{field}` expects a {expected} value")]
    TypeError {
        row: usize,
        field: String,
        expected: &'static str,
    },
    #[error("row {row}: expected {expected} cells, found {found}")]
    RowWidth {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("field `{0}` has no non-null values")]
    EmptyDomain(String),
    #[error("puzzle document: {0}")]
    ParseError(String),
    #[error("binding: {0}")]
    BindingError(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Quantitative,
    Nominal,
    Ordinal,
    Temporal,
}

impl FieldKind {
    /// Temporal values are epoch seconds downstream, so they count as numeric.
    pub fn is_numeric(self) -> bool {
        matches!(self, FieldKind::Quantitative | FieldKind::Temporal)
    }

    pub fn is_categorical(self) -> bool {
        !self.is_numeric()
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FieldKind::Quantitative => "quantitative",
            FieldKind::Nominal => "nominal",
            FieldKind::Ordinal => "ordinal",
            FieldKind::Temporal => "temporal",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSchema {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
}

impl FieldSchema {
    pub fn new(name: impl Into<String>, kind: FieldKind) -> Self {
        Self {
            name: name.into(),
            kind,
            units: None,
        }
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = Some(units.into());
        self
    }
}

/// A single cell. Nulls are explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Num(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Category label used for grouping and categorical domains.
    pub fn label(&self) -> String {
        match self {
            Value::Null => "null".to_string(),
            Value::Num(v) => format_number(*v),
            Value::Text(s) => s.clone(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => Ok(()),
            other => f.write_str(&other.label()),
        }
    }
}

/// Shortest round-tripping decimal form, with integers printed without a fraction.
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Domain {
    Quantitative { min: f64, max: f64 },
    Categorical { values: Vec<String> },
}

impl Domain {
    pub fn span(&self) -> f64 {
        match self {
            Domain::Quantitative { min, max } => max - min,
            Domain::Categorical { values } => values.len() as f64,
        }
    }

    pub fn contains(&self, value: &Value) -> bool {
        match (self, value) {
            (_, Value::Null) => true,
            (Domain::Quantitative { min, max }, Value::Num(v)) => *min <= *v && *v <= *max,
            (Domain::Categorical { values }, v) => values.contains(&v.label()),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Vec<FieldSchema>,
    pub rows: Vec<Vec<Value>>,
}

impl Dataset {
    pub fn new(schema: Vec<FieldSchema>, rows: Vec<Vec<Value>>) -> Result<Self, DataError> {
        check_schema(&schema)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(DataError::RowWidth {
                    row: i,
                    expected: schema.len(),
                    found: row.len(),
                });
            }
            for (field, value) in schema.iter().zip(row) {
                let ok = match value {
                    Value::Null => true,
                    Value::Num(v) => field.kind.is_numeric() && v.is_finite(),
                    Value::Text(_) => field.kind.is_categorical(),
                };
                if !ok {
                    return Err(DataError::TypeError {
                        row: i,
                        field: field.name.clone(),
                        expected: if field.kind.is_numeric() { "finite numeric" } else { "text" },
                    });
                }
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|f| f.name == name)
    }

    pub fn field(&self, name: &str) -> Option<&FieldSchema> {
        self.schema.iter().find(|f| f.name == name)
    }

    pub fn column(&self, name: &str) -> Result<impl Iterator<Item = &Value> + '_, DataError> {
        let idx = self
            .field_index(name)
            .ok_or_else(|| DataError::UnknownField(name.to_string()))?;
        Ok(self.rows.iter().map(move |r| &r[idx]))
    }

    /// Non-null numeric values of a field, paired with their row ids.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<(usize, f64)>, DataError> {
        Ok(self
            .column(name)?
            .enumerate()
            .filter_map(|(i, v)| v.as_f64().map(|x| (i, x)))
            .collect())
    }

    /// Serializes back to CSV in schema column order.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        wtr.write_record(self.schema.iter().map(|f| f.name.as_str()))
            .expect("in-memory write");
        for row in &self.rows {
            let cells: Vec<String> = self
                .schema
                .iter()
                .zip(row)
                .map(|(f, v)| match (f.kind, v) {
                    (_, Value::Null) => String::new(),
                    (FieldKind::Temporal, Value::Num(secs)) => format_timestamp(*secs),
                    (_, v) => v.label(),
                })
                .collect();
            wtr.write_record(&cells).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("flush")).expect("utf-8 csv")
    }
}

fn check_schema(schema: &[FieldSchema]) -> Result<(), DataError> {
    let mut seen = BTreeSet::new();
    for f in schema {
        if !seen.insert(f.name.as_str()) {
            return Err(DataError::DuplicateField(f.name.clone()));
        }
    }
    Ok(())
}

fn parse_timestamp(s: &str) -> Option<f64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64);
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(dt.and_utc().timestamp() as f64);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp() as f64)
}

fn format_timestamp(secs: f64) -> String {
    DateTime::<Utc>::from_timestamp(secs as i64, 0)
        .map(|dt| dt.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| format_number(secs))
}

/// Parses CSV text against an explicit schema. The header must name exactly
/// the schema fields, in any order; rows keep file order.
pub fn load_dataset(csv_text: &str, schema: &[FieldSchema]) -> Result<Dataset, DataError> {
    check_schema(schema)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(csv_text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .clone();
    let header_pos: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    for h in headers.iter() {
        if !schema.iter().any(|f| f.name == h) {
            return Err(DataError::UnexpectedColumn(h.to_string()));
        }
    }
    let mut positions = Vec::with_capacity(schema.len());
    for f in schema {
        let pos = header_pos
            .get(f.name.as_str())
            .ok_or_else(|| DataError::MissingColumn(f.name.clone()))?;
        positions.push(*pos);
    }

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(DataError::RowWidth {
                row: i,
                expected: headers.len(),
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(schema.len());
        for (f, &pos) in schema.iter().zip(&positions) {
            let cell = record.get(pos).unwrap_or("");
            let value = if cell.is_empty() {
                Value::Null
            } else {
                match f.kind {
                    FieldKind::Quantitative => match cell.trim().parse::<f64>() {
                        Ok(v) if v.is_finite() => Value::Num(v),
                        _ => {
                            return Err(DataError::TypeError {
                                row: i,
                                field: f.name.clone(),
                                expected: "finite numeric",
                            })
                        }
                    },
                    FieldKind::Temporal => match parse_timestamp(cell.trim()) {
                        Some(v) => Value::Num(v),
                        None => {
                            return Err(DataError::TypeError {
                                row: i,
                                field: f.name.clone(),
                                expected: "ISO-8601 timestamp",
                            })
                        }
                    },
                    FieldKind::Nominal | FieldKind::Ordinal => Value::Text(cell.to_string()),
                }
            };
            row.push(value);
        }
        rows.push(row);
    }
    Ok(Dataset {
        schema: schema.to_vec(),
        rows,
    })
}

/// Numeric fields yield `(min, max)` over non-null values; categorical
/// fields yield their distinct values in first-appearance order.
pub fn field_domain(dataset: &Dataset, field: &str) -> Result<Domain, DataError> {
    let kind = dataset
        .field(field)
        .ok_or_else(|| DataError::UnknownField(field.to_string()))?
        .kind;
    let values = dataset.column(field)?.filter(|v| !v.is_null());
    if kind.is_numeric() {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values.filter_map(Value::as_f64) {
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            return Err(DataError::EmptyDomain(field.to_string()));
        }
        Ok(Domain::Quantitative { min, max })
    } else {
        let mut seen = BTreeSet::new();
        let mut ordered = Vec::new();
        for v in values {
            let l = v.label();
            if seen.insert(l.clone()) {
                ordered.push(l);
            }
        }
        if ordered.is_empty() {
            return Err(DataError::EmptyDomain(field.to_string()));
        }
        Ok(Domain::Categorical { values: ordered })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignalKind {
    Gap,
    Peak,
    Outlier,
    Saturation,
    IndividualPoint,
    IndividualLocation,
}

impl SignalKind {
    pub const ALL: [SignalKind; 6] = [
        SignalKind::Gap,
        SignalKind::Peak,
        SignalKind::Outlier,
        SignalKind::Saturation,
        SignalKind::IndividualPoint,
        SignalKind::IndividualLocation,
    ];

    pub fn is_identity(self) -> bool {
        matches!(self, SignalKind::IndividualPoint | SignalKind::IndividualLocation)
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalBinding {
    #[serde(rename = "signal")]
    pub signal_kind: SignalKind,
    #[serde(rename = "fields")]
    pub relevant_fields: Vec<String>,
}

impl SignalBinding {
    pub fn new<S: Into<String>>(kind: SignalKind, fields: impl IntoIterator<Item = S>) -> Self {
        Self {
            signal_kind: kind,
            relevant_fields: fields.into_iter().map(Into::into).collect(),
        }
    }

    pub fn validate(&self, schema: &[FieldSchema]) -> Result<(), DataError> {
        if self.relevant_fields.is_empty() {
            return Err(DataError::BindingError(format!(
                "{} binding has no relevant fields",
                self.signal_kind
            )));
        }
        for f in &self.relevant_fields {
            if !schema.iter().any(|s| &s.name == f) {
                return Err(DataError::BindingError(format!(
                    "{} binding references unknown field `{f}`",
                    self.signal_kind
                )));
            }
        }
        Ok(())
    }
}

/// A show-hide puzzle: the receiver's need and the sender's constraint over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PuzzleSpec {
    pub id: String,
    pub title: String,
    #[serde(rename = "setting")]
    pub setting_text: String,
    pub receiver_prompt: String,
    pub sender_prompt: String,
    #[serde(rename = "dataset")]
    pub dataset_ref: String,
    pub need: SignalBinding,
    pub constraint: SignalBinding,
}

impl PuzzleSpec {
    pub fn parse(text: &str) -> Result<Self, DataError> {
        serde_json::from_str(text).map_err(|e| DataError::ParseError(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("puzzle serializes")
    }

    pub fn validate(&self, schema: &[FieldSchema]) -> Result<(), DataError> {
        self.need.validate(schema)?;
        self.constraint.validate(schema)?;
        let same_fields = {
            let a: BTreeSet<_> = self.need.relevant_fields.iter().collect();
            let b: BTreeSet<_> = self.constraint.relevant_fields.iter().collect();
            a == b
        };
        if self.need.signal_kind == self.constraint.signal_kind && same_fields {
            return Err(DataError::BindingError(
                "need and constraint bind the same signal".to_string(),
            ));
        }
        Ok(())
    }
}

/// Parses a puzzle document and validates both bindings against the
/// schema of the dataset it references.
pub fn load_puzzle(text: &str, schema: &[FieldSchema]) -> Result<PuzzleSpec, DataError> {
    let puzzle = PuzzleSpec::parse(text)?;
    puzzle.validate(schema)?;
    Ok(puzzle)
}
