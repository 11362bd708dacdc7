//! Seeded synthetic datasets that plant the signals each puzzle template is
//! about, and a checker that a generated puzzle actually has tension.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart_spec::{
    AggregateOp, Band, BandCuts, BinSize, Channel, ChartSpec, Encoding, MarkType, SampleSize, Subsample, Transform,
    DENSITY_FIELD,
};
use crate::data_model::{load_dataset, DataError, Dataset, FieldKind, FieldSchema, PuzzleSpec, SignalBinding, SignalKind, Value};
use crate::signal_rubric::{ground_truth, score_with_truth, Adherence, RubricError, RubricParams, TruthSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    PeaksGaps,
    OutliersPoints,
    SaturationLocations,
}

impl Template {
    pub const ALL: [Template; 3] = [Template::PeaksGaps, Template::OutliersPoints, Template::SaturationLocations];

    pub fn name(self) -> &'static str {
        match self {
            Template::PeaksGaps => "peaks_gaps",
            Template::OutliersPoints => "outliers_points",
            Template::SaturationLocations => "saturation_locations",
        }
    }

    pub fn from_name(name: &str) -> Option<Template> {
        Template::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub center: f64,
    pub sd: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case")]
pub enum Plant {
    PeaksGaps {
        modes: Vec<Mode>,
        /// Open intervals no reading may fall inside.
        gaps: Vec<(f64, f64)>,
    },
    OutliersPoints {
        outlier_count: usize,
        /// Minimum distance beyond the bulk's fences, in IQR units.
        displacement_iqr: f64,
    },
    SaturationLocations {
        hotspots: usize,
        hotspot_intensity: f64,
        unit_cap: usize,
        regions: usize,
        states_per_region: usize,
        counties_per_state: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateParams {
    pub n_rows: usize,
    pub seed: u64,
    pub plant: Plant,
}

impl TemplateParams {
    pub fn default_for(template: Template, seed: u64) -> Self {
        let (n_rows, plant) = match template {
            Template::PeaksGaps => (
                1000,
                Plant::PeaksGaps {
                    modes: vec![
                        Mode { center: 40.0, sd: 10.0, weight: 0.38 },
                        Mode { center: 100.0, sd: 11.0, weight: 0.32 },
                        Mode { center: 150.0, sd: 10.0, weight: 0.3 },
                    ],
                    gaps: vec![(58.0, 80.0)],
                },
            ),
            Template::OutliersPoints => (
                60,
                Plant::OutliersPoints {
                    outlier_count: 4,
                    displacement_iqr: 2.0,
                },
            ),
            Template::SaturationLocations => (
                400,
                Plant::SaturationLocations {
                    hotspots: 8,
                    hotspot_intensity: 6.0,
                    unit_cap: 40,
                    regions: 4,
                    states_per_region: 3,
                    counties_per_state: 5,
                },
            ),
        };
        Self { n_rows, seed, plant }
    }

    pub fn template(&self) -> Template {
        match self.plant {
            Plant::PeaksGaps { .. } => Template::PeaksGaps,
            Plant::OutliersPoints { .. } => Template::OutliersPoints,
            Plant::SaturationLocations { .. } => Template::SaturationLocations,
        }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("infeasible plant: {0}")]
    InfeasiblePlant(String),
    #[error("invalid template parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error("bundle io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bundle format: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn template_schema(template: Template) -> Vec<FieldSchema> {
    use FieldKind::*;
    match template {
        Template::PeaksGaps => vec![
            FieldSchema::new("reading_id", Nominal),
            FieldSchema::new("zone", Nominal),
            FieldSchema::new("day_type", Nominal),
            FieldSchema::new("pollutant_ppb", Quantitative).with_units("ppb"),
        ],
        Template::OutliersPoints => vec![
            FieldSchema::new("warehouse_id", Nominal),
            FieldSchema::new("zone", Nominal),
            FieldSchema::new("avg_daily_parcels", Quantitative).with_units("parcels/day"),
            FieldSchema::new("pct_late_deliveries", Quantitative).with_units("fraction late in [0,1]"),
        ],
        Template::SaturationLocations => vec![
            FieldSchema::new("ID", Nominal),
            FieldSchema::new("city", Nominal),
            FieldSchema::new("STUSPS", Nominal),
            FieldSchema::new("latitude", Quantitative).with_units("decimal degrees"),
            FieldSchema::new("longitude", Quantitative).with_units("decimal degrees"),
            FieldSchema::new("fips", Nominal),
            FieldSchema::new("regions", Nominal),
            FieldSchema::new("REGIONCE", Ordinal),
            FieldSchema::new("county_name", Nominal),
            FieldSchema::new("GEOID", Nominal),
        ],
    }
}

fn puzzle_for(template: Template, seed: u64) -> PuzzleSpec {
    let id = format!("{}-{seed}", template.name());
    let (title, setting, receiver, sender, need, constraint) = match template {
        Template::PeaksGaps => (
            "Show Peaks, Hide Gaps",
            "High-resolution air-quality readings across city zones.",
            "You're an environmental analyst helping identify when and where pollution levels peak or drop significantly. Choose a data broker you trust to provide the data your team needs to guide policy decisions concerning pollution sources or behaviors.",
            "You're a data broker selling a high-resolution air-quality dataset. Show your client that the dataset contains what they need, but to protect proprietary collection patterns you cannot expose the exact location of gaps in the data distribution.",
            SignalBinding::new(SignalKind::Peak, ["pollutant_ppb"]),
            SignalBinding::new(SignalKind::Gap, ["pollutant_ppb"]),
        ),
        Template::OutliersPoints => (
            "Show Outliers, Hide Individual Points",
            "Warehouse workload and lateness for a city logistics network.",
            "You're a city logistics planner allocating inspection teams for next month. Outliers in either workload or lateness could signal bottlenecks or failing warehouses. Identify which warehouses are atypical so you can plan targeted audits.",
            "You're a data broker selling a dataset on warehouse performance. Demonstrate that the dataset contains what your client needs, but to protect supplier relationships hide warehouse and zone identities.",
            SignalBinding::new(SignalKind::Outlier, ["avg_daily_parcels", "pct_late_deliveries"]),
            SignalBinding::new(SignalKind::IndividualPoint, ["warehouse_id", "zone"]),
        ),
        Template::SaturationLocations => (
            "Show High Saturation, Hide Specific Locations",
            "Retail store locations across regions, states and counties.",
            "You're an analyst working with a tenants' rights group exploring how retail stores are spread across the country, to understand where saturation is high or low. Choose a data broker you trust to provide the data needed to understand these patterns.",
            "You're a data broker maintaining a detailed dataset of retail stores. Show that the dataset contains what your client needs, without fine-grained details such as exact storefront locations that could let landlords identify stores.",
            SignalBinding::new(
                SignalKind::Saturation,
                ["latitude", "longitude", "regions", "STUSPS", "county_name"],
            ),
            SignalBinding::new(SignalKind::IndividualLocation, ["ID", "latitude", "longitude"]),
        ),
    };
    PuzzleSpec {
        id,
        title: title.into(),
        setting_text: setting.into(),
        receiver_prompt: receiver.into(),
        sender_prompt: sender.into(),
        dataset_ref: "dataset.csv".into(),
        need,
        constraint,
    }
}

/// What a generator actually planted, in terms of the produced rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case")]
pub enum Planted {
    PeaksGaps { mode_centers: Vec<f64>, gaps: Vec<(f64, f64)> },
    /// Row indices of the displaced warehouses.
    OutliersPoints { rows: Vec<usize> },
    /// County labels that received the boosted weight.
    SaturationLocations { hotspot_counties: Vec<String> },
}

/// Generates the dataset and puzzle document for a template.
pub fn gen_dataset(params: &TemplateParams) -> Result<(Dataset, PuzzleSpec), GenError> {
    gen_with_plants(params).map(|(d, p, _)| (d, p))
}

/// Like [`gen_dataset`], also reporting the planted signals.
pub fn gen_with_plants(params: &TemplateParams) -> Result<(Dataset, PuzzleSpec, Planted), GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let template = params.template();
    let (rows, planted) = match &params.plant {
        Plant::PeaksGaps { modes, gaps } => (
            gen_peaks_gaps(&mut rng, params.n_rows, modes, gaps)?,
            Planted::PeaksGaps {
                mode_centers: modes.iter().map(|m| m.center).collect(),
                gaps: gaps.clone(),
            },
        ),
        Plant::OutliersPoints {
            outlier_count,
            displacement_iqr,
        } => gen_outliers(&mut rng, params.n_rows, *outlier_count, *displacement_iqr)?,
        Plant::SaturationLocations {
            hotspots,
            hotspot_intensity,
            unit_cap,
            regions,
            states_per_region,
            counties_per_state,
        } => gen_saturation(
            &mut rng,
            params.n_rows,
            Hierarchy {
                regions: *regions,
                states_per_region: *states_per_region,
                counties_per_state: *counties_per_state,
            },
            *hotspots,
            *hotspot_intensity,
            *unit_cap,
        )?,
    };
    let dataset = Dataset::new(template_schema(template), rows)?;
    Ok((dataset, puzzle_for(template, params.seed), planted))
}

const ZONES: [&str; 5] = ["North", "South", "East", "West", "Central"];

fn text(s: impl Into<String>) -> Value {
    Value::Text(s.into())
}

fn round_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

fn gen_peaks_gaps(rng: &mut ChaCha8Rng, n: usize, modes: &[Mode], gaps: &[(f64, f64)]) -> Result<Vec<Vec<Value>>, GenError> {
    if modes.is_empty() || modes.iter().any(|m| !(m.sd > 0.0 && m.weight > 0.0)) {
        return Err(GenError::InvalidParams("modes need positive sd and weight".into()));
    }
    for m in modes {
        if let Some(g) = gaps.iter().find(|g| g.0 < m.center && m.center < g.1) {
            return Err(GenError::InfeasiblePlant(format!(
                "gap ({}, {}) swallows the mode at {}",
                g.0, g.1, m.center
            )));
        }
    }
    let pick = WeightedIndex::new(modes.iter().map(|m| m.weight)).map_err(|e| GenError::InvalidParams(e.to_string()))?;
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let m = modes[pick.sample(rng)];
        let v = Normal::new(m.center, m.sd).expect("positive sd").sample(rng);
        if (v - m.center).abs() > 3.0 * m.sd {
            continue;
        }
        let v = round_to(v, 0.1);
        if gaps.iter().any(|g| g.0 < v && v < g.1) {
            continue;
        }
        let zone = ZONES[rng.gen_range(0..ZONES.len())];
        let day = if rng.gen_bool(5.0 / 7.0) { "weekday" } else { "weekend" };
        rows.push(vec![text((rows.len() + 1).to_string()), text(zone), text(day), Value::Num(v)]);
    }
    Ok(rows)
}

fn gen_outliers(rng: &mut ChaCha8Rng, n: usize, outliers: usize, displacement: f64) -> Result<(Vec<Vec<Value>>, Planted), GenError> {
    if outliers * 4 > n {
        return Err(GenError::InfeasiblePlant(format!(
            "{outliers} outliers among {n} warehouses leaves too small a bulk"
        )));
    }
    if displacement < 0.0 {
        return Err(GenError::InvalidParams("displacement must be non-negative".into()));
    }
    let bulk = n - outliers;
    let mut parcels: Vec<f64> = (0..bulk).map(|_| rng.gen_range(900.0_f64..1500.0).round()).collect();
    let mut late: Vec<f64> = (0..bulk).map(|_| round_to(rng.gen_range(0.04..0.14), 0.001)).collect();
    let fence = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(|a, b| a.total_cmp(b));
        let q1 = crate::stats::quantile_sorted(&s, 0.25);
        let q3 = crate::stats::quantile_sorted(&s, 0.75);
        (q3 + 1.5 * (q3 - q1), q3 - q1)
    };
    let (p_fence, p_iqr) = fence(&parcels);
    let (l_fence, l_iqr) = fence(&late);
    for i in 0..outliers {
        let push = displacement + rng.gen::<f64>();
        if i % 2 == 0 {
            parcels.push((p_fence + push * p_iqr).round());
            late.push(round_to(rng.gen_range(0.04..0.14), 0.001));
        } else {
            parcels.push(rng.gen_range(900.0_f64..1500.0).round());
            late.push(round_to((l_fence + push * l_iqr).min(1.0), 0.001));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let planted = Planted::OutliersPoints {
        rows: order.iter().enumerate().filter(|(_, &i)| i >= bulk).map(|(k, _)| k).collect(),
    };
    let rows = order
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            vec![
                text(format!("W{:03}", k + 1)),
                text(ZONES[rng.gen_range(0..ZONES.len())]),
                Value::Num(parcels[i]),
                Value::Num(late[i]),
            ]
        })
        .collect();
    Ok((rows, planted))
}

struct Hierarchy {
    regions: usize,
    states_per_region: usize,
    counties_per_state: usize,
}

const REGIONS: [&str; 4] = ["Northeast", "Midwest", "South", "West"];

/// (postal code, state fips, latitude, longitude) grouped by census region.
const STATES: [[(&str, u32, f64, f64); 3]; 4] = [
    [("NY", 36, 42.9, -75.5), ("PA", 42, 40.9, -77.8), ("MA", 25, 42.3, -71.8)],
    [("IL", 17, 40.0, -89.2), ("OH", 39, 40.3, -82.8), ("MN", 27, 46.3, -94.3)],
    [("TX", 48, 31.1, -97.6), ("GA", 13, 32.7, -83.4), ("NC", 37, 35.6, -79.4)],
    [("CA", 6, 37.2, -119.5), ("WA", 53, 47.4, -120.5), ("CO", 8, 39.0, -105.5)],
];

const COUNTY_STEMS: [&str; 60] = [
    "Adams", "Alder", "Ashby", "Baker", "Barrow", "Benton", "Blaine", "Boone", "Bristol", "Calder",
    "Camden", "Carroll", "Cedar", "Clark", "Clay", "Colby", "Crane", "Dalton", "Dawson", "Delta",
    "Dover", "Easton", "Elbert", "Elm", "Fairview", "Fenton", "Franklin", "Garfield", "Grant", "Greer",
    "Hale", "Harlan", "Hayes", "Holt", "Hudson", "Irwin", "Jasper", "Kendall", "Knox", "Lamar",
    "Lyon", "Marion", "Mercer", "Mills", "Monroe", "Nolan", "Oakley", "Orton", "Perry", "Pike",
    "Quincy", "Ralston", "Rowan", "Sabine", "Sutton", "Tate", "Upton", "Vance", "Warren", "York",
];

const CITY_PATTERNS: [&str; 3] = ["{}ville", "{} Springs", "Port {}"];

fn gen_saturation(
    rng: &mut ChaCha8Rng,
    n: usize,
    h: Hierarchy,
    hotspots: usize,
    intensity: f64,
    cap: usize,
) -> Result<(Vec<Vec<Value>>, Planted), GenError> {
    if h.regions == 0 || h.regions > 4 || h.states_per_region == 0 || h.states_per_region > 3 {
        return Err(GenError::InvalidParams("at most 4 regions of 3 states each".into()));
    }
    let counties = h.regions * h.states_per_region * h.counties_per_state;
    if h.counties_per_state == 0 || counties > COUNTY_STEMS.len() {
        return Err(GenError::InvalidParams(format!("{counties} counties exceeds the name pool")));
    }
    if hotspots > counties || intensity < 1.0 {
        return Err(GenError::InvalidParams("hotspots must fit the hierarchy with intensity >= 1".into()));
    }
    if cap * counties < n {
        return Err(GenError::InfeasiblePlant(format!(
            "{n} stores cannot fit {counties} counties capped at {cap}"
        )));
    }
    struct County {
        region: usize,
        state: (&'static str, u32, f64, f64),
        name: &'static str,
        geoid: String,
        lat: f64,
        lon: f64,
    }
    let mut units = Vec::with_capacity(counties);
    for r in 0..h.regions {
        for s in 0..h.states_per_region {
            let state = STATES[r][s];
            for c in 0..h.counties_per_state {
                let idx = units.len();
                units.push(County {
                    region: r,
                    state,
                    name: COUNTY_STEMS[idx],
                    geoid: format!("{:02}{:03}", state.1, 2 * c + 1),
                    lat: state.2 + rng.gen_range(-1.5..1.5),
                    lon: state.3 + rng.gen_range(-2.0..2.0),
                });
            }
        }
    }
    let mut weights = vec![1.0; counties];
    let mut idx: Vec<usize> = (0..counties).collect();
    idx.shuffle(rng);
    for &i in idx.iter().take(hotspots) {
        weights[i] = intensity;
    }
    let mut counts = vec![0usize; counties];
    let mut rows = Vec::with_capacity(n);
    let jitter = Normal::new(0.0, 0.12).expect("positive sd");
    while rows.len() < n {
        let live: Vec<f64> = weights
            .iter()
            .zip(&counts)
            .map(|(w, c)| if *c < cap { *w } else { 0.0 })
            .collect();
        let i = WeightedIndex::new(&live).expect("capacity checked").sample(rng);
        counts[i] += 1;
        let u = &units[i];
        let city = CITY_PATTERNS[rng.gen_range(0..CITY_PATTERNS.len())].replace("{}", u.name);
        rows.push(vec![
            text(format!("S{:04}", rows.len() + 1)),
            text(city),
            text(u.state.0),
            Value::Num(round_to(u.lat + jitter.sample(rng), 0.0001)),
            Value::Num(round_to(u.lon + jitter.sample(rng), 0.0001)),
            text(format!("{:02}", u.state.1)),
            text(REGIONS[u.region]),
            text((u.region + 1).to_string()),
            text(format!("{} County", u.name)),
            text(u.geoid.clone()),
        ]);
    }
    let hotspot_counties = idx.iter().take(hotspots).map(|&i| format!("{} County", units[i].name)).collect();
    Ok((rows, Planted::SaturationLocations { hotspot_counties }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensionReport {
    pub need_present: bool,
    pub constraint_present: bool,
    pub tension_estimate: f64,
    pub battery_size: usize,
    pub evaluated: usize,
}

fn signal_present(truth: &TruthSet, params: &RubricParams) -> bool {
    match truth {
        TruthSet::Gaps { fields } => fields.iter().any(|f| !f.gaps.is_empty()),
        TruthSet::Peaks { fields } => fields.iter().any(|f| !f.peaks.is_empty()),
        TruthSet::Outliers { rows, .. } => !rows.is_empty(),
        TruthSet::Saturation { cv, .. } => *cv >= params.cv_threshold,
        TruthSet::Identity { rows } => !rows.is_empty(),
    }
}

fn count_y() -> Encoding {
    Encoding::count()
}

/// The fixed set of canonical charts used to estimate tension. Fields are
/// chosen from the puzzle: `q`/`q2` are its first two quantitative relevant
/// fields, `g` the dataset's most detailed small categorical field.
pub fn canonical_battery(dataset: &Dataset, puzzle: &PuzzleSpec) -> Vec<ChartSpec> {
    let numeric: Vec<String> = puzzle
        .need
        .relevant_fields
        .iter()
        .chain(&puzzle.constraint.relevant_fields)
        .filter(|f| dataset.field(f).map(|s| s.kind.is_numeric()).unwrap_or(false))
        .fold(Vec::new(), |mut acc, f| {
            if !acc.contains(f) {
                acc.push(f.clone());
            }
            acc
        });
    let Some(q) = numeric.first().cloned() else {
        return Vec::new();
    };
    let q2 = numeric.get(1).cloned().unwrap_or_else(|| q.clone());
    let g = dataset
        .schema
        .iter()
        .filter(|f| f.kind.is_categorical())
        .filter_map(|f| {
            let idx = dataset.field_index(&f.name)?;
            let distinct: std::collections::BTreeSet<String> = dataset.rows.iter().map(|r| r[idx].label()).collect();
            (2..=12).contains(&distinct.len()).then_some((f.name.clone(), distinct.len()))
        })
        .max_by_key(|(_, n)| *n)
        .map(|(name, _)| name);
    let range = dataset
        .numeric_column(&q)
        .ok()
        .map(|c| {
            let lo = c.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
            let hi = c.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .filter(|r| *r > 0.0)
        .unwrap_or(1.0);

    let x = |f: &str| Encoding::field(f);
    let smooth = |bandwidth: Option<f64>| Transform::Smooth {
        field: q.clone(),
        bandwidth,
        grid_n: 128,
    };
    let mut out = vec![
        ChartSpec::new(MarkType::Point).encode(Channel::X, x(&q)),
        ChartSpec::new(MarkType::Tick).encode(Channel::X, x(&q)),
        ChartSpec::new(MarkType::Point).encode(Channel::X, x(&q)).encode(Channel::Y, x(&q2)),
    ];
    for bins in [4, 10, 25, 60] {
        out.push(
            ChartSpec::new(MarkType::Bar)
                .encode(Channel::X, x(&q).with_bin(BinSize::Count(bins)))
                .encode(Channel::Y, count_y()),
        );
    }
    for bw in [None, Some(0.02 * range), Some(0.08 * range)] {
        out.push(
            ChartSpec::new(MarkType::Area)
                .transform(smooth(bw))
                .encode(Channel::X, x(&q))
                .encode(Channel::Y, x(DENSITY_FIELD)),
        );
    }
    let group = g.clone().unwrap_or_else(|| q.clone());
    let group_enc = || match &g {
        Some(g) => x(g),
        None => x(&q).with_bin(BinSize::Count(5)),
    };
    out.push(
        ChartSpec::new(MarkType::Bar)
            .encode(Channel::X, group_enc())
            .encode(Channel::Y, x(&q).with_aggregate(AggregateOp::Mean)),
    );
    out.push(ChartSpec::new(MarkType::Bar).encode(Channel::X, group_enc()).encode(Channel::Y, count_y()));
    out.push(
        ChartSpec::new(MarkType::Point)
            .encode(Channel::X, group_enc())
            .encode(Channel::Y, x(&q).with_aggregate(AggregateOp::Max)),
    );
    let mut boxplot = ChartSpec::new(MarkType::Boxplot).encode(Channel::X, x(&q));
    out.push(boxplot.clone());
    boxplot.mark_params.show_outlier_points = false;
    out.push(boxplot);
    let grouped_box = ChartSpec::new(MarkType::Boxplot).encode(Channel::Y, x(&q));
    out.push(if g.is_some() {
        grouped_box.encode(Channel::X, x(&group))
    } else {
        grouped_box
    });
    for bins in [5, 15, 40] {
        out.push(
            ChartSpec::new(MarkType::Rect)
                .encode(Channel::X, x(&q).with_bin(BinSize::Count(bins)))
                .encode(Channel::Y, x(&q2).with_bin(BinSize::Count(bins)))
                .encode(Channel::Color, count_y()),
        );
    }
    out.push(
        ChartSpec::new(MarkType::Line)
            .transform(smooth(None))
            .encode(Channel::X, x(&q))
            .encode(Channel::Y, x(DENSITY_FIELD)),
    );
    let band = |k: u32| {
        Transform::Band(Band {
            field: q.clone(),
            cuts: BandCuts::Quantiles(k),
            as_name: "q_band".into(),
        })
    };
    out.push(
        ChartSpec::new(MarkType::Bar)
            .transform(band(4))
            .encode(Channel::X, x("q_band"))
            .encode(Channel::Y, count_y()),
    );
    out.push(
        ChartSpec::new(MarkType::Point)
            .transform(Transform::Subsample(Subsample {
                size: SampleSize::Fraction(0.2),
                seed: 1,
            }))
            .encode(Channel::X, x(&q))
            .encode(Channel::Y, x(&q2)),
    );
    out.push(
        ChartSpec::new(MarkType::Arc)
            .transform(band(5))
            .encode(Channel::Theta, count_y())
            .encode(Channel::Color, x("q_band")),
    );
    out.push(
        ChartSpec::new(MarkType::Line)
            .encode(Channel::X, x(&q).with_bin(BinSize::Count(10)))
            .encode(Channel::Y, x(&q2).with_aggregate(AggregateOp::Mean)),
    );
    out
}

/// Checks both signals exist and estimates how often revealing the need
/// costs the constraint across the canonical battery.
pub fn verify_puzzle(dataset: &Dataset, puzzle: &PuzzleSpec, params: &RubricParams) -> Result<TensionReport, GenError> {
    let need_truth = ground_truth(dataset, &puzzle.need, params)?;
    let constraint_truth = ground_truth(dataset, &puzzle.constraint, params)?;
    let battery = canonical_battery(dataset, puzzle);
    let mut evaluated = 0;
    let mut tense = 0;
    for spec in &battery {
        let Ok(card) = score_with_truth(spec, dataset, puzzle, params, &need_truth, &constraint_truth) else {
            continue;
        };
        evaluated += 1;
        if card.need_adherence == Adherence::Satisfied && card.constraint_adherence != Adherence::Satisfied {
            tense += 1;
        }
    }
    Ok(TensionReport {
        need_present: signal_present(&need_truth, params),
        constraint_present: signal_present(&constraint_truth, params),
        tension_estimate: if evaluated == 0 { 0.0 } else { tense as f64 / evaluated as f64 },
        battery_size: battery.len(),
        evaluated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub template: Template,
    pub seed: u64,
    pub params: TemplateParams,
    pub generator_version: String,
}

/// Everything a game session needs for one puzzle, as written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub dataset: Dataset,
    pub puzzle: PuzzleSpec,
    pub tension: Option<TensionReport>,
    pub manifest: Option<Manifest>,
}

impl Bundle {
    pub fn generate(template: Template, seed: u64, rubric: &RubricParams) -> Result<Bundle, GenError> {
        let params = TemplateParams::default_for(template, seed);
        let (dataset, puzzle) = gen_dataset(&params)?;
        let tension = verify_puzzle(&dataset, &puzzle, rubric)?;
        Ok(Bundle {
            dataset,
            puzzle,
            tension: Some(tension),
            manifest: Some(Manifest {
                template,
                seed,
                params,
                generator_version: env!("CARGO_PKG_VERSION").into(),
            }),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), GenError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("dataset.csv"), self.dataset.to_csv())?;
        fs::write(dir.join("schema.json"), serde_json::to_string_pretty(&self.dataset.schema)?)?;
        fs::write(dir.join("puzzle.json"), serde_json::to_string_pretty(&self.puzzle)?)?;
        if let Some(t) = &self.tension {
            fs::write(dir.join("tension.json"), serde_json::to_string_pretty(t)?)?;
        }
        if let Some(m) = &self.manifest {
            fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(m)?)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Bundle, GenError> {
        let schema: Vec<FieldSchema> = serde_json::from_str(&fs::read_to_string(dir.join("schema.json"))?)?;
        let dataset = load_dataset(&fs::read_to_string(dir.join("dataset.csv"))?, &schema)?;
        let puzzle = crate::data_model::load_puzzle(&fs::read_to_string(dir.join("puzzle.json"))?, &schema)?;
        let optional = |name: &str| -> Result<Option<String>, GenError> {
            let p = dir.join(name);
            Ok(if p.exists() { Some(fs::read_to_string(p)?) } else { None })
        };
        let tension = optional("tension.json")?.map(|t| serde_json::from_str(&t)).transpose()?;
        let manifest = optional("manifest.json")?.map(|t| serde_json::from_str(&t)).transpose()?;
        Ok(Bundle {
            dataset,
            puzzle,
            tension,
            manifest,
        })
    }
}
