//! Fixtures shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod oracle;
pub mod play;
pub mod props;

use disclosure_core::chart_spec::{parse_chart_spec, ChartSpec};
use disclosure_core::data_model::{Dataset, PuzzleSpec, SignalBinding};
use disclosure_core::puzzle_gen::{gen_dataset, gen_with_plants, Plant, Planted, Template, TemplateParams};
use disclosure_core::signal_rubric::{detect, ground_truth, score, Adherence, RubricParams, ScoreCard, TruthSet, Verdict};
use disclosure_core::transform_engine::evaluate;

pub fn generated(template: Template, seed: u64) -> (Dataset, PuzzleSpec) {
    gen_dataset(&TemplateParams::default_for(template, seed)).expect("default template generates")
}

/// Raw strip, smoothed density, and min/max/mean by zone over the
/// pollutant readings.
pub fn walkthrough_specs() -> [ChartSpec; 3] {
    let strip = r#"{"mark":"point","encoding":{"x":{"field":"pollutant_ppb"}}}"#;
    let smooth = r#"{"mark":"area","transforms":[{"op":"smooth","field":"pollutant_ppb"}],
        "encoding":{"x":{"field":"pollutant_ppb"},"y":{"field":"density"}}}"#;
    let summary = r#"{"mark":"point","transforms":[{"op":"aggregate","groupby":["zone"],"ops":[
        {"op":"min","field":"pollutant_ppb","as":"min_ppb"},
        {"op":"max","field":"pollutant_ppb","as":"max_ppb"},
        {"op":"mean","field":"pollutant_ppb","as":"mean_ppb"}]}],
        "encoding":{"x":{"field":"zone"},"y":{"field":"max_ppb"}}}"#;
    [strip, smooth, summary].map(|s| parse_chart_spec(s).expect("fixture spec parses"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Need,
    Constraint,
}

pub struct GradingCase {
    pub name: &'static str,
    pub template: Template,
    pub spec: ChartSpec,
    pub side: Side,
    pub expected: Adherence,
}

/// Five documented grading charts on the seed-7 default puzzles.
pub fn grading_cases() -> Vec<GradingCase> {
    let case = |name, template, spec: &str, side, expected| GradingCase {
        name,
        template,
        spec: parse_chart_spec(spec).expect("fixture spec parses"),
        side,
        expected,
    };
    vec![
        case(
            "raw lat/lon points",
            Template::SaturationLocations,
            r#"{"mark":"point","encoding":{"x":{"field":"longitude"},"y":{"field":"latitude"}}}"#,
            Side::Constraint,
            Adherence::Broken,
        ),
        case(
            "fine 2-D bins with a singleton cell",
            Template::SaturationLocations,
            r#"{"mark":"rect","encoding":{"x":{"field":"longitude","bin":{"width":0.05}},
                "y":{"field":"latitude","bin":{"width":0.05}},"color":{"aggregate":"count"}}}"#,
            Side::Constraint,
            Adherence::Risked,
        ),
        case(
            "region-level counts",
            Template::SaturationLocations,
            r#"{"mark":"bar","encoding":{"x":{"field":"regions"},"y":{"aggregate":"count"}}}"#,
            Side::Constraint,
            Adherence::Satisfied,
        ),
        case(
            "id-less performance scatter",
            Template::OutliersPoints,
            r#"{"mark":"point","encoding":{"x":{"field":"avg_daily_parcels"},"y":{"field":"pct_late_deliveries"}}}"#,
            Side::Constraint,
            Adherence::Risked,
        ),
        case(
            "boxplot with outlier dots",
            Template::OutliersPoints,
            r#"{"mark":"boxplot","encoding":{"y":{"field":"avg_daily_parcels"}}}"#,
            Side::Need,
            Adherence::Satisfied,
        ),
    ]
}

/// Scores one grading case and returns the adherence on its side.
pub fn grade(case: &GradingCase, params: &RubricParams) -> Result<(Adherence, ScoreCard), String> {
    let (ds, puzzle) = generated(case.template, 7);
    let card = score(&case.spec, &ds, &puzzle, params).map_err(|e| e.to_string())?;
    let got = match case.side {
        Side::Need => card.need_adherence,
        Side::Constraint => card.constraint_adherence,
    };
    Ok((got, card))
}

/// Checks that every planted signal shows up in the ground truth of its
/// binding. Returns the first miss.
pub fn recovered(template: Template, seed: u64, params: &RubricParams) -> Result<(), String> {
    let tp = TemplateParams::default_for(template, seed);
    let (data, puzzle, planted) = gen_with_plants(&tp).map_err(|e| e.to_string())?;
    let truth = |b: &SignalBinding| ground_truth(&data, b, params).map_err(|e| e.to_string());
    match planted {
        Planted::PeaksGaps { mode_centers, gaps } => {
            let Plant::PeaksGaps { modes, .. } = &tp.plant else { unreachable!() };
            let TruthSet::Peaks { fields } = truth(&puzzle.need)? else { return Err("need is not Peak".into()) };
            for (c, m) in mode_centers.iter().zip(modes) {
                if !fields[0].peaks.iter().any(|p| (p.location - c).abs() <= m.sd) {
                    return Err(format!("mode at {c} has no peak within {}: {:?}", m.sd, fields[0].peaks));
                }
            }
            let TruthSet::Gaps { fields } = truth(&puzzle.constraint)? else { return Err("constraint is not Gap".into()) };
            for (lo, hi) in gaps {
                if !fields[0].gaps.iter().any(|g| g.lo <= lo && g.hi >= hi) {
                    return Err(format!("gap ({lo}, {hi}) not covered: {:?}", fields[0].gaps));
                }
            }
        }
        Planted::OutliersPoints { rows } => {
            let TruthSet::Outliers { rows: found, .. } = truth(&puzzle.need)? else { return Err("need is not Outlier".into()) };
            if let Some(r) = rows.iter().find(|r| !found.contains(r)) {
                return Err(format!("planted row {r} not flagged"));
            }
        }
        Planted::SaturationLocations { hotspot_counties } => {
            let TruthSet::Saturation { concentration, cv, .. } = truth(&puzzle.need)? else {
                return Err("need is not Saturation".into());
            };
            if cv < params.cv_threshold {
                return Err(format!("cv {cv:.3} below {}", params.cv_threshold));
            }
            let mean = concentration.values().sum::<f64>() / concentration.len() as f64;
            if let Some(c) = hotspot_counties.iter().find(|c| concentration.get(*c).copied().unwrap_or(0.0) <= mean) {
                return Err(format!("hotspot {c} not above the mean count {mean:.1}"));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Default, Clone)]
pub struct FlipTally {
    pub ambiguous: usize,
    pub flipped: usize,
    /// Ambiguous verdicts per triggering heuristic, as (total, flipped).
    pub by_heuristic: std::collections::BTreeMap<String, (usize, usize)>,
}

impl FlipTally {
    pub fn rate(&self) -> f64 {
        if self.ambiguous == 0 {
            1.0
        } else {
            self.flipped as f64 / self.ambiguous as f64
        }
    }
}

/// For every Ambiguous verdict among `cases`, scales the parameter named by
/// the Ambiguous trace entry by 0.9 and 1.1 and counts a flip when either
/// run leaves Ambiguous.
pub fn flip_tally(cases: &[oracle::Case], params: &RubricParams) -> FlipTally {
    let mut t = FlipTally::default();
    for case in cases {
        let view = evaluate(&case.spec, &case.dataset).expect("oracle specs evaluate");
        let ev = detect(&view, &case.binding, &case.dataset, params).expect("detect runs");
        if ev.verdict != Verdict::Ambiguous {
            continue;
        }
        let Some(entry) = ev.trace.iter().rev().find(|e| e.outcome == Verdict::Ambiguous) else {
            continue;
        };
        let flipped = [0.9, 1.1].iter().any(|f| {
            oracle::perturbed(params, &entry.parameter, *f).is_some_and(|p| {
                detect(&view, &case.binding, &case.dataset, &p).map(|e| e.verdict != Verdict::Ambiguous).unwrap_or(false)
            })
        });
        t.ambiguous += 1;
        t.flipped += flipped as usize;
        let slot = t.by_heuristic.entry(entry.heuristic.clone()).or_default();
        slot.0 += 1;
        slot.1 += flipped as usize;
    }
    t
}
