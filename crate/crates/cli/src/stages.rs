//! Pipeline stages. Each stage reads its inputs from files and writes only
//! inside its own output path, so any stage can be re-run alone.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use curvreg::cases::{build_case, case_spec, CaseSpec};
use curvreg::eval::{batch_report, evaluate_registration, report_csv_row, EvalThresholds, REPORT_CSV_HEADER};
use curvreg::features::{detect_heuristic, detect_oracle, DetectorKind, LabelMap};
use curvreg::io::{
    read_centerline, read_feature_map, read_json, read_polar, read_volume, write_centerline, write_feature_map,
    write_json, write_polar, write_trace_csv, write_volume,
};
use curvreg::registration::{register, MovingFeatures, Prealignment, Problem};
use curvreg::{
    DetectorConfig, FailureCategory, FeatureMap, GroundTruth, Modality, OptimizerConfig, RegistrationReport,
    WarpedGeometry,
};

use crate::config::RunConfig;

pub const PHANTOM_DIR: &str = "phantom";
pub const FEATURES_DIR: &str = "features";
pub const RESULT_DIR: &str = "result";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Phantom,
    Features,
    Register,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Phantom, Stage::Features, Stage::Register, Stage::Eval];

    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        if s == "all" {
            return Ok(Stage::ALL.to_vec());
        }
        let mut stages = s
            .split(',')
            .map(|name| match name.trim() {
                "phantom" => Ok(Stage::Phantom),
                "features" => Ok(Stage::Features),
                "register" => Ok(Stage::Register),
                "eval" => Ok(Stage::Eval),
                other => bail!("unknown stage `{other}`"),
            })
            .collect::<Result<Vec<_>>>()?;
        stages.sort();
        stages.dedup();
        Ok(stages)
    }
}

/// Everything from a registration run that evaluation needs besides the
/// geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationSummary {
    pub failure: Option<FailureCategory>,
    pub iterations: usize,
    pub converged: bool,
    pub runtime_s: f64,
    pub prealignment: Prealignment,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn load_case_spec(cfg: &RunConfig) -> Result<CaseSpec> {
    match (&cfg.case_spec, cfg.seed) {
        (Some(path), _) => Ok(read_json(path)?),
        (None, Some(seed)) => {
            let mut spec = case_spec(cfg.scenario, seed);
            spec.polar = cfg.polar;
            Ok(spec)
        }
        (None, None) => bail!("a seed or a case spec is required"),
    }
}

/// Writes the moving volume, its centerline and node labels, the fixed
/// pullback image and the ground truth.
pub fn phantom(spec: CaseSpec, out: &Path) -> Result<()> {
    let case = build_case(spec)?;
    create_dir(out)?;
    write_json(&out.join("case.json"), &case.spec)?;
    write_volume(&out.join("volume.json"), &case.phantom.volume)?;
    write_centerline(&out.join("centerline.json"), &case.phantom.centerline)?;
    write_json(&out.join("labels.json"), &case.phantom.labels)?;
    write_polar(&out.join("fixed.json"), &case.pullback.image)?;
    write_json(&out.join("gt.json"), &case.pullback.truth)?;
    log::info!("phantom {} written to {}", case.name(), out.display());
    Ok(())
}

/// Reads reference labels from either a ground-truth file or a bare label
/// map.
fn read_labels(path: &Path) -> Result<LabelMap> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Labels {
        Truth(Box<GroundTruth>),
        Map(LabelMap),
    }
    Ok(match read_json::<Labels>(path)? {
        Labels::Truth(gt) => gt.labels,
        Labels::Map(m) => m,
    })
}

pub fn detect(input: &Path, modality: Modality, labels: Option<&Path>, det: &DetectorConfig) -> Result<FeatureMap> {
    Ok(match det.kind {
        DetectorKind::Heuristic => detect_heuristic(&read_polar(input)?, modality, det)?,
        DetectorKind::Oracle => {
            let Some(path) = labels else { bail!("the oracle detector needs reference labels") };
            detect_oracle(&read_labels(path)?, det)?
        }
    })
}

pub fn features(
    input: &Path,
    modality: Modality,
    labels: Option<&Path>,
    det: &DetectorConfig,
    out: &Path,
) -> Result<()> {
    let fm = detect(input, modality, labels, det)?;
    if let Some(dir) = out.parent() {
        create_dir(dir)?;
    }
    write_feature_map(out, &fm)?;
    Ok(())
}

/// Registers the moving volume in `moving` to the pullback in `fixed`.
///
/// Fixed landmarks come from `features` when given, else from
/// `fixed/features.json`, else from running the detector on the pullback.
pub fn register_case(
    fixed: &Path,
    moving: &Path,
    features: Option<&Path>,
    det: &DetectorConfig,
    opt: &OptimizerConfig,
    out: &Path,
) -> Result<RegistrationSummary> {
    let fixed_image = read_polar(&fixed.join("fixed.json"))?;
    let default_features = fixed.join("features.json");
    let fixed_features = match features {
        Some(p) => read_feature_map(p)?,
        None if default_features.is_file() => read_feature_map(&default_features)?,
        None => detect(&fixed.join("fixed.json"), Modality::Ivus, Some(&fixed.join("gt.json")), det)?,
    };
    let volume = read_volume(&moving.join("volume.json"))?;
    let centerline = read_centerline(&moving.join("centerline.json"))?;
    let labels: Option<LabelMap> = match det.kind {
        DetectorKind::Oracle => Some(read_json(&moving.join("labels.json"))?),
        DetectorKind::Heuristic => None,
    };
    let moving_features = match &labels {
        Some(l) => MovingFeatures::Oracle(l),
        None => MovingFeatures::Heuristic,
    };
    let z = &fixed_image.z_positions;
    if z.len() < 2 {
        bail!("the fixed pullback needs at least two frames");
    }
    let frame_spacing = z[1] - z[0];
    let problem =
        Problem::new(&fixed_image, &fixed_features, &volume, &centerline, moving_features, frame_spacing, det, opt)?;
    let outcome = register(&problem, opt)?;

    create_dir(out)?;
    write_json(&out.join("params.json"), &outcome.params)?;
    write_json(&out.join("geometry.json"), &outcome.geometry)?;
    write_trace_csv(&out.join("trace.csv"), &outcome.trace)?;
    let summary = RegistrationSummary {
        failure: outcome.failure,
        iterations: outcome.iterations,
        converged: outcome.converged,
        runtime_s: outcome.runtime_s,
        prealignment: outcome.prealignment,
    };
    write_json(&out.join("registration.json"), &summary)?;
    Ok(summary)
}

pub fn evaluate(result: &Path, gt: &Path, thresholds: &EvalThresholds, out: &Path) -> Result<RegistrationReport> {
    let geometry: WarpedGeometry = read_json(&result.join("geometry.json"))?;
    let summary: RegistrationSummary = read_json(&result.join("registration.json"))?;
    let truth: GroundTruth = read_json(gt)?;
    let report =
        evaluate_registration(&geometry.axes, &truth.reference.axes, thresholds, summary.failure, summary.runtime_s)?;
    if let Some(dir) = out.parent() {
        create_dir(dir)?;
    }
    write_json(out, &report)?;
    Ok(report)
}

/// Collects per-case reports matching `pattern` into a CSV (one row per
/// case, named after the report's directory) and writes the batch summary
/// as JSON next to it. Returns the number of cases.
pub fn report(pattern: &str, out: &Path) -> Result<usize> {
    let mut paths: Vec<PathBuf> =
        glob::glob(pattern).context("invalid glob pattern")?.collect::<std::result::Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("no reports match `{pattern}`");
    }
    let mut csv = String::from(REPORT_CSV_HEADER);
    csv.push('\n');
    let mut reports = Vec::with_capacity(paths.len());
    for p in &paths {
        let r: RegistrationReport = read_json(p)?;
        let name = p
            .parent()
            .and_then(|d| d.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        csv.push_str(&report_csv_row(&name, &r));
        csv.push('\n');
        reports.push(r);
    }
    if let Some(dir) = out.parent() {
        create_dir(dir)?;
    }
    fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    write_json(&out.with_extension("json"), &batch_report(&reports)?)?;
    Ok(reports.len())
}

/// Runs `stages` in pipeline order under `out`, writing the effective
/// config first.
pub fn run_pipeline(cfg: &RunConfig, stages: &[Stage], out: &Path) -> Result<Option<RegistrationReport>> {
    create_dir(out)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let phantom_dir = out.join(PHANTOM_DIR);
    let features_file = out.join(FEATURES_DIR).join("features.json");
    let result_dir = out.join(RESULT_DIR);
    let mut report_out = None;
    for stage in stages {
        log::info!("stage {stage:?}");
        match stage {
            Stage::Phantom => phantom(load_case_spec(cfg)?, &phantom_dir)?,
            Stage::Features => features(
                &phantom_dir.join("fixed.json"),
                Modality::Ivus,
                Some(&phantom_dir.join("gt.json")),
                &cfg.detector,
                &features_file,
            )?,
            Stage::Register => {
                let given = features_file.is_file().then_some(features_file.as_path());
                register_case(&phantom_dir, &phantom_dir, given, &cfg.detector, &cfg.optimizer, &result_dir)?;
            }
            Stage::Eval => {
                report_out =
                    Some(evaluate(&result_dir, &phantom_dir.join("gt.json"), &cfg.eval, &out.join(REPORT_FILE))?)
            }
        }
    }
    Ok(report_out)
}
