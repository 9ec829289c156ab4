//! Dataset ingestion, difficulty tiering, and accuracy reporting at six
//! distance granularities. All metric math is pure; evaluation order never
//! affects the report.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{acc_at_dis, geodesic_distance, GeoPoint, GranularityLevels, Prediction};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// The easy/hard tiering rule: a sample is easy when at least `TIER_QUORUM`
/// reference models land within `TIER_THRESHOLD_M` of the ground truth.
pub const TIER_THRESHOLD_M: f64 = 10_000.0;
pub const TIER_QUORUM: usize = 2;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest {path} line {line}: {reason}")]
    Schema {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("duplicate sample id {id} at manifest line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("missing images for samples: {}", .0.join(", "))]
    MissingImages(Vec<String>),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("tiering needs at least {quorum} reference models, got {models}")]
    QuorumUnmet { models: usize, quorum: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Easy,
    Hard,
    Untiered,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::Easy => "easy",
            Tier::Hard => "hard",
            Tier::Untiered => "untiered",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    pub id: String,
    /// Image path resolved against the manifest directory.
    pub image: PathBuf,
    /// Image path exactly as written in the manifest, for re-emission.
    pub image_source: String,
    pub ground_truth: GeoPoint,
    pub split: Split,
    pub tier: Tier,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl BenchSample {
    /// One manifest line in the dataset schema.
    pub fn to_manifest_line(&self) -> String {
        let mut obj = serde_json::json!({
            "id": self.id,
            "image": self.image_source,
            "lat": self.ground_truth.lat(),
            "lon": self.ground_truth.lon(),
            "split": self.split,
        });
        if self.tier != Tier::Untiered {
            obj["tier"] = serde_json::json!(self.tier);
        }
        if let Some(region) = &self.region {
            obj["region"] = serde_json::json!(region);
        }
        if let Some(source) = &self.source {
            obj["source"] = serde_json::json!(source);
        }
        crate::agent::canonical_json(&obj)
    }
}

#[derive(Debug, Deserialize)]
struct ManifestLine {
    id: String,
    image: String,
    lat: f64,
    lon: f64,
    split: Split,
    #[serde(default)]
    tier: Option<Tier>,
    #[serde(default)]
    region: Option<String>,
    #[serde(default)]
    source: Option<String>,
}

/// Loads a JSON-lines manifest: `{id, image, lat, lon, split, tier?,
/// region?, source?}`. Image paths resolve relative to the manifest
/// directory; every image must exist.
pub fn load_dataset(path: &Path) -> Result<Vec<BenchSample>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut missing_images = Vec::new();
    for (index, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line_number = index + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: ManifestLine =
            serde_json::from_str(&line).map_err(|e| DatasetError::Schema {
                path: path.to_path_buf(),
                line: line_number,
                reason: e.to_string(),
            })?;
        let ground_truth =
            GeoPoint::new(raw.lat, raw.lon).map_err(|e| DatasetError::Schema {
                path: path.to_path_buf(),
                line: line_number,
                reason: e.to_string(),
            })?;
        if seen.insert(raw.id.clone(), line_number).is_some() {
            return Err(DatasetError::DuplicateId {
                id: raw.id,
                line: line_number,
            });
        }
        let image = base.join(&raw.image);
        if !image.is_file() {
            missing_images.push(raw.id.clone());
        }
        samples.push(BenchSample {
            id: raw.id,
            image,
            image_source: raw.image,
            ground_truth,
            split: raw.split,
            tier: raw.tier.unwrap_or(Tier::Untiered),
            region: raw.region,
            source: raw.source,
        });
    }
    if !missing_images.is_empty() {
        return Err(DatasetError::MissingImages(missing_images));
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    Ok(samples)
}

/// Labels each sample easy when at least `quorum` reference models predict
/// within `threshold_m` of the ground truth, hard otherwise. A model with no
/// prediction for a sample counts as a miss.
pub fn tier_samples(
    samples: &[BenchSample],
    reference_predictions: &[BTreeMap<String, GeoPoint>],
    threshold_m: f64,
    quorum: usize,
) -> Result<Vec<BenchSample>, DatasetError> {
    if reference_predictions.len() < quorum {
        return Err(DatasetError::QuorumUnmet {
            models: reference_predictions.len(),
            quorum,
        });
    }
    Ok(samples
        .iter()
        .map(|sample| {
            let hits = reference_predictions
                .iter()
                .filter(|model| {
                    model
                        .get(&sample.id)
                        .is_some_and(|p| geodesic_distance(*p, sample.ground_truth) < threshold_m)
                })
                .count();
            BenchSample {
                tier: if hits >= quorum { Tier::Easy } else { Tier::Hard },
                ..sample.clone()
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSampleError {
    pub id: String,
    pub tier: Tier,
    /// Geodesic error in meters; `+inf` (serialized as null) for missing or
    /// unparseable predictions.
    pub error_m: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model: String,
    /// `direct`, `thinking-with-map`, or `parallel` with `n` > 1.
    pub mode: String,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verifier: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

/// Accuracy at each granularity, overall and per tier, plus the per-sample
/// error table the accuracies are computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub levels: Vec<(String, f64)>,
    pub overall: Vec<f64>,
    pub per_tier: Vec<(Tier, usize, Vec<f64>)>,
    pub per_sample: Vec<PerSampleError>,
    pub metadata: ReportMeta,
    pub termination_counts: BTreeMap<String, usize>,
    /// Additional accuracy rows (best@N, pass@K) when parallel data exists.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_rows: Vec<(String, Vec<f64>)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn accuracies(errors: &[f64], levels: &GranularityLevels) -> Vec<f64> {
    levels
        .levels()
        .iter()
        .map(|(_, threshold)| acc_at_dis(errors, *threshold).expect("non-empty errors"))
        .collect()
}

/// Scores `predictions` against `samples` at the six default granularities.
/// Samples without a prediction score `+inf`; prediction ids that match no
/// sample are reported as warnings.
pub fn evaluate(
    samples: &[BenchSample],
    predictions: &BTreeMap<String, Prediction>,
    metadata: ReportMeta,
) -> Result<EvalReport, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let levels = GranularityLevels::default();
    let per_sample: Vec<PerSampleError> = samples
        .iter()
        .map(|sample| {
            let error_m = predictions
                .get(&sample.id)
                .map(|p| geodesic_distance(p.point, sample.ground_truth))
                .unwrap_or(f64::INFINITY);
            PerSampleError {
                id: sample.id.clone(),
                tier: sample.tier,
                error_m,
            }
        })
        .collect();

    let all_errors: Vec<f64> = per_sample.iter().map(|r| r.error_m).collect();
    let overall = accuracies(&all_errors, &levels);

    let mut per_tier = Vec::new();
    for tier in [Tier::Easy, Tier::Hard, Tier::Untiered] {
        let errors: Vec<f64> = per_sample
            .iter()
            .filter(|r| r.tier == tier)
            .map(|r| r.error_m)
            .collect();
        if !errors.is_empty() {
            per_tier.push((tier, errors.len(), accuracies(&errors, &levels)));
        }
    }

    let known: std::collections::BTreeSet<&str> =
        samples.iter().map(|s| s.id.as_str()).collect();
    let warnings: Vec<String> = predictions
        .keys()
        .filter(|id| !known.contains(id.as_str()))
        .map(|id| format!("prediction for unknown sample id {id}"))
        .collect();

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        levels: levels.levels().to_vec(),
        overall,
        per_tier,
        per_sample,
        metadata,
        termination_counts: BTreeMap::new(),
        extra_rows: Vec::new(),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
}

/// Renders the report. Markdown mirrors the six named columns with
/// percentages at two decimals; JSON is the schema-versioned report itself.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => crate::agent::canonical_json(
            &serde_json::to_value(report).expect("report serializes"),
        ),
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("# Accuracy report\n\n");
    out.push_str(&format!(
        "- model: {}\n- mode: {}{}\n",
        report.metadata.model,
        report.metadata.mode,
        if report.metadata.n > 1 {
            format!(" (n={})", report.metadata.n)
        } else {
            String::new()
        }
    ));
    if let Some(verifier) = &report.metadata.verifier {
        out.push_str(&format!("- verifier: {verifier}\n"));
    }
    if let Some(run_id) = &report.metadata.run_id {
        out.push_str(&format!("- run: {run_id}\n"));
    }
    if !report.termination_counts.is_empty() {
        let counts: Vec<String> = report
            .termination_counts
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        out.push_str(&format!("- terminations: {}\n", counts.join(", ")));
    }
    out.push('\n');

    let mut header = String::from("| Rows | N |");
    let mut rule = String::from("|---|---|");
    for (name, threshold) in &report.levels {
        header.push_str(&format!(" {} {} |", name, format_threshold(*threshold)));
        rule.push_str("---|");
    }
    out.push_str(&header);
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');

    let total = report.per_sample.len();
    out.push_str(&accuracy_row("overall", total, &report.overall));
    for (tier, n, accs) in &report.per_tier {
        out.push_str(&accuracy_row(tier.as_str(), *n, accs));
    }
    for (label, accs) in &report.extra_rows {
        out.push_str(&accuracy_row(label, total, accs));
    }
    if !report.warnings.is_empty() {
        out.push('\n');
        for warning in &report.warnings {
            out.push_str(&format!("> warning: {warning}\n"));
        }
    }
    out
}

fn accuracy_row(label: &str, n: usize, accs: &[f64]) -> String {
    let mut row = format!("| {label} | {n} |");
    for acc in accs {
        row.push_str(&format!(" {:.2} |", acc * 100.0));
    }
    row.push('\n');
    row
}

fn format_threshold(meters: f64) -> String {
    if meters < 1_000.0 {
        format!("{}m", meters as i64)
    } else {
        format!("{}km", (meters / 1_000.0) as i64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn sample(id: &str, lat: f64, lon: f64, tier: Tier) -> BenchSample {
        BenchSample {
            id: id.into(),
            image: PathBuf::from("unused.png"),
            ground_truth: GeoPoint::new(lat, lon).unwrap(),
            split: Split::Test,
            tier,
            region: None,
            source: None,
        }
    }

    fn prediction(lat: f64, lon: f64) -> Prediction {
        Prediction::new(GeoPoint::new(lat, lon).unwrap(), "", "")
    }

    /// Degrees of latitude giving roughly `meters` of geodesic offset.
    fn degrees_for(meters: f64) -> f64 {
        meters / 111_194.93
    }

    fn write_manifest(dir: &Path, lines: &[String]) -> PathBuf {
        let path = dir.join("manifest.jsonl");
        let mut file = std::fs::File::create(&path).unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        path
    }

    fn touch_image(dir: &Path, name: &str) {
        crate::images::banded_test_image(2, 2);
        std::fs::write(dir.join(name), crate::images::banded_test_image(2, 2).bytes).unwrap();
    }

    #[test]
    fn manifest_loads_valid_samples() {
        let dir = tempfile::tempdir().unwrap();
        touch_image(dir.path(), "a.png");
        touch_image(dir.path(), "b.png");
        touch_image(dir.path(), "c.png");
        let path = write_manifest(
            dir.path(),
            &[
                r#"{"id":"s1","image":"a.png","lat":31.2,"lon":121.5,"split":"test"}"#.into(),
                r#"{"id":"s2","image":"b.png","lat":39.9,"lon":116.4,"split":"test","tier":"easy"}"#.into(),
                r#"{"id":"s3","image":"c.png","lat":48.85,"lon":2.35,"split":"train","region":"global"}"#.into(),
            ],
        );
        let samples = load_dataset(&path).unwrap();
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[0].tier, Tier::Untiered);
        assert_eq!(samples[1].tier, Tier::Easy);
        assert_eq!(samples[2].region.as_deref(), Some("global"));
    }

    #[test]
    fn manifest_errors_carry_line_numbers_and_ids() {
        let dir = tempfile::tempdir().unwrap();
        touch_image(dir.path(), "a.png");
        let duplicate = write_manifest(
            dir.path(),
            &[
                r#"{"id":"s1","image":"a.png","lat":1.0,"lon":2.0,"split":"test"}"#.into(),
                r#"{"id":"s1","image":"a.png","lat":1.0,"lon":2.0,"split":"test"}"#.into(),
            ],
        );
        match load_dataset(&duplicate) {
            Err(DatasetError::DuplicateId { id, line }) => {
                assert_eq!(id, "s1");
                assert_eq!(line, 2);
            }
            other => panic!("expected duplicate id, got {other:?}"),
        }

        let bad_lat = write_manifest(
            dir.path(),
            &[r#"{"id":"s1","image":"a.png","lat":95.0,"lon":2.0,"split":"test"}"#.into()],
        );
        match load_dataset(&bad_lat) {
            Err(DatasetError::Schema { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected schema error, got {other:?}"),
        }

        let missing = write_manifest(
            dir.path(),
            &[r#"{"id":"s9","image":"nope.png","lat":1.0,"lon":2.0,"split":"test"}"#.into()],
        );
        match load_dataset(&missing) {
            Err(DatasetError::MissingImages(ids)) => assert_eq!(ids, vec!["s9".to_string()]),
            other => panic!("expected missing images, got {other:?}"),
        }
    }

    #[test]
    fn tier_rule_counts_hits_and_misses() {
        let s = vec![sample("s1", 30.0, 120.0, Tier::Untiered)];
        let truth = s[0].ground_truth;
        let model = |error_m: f64| -> BTreeMap<String, GeoPoint> {
            let mut m = BTreeMap::new();
            m.insert(
                "s1".to_string(),
                GeoPoint::new(truth.lat() + degrees_for(error_m), truth.lon()).unwrap(),
            );
            m
        };

        // Errors 2 km, 8 km, 500 km: two hits -> easy.
        let tiered = tier_samples(
            &s,
            &[model(2_000.0), model(8_000.0), model(500_000.0)],
            TIER_THRESHOLD_M,
            TIER_QUORUM,
        )
        .unwrap();
        assert_eq!(tiered[0].tier, Tier::Easy);

        // Errors 12, 15, 11 km: zero hits -> hard.
        let tiered = tier_samples(
            &s,
            &[model(12_000.0), model(15_000.0), model(11_000.0)],
            TIER_THRESHOLD_M,
            TIER_QUORUM,
        )
        .unwrap();
        assert_eq!(tiered[0].tier, Tier::Hard);

        // 9.999 km hit, 50 km miss, missing prediction: one hit -> hard.
        let tiered = tier_samples(
            &s,
            &[model(9_999.0), model(50_000.0), BTreeMap::new()],
            TIER_THRESHOLD_M,
            TIER_QUORUM,
        )
        .unwrap();
        assert_eq!(tiered[0].tier, Tier::Hard);

        // Fewer models than the quorum is an error.
        assert!(matches!(
            tier_samples(&s, &[model(1.0)], TIER_THRESHOLD_M, TIER_QUORUM),
            Err(DatasetError::QuorumUnmet { models: 1, quorum: 2 })
        ));
    }

    #[test]
    fn tiering_is_threshold_monotone() {
        let s = vec![sample("s1", 30.0, 120.0, Tier::Untiered)];
        let truth = s[0].ground_truth;
        let model = |error_m: f64| -> BTreeMap<String, GeoPoint> {
            let mut m = BTreeMap::new();
            m.insert(
                "s1".to_string(),
                GeoPoint::new(truth.lat() + degrees_for(error_m), truth.lon()).unwrap(),
            );
            m
        };
        let models = [model(3_000.0), model(9_000.0), model(40_000.0)];
        let mut was_easy = false;
        for threshold in [1_000.0, 5_000.0, 10_000.0, 50_000.0] {
            let tier = tier_samples(&s, &models, threshold, 2).unwrap()[0].tier;
            if was_easy {
                assert_eq!(tier, Tier::Easy, "raising threshold flipped easy to hard");
            }
            was_easy = tier == Tier::Easy;
        }
    }

    #[test]
    fn single_exact_prediction_is_perfect_everywhere() {
        let samples = vec![sample("s1", 30.0, 120.0, Tier::Untiered)];
        let mut predictions = BTreeMap::new();
        predictions.insert("s1".to_string(), prediction(30.0, 120.0));
        let report = evaluate(&samples, &predictions, ReportMeta::default()).unwrap();
        assert_eq!(report.overall, vec![1.0; 6]);
    }

    #[test]
    fn two_sample_report_matches_hand_thresholding() {
        let samples = vec![
            sample("s1", 0.0, 0.0, Tier::Easy),
            sample("s2", 10.0, 10.0, Tier::Hard),
        ];
        let mut predictions = BTreeMap::new();
        // 300 m and 30 km errors.
        predictions.insert("s1".to_string(), prediction(degrees_for(300.0), 0.0));
        predictions.insert(
            "s2".to_string(),
            prediction(10.0 + degrees_for(30_000.0), 10.0),
        );
        let report = evaluate(&samples, &predictions, ReportMeta::default()).unwrap();
        assert_eq!(report.overall, vec![0.5, 0.5, 0.5, 0.5, 1.0, 1.0]);
        assert_eq!(report.per_tier.len(), 2);
    }

    #[test]
    fn missing_prediction_scores_infinite_error() {
        let samples = vec![
            sample("s1", 0.0, 0.0, Tier::Untiered),
            sample("s2", 10.0, 10.0, Tier::Untiered),
        ];
        let mut predictions = BTreeMap::new();
        predictions.insert("s1".to_string(), prediction(0.0, 0.0));
        let report = evaluate(&samples, &predictions, ReportMeta::default()).unwrap();
        // Country level (750 km): only the predicted sample is correct.
        assert_eq!(report.overall[5], 0.5);
        assert!(report.per_sample[1].error_m.is_infinite());
    }

    #[test]
    fn unknown_prediction_ids_are_warned_not_scored() {
        let samples = vec![sample("s1", 0.0, 0.0, Tier::Untiered)];
        let mut predictions = BTreeMap::new();
        predictions.insert("s1".to_string(), prediction(0.0, 0.0));
        predictions.insert("ghost".to_string(), prediction(1.0, 1.0));
        let report = evaluate(&samples, &predictions, ReportMeta::default()).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].contains("ghost"));
    }

    #[test]
    fn report_levels_are_nondecreasing_and_tiers_recombine() {
        let samples: Vec<BenchSample> = (0..20)
            .map(|i| {
                sample(
                    &format!("s{i}"),
                    0.0,
                    0.0,
                    if i % 3 == 0 { Tier::Easy } else { Tier::Hard },
                )
            })
            .collect();
        let mut predictions = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            // Errors spread across every tier boundary.
            let error = [100.0, 900.0, 5e3, 2e4, 1e5, 5e5, 1e6][i % 7];
            predictions.insert(
                s.id.clone(),
                prediction(degrees_for(error), 0.0),
            );
        }
        let report = evaluate(&samples, &predictions, ReportMeta::default()).unwrap();
        for pair in report.overall.windows(2) {
            assert!(pair[0] <= pair[1] + 1e-15);
        }
        // Weighted per-tier accuracies recombine into the overall accuracy.
        for level in 0..6 {
            let mut weighted = 0.0;
            let mut count = 0usize;
            for (_, n, accs) in &report.per_tier {
                weighted += *n as f64 * accs[level];
                count += n;
            }
            assert_eq!(count, samples.len());
            assert!((weighted / count as f64 - report.overall[level]).abs() < 1e-12);
        }
    }

    #[test]
    fn shuffling_samples_leaves_accuracies_unchanged() {
        let mut samples: Vec<BenchSample> = (0..9)
            .map(|i| sample(&format!("s{i}"), 0.0, 0.0, Tier::Untiered))
            .collect();
        let mut predictions = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            predictions.insert(
                s.id.clone(),
                prediction(degrees_for(300.0 * i as f64), 0.0),
            );
        }
        let forward = evaluate(&samples, &predictions, ReportMeta::default()).unwrap();
        samples.reverse();
        let backward = evaluate(&samples, &predictions, ReportMeta::default()).unwrap();
        assert_eq!(forward.overall, backward.overall);
    }

    #[test]
    fn markdown_report_has_six_named_columns() {
        let samples = vec![sample("s1", 0.0, 0.0, Tier::Hard)];
        let mut predictions = BTreeMap::new();
        predictions.insert("s1".to_string(), prediction(0.0, 0.0));
        let mut report = evaluate(
            &samples,
            &predictions,
            ReportMeta {
                model: "scripted".into(),
                mode: "thinking-with-map".into(),
                n: 1,
                verifier: None,
                run_id: Some("r1".into()),
            },
        )
        .unwrap();
        report.extra_rows.push(("best@2".into(), vec![1.0; 6]));
        let markdown = render_report(&report, ReportFormat::Markdown);
        for column in [
            "Fine 500m",
            "Local 2km",
            "District 10km",
            "City 25km",
            "Region 200km",
            "Country 750km",
        ] {
            assert!(markdown.contains(column), "missing column {column}");
        }
        assert!(markdown.contains("| overall | 1 | 100.00 |"));
        assert!(markdown.contains("| hard | 1 |"));
        assert!(markdown.contains("| best@2 |"));

        // The JSON form carries the same accuracies at full precision.
        let json = render_report(&report, ReportFormat::Json);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["overall"][0], 1.0);
        assert_eq!(value["schema_version"], 1);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(
            evaluate(&[], &BTreeMap::new(), ReportMeta::default()),
            Err(DatasetError::EmptyDataset)
        ));
    }
}
