//! Geodesic distance, the piecewise reward ladder, accuracy metrics, and
//! answer parsing. Everything here is a pure function over immutable inputs.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Mean Earth radius in meters for the spherical distance model.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("non-finite coordinate: lat={lat}, lon={lon}")]
    NonFinite { lat: f64, lon: f64 },
    #[error("latitude {0} out of range [-90, 90]")]
    LatOutOfRange(f64),
    #[error("invalid distance {0}: must be >= 0")]
    NegativeDistance(f64),
    #[error("empty error list")]
    EmptyErrors,
    #[error("error list entry {0} is negative or NaN")]
    InvalidErrorEntry(f64),
    #[error("invalid reward ladder: {0}")]
    InvalidLadder(String),
    #[error("invalid granularity levels: {0}")]
    InvalidLevels(String),
    #[error("no JSON object with numeric lat/lon found in message text")]
    ParseFailure,
}

/// A point on the globe in signed degrees, north and east positive.
///
/// Construction rejects non-finite values and latitudes outside [-90, 90];
/// longitude is wrapped into [-180, 180].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NonFinite { lat, lon });
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatOutOfRange(lat));
        }
        Ok(Self {
            lat,
            lon: wrap_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Parses `"lat,lon"` text, e.g. `"39.9042, 116.4074"`.
    pub fn parse_lat_lon(text: &str) -> Option<Result<Self, GeoError>> {
        let (lat_s, lon_s) = text.split_once(',')?;
        let lat: f64 = lat_s.trim().parse().ok()?;
        let lon: f64 = lon_s.trim().parse().ok()?;
        Some(Self::new(lat, lon))
    }
}

impl std::fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.lat, self.lon)
    }
}

/// Wraps a longitude into [-180, 180] by mod 360. Values already in range
/// pass through bit-exact.
fn wrap_lon(lon: f64) -> f64 {
    if (-180.0..=180.0).contains(&lon) {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if wrapped < -180.0 {
        wrapped + 360.0
    } else {
        wrapped
    }
}

/// The fixed four-key answer object the policy is prompted to emit.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub point: GeoPoint,
    pub city: String,
    pub country: String,
}

impl Prediction {
    pub fn new(point: GeoPoint, city: impl Into<String>, country: impl Into<String>) -> Self {
        Self {
            point,
            city: city.into(),
            country: country.into(),
        }
    }
}

impl Serialize for Prediction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("Prediction", 4)?;
        s.serialize_field("lat", &self.point.lat)?;
        s.serialize_field("lon", &self.point.lon)?;
        s.serialize_field("city", &self.city)?;
        s.serialize_field("country", &self.country)?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            lat: f64,
            lon: f64,
            #[serde(default)]
            city: String,
            #[serde(default)]
            country: String,
        }
        let raw = Raw::deserialize(deserializer)?;
        let point = GeoPoint::new(raw.lat, raw.lon).map_err(D::Error::custom)?;
        Ok(Prediction {
            point,
            city: raw.city,
            country: raw.country,
        })
    }
}

/// Piecewise discrete reward over geodesic error: strictly increasing
/// distance bounds paired with strictly decreasing rewards, plus a terminal
/// reward for anything at or beyond the last bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardLadder {
    tiers: Vec<(f64, f64)>,
    terminal: f64,
}

impl RewardLadder {
    pub fn new(tiers: Vec<(f64, f64)>, terminal: f64) -> Result<Self, GeoError> {
        if tiers.is_empty() {
            return Err(GeoError::InvalidLadder("no tiers".into()));
        }
        let mut prev_bound = 0.0;
        let mut prev_reward = f64::INFINITY;
        for &(bound, reward) in &tiers {
            if !(bound > prev_bound) {
                return Err(GeoError::InvalidLadder(format!(
                    "bounds must be strictly increasing from 0, got {bound} after {prev_bound}"
                )));
            }
            if !(reward < prev_reward) {
                return Err(GeoError::InvalidLadder(format!(
                    "rewards must be strictly decreasing, got {reward} after {prev_reward}"
                )));
            }
            prev_bound = bound;
            prev_reward = reward;
        }
        if !(terminal < prev_reward) {
            return Err(GeoError::InvalidLadder(format!(
                "terminal reward {terminal} must be below the last tier reward {prev_reward}"
            )));
        }
        Ok(Self { tiers, terminal })
    }

    pub fn tiers(&self) -> &[(f64, f64)] {
        &self.tiers
    }

    pub fn terminal(&self) -> f64 {
        self.terminal
    }

    /// All rewards the ladder can emit, best first.
    pub fn reward_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.tiers.iter().map(|&(_, r)| r).collect();
        v.push(self.terminal);
        v
    }
}

impl Default for RewardLadder {
    /// Seven tiers: 1 below 500 m, 0.8 below 2 km, 0.6 below 10 km,
    /// 0.4 below 25 km, 0.2 below 200 km, 0.1 below 750 km, else 0.
    fn default() -> Self {
        Self::new(
            vec![
                (500.0, 1.0),
                (2_000.0, 0.8),
                (10_000.0, 0.6),
                (25_000.0, 0.4),
                (200_000.0, 0.2),
                (750_000.0, 0.1),
            ],
            0.0,
        )
        .expect("default ladder is valid")
    }
}

/// Named distance thresholds for the accuracy report, finest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularityLevels {
    levels: Vec<(String, f64)>,
}

impl GranularityLevels {
    pub fn new(levels: Vec<(String, f64)>) -> Result<Self, GeoError> {
        if levels.is_empty() {
            return Err(GeoError::InvalidLevels("no levels".into()));
        }
        let mut prev = 0.0;
        for (name, threshold) in &levels {
            if !(*threshold > prev) {
                return Err(GeoError::InvalidLevels(format!(
                    "threshold for {name} must exceed {prev}, got {threshold}"
                )));
            }
            prev = *threshold;
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[(String, f64)] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

impl Default for GranularityLevels {
    /// Fine/500m, Local/2km, District/10km, City/25km, Region/200km,
    /// Country/750km.
    fn default() -> Self {
        Self::new(vec![
            ("Fine".into(), 500.0),
            ("Local".into(), 2_000.0),
            ("District".into(), 10_000.0),
            ("City".into(), 25_000.0),
            ("Region".into(), 200_000.0),
            ("Country".into(), 750_000.0),
        ])
        .expect("default levels are valid")
    }
}

/// Haversine great-circle distance in meters on a sphere of radius
/// [`EARTH_RADIUS_M`]. Symmetric and non-negative.
pub fn geodesic_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let d_phi = (b.lat - a.lat).to_radians();
    let d_lambda = (b.lon - a.lon).to_radians();

    let h = (d_phi / 2.0).sin().powi(2)
        + phi1.cos() * phi2.cos() * (d_lambda / 2.0).sin().powi(2);
    let c = 2.0 * h.sqrt().atan2((1.0 - h).sqrt());
    EARTH_RADIUS_M * c
}

/// Maps a geodesic error in meters onto the ladder. Intervals are
/// lower-inclusive: a distance exactly on a bound falls into the next tier.
/// `dis` may be `+inf` (unparseable episodes); negative or NaN is an error.
pub fn reward_for_distance(ladder: &RewardLadder, dis: f64) -> Result<f64, GeoError> {
    if dis.is_nan() || dis < 0.0 {
        return Err(GeoError::NegativeDistance(dis));
    }
    for &(bound, reward) in &ladder.tiers {
        if dis < bound {
            return Ok(reward);
        }
    }
    Ok(ladder.terminal)
}

/// Fraction of errors strictly below `threshold`. Entries may be `+inf`;
/// they count in the denominator and never as hits.
pub fn acc_at_dis(errors: &[f64], threshold: f64) -> Result<f64, GeoError> {
    if errors.is_empty() {
        return Err(GeoError::EmptyErrors);
    }
    let mut hits = 0usize;
    for &e in errors {
        if e.is_nan() || e < 0.0 {
            return Err(GeoError::InvalidErrorEntry(e));
        }
        if e < threshold {
            hits += 1;
        }
    }
    Ok(hits as f64 / errors.len() as f64)
}

/// Extracts the last syntactically valid JSON object carrying numeric `lat`
/// and `lon` keys from free-form assistant text. Missing `city`/`country`
/// default to empty strings; longitude is wrapped into [-180, 180].
///
/// Chain-of-thought text may contain earlier candidate objects, so the scan
/// prefers the latest parseable one.
pub fn parse_prediction(message_text: &str) -> Result<Prediction, GeoError> {
    for (start, _) in message_text.match_indices('{').collect::<Vec<_>>().into_iter().rev() {
        let tail = &message_text[start..];
        let mut stream = serde_json::Deserializer::from_str(tail).into_iter::<serde_json::Value>();
        let Some(Ok(value)) = stream.next() else {
            continue;
        };
        let Some(obj) = value.as_object() else {
            continue;
        };
        let (Some(lat), Some(lon)) = (
            obj.get("lat").and_then(|v| v.as_f64()),
            obj.get("lon").and_then(|v| v.as_f64()),
        ) else {
            continue;
        };
        let Ok(point) = GeoPoint::new(lat, lon) else {
            continue;
        };
        let field = |key: &str| {
            obj.get(key)
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_string()
        };
        return Ok(Prediction {
            point,
            city: field("city"),
            country: field("country"),
        });
    }
    Err(GeoError::ParseFailure)
}
