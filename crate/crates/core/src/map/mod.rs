//! The structured map environment: executes validated tool calls against a
//! deterministic simulated backend or live map providers.

mod live;
mod raster;
mod rate_limit;
mod sim;

pub use live::{route_provider, AuditLog, LiveMap, Provider, RouteHint, DEFAULT_CHINA_BOUNDARY};
pub use raster::{poi_in_viewport, render_simulated_map, MapImage, MapKind};
pub use rate_limit::RateLimiter;
pub use sim::{poi_matches, SimConfig, SimulatedMap};

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{geodesic_distance, GeoPoint};
use crate::images::ImageStore;
use crate::protocol::{ToolResult, ValidatedCall};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("failed to read fixture {path}: {source}")]
    FixtureIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("fixture {path} line {line}: {reason}")]
    FixtureSchema {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("duplicate POI id {id} in fixture {path}")]
    DuplicatePoi { path: PathBuf, id: String },
    #[error("zoom {0} outside [3, 18]")]
    ZoomOutOfRange(i64),
    #[error("live mode requires a credential variable name for provider {0:?}")]
    MissingCredentialVar(Provider),
    #[error("rate limit must be positive, got {0}")]
    BadRateLimit(f64),
}

/// A point of interest as surfaced to the policy: id, name, address,
/// category, location, and any extra provider fields (phone, hours, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: String,
    pub name: String,
    pub address: String,
    pub category: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl Poi {
    pub fn location(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon).expect("poi locations are validated on load")
    }
}

/// Loads a JSON-lines POI fixture, one object per line. Rejects duplicate
/// ids and invalid coordinates with the offending line number.
pub fn load_poi_fixture(path: &Path) -> Result<Vec<Poi>, MapError> {
    let file = std::fs::File::open(path).map_err(|source| MapError::FixtureIo {
        path: path.to_path_buf(),
        source,
    })?;
    let mut pois = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (index, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| MapError::FixtureIo {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let poi: Poi = serde_json::from_str(&line).map_err(|e| MapError::FixtureSchema {
            path: path.to_path_buf(),
            line: index + 1,
            reason: e.to_string(),
        })?;
        if let Err(e) = GeoPoint::new(poi.lat, poi.lon) {
            return Err(MapError::FixtureSchema {
                path: path.to_path_buf(),
                line: index + 1,
                reason: e.to_string(),
            });
        }
        if !seen.insert(poi.id.clone()) {
            return Err(MapError::DuplicatePoi {
                path: path.to_path_buf(),
                id: poi.id,
            });
        }
        pois.push(poi);
    }
    Ok(pois)
}

/// Backend selection plus the knobs shared by live providers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapBackendConfig {
    pub mode: BackendMode,
    /// Environment variable names holding provider credentials (live mode).
    pub provider_a_key_env: String,
    pub provider_b_key_env: String,
    /// Base URLs so tests or proxies can redirect providers.
    pub provider_a_base_url: String,
    pub provider_b_base_url: String,
    /// Max requests per second across all live calls.
    pub max_requests_per_sec: f64,
    pub retry_max_attempts: u32,
    pub retry_backoff_ms: u64,
    /// POI fixture for the simulated backend.
    pub fixture_path: Option<PathBuf>,
    /// Closed polygon (lat, lon) routing coordinates to provider A.
    pub provider_a_region: Vec<(f64, f64)>,
    /// Provider used when no location or region hint is available.
    pub default_provider: Provider,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Live,
    Simulated,
}

impl Default for MapBackendConfig {
    fn default() -> Self {
        Self {
            mode: BackendMode::Simulated,
            provider_a_key_env: "MAP_PROVIDER_A_KEY".into(),
            provider_b_key_env: "MAP_PROVIDER_B_KEY".into(),
            provider_a_base_url: "https://restapi.amap.com".into(),
            provider_b_base_url: "https://maps.googleapis.com".into(),
            max_requests_per_sec: 5.0,
            retry_max_attempts: 3,
            retry_backoff_ms: 500,
            fixture_path: None,
            provider_a_region: DEFAULT_CHINA_BOUNDARY.to_vec(),
            default_provider: Provider::B,
        }
    }
}

impl MapBackendConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.max_requests_per_sec <= 0.0 {
            return Err(MapError::BadRateLimit(self.max_requests_per_sec));
        }
        if self.mode == BackendMode::Live {
            if self.provider_a_key_env.is_empty() {
                return Err(MapError::MissingCredentialVar(Provider::A));
            }
            if self.provider_b_key_env.is_empty() {
                return Err(MapError::MissingCredentialVar(Provider::B));
            }
        }
        Ok(())
    }
}

/// A map backend executes validated tool calls, registering any produced
/// images in the episode's store. Implementations must tolerate concurrent
/// calls from parallel episodes.
pub trait MapBackend: Send + Sync {
    fn execute(&self, call: &ValidatedCall, images: &mut ImageStore) -> ToolResult;
}

/// Zoom handling is backend-independent: it only touches the episode store.
pub(crate) fn execute_zoom(call: &ValidatedCall, images: &mut ImageStore) -> ToolResult {
    let bbox = match call.bbox("bbox") {
        Some(b) => b,
        None => return ToolResult::error(call.call_id(), "missing bbox"),
    };
    let handle = call
        .text("image_id")
        .unwrap_or(crate::images::QUERY_IMAGE_HANDLE)
        .to_string();
    let source = match images.get(&handle) {
        Ok(img) => img,
        Err(e) => return ToolResult::error(call.call_id(), format!("not-found: {e}")),
    };
    match source.crop(bbox) {
        Ok(cropped) => {
            let new_handle = images.register(cropped);
            ToolResult::image(call.call_id(), new_handle)
        }
        Err(e) => ToolResult::error(call.call_id(), format!("zoom failed: {e}")),
    }
}

/// Compact numbered POI list as shown to the policy. Distances appear only
/// when a center was supplied.
pub fn format_poi_list(header: &str, pois: &[Poi], center: Option<GeoPoint>) -> String {
    if pois.is_empty() {
        return format!("{header}\nNo matching POIs found.");
    }
    let mut out = String::from(header);
    for (i, poi) in pois.iter().enumerate() {
        out.push_str(&format!(
            "\n{}. {} (id: {}) — {} [{}] @ {},{}",
            i + 1,
            poi.name,
            poi.id,
            poi.address,
            poi.category,
            poi.lat,
            poi.lon
        ));
        if let Some(c) = center {
            out.push_str(&format!(
                " — {}",
                format_distance(geodesic_distance(c, poi.location()))
            ));
        }
    }
    out
}

/// Full detail block for one POI; extra fields sorted by key.
pub fn format_poi_detail(poi: &Poi) -> String {
    let mut out = format!(
        "POI {}\nname: {}\naddress: {}\ncategory: {}\nlocation: {},{}",
        poi.id, poi.name, poi.address, poi.category, poi.lat, poi.lon
    );
    for (key, value) in &poi.extra {
        out.push_str(&format!("\n{key}: {value}"));
    }
    out
}

pub fn format_distance(meters: f64) -> String {
    if meters < 1_000.0 {
        format!("{} m", meters.round() as i64)
    } else {
        format!("{:.1} km", meters / 1_000.0)
    }
}
