//! Live map-provider client. Two HTTPS JSON providers sit behind the same
//! tool surface: provider A (AMAP-style) serves mainland-China coordinates,
//! provider B (Google-Maps-style) serves everywhere else. Requests flow
//! through a shared rate limiter and are audited to a JSON-lines log.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    execute_zoom, format_poi_detail, format_poi_list, MapBackend, MapBackendConfig, MapError,
    Poi, RateLimiter,
};
use crate::clock::Clock;
use crate::geo::GeoPoint;
use crate::images::{ImageData, ImageStore};
use crate::protocol::{LocationArg, ToolResult, ValidatedCall};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provider {
    /// AMAP-style provider used for mainland-China coordinates.
    A,
    /// Google-Maps-style provider used everywhere else.
    B,
}

/// What is known about the request location before dispatch.
#[derive(Debug, Clone)]
pub enum RouteHint {
    Point(GeoPoint),
    RegionTag(String),
}

/// Rough mainland-China boundary used for provider routing. Country-scale
/// accuracy is all routing needs.
pub const DEFAULT_CHINA_BOUNDARY: &[(f64, f64)] = &[
    (18.0, 108.5),
    (21.5, 99.0),
    (27.5, 88.0),
    (35.5, 73.5),
    (45.5, 82.0),
    (49.5, 87.0),
    (53.5, 120.0),
    (48.5, 135.0),
    (40.0, 125.0),
    (30.0, 123.0),
    (21.0, 112.0),
];

/// Ray-cast point-in-polygon over (lat, lon) vertices.
fn point_in_polygon(point: GeoPoint, polygon: &[(f64, f64)]) -> bool {
    let (py, px) = (point.lat(), point.lon());
    let mut inside = false;
    let n = polygon.len();
    for i in 0..n {
        let (y1, x1) = polygon[i];
        let (y2, x2) = polygon[(i + 1) % n];
        if (y1 > py) != (y2 > py) {
            let x_cross = x1 + (py - y1) / (y2 - y1) * (x2 - x1);
            if px < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Coordinates inside the configured provider-A region route to provider A;
/// region tags naming China do the same; everything else gets the default.
pub fn route_provider(config: &MapBackendConfig, hint: Option<&RouteHint>) -> Provider {
    match hint {
        Some(RouteHint::Point(point)) => {
            if point_in_polygon(*point, &config.provider_a_region) {
                Provider::A
            } else {
                Provider::B
            }
        }
        Some(RouteHint::RegionTag(tag)) => match tag.to_lowercase().as_str() {
            "cn" | "china" | "mainland-china" => Provider::A,
            _ => config.default_provider,
        },
        None => config.default_provider,
    }
}

/// Append-only JSON-lines audit log of provider traffic.
pub struct AuditLog {
    writer: Mutex<Box<dyn Write + Send>>,
}

impl AuditLog {
    pub fn to_file(path: &PathBuf) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            writer: Mutex::new(Box::new(file)),
        })
    }

    fn record(&self, entry: &Value) {
        let mut writer = self.writer.lock().unwrap();
        if let Ok(line) = serde_json::to_string(entry) {
            let _ = writeln!(writer, "{line}");
            let _ = writer.flush();
        }
    }
}

pub struct LiveMap {
    config: MapBackendConfig,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    audit: Option<AuditLog>,
    /// Dataset-level fallback when a call carries no location hint.
    region_tag: Option<String>,
}

#[derive(Debug)]
enum LiveError {
    Unreachable(String),
    QuotaExceeded(String),
    NotFound(String),
    Malformed(String),
}

impl LiveError {
    fn message(&self) -> String {
        match self {
            LiveError::Unreachable(m) => format!("provider-unreachable: {m}"),
            LiveError::QuotaExceeded(m) => format!("quota-exceeded: {m}"),
            LiveError::NotFound(m) => format!("not-found: {m}"),
            LiveError::Malformed(m) => format!("malformed provider response: {m}"),
        }
    }
}

impl LiveMap {
    pub fn new(
        config: MapBackendConfig,
        clock: Arc<dyn Clock>,
        audit: Option<AuditLog>,
        region_tag: Option<String>,
    ) -> Result<Self, MapError> {
        config.validate()?;
        let limiter = RateLimiter::new(config.max_requests_per_sec, clock.clone());
        Ok(Self {
            config,
            client: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(30))
                .build()
                .expect("reqwest client"),
            limiter,
            clock,
            audit,
            region_tag,
        })
    }

    fn credential(&self, provider: Provider) -> Result<String, LiveError> {
        let var = match provider {
            Provider::A => &self.config.provider_a_key_env,
            Provider::B => &self.config.provider_b_key_env,
        };
        std::env::var(var)
            .map_err(|_| LiveError::Unreachable(format!("credential variable {var} not set")))
    }

    fn hint_for(&self, center: Option<&LocationArg>) -> Option<RouteHint> {
        match center {
            Some(LocationArg::Point(p)) => Some(RouteHint::Point(*p)),
            _ => self
                .region_tag
                .as_ref()
                .map(|tag| RouteHint::RegionTag(tag.clone())),
        }
    }

    /// One GET with rate limiting, retry on transient failures, and audit
    /// logging. The credential query parameter is redacted from the log.
    fn get(&self, provider: Provider, url: &str, redacted_url: &str) -> Result<Vec<u8>, LiveError> {
        let mut last_err = String::new();
        for attempt in 1..=self.config.retry_max_attempts {
            self.limiter.acquire();
            let started = self.clock.now_ms();
            let outcome = self.client.get(url).send();
            let (status, body, err) = match outcome {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    match resp.bytes() {
                        Ok(bytes) => (status, Some(bytes.to_vec()), None),
                        Err(e) => (status, None, Some(e.to_string())),
                    }
                }
                Err(e) => (0, None, Some(e.to_string())),
            };
            if let Some(audit) = &self.audit {
                audit.record(&serde_json::json!({
                    "ts_ms": started,
                    "provider": provider,
                    "url": redacted_url,
                    "status": status,
                    "latency_ms": self.clock.now_ms() - started,
                    "attempt": attempt,
                }));
            }
            match (status, body, err) {
                (200, Some(bytes), _) => return Ok(bytes),
                (429, ..) => return Err(LiveError::QuotaExceeded("HTTP 429".into())),
                (s, _, e) if s >= 500 || s == 0 => {
                    last_err = e.unwrap_or_else(|| format!("HTTP {s}"));
                    self.clock
                        .sleep_ms(self.config.retry_backoff_ms * attempt as u64);
                }
                (s, _, e) => {
                    return Err(LiveError::Malformed(
                        e.unwrap_or_else(|| format!("HTTP {s}")),
                    ))
                }
            }
        }
        Err(LiveError::Unreachable(last_err))
    }

    fn get_json(
        &self,
        provider: Provider,
        url: &str,
        redacted_url: &str,
    ) -> Result<Value, LiveError> {
        let bytes = self.get(provider, url, redacted_url)?;
        serde_json::from_slice(&bytes).map_err(|e| LiveError::Malformed(e.to_string()))
    }

    fn search(&self, keyword: &str, center: Option<&LocationArg>) -> Result<Vec<Poi>, LiveError> {
        let provider = route_provider(&self.config, self.hint_for(center).as_ref());
        let key = self.credential(provider)?;
        let point = match center {
            Some(LocationArg::Point(p)) => Some(*p),
            _ => None,
        };
        match provider {
            Provider::A => {
                let mut url = format!(
                    "{}/v3/place/text?keywords={}&offset=10",
                    self.config.provider_a_base_url,
                    urlencode(keyword)
                );
                if let Some(p) = point {
                    url.push_str(&format!("&location={},{}", p.lon(), p.lat()));
                }
                let redacted = url.clone();
                url.push_str(&format!("&key={key}"));
                let json = self.get_json(provider, &url, &redacted)?;
                parse_provider_a_pois(&json)
            }
            Provider::B => {
                let mut url = format!(
                    "{}/maps/api/place/textsearch/json?query={}",
                    self.config.provider_b_base_url,
                    urlencode(keyword)
                );
                if let Some(p) = point {
                    url.push_str(&format!("&location={},{}&radius=5000", p.lat(), p.lon()));
                }
                let redacted = url.clone();
                url.push_str(&format!("&key={key}"));
                let json = self.get_json(provider, &url, &redacted)?;
                parse_provider_b_pois(&json)
            }
        }
    }

    fn tips(&self, query: &str) -> Result<Vec<Poi>, LiveError> {
        let provider = route_provider(&self.config, self.hint_for(None).as_ref());
        let key = self.credential(provider)?;
        match provider {
            Provider::A => {
                let url_base = format!(
                    "{}/v3/assistant/inputtips?keywords={}",
                    self.config.provider_a_base_url,
                    urlencode(query)
                );
                let json = self.get_json(
                    provider,
                    &format!("{url_base}&key={key}"),
                    &url_base,
                )?;
                let tips = json
                    .get("tips")
                    .and_then(|v| v.as_array())
                    .cloned()
                    .unwrap_or_default();
                Ok(tips
                    .iter()
                    .filter_map(|t| {
                        let loc = t.get("location")?.as_str()?;
                        let (lon, lat) = loc.split_once(',')?;
                        Some(Poi {
                            id: text_field(t, "id"),
                            name: text_field(t, "name"),
                            address: text_field(t, "address"),
                            category: String::new(),
                            lat: lat.parse().ok()?,
                            lon: lon.parse().ok()?,
                            extra: BTreeMap::new(),
                        })
                    })
                    .take(8)
                    .collect())
            }
            Provider::B => {
                let url_base = format!(
                    "{}/maps/api/place/autocomplete/json?input={}",
                    self.config.provider_b_base_url,
                    urlencode(query)
                );
                let json = self.get_json(
                    provider,
                    &format!("{url_base}&key={key}"),
                    &url_base,
                )?;
                let predictions = json
                    .get("predictions")
                    .and_then(|v| v.as_array())
                    .cloned()
                    .unwrap_or_default();
                Ok(predictions
                    .iter()
                    .filter_map(|p| {
                        Some(Poi {
                            id: text_field(p, "place_id"),
                            name: text_field(p, "description"),
                            address: String::new(),
                            category: String::new(),
                            lat: 0.0,
                            lon: 0.0,
                            extra: BTreeMap::new(),
                        })
                    })
                    .take(8)
                    .collect())
            }
        }
    }

    fn detail(&self, poi_id: &str) -> Result<Poi, LiveError> {
        // Provider-A ids are numeric-ish AMAP ids ("B0FF..."); provider-B ids
        // are opaque place ids. Route by id shape, defaulting to B.
        let provider = if poi_id.starts_with('B') && poi_id.len() <= 12 {
            Provider::A
        } else {
            self.config.default_provider
        };
        let key = self.credential(provider)?;
        match provider {
            Provider::A => {
                let url_base = format!(
                    "{}/v3/place/detail?id={}",
                    self.config.provider_a_base_url,
                    urlencode(poi_id)
                );
                let json = self.get_json(provider, &format!("{url_base}&key={key}"), &url_base)?;
                parse_provider_a_pois(&json)?
                    .into_iter()
                    .next()
                    .ok_or_else(|| LiveError::NotFound(format!("no POI with id \"{poi_id}\"")))
            }
            Provider::B => {
                let url_base = format!(
                    "{}/maps/api/place/details/json?place_id={}",
                    self.config.provider_b_base_url,
                    urlencode(poi_id)
                );
                let json = self.get_json(provider, &format!("{url_base}&key={key}"), &url_base)?;
                let result = json
                    .get("result")
                    .ok_or_else(|| LiveError::NotFound(format!("no POI with id \"{poi_id}\"")))?;
                parse_provider_b_poi(result)
                    .ok_or_else(|| LiveError::Malformed("bad detail payload".into()))
            }
        }
    }

    fn map_image(
        &self,
        center: GeoPoint,
        zoom: i64,
        satellite: bool,
    ) -> Result<ImageData, LiveError> {
        let provider = route_provider(&self.config, Some(&RouteHint::Point(center)));
        let key = self.credential(provider)?;
        let (url_base, provider) = match provider {
            Provider::A => (
                format!(
                    "{}/v3/staticmap?location={},{}&zoom={}&size=512*512",
                    self.config.provider_a_base_url,
                    center.lon(),
                    center.lat(),
                    zoom
                ),
                Provider::A,
            ),
            Provider::B => {
                let maptype = if satellite { "&maptype=satellite" } else { "" };
                (
                    format!(
                        "{}/maps/api/staticmap?center={},{}&zoom={}&size=512x512{}",
                        self.config.provider_b_base_url,
                        center.lat(),
                        center.lon(),
                        zoom,
                        maptype
                    ),
                    Provider::B,
                )
            }
        };
        let bytes = self.get(provider, &format!("{url_base}&key={key}"), &url_base)?;
        ImageData::from_bytes(bytes).map_err(|e| LiveError::Malformed(e.to_string()))
    }

    fn resolve_center(&self, arg: Option<LocationArg>) -> Result<GeoPoint, LiveError> {
        match arg {
            Some(LocationArg::Point(p)) => Ok(p),
            Some(LocationArg::Place(name)) => {
                let hits = self.search(&name, None)?;
                hits.first()
                    .map(|p| p.location())
                    .ok_or_else(|| LiveError::NotFound(format!("cannot resolve place \"{name}\"")))
            }
            None => Err(LiveError::Malformed("missing center".into())),
        }
    }
}

impl MapBackend for LiveMap {
    fn execute(&self, call: &ValidatedCall, images: &mut ImageStore) -> ToolResult {
        let id = call.call_id().to_string();
        match call.tool_name() {
            "image_zoom_tool" => execute_zoom(call, images),
            "poi_keyword_search" => {
                let keyword = call.text("keyword").unwrap_or_default();
                let center_arg = call.location("center");
                match self.search(keyword, center_arg.as_ref()) {
                    Ok(pois) => {
                        let center = match center_arg {
                            Some(LocationArg::Point(p)) => Some(p),
                            _ => None,
                        };
                        let header = format!("POI results for \"{keyword}\" ({}):", pois.len());
                        ToolResult::text(id, format_poi_list(&header, &pois, center))
                    }
                    Err(e) => ToolResult::error(id, e.message()),
                }
            }
            "poi_input_tips" => {
                let query = call.text("query").unwrap_or_default();
                match self.tips(query) {
                    Ok(pois) => {
                        let header = format!("Suggestions for \"{query}\" ({}):", pois.len());
                        ToolResult::text(id, format_poi_list(&header, &pois, None))
                    }
                    Err(e) => ToolResult::error(id, e.message()),
                }
            }
            "poi_detail_query" => {
                let poi_id = call.text("poi_id").unwrap_or_default();
                match self.detail(poi_id) {
                    Ok(poi) => ToolResult::text(id, format_poi_detail(&poi)),
                    Err(e) => ToolResult::error(id, e.message()),
                }
            }
            "static_map_query" | "satellite_map_query" => {
                let satellite = call.tool_name() == "satellite_map_query";
                let zoom = call.integer("zoom").unwrap_or(16);
                match self
                    .resolve_center(call.location("center"))
                    .and_then(|center| self.map_image(center, zoom, satellite))
                {
                    Ok(image) => {
                        let handle = images.register(image);
                        ToolResult::image(id, handle)
                    }
                    Err(e) => ToolResult::error(id, e.message()),
                }
            }
            other => ToolResult::error(id, format!("unknown tool: {other}")),
        }
    }
}

fn text_field(value: &Value, key: &str) -> String {
    value
        .get(key)
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string()
}

fn parse_provider_a_pois(json: &Value) -> Result<Vec<Poi>, LiveError> {
    let pois = json
        .get("pois")
        .and_then(|v| v.as_array())
        .ok_or_else(|| LiveError::Malformed("no pois array".into()))?;
    Ok(pois
        .iter()
        .filter_map(|p| {
            let loc = p.get("location")?.as_str()?;
            let (lon, lat) = loc.split_once(',')?;
            let mut extra = BTreeMap::new();
            for key in ["tel", "business_area", "cityname"] {
                let v = text_field(p, key);
                if !v.is_empty() {
                    extra.insert(key.to_string(), v);
                }
            }
            Some(Poi {
                id: text_field(p, "id"),
                name: text_field(p, "name"),
                address: text_field(p, "address"),
                category: text_field(p, "type"),
                lat: lat.parse().ok()?,
                lon: lon.parse().ok()?,
                extra,
            })
        })
        .collect())
}

fn parse_provider_b_poi(p: &Value) -> Option<Poi> {
    let location = p.get("geometry")?.get("location")?;
    let mut extra = BTreeMap::new();
    for key in ["formatted_phone_number", "website", "rating"] {
        if let Some(v) = p.get(key) {
            extra.insert(key.to_string(), v.to_string().trim_matches('"').to_string());
        }
    }
    Some(Poi {
        id: text_field(p, "place_id"),
        name: text_field(p, "name"),
        address: text_field(p, "formatted_address"),
        category: p
            .get("types")
            .and_then(|t| t.as_array())
            .and_then(|a| a.first())
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string(),
        lat: location.get("lat")?.as_f64()?,
        lon: location.get("lng")?.as_f64()?,
        extra,
    })
}

fn parse_provider_b_pois(json: &Value) -> Result<Vec<Poi>, LiveError> {
    let results = json
        .get("results")
        .and_then(|v| v.as_array())
        .ok_or_else(|| LiveError::Malformed("no results array".into()))?;
    Ok(results.iter().filter_map(parse_provider_b_poi).collect())
}

fn urlencode(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for byte in text.bytes() {
        match byte {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                out.push(byte as char)
            }
            _ => out.push_str(&format!("%{byte:02X}")),
        }
    }
    out
}
