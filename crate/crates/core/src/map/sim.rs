//! Deterministic offline map backend over a POI fixture. This is the primary
//! test surface: every operation is a pure function of (fixture, call), so
//! replayed episodes observe identical results.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    execute_zoom, format_poi_detail, format_poi_list, load_poi_fixture, raster, MapBackend,
    MapError, MapKind, Poi,
};
use crate::geo::{geodesic_distance, GeoPoint};
use crate::images::ImageStore;
use crate::protocol::{LocationArg, ToolResult, ValidatedCall};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub max_search_results: usize,
    pub max_tips: usize,
    pub map_width: u32,
    pub map_height: u32,
    pub default_zoom: i64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            max_search_results: 10,
            max_tips: 8,
            map_width: 512,
            map_height: 512,
            default_zoom: 16,
        }
    }
}

pub struct SimulatedMap {
    pois: Vec<Poi>,
    config: SimConfig,
}

impl SimulatedMap {
    pub fn new(pois: Vec<Poi>, config: SimConfig) -> Self {
        Self { pois, config }
    }

    pub fn from_fixture(path: &Path, config: SimConfig) -> Result<Self, MapError> {
        Ok(Self::new(load_poi_fixture(path)?, config))
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    /// Case-insensitive substring search over name, address, and category.
    /// Ranked by exact name match, then earliest (field-weighted) match
    /// position, then distance to `center` when given, then id.
    pub fn search(&self, keyword: &str, center: Option<GeoPoint>) -> Vec<Poi> {
        self.ranked_matches(keyword, center, self.config.max_search_results)
    }

    /// Search suggestions for partial input; same ranking, tighter cap.
    pub fn tips(&self, query: &str) -> Vec<Poi> {
        self.ranked_matches(query, None, self.config.max_tips)
    }

    pub fn detail(&self, poi_id: &str) -> Option<&Poi> {
        self.pois.iter().find(|p| p.id == poi_id)
    }

    /// Resolves place text to coordinates by best name match.
    pub fn resolve_place(&self, place: &str) -> Option<GeoPoint> {
        self.ranked_matches(place, None, 1)
            .first()
            .map(|p| p.location())
    }

    fn ranked_matches(&self, keyword: &str, center: Option<GeoPoint>, cap: usize) -> Vec<Poi> {
        let needle = keyword.trim().to_lowercase();
        if needle.is_empty() {
            return Vec::new();
        }
        let mut matches: Vec<(&Poi, bool, usize, f64)> = self
            .pois
            .iter()
            .filter_map(|poi| {
                let pos = match_position(poi, &needle)?;
                let exact = poi.name.to_lowercase() == needle;
                let dist = center
                    .map(|c| geodesic_distance(c, poi.location()))
                    .unwrap_or(0.0);
                Some((poi, exact, pos, dist))
            })
            .collect();
        matches.sort_by(|a, b| {
            (b.1 as u8)
                .cmp(&(a.1 as u8))
                .then(a.2.cmp(&b.2))
                .then(a.3.partial_cmp(&b.3).unwrap_or(std::cmp::Ordering::Equal))
                .then(a.0.id.cmp(&b.0.id))
        });
        matches.into_iter().take(cap).map(|(p, ..)| p.clone()).collect()
    }
}

/// Earliest match position, weighted so name hits rank ahead of address hits
/// ahead of category hits. `None` when the keyword matches nowhere.
fn match_position(poi: &Poi, needle: &str) -> Option<usize> {
    const FIELD_STRIDE: usize = 10_000;
    let fields = [&poi.name, &poi.address, &poi.category];
    fields
        .iter()
        .enumerate()
        .filter_map(|(i, field)| {
            field
                .to_lowercase()
                .find(needle)
                .map(|pos| i * FIELD_STRIDE + pos)
        })
        .min()
}

/// True when `keyword` matches the POI at all; the search soundness and
/// completeness checks are phrased against this predicate.
pub fn poi_matches(poi: &Poi, keyword: &str) -> bool {
    match_position(poi, &keyword.trim().to_lowercase()).is_some()
}

impl SimulatedMap {
    fn resolve_center(&self, arg: Option<LocationArg>) -> Result<Option<GeoPoint>, String> {
        match arg {
            None => Ok(None),
            Some(LocationArg::Point(p)) => Ok(Some(p)),
            Some(LocationArg::Place(name)) => match self.resolve_place(&name) {
                Some(p) => Ok(Some(p)),
                None => Err(format!("not-found: cannot resolve place \"{name}\"")),
            },
        }
    }

    fn render(&self, call: &ValidatedCall, kind: MapKind, images: &mut ImageStore) -> ToolResult {
        let center = match self.resolve_center(call.location("center")) {
            Ok(Some(p)) => p,
            Ok(None) => return ToolResult::error(call.call_id(), "missing center"),
            Err(msg) => return ToolResult::error(call.call_id(), msg),
        };
        let zoom = call.integer("zoom").unwrap_or(self.config.default_zoom);
        match raster::render_simulated_map(
            &self.pois,
            center,
            zoom,
            kind,
            self.config.map_width,
            self.config.map_height,
        ) {
            Ok(map) => {
                let handle = images.register(map.data);
                ToolResult::image(call.call_id(), handle)
            }
            Err(e) => ToolResult::error(call.call_id(), e.to_string()),
        }
    }
}

impl MapBackend for SimulatedMap {
    fn execute(&self, call: &ValidatedCall, images: &mut ImageStore) -> ToolResult {
        match call.tool_name() {
            "image_zoom_tool" => execute_zoom(call, images),
            "poi_input_tips" => {
                let query = call.text("query").unwrap_or_default();
                let hits = self.tips(query);
                let header = format!("Suggestions for \"{query}\" ({}):", hits.len());
                ToolResult::text(call.call_id(), format_poi_list(&header, &hits, None))
            }
            "poi_keyword_search" => {
                let keyword = call.text("keyword").unwrap_or_default();
                let center = match self.resolve_center(call.location("center")) {
                    Ok(c) => c,
                    Err(msg) => return ToolResult::error(call.call_id(), msg),
                };
                let hits = self.search(keyword, center);
                let header = format!("POI results for \"{keyword}\" ({}):", hits.len());
                ToolResult::text(call.call_id(), format_poi_list(&header, &hits, center))
            }
            "poi_detail_query" => {
                let id = call.text("poi_id").unwrap_or_default();
                match self.detail(id) {
                    Some(poi) => ToolResult::text(call.call_id(), format_poi_detail(poi)),
                    None => ToolResult::error(
                        call.call_id(),
                        format!("not-found: no POI with id \"{id}\""),
                    ),
                }
            }
            "static_map_query" => self.render(call, MapKind::Static, images),
            "satellite_map_query" => self.render(call, MapKind::Satellite, images),
            other => ToolResult::error(call.call_id(), format!("unknown tool: {other}")),
        }
    }
}
