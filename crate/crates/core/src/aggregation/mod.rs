//! Street-segment aggregation of geotagged detection counts.
//!
//! Segment polylines are densified to sample points at most `spacing` metres
//! apart, projected to a local plane (equirectangular about the centroid of
//! all segment vertices) and stored in a 2-d tree. A record is assigned to
//! the segment owning its nearest sample point; equidistant candidates
//! resolve to the smallest segment id.

mod kdtree;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, FixedOffset, NaiveDateTime, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use kdtree::{KdTree, Neighbor, TaggedPoint};

use crate::error::{Error, Result};

pub type SegmentId = u64;

/// Mean Earth radius in metres.
const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Default sample spacing along segments, metres.
pub const DEFAULT_SPACING_M: f64 = 5.0;
/// Default maximum record-to-segment distance, metres.
pub const DEFAULT_MAX_DISTANCE_M: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub record_id: String,
    pub timestamp: DateTime<Utc>,
    pub lon: f64,
    pub lat: f64,
    pub count: u32,
}

fn check_lon_lat(lon: f64, lat: f64) -> std::result::Result<(), String> {
    if !(-180.0..=180.0).contains(&lon) {
        return Err(format!("longitude {lon} outside [-180, 180]"));
    }
    if !(-90.0..=90.0).contains(&lat) {
        return Err(format!("latitude {lat} outside [-90, 90]"));
    }
    Ok(())
}

/// Parses RFC 3339 timestamps; timestamps without an offset are taken as UTC.
pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(format!("invalid timestamp {s:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// First invalid row aborts the load.
    Strict,
    /// Invalid rows are collected in [`LoadedRecords::rejected`].
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedRecords {
    pub records: Vec<DetectionRecord>,
    pub rejected: Vec<RejectedRow>,
}

/// Reads `record_id,timestamp_iso8601,lon,lat,count`.
pub fn load_records<R: Read>(input: R, mode: LoadMode) -> Result<LoadedRecords> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut out = LoadedRecords::default();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        match parse_record(&row) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => match mode {
                LoadMode::Strict => return Err(Error::parse(line, reason)),
                LoadMode::Lenient => out.rejected.push(RejectedRow { line, reason }),
            },
        }
    }
    Ok(out)
}

fn parse_record(row: &csv::StringRecord) -> std::result::Result<DetectionRecord, String> {
    if row.len() != 5 {
        return Err(format!("expected 5 fields, found {}", row.len()));
    }
    let num = |i: usize, what: &str| -> std::result::Result<f64, String> {
        row[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("invalid {what} {:?}", &row[i]))
    };
    let timestamp = parse_timestamp(&row[1])?;
    let lon = num(2, "longitude")?;
    let lat = num(3, "latitude")?;
    check_lon_lat(lon, lat)?;
    let count = row[4]
        .parse::<u32>()
        .map_err(|_| format!("invalid count {:?}", &row[4]))?;
    Ok(DetectionRecord {
        record_id: row[0].to_string(),
        timestamp,
        lon,
        lat,
        count,
    })
}

pub fn write_records<W: Write>(records: &[DetectionRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["record_id", "timestamp_iso8601", "lon", "lat", "count"])?;
    for r in records {
        w.write_record([
            r.record_id.clone(),
            r.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            r.lon.to_string(),
            r.lat.to_string(),
            r.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: SegmentId,
    /// `(lon, lat)` vertices.
    pub polyline: Vec<(f64, f64)>,
}

impl Segment {
    pub fn new(id: SegmentId, polyline: Vec<(f64, f64)>) -> Result<Self> {
        if polyline.len() < 2 {
            return Err(Error::Domain(format!("segment {id} needs at least two points")));
        }
        for w in polyline.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Domain(format!("segment {id} repeats point {:?}", w[0])));
            }
        }
        for &(lon, lat) in &polyline {
            check_lon_lat(lon, lat).map_err(Error::Domain)?;
        }
        Ok(Segment { id, polyline })
    }
}

fn segment_id_of(v: &Value) -> Option<SegmentId> {
    match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Reads a GeoJSON FeatureCollection of LineStrings carrying a `segment_id`
/// property. MultiLineStrings contribute one polyline per part, all sharing
/// the feature's id.
pub fn read_segments_geojson<R: Read>(input: R) -> Result<Vec<Segment>> {
    let doc: Value = serde_json::from_reader(input)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(0, "expected a FeatureCollection"))?;
    let mut segments = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let bad = |msg: &str| Error::Domain(format!("feature {i}: {msg}"));
        let id = f
            .get("properties")
            .and_then(|p| p.get("segment_id"))
            .and_then(segment_id_of)
            .ok_or_else(|| bad("missing integer `segment_id` property"))?;
        let geom = f.get("geometry").ok_or_else(|| bad("missing geometry"))?;
        let coords = geom.get("coordinates").ok_or_else(|| bad("missing coordinates"))?;
        let parts: Vec<&Value> = match geom.get("type").and_then(Value::as_str) {
            Some("LineString") => vec![coords],
            Some("MultiLineString") => coords
                .as_array()
                .ok_or_else(|| bad("malformed coordinates"))?
                .iter()
                .collect(),
            _ => return Err(bad("geometry must be a LineString")),
        };
        for part in parts {
            let line = part
                .as_array()
                .ok_or_else(|| bad("malformed coordinates"))?
                .iter()
                .map(|pt| match pt.as_array().map(Vec::as_slice) {
                    Some([lon, lat, ..]) => lon.as_f64().zip(lat.as_f64()),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("malformed coordinates"))?;
            segments.push(Segment::new(id, line)?);
        }
    }
    Ok(segments)
}

/// Reads `segment_id,lon1,lat1,lon2,lat2,...` rows (header optional).
pub fn read_segments_csv<R: Read>(input: R) -> Result<Vec<Segment>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut segments = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let Ok(id) = row[0].parse::<SegmentId>() else {
            if segments.is_empty() && line == 1 {
                continue; // header
            }
            return Err(Error::parse(line, format!("invalid segment id {:?}", &row[0])));
        };
        if row.len() < 5 || (row.len() - 1) % 2 != 0 {
            return Err(Error::parse(line, "expected segment_id followed by lon,lat pairs"));
        }
        let vals = row
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(line, e.to_string()))?;
        let poly = vals.chunks(2).map(|c| (c[0], c[1])).collect();
        segments.push(Segment::new(id, poly).map_err(|e| Error::parse(line, e.to_string()))?);
    }
    Ok(segments)
}

/// Equirectangular projection about a reference point, in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
    cos_lat0: f64,
}

impl Projection {
    pub fn new(lon0: f64, lat0: f64) -> Self {
        Projection {
            lon0,
            lat0,
            cos_lat0: lat0.to_radians().cos(),
        }
    }

    pub fn to_plane(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            EARTH_RADIUS_M * (lon - self.lon0).to_radians() * self.cos_lat0,
            EARTH_RADIUS_M * (lat - self.lat0).to_radians(),
        )
    }

    pub fn to_lon_lat(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.lon0 + (x / (EARTH_RADIUS_M * self.cos_lat0)).to_degrees(),
            self.lat0 + (y / EARTH_RADIUS_M).to_degrees(),
        )
    }
}

/// Planar sample points of one polyline, at most `spacing` apart, vertices
/// included.
pub fn densify(planar: &[(f64, f64)], spacing: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if let Some(&first) = planar.first() {
        out.push(first);
    }
    for w in planar.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let pieces = ((len / spacing).ceil() as usize).max(1);
        for k in 1..=pieces {
            let t = k as f64 / pieces as f64;
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SegmentIndex {
    projection: Projection,
    tree: KdTree,
    spacing: f64,
}

/// Nearest segment of a location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub segment_id: SegmentId,
    /// Planar distance to the nearest sample point, metres.
    pub distance: f64,
}

impl SegmentIndex {
    pub fn build(segments: &[Segment], spacing: f64) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Domain("segment index needs at least one segment".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Domain(format!("spacing {spacing} must be > 0")));
        }
        let (mut slon, mut slat, mut n) = (0.0, 0.0, 0usize);
        for s in segments {
            for &(lon, lat) in &s.polyline {
                slon += lon;
                slat += lat;
                n += 1;
            }
        }
        let projection = Projection::new(slon / n as f64, slat / n as f64);
        let mut points = Vec::new();
        for s in segments {
            let planar: Vec<(f64, f64)> = s
                .polyline
                .iter()
                .map(|&(lon, lat)| projection.to_plane(lon, lat))
                .collect();
            points.extend(densify(&planar, spacing).into_iter().map(|(x, y)| TaggedPoint {
                x,
                y,
                tag: s.id,
            }));
        }
        Ok(SegmentIndex {
            projection,
            tree: KdTree::build(points),
            spacing,
        })
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn sample_points(&self) -> &[TaggedPoint] {
        self.tree.points()
    }

    pub fn nearest(&self, lon: f64, lat: f64) -> Assignment {
        let (x, y) = self.projection.to_plane(lon, lat);
        let hit = self.tree.nearest(x, y).expect("index holds at least two points");
        Assignment {
            segment_id: hit.point.tag,
            distance: hit.dist2.sqrt(),
        }
    }

    pub fn assign(&self, rec: &DetectionRecord) -> SegmentId {
        self.nearest(rec.lon, rec.lat).segment_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub segment_id: SegmentId,
    pub n_records: u64,
    pub mean_count: f64,
    pub sum_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregation {
    /// Per-segment statistics ordered by segment id.
    pub stats: Vec<SegmentStats>,
    /// Ids of records farther than the maximum distance from every segment.
    pub dropped: Vec<String>,
}

/// Groups records by nearest segment and averages their counts. Records more
/// than `max_distance` metres from every sample point are dropped.
pub fn aggregate(records: &[DetectionRecord], idx: &SegmentIndex, max_distance: f64) -> Aggregation {
    let mut groups: BTreeMap<SegmentId, (u64, u64)> = BTreeMap::new();
    let mut dropped = Vec::new();
    for rec in records {
        let a = idx.nearest(rec.lon, rec.lat);
        if a.distance > max_distance {
            dropped.push(rec.record_id.clone());
            continue;
        }
        let g = groups.entry(a.segment_id).or_default();
        g.0 += 1;
        g.1 += rec.count as u64;
    }
    let stats = groups
        .into_iter()
        .map(|(segment_id, (n, sum))| SegmentStats {
            segment_id,
            n_records: n,
            mean_count: sum as f64 / n as f64,
            sum_count: sum,
        })
        .collect();
    Aggregation { stats, dropped }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TemporalHistograms {
    pub by_hour: [u64; 24],
    /// Monday = 0.
    pub by_weekday: [u64; 7],
}

/// Record counts by hour of day and day of week, in the time zone `offset`.
pub fn temporal_histograms(records: &[DetectionRecord], offset: FixedOffset) -> TemporalHistograms {
    let mut h = TemporalHistograms::default();
    for r in records {
        let local = r.timestamp.with_timezone(&offset);
        h.by_hour[local.hour() as usize] += 1;
        h.by_weekday[local.weekday().num_days_from_monday() as usize] += 1;
    }
    h
}

pub fn write_temporal_csv<W: Write>(hist: &TemporalHistograms, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit", "index", "records"])?;
    for (i, n) in hist.by_hour.iter().enumerate() {
        w.write_record(["hour", &i.to_string(), &n.to_string()])?;
    }
    for (i, n) in hist.by_weekday.iter().enumerate() {
        w.write_record(["weekday", &i.to_string(), &n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// GeoJSON FeatureCollection with one LineString per stats row (one per
/// polyline when a segment id has several).
pub fn heatmap_geojson(stats: &[SegmentStats], segments: &[Segment]) -> Result<Value> {
    let mut features = Vec::new();
    for s in stats {
        let mut found = false;
        for seg in segments.iter().filter(|g| g.id == s.segment_id) {
            found = true;
            let coords: Vec<Value> = seg.polyline.iter().map(|&(lon, lat)| json!([lon, lat])).collect();
            features.push(json!({
                "type": "Feature",
                "geometry": { "type": "LineString", "coordinates": coords },
                "properties": {
                    "segment_id": s.segment_id,
                    "n_records": s.n_records,
                    "mean_count": s.mean_count,
                },
            }));
        }
        if !found {
            return Err(Error::Domain(format!("stats reference unknown segment {}", s.segment_id)));
        }
    }
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}

pub fn write_heatmap_geojson<W: Write>(stats: &[SegmentStats], segments: &[Segment], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &heatmap_geojson(stats, segments)?)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads per-segment statistics back from a heat-map GeoJSON.
pub fn read_heatmap_geojson<R: Read>(input: R) -> Result<Vec<SegmentStats>> {
    let doc: Value = serde_json::from_reader(input)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(0, "expected a FeatureCollection"))?;
    let mut out: Vec<SegmentStats> = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let props = f
            .get("properties")
            .ok_or_else(|| Error::Domain(format!("feature {i}: missing properties")))?;
        let field = |k: &str| props.get(k).ok_or_else(|| Error::Domain(format!("feature {i}: missing {k}")));
        let segment_id = segment_id_of(field("segment_id")?)
            .ok_or_else(|| Error::Domain(format!("feature {i}: bad segment_id")))?;
        if out.last().is_some_and(|s| s.segment_id == segment_id) {
            continue;
        }
        let n_records = field("n_records")?
            .as_u64()
            .ok_or_else(|| Error::Domain(format!("feature {i}: bad n_records")))?;
        let mean_count = field("mean_count")?
            .as_f64()
            .ok_or_else(|| Error::Domain(format!("feature {i}: bad mean_count")))?;
        out.push(SegmentStats {
            segment_id,
            n_records,
            mean_count,
            sum_count: (mean_count * n_records as f64).round() as u64,
        });
    }
    Ok(out)
}

/// Writes `segment_id,n_records,mean_count,sum_count`.
pub fn write_stats_csv<W: Write>(stats: &[SegmentStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in stats {
        w.serialize(s)?;
    }
    if stats.is_empty() {
        w.write_record(["segment_id", "n_records", "mean_count", "sum_count"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stats_csv<R: Read>(input: R) -> Result<Vec<SegmentStats>> {
    let mut rdr = csv::Reader::from_reader(input);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}
