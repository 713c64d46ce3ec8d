//! Drone-style CSV adapter: one tracks file (recordingId, trackId, frame,
//! x, y, heading, width, length) plus one meta file (recordingId, trackId,
//! class, frameRate, locationId, optional split). Comma-separated, header
//! row required, '.' decimal separator, UTF-8. Headings are degrees in the
//! file and converted to radians on ingest; x/y are meters.

use super::{IngestError, ProvenanceReport, RawDataset};
use crate::scene::{AgentSize, AgentState, AgentTrack, AgentType, Scene, SceneSet};
use std::collections::BTreeMap;
use std::path::Path;

pub const TRACKS_FILE: &str = "tracks.csv";
pub const META_FILE: &str = "meta.csv";

#[derive(Debug, Clone)]
pub struct TrackRow {
    pub recording_id: String,
    pub track_id: String,
    pub frame: i64,
    pub x: f64,
    pub y: f64,
    pub heading_deg: Option<f64>,
    pub width: Option<f64>,
    pub length: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MetaRow {
    pub recording_id: String,
    pub track_id: String,
    pub class: String,
    pub frame_rate: f64,
    pub location_id: String,
    pub split: Option<String>,
}

#[derive(Debug, Clone)]
pub struct DroneCsvPayload {
    pub tracks: Vec<TrackRow>,
    pub meta: Vec<MetaRow>,
    pub columns: Vec<String>,
}

struct Header {
    index: BTreeMap<String, usize>,
}

impl Header {
    fn parse(record: &csv::StringRecord, required: &[&str], file: &str) -> Result<Self, IngestError> {
        let mut index = BTreeMap::new();
        for (i, name) in record.iter().enumerate() {
            index.insert(name.trim().to_string(), i);
        }
        for col in required {
            if !index.contains_key(*col) {
                return Err(IngestError::SchemaMismatch(format!(
                    "{file}: required column '{col}' absent"
                )));
            }
        }
        Ok(Self { index })
    }

    fn get<'r>(&self, record: &'r csv::StringRecord, col: &str) -> Option<&'r str> {
        self.index.get(col).and_then(|&i| record.get(i)).map(str::trim)
    }
}

fn parse_f64(raw: &str, col: &str, line: u64) -> Result<f64, IngestError> {
    raw.parse::<f64>().map_err(|_| IngestError::Parse {
        line,
        reason: format!("column '{col}': '{raw}' is not a number"),
    })
}

fn parse_opt_f64(raw: Option<&str>, col: &str, line: u64) -> Result<Option<f64>, IngestError> {
    match raw {
        None | Some("") => Ok(None),
        Some(v) => parse_f64(v, col, line).map(Some),
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, IngestError> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))
}

/// Parses the tracks and meta files under `dir`.
pub fn load(dir: &Path) -> Result<DroneCsvPayload, IngestError> {
    let tracks_path = dir.join(TRACKS_FILE);
    let meta_path = dir.join(META_FILE);

    let mut tracks_reader = open_reader(&tracks_path)?;
    let mut records = tracks_reader.records();
    let header_record = match records.next() {
        Some(Ok(r)) if !r.is_empty() && r.iter().any(|f| !f.is_empty()) => r,
        _ => return Err(IngestError::Parse { line: 1, reason: "no header".into() }),
    };
    let header = Header::parse(
        &header_record,
        &["recordingId", "trackId", "frame", "x", "y"],
        TRACKS_FILE,
    )?;
    let mut columns: Vec<String> = header_record.iter().map(str::to_string).collect();

    let mut tracks = Vec::new();
    for (i, record) in records.enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| IngestError::Parse { line, reason: e.to_string() })?;
        let get = |col: &str| header.get(&record, col);
        let req = |col: &str| {
            get(col).filter(|v| !v.is_empty()).ok_or_else(|| IngestError::Parse {
                line,
                reason: format!("column '{col}' missing"),
            })
        };
        tracks.push(TrackRow {
            recording_id: req("recordingId")?.to_string(),
            track_id: req("trackId")?.to_string(),
            frame: req("frame")?.parse::<i64>().map_err(|_| IngestError::Parse {
                line,
                reason: format!("column 'frame': '{}' is not an integer", get("frame").unwrap_or("")),
            })?,
            x: parse_f64(req("x")?, "x", line)?,
            y: parse_f64(req("y")?, "y", line)?,
            heading_deg: parse_opt_f64(get("heading"), "heading", line)?,
            width: parse_opt_f64(get("width"), "width", line)?,
            length: parse_opt_f64(get("length"), "length", line)?,
        });
    }

    let mut meta_reader = open_reader(&meta_path)?;
    let mut meta_records = meta_reader.records();
    let meta_header_record = match meta_records.next() {
        Some(Ok(r)) if !r.is_empty() && r.iter().any(|f| !f.is_empty()) => r,
        _ => return Err(IngestError::Parse { line: 1, reason: "no header".into() }),
    };
    let meta_header = Header::parse(
        &meta_header_record,
        &["recordingId", "trackId", "class", "frameRate", "locationId"],
        META_FILE,
    )?;
    columns.extend(meta_header_record.iter().map(str::to_string));

    let mut meta = Vec::new();
    for (i, record) in meta_records.enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| IngestError::Parse { line, reason: e.to_string() })?;
        let get = |col: &str| meta_header.get(&record, col);
        let req = |col: &str| {
            get(col).filter(|v| !v.is_empty()).ok_or_else(|| IngestError::Parse {
                line,
                reason: format!("column '{col}' missing"),
            })
        };
        meta.push(MetaRow {
            recording_id: req("recordingId")?.to_string(),
            track_id: req("trackId")?.to_string(),
            class: req("class")?.to_string(),
            frame_rate: parse_f64(req("frameRate")?, "frameRate", line)?,
            location_id: req("locationId")?.to_string(),
            split: get("split").filter(|v| !v.is_empty()).map(str::to_string),
        });
    }

    Ok(DroneCsvPayload { tracks, meta, columns })
}

fn agent_type_for(class: &str) -> Option<AgentType> {
    match class.to_ascii_lowercase().as_str() {
        "car" | "vehicle" | "truck" | "truck_bus" | "bus" | "van" => Some(AgentType::Vehicle),
        "pedestrian" => Some(AgentType::Pedestrian),
        "bicycle" => Some(AgentType::Bicycle),
        "motorcycle" => Some(AgentType::Motorcycle),
        _ => None,
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Converts parsed rows into the internal format: one scene per recording,
/// one agent per (recording, track). Frames become seconds via the
/// recording frame rate; rows that cannot be used are counted in the
/// provenance report rather than silently dropped.
pub fn transform(
    raw: &RawDataset,
    payload: &DroneCsvPayload,
) -> Result<(SceneSet, ProvenanceReport), IngestError> {
    let mut report = ProvenanceReport {
        adapter_id: raw.adapter_id.clone(),
        source_path: raw.source_path.clone(),
        rows_read: payload.tracks.len(),
        states_emitted: 0,
        columns: payload.columns.clone(),
        drops: vec![],
    };

    // meta index per (recording, track); duplicates are a schema violation
    let mut meta_by_key: BTreeMap<(String, String), &MetaRow> = BTreeMap::new();
    for row in &payload.meta {
        let key = (row.recording_id.clone(), row.track_id.clone());
        if meta_by_key.insert(key.clone(), row).is_some() {
            return Err(IngestError::SchemaMismatch(format!(
                "duplicate agent id {} in recording {}",
                key.1, key.0
            )));
        }
    }

    let mut frame_rate: Option<f64> = None;
    for row in &payload.meta {
        match frame_rate {
            None => frame_rate = Some(row.frame_rate),
            Some(fr) if (fr - row.frame_rate).abs() > 1e-9 => {
                return Err(IngestError::SchemaMismatch(format!(
                    "inconsistent frameRate: {fr} vs {}",
                    row.frame_rate
                )))
            }
            _ => {}
        }
    }
    let frame_rate =
        frame_rate.ok_or_else(|| IngestError::SchemaMismatch("meta file has no rows".into()))?;
    if !(frame_rate > 0.0) {
        return Err(IngestError::SchemaMismatch(format!("frameRate {frame_rate} must be > 0")));
    }
    let native_dt = 1.0 / frame_rate;

    // group states by recording then track, in frame order
    let mut grouped: BTreeMap<String, BTreeMap<String, Vec<&TrackRow>>> = BTreeMap::new();
    for row in &payload.tracks {
        grouped
            .entry(row.recording_id.clone())
            .or_default()
            .entry(row.track_id.clone())
            .or_default()
            .push(row);
    }

    let dataset_id = sanitize(
        Path::new(&raw.source_path)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("drone"),
    );

    let mut locations = Vec::new();
    let mut scenes = Vec::new();
    for (recording_id, mut tracks) in grouped {
        let mut agents = Vec::new();
        let mut location_id = None;
        let mut scene_labels = BTreeMap::new();
        for (track_id, rows) in tracks.iter_mut() {
            rows.sort_by_key(|r| r.frame);
            let key = (recording_id.clone(), track_id.clone());
            let Some(meta) = meta_by_key.get(&key) else {
                report.add_drop("no_meta_row", rows.len());
                continue;
            };
            let Some(agent_type) = agent_type_for(&meta.class) else {
                report.add_drop("unknown_agent_class", rows.len());
                continue;
            };
            location_id.get_or_insert_with(|| meta.location_id.clone());
            if meta.location_id != *location_id.as_ref().unwrap() {
                return Err(IngestError::SchemaMismatch(format!(
                    "recording {recording_id}: inconsistent locationId"
                )));
            }
            if let Some(split) = &meta.split {
                scene_labels.insert("predefined".to_string(), split.clone());
            }

            // keep the longest contiguous frame run; the rest is dropped to
            // provenance (validation demands uniform spacing)
            let mut best: (usize, usize) = (0, 0);
            let mut run_start = 0usize;
            for i in 1..=rows.len() {
                let broken = i == rows.len() || rows[i].frame != rows[i - 1].frame + 1;
                if broken {
                    if i - run_start > best.1 - best.0 {
                        best = (run_start, i);
                    }
                    run_start = i;
                }
            }
            let kept = &rows[best.0..best.1];
            report.add_drop("non_contiguous_track", rows.len() - kept.len());
            if kept.len() < 2 {
                report.add_drop("track_too_short", kept.len());
                continue;
            }

            let size = match kept.iter().find_map(|r| r.width.zip(r.length)) {
                Some((w, l)) if w > 0.0 && l > 0.0 => Some(AgentSize { length: l, width: w }),
                _ => None,
            };
            let states: Vec<AgentState> = kept
                .iter()
                .map(|r| AgentState {
                    t: r.frame as f64 / frame_rate,
                    x: r.x,
                    y: r.y,
                    heading: r.heading_deg.map(f64::to_radians),
                    speed: None,
                })
                .collect();
            report.states_emitted += states.len();
            agents.push(AgentTrack {
                agent_id: sanitize(track_id),
                agent_type,
                size,
                states,
            });
        }
        if agents.is_empty() {
            continue;
        }
        let location_id = location_id.unwrap_or_else(|| "unknown".into());
        if !locations.contains(&location_id) {
            locations.push(location_id.clone());
        }
        let predict_agent_ids = agents.iter().map(|a| a.agent_id.clone()).collect();
        scenes.push(Scene {
            scene_id: format!("rec_{}", sanitize(&recording_id)),
            dataset_id: dataset_id.clone(),
            location_id,
            native_dt,
            agents,
            map: None,
            predict_agent_ids,
            gap_conflict: None,
            anchor_t: None,
            labels: scene_labels,
        });
    }

    Ok((
        SceneSet { dataset_id, locations, native_dt, scenes },
        report,
    ))
}
