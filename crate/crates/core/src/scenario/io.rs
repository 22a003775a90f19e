//! Text interchange format for scenarios.
//!
//! The document is JSON with a fixed key order. Floats are printed with nine
//! significant digits so that writing is byte-deterministic and parse/write
//! round trips within 1e-8 relative.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde_json::{Map, Value};

use super::{Lane, LaneMap, LaneType, LightState, Scenario, TrackState, TrafficLight, VehicleTrack};
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Number of object keys that are not part of the schema.
    pub unknown_fields: usize,
}

pub fn parse_scenario(bytes: &[u8]) -> Result<Scenario> {
    let (scenario, report) = parse_scenario_with_report(bytes)?;
    if report.unknown_fields > 0 {
        log::warn!("ignored {} unknown field(s) in scenario", report.unknown_fields);
    }
    Ok(scenario)
}

pub fn parse_scenario_with_report(bytes: &[u8]) -> Result<(Scenario, ParseReport)> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Schema(format!("not UTF-8: {e}")))?;
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Schema(format!("malformed document: {e}")))?;
    let mut report = ParseReport::default();
    let root = as_object(&root, "document")?;
    count_unknown(root, &["dt", "ego_id", "map", "tracks"], &mut report);

    let dt = number(root, "dt", "document")?;
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::Value(format!("dt must be positive and finite, got {dt}")));
    }
    let ego_id = match field(root, "ego_id", "document")? {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        _ => return Err(Error::Schema("`ego_id` must be a string or null".into())),
    };

    let map_obj = as_object(field(root, "map", "document")?, "map")?;
    count_unknown(map_obj, &["lanes", "traffic_lights"], &mut report);
    let mut lanes = Vec::new();
    for (i, lv) in array(map_obj, "lanes", "map")?.iter().enumerate() {
        lanes.push(parse_lane(lv, i, &mut report)?);
    }
    let mut traffic_lights = Vec::new();
    for tv in array(map_obj, "traffic_lights", "map")? {
        let ctx = "traffic light";
        let obj = as_object(tv, ctx)?;
        count_unknown(obj, &["lane_id", "states"], &mut report);
        let lane_id = string(obj, "lane_id", ctx)?;
        let states = array(obj, "states", ctx)?
            .iter()
            .map(|s| {
                s.as_str()
                    .ok_or_else(|| Error::Schema("traffic light state must be a string".into()))
                    .and_then(str::parse::<LightState>)
            })
            .collect::<Result<Vec<_>>>()?;
        traffic_lights.push(TrafficLight { lane_id, states });
    }

    let mut tracks = Vec::new();
    for tv in array(root, "tracks", "document")? {
        let obj = as_object(tv, "track")?;
        count_unknown(obj, &["id", "states"], &mut report);
        let id = string(obj, "id", "track")?;
        let states = array(obj, "states", "track")?
            .iter()
            .map(|sv| parse_state(sv, &id, &mut report))
            .collect::<Result<Vec<_>>>()?;
        tracks.push(VehicleTrack { id, states });
    }

    let scenario = Scenario {
        dt,
        ego_id,
        map: Arc::new(LaneMap {
            lanes,
            traffic_lights,
        }),
        tracks,
    };
    scenario.validate()?;
    Ok((scenario, report))
}

fn parse_lane(v: &Value, index: usize, report: &mut ParseReport) -> Result<Lane> {
    let ctx = "lane";
    let obj = as_object(v, ctx)?;
    count_unknown(obj, &["id", "type", "polyline", "successors", "left", "right"], report);
    let id = string(obj, "id", ctx)?;
    let lane_type: LaneType = string(obj, "type", ctx)?.parse()?;
    let polyline = array(obj, "polyline", ctx)?
        .iter()
        .map(|p| {
            let pair = p
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| Error::Schema(format!("lane #{index} polyline point must be [x, y]")))?;
            let x = pair[0].as_f64().ok_or_else(|| Error::Schema("polyline x must be a number".into()))?;
            let y = pair[1].as_f64().ok_or_else(|| Error::Schema("polyline y must be a number".into()))?;
            Ok(Vec2::new(x, y))
        })
        .collect::<Result<Vec<_>>>()?;
    let successors = array(obj, "successors", ctx)?
        .iter()
        .map(|s| {
            s.as_str()
                .map(str::to_owned)
                .ok_or_else(|| Error::Schema("successor ids must be strings".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Lane {
        id,
        lane_type,
        polyline,
        successors,
        left: optional_string(obj, "left", ctx)?,
        right: optional_string(obj, "right", ctx)?,
    })
}

fn parse_state(v: &Value, track: &str, report: &mut ParseReport) -> Result<TrackState> {
    let ctx = "track state";
    let obj = as_object(v, ctx)?;
    count_unknown(obj, &["x", "y", "heading", "speed", "length", "width", "valid"], report);
    let valid = field(obj, "valid", ctx)?
        .as_bool()
        .ok_or_else(|| Error::Schema(format!("track `{track}`: `valid` must be a boolean")))?;
    Ok(TrackState {
        x: number(obj, "x", ctx)?,
        y: number(obj, "y", ctx)?,
        heading: wrap_angle(number(obj, "heading", ctx)?),
        speed: number(obj, "speed", ctx)?,
        length: number(obj, "length", ctx)?,
        width: number(obj, "width", ctx)?,
        valid,
    })
}

fn count_unknown(obj: &Map<String, Value>, known: &[&str], report: &mut ParseReport) {
    report.unknown_fields += obj.keys().filter(|k| !known.contains(&k.as_str())).count();
}

fn as_object<'a>(v: &'a Value, ctx: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::Schema(format!("{ctx} must be an object")))
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, ctx: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::Schema(format!("{ctx} is missing required field `{key}`")))
}

fn number(obj: &Map<String, Value>, key: &str, ctx: &str) -> Result<f64> {
    field(obj, key, ctx)?
        .as_f64()
        .ok_or_else(|| Error::Schema(format!("{ctx} field `{key}` must be a number")))
}

fn string(obj: &Map<String, Value>, key: &str, ctx: &str) -> Result<String> {
    field(obj, key, ctx)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::Schema(format!("{ctx} field `{key}` must be a string")))
}

fn optional_string(obj: &Map<String, Value>, key: &str, ctx: &str) -> Result<Option<String>> {
    match field(obj, key, ctx)? {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s.clone())),
        _ => Err(Error::Schema(format!("{ctx} field `{key}` must be a string or null"))),
    }
}

fn array<'a>(obj: &'a Map<String, Value>, key: &str, ctx: &str) -> Result<&'a Vec<Value>> {
    field(obj, key, ctx)?
        .as_array()
        .ok_or_else(|| Error::Schema(format!("{ctx} field `{key}` must be an array")))
}

/// Formats a float like C's `%.9g`.
pub(crate) fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_owned()))
    }
}

fn trim_zeros(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

fn json_str(out: &mut String, s: &str) {
    out.push_str(&Value::String(s.to_owned()).to_string());
}

fn json_opt_str(out: &mut String, s: Option<&str>) {
    match s {
        Some(s) => json_str(out, s),
        None => out.push_str("null"),
    }
}

/// Canonical serialization; identical scenarios give identical bytes.
pub fn write_scenario(s: &Scenario) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"dt\": {},", fmt_float(s.dt));
    out.push_str("  \"ego_id\": ");
    json_opt_str(&mut out, s.ego_id.as_deref());
    out.push_str(",\n  \"map\": {\n    \"lanes\": [");
    for (i, lane) in s.map.lanes.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        out.push_str("      {\"id\": ");
        json_str(&mut out, &lane.id);
        out.push_str(", \"type\": ");
        json_str(&mut out, lane.lane_type.as_str());
        out.push_str(", \"polyline\": [");
        for (j, p) in lane.polyline.iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "[{}, {}]", fmt_float(p.x), fmt_float(p.y));
        }
        out.push_str("], \"successors\": [");
        for (j, succ) in lane.successors.iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            json_str(&mut out, succ);
        }
        out.push_str("], \"left\": ");
        json_opt_str(&mut out, lane.left.as_deref());
        out.push_str(", \"right\": ");
        json_opt_str(&mut out, lane.right.as_deref());
        out.push('}');
    }
    out.push_str(if s.map.lanes.is_empty() { "],\n" } else { "\n    ],\n" });
    out.push_str("    \"traffic_lights\": [");
    for (i, tl) in s.map.traffic_lights.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        out.push_str("      {\"lane_id\": ");
        json_str(&mut out, &tl.lane_id);
        out.push_str(", \"states\": [");
        for (j, st) in tl.states.iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            json_str(&mut out, st.as_str());
        }
        out.push_str("]}");
    }
    out.push_str(if s.map.traffic_lights.is_empty() { "]\n" } else { "\n    ]\n" });
    out.push_str("  },\n  \"tracks\": [");
    for (i, track) in s.tracks.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        out.push_str("    {\"id\": ");
        json_str(&mut out, &track.id);
        out.push_str(", \"states\": [");
        for (j, st) in track.states.iter().enumerate() {
            out.push_str(if j == 0 { "\n" } else { ",\n" });
            let _ = write!(
                out,
                "      {{\"x\": {}, \"y\": {}, \"heading\": {}, \"speed\": {}, \"length\": {}, \"width\": {}, \"valid\": {}}}",
                fmt_float(st.x),
                fmt_float(st.y),
                fmt_float(st.heading),
                fmt_float(st.speed),
                fmt_float(st.length),
                fmt_float(st.width),
                st.valid
            );
        }
        out.push_str(if track.states.is_empty() { "]}" } else { "\n    ]}" });
    }
    out.push_str(if s.tracks.is_empty() { "]\n}\n" } else { "\n  ]\n}\n" });
    out.into_bytes()
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&bytes)
}

pub fn write_scenario_file(path: &Path, s: &Scenario) -> Result<()> {
    std::fs::write(path, write_scenario(s)).map_err(|e| Error::io(path, e))
}
