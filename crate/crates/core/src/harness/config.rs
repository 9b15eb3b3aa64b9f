//! Scene configuration files.
//!
//! The format is line oriented. `#` starts a comment that runs to the end of
//! the line and blank lines are ignored; every other line is either `key = value` or a section header.
//! Keys before the first header describe the whole scene:
//!
//! | key             | value                          |
//! |-----------------|--------------------------------|
//! | `seed`          | unsigned integer               |
//! | `moving`        | `true` / `false`               |
//! | `duration`      | seconds, > 0                   |
//! | `interferers`   | count of sampled interferers   |
//! | `rt60`          | seconds, 0 or in (0, 2]        |
//! | `room`          | `Lx, Ly, Lz` in metres         |
//! | `sound_speed`   | m/s                            |
//! | `mics`          | microphone count, >= 1         |
//! | `radius`        | array radius in metres, >= 0   |
//! | `array_center`  | `x, y, z`                      |
//! | `target_start`  | `x, y, z`                      |
//! | `target_end`    | `x, y, z`                      |
//! | `sir_db`        | dB, applied to every interferer|
//! | `sensor_snr_db` | `lo, hi` in dB, or `none`      |
//! | `free_sir`      | `true` allows SIRs off the grid|
//!
//! Each `[interferer]` section adds one static interferer with the keys
//! `position = x, y, z` and optionally `sir_db`. When any such section is
//! present it replaces the sampled interferers.
//!
//! Everything left unspecified is drawn by [`sample_scene`] from the seed.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::room::{
    azimuth_deg, make_uca, sample_scene, Point, Scene, SceneOptions, CAMERA_HALF_ANGLE,
    DEFAULT_ARRAY_CENTER, DEFAULT_MICS, DEFAULT_RADIUS, SIR_GRID,
};

#[derive(Debug, Clone, Copy)]
struct Entry<'a> {
    line: usize,
    value: &'a str,
}

#[derive(Debug, Default)]
struct Interferer<'a> {
    header: usize,
    position: Option<Entry<'a>>,
    sir_db: Option<Entry<'a>>,
}

const SCENE_KEYS: [&str; 15] = [
    "seed",
    "moving",
    "duration",
    "interferers",
    "rt60",
    "room",
    "sound_speed",
    "mics",
    "radius",
    "array_center",
    "target_start",
    "target_end",
    "sir_db",
    "sensor_snr_db",
    "free_sir",
];

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(e: Entry) -> Result<f64> {
    e.value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| err(e.line, format!("expected a number, found {:?}", e.value)))
}

fn parse_u64(e: Entry) -> Result<u64> {
    e.value
        .parse::<u64>()
        .map_err(|_| err(e.line, format!("expected an unsigned integer, found {:?}", e.value)))
}

fn parse_bool(e: Entry) -> Result<bool> {
    match e.value {
        "true" => Ok(true),
        "false" => Ok(false),
        v => Err(err(e.line, format!("expected true or false, found {v:?}"))),
    }
}

fn parse_list<const N: usize>(e: Entry) -> Result<[f64; N]> {
    let parts: Vec<&str> = e.value.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(err(e.line, format!("expected {N} comma-separated numbers, found {:?}", e.value)));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse_f64(Entry { line: e.line, value: p })?;
    }
    Ok(out)
}

fn check_sir(e: Entry, free: bool) -> Result<f64> {
    let v = parse_f64(e)?;
    if !free && !SIR_GRID.contains(&v) {
        return Err(err(
            e.line,
            format!("sir_db = {v} is not one of {SIR_GRID:?} (set free_sir = true to allow it)"),
        ));
    }
    Ok(v)
}

/// Parses a scene description; `seed` is used unless the text sets one.
pub fn parse_scene_config(text: &str, seed: u64) -> Result<Scene> {
    let mut globals: HashMap<&str, Entry> = HashMap::new();
    let mut interferers: Vec<Interferer> = Vec::new();
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let s = raw.split('#').next().unwrap_or_default().trim();
        if s.is_empty() {
            continue;
        }
        if let Some(name) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            match name.trim() {
                "interferer" => interferers.push(Interferer {
                    header: line,
                    ..Default::default()
                }),
                other => return Err(err(line, format!("unknown section [{other}]"))),
            }
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(line, format!("expected `key = value`, found {s:?}")))?;
        let entry = Entry { line, value };
        let slot = match interferers.last_mut() {
            Some(sec) => match key {
                "position" => &mut sec.position,
                "sir_db" => &mut sec.sir_db,
                _ => return Err(err(line, format!("unknown key {key:?} in [interferer]"))),
            },
            None => {
                if !SCENE_KEYS.contains(&key) {
                    return Err(err(line, format!("unknown key {key:?}")));
                }
                if let Some(prev) = globals.insert(key, entry) {
                    return Err(err(line, format!("{key} already set on line {}", prev.line)));
                }
                continue;
            }
        };
        if slot.replace(entry).is_some() {
            return Err(err(line, format!("{key} set twice in one [interferer] section")));
        }
    }

    let get = |k: &str| globals.get(k).copied();
    let seed = get("seed").map(parse_u64).transpose()?.unwrap_or(seed);
    let moving = get("moving").map(parse_bool).transpose()?.unwrap_or(false);
    let free_sir = get("free_sir").map(parse_bool).transpose()?.unwrap_or(false);
    let mut opts = SceneOptions {
        moving,
        ..SceneOptions::default()
    };
    if let Some(e) = get("duration") {
        opts.duration = parse_f64(e)?;
        if opts.duration <= 0.0 {
            return Err(err(e.line, "duration must be positive"));
        }
    }
    if let Some(e) = get("interferers") {
        if !interferers.is_empty() {
            return Err(err(e.line, "interferers conflicts with [interferer] sections"));
        }
        opts.interferers = parse_u64(e)? as usize;
    }
    if !interferers.is_empty() {
        opts.interferers = interferers.len();
    }

    let mut scene = sample_scene(seed, &opts);
    scene.free_sir = free_sir;

    if let Some(e) = get("rt60") {
        let v = parse_f64(e)?;
        if !(v == 0.0 || (v > 0.0 && v <= 2.0)) {
            return Err(err(e.line, format!("rt60 = {v} must be 0 (anechoic) or in (0, 2] s")));
        }
        scene.room.rt60 = v;
    }
    if let Some(e) = get("room") {
        let dims = parse_list::<3>(e)?;
        if dims.iter().any(|&d| d <= 0.0) {
            return Err(err(e.line, "room dimensions must be positive"));
        }
        scene.room.dims = dims;
    }
    if let Some(e) = get("sound_speed") {
        let v = parse_f64(e)?;
        if v <= 0.0 {
            return Err(err(e.line, "sound_speed must be positive"));
        }
        scene.room.sound_speed = v;
    }

    let array_keys = [get("mics"), get("radius"), get("array_center")];
    if array_keys.iter().any(Option::is_some) {
        let mics = match array_keys[0] {
            Some(e) => match parse_u64(e)? {
                0 => return Err(err(e.line, "mics must be at least 1")),
                m => m as usize,
            },
            None => DEFAULT_MICS,
        };
        let radius = match array_keys[1] {
            Some(e) => parse_f64(e)?,
            None => DEFAULT_RADIUS,
        };
        let center = match array_keys[2] {
            Some(e) => parse_list::<3>(e)?,
            None => DEFAULT_ARRAY_CENTER,
        };
        let line = array_keys.iter().flatten().map(|e| e.line).max().unwrap_or(0);
        scene.array = make_uca(mics, radius, center).map_err(|e| err(line, e.to_string()))?;
        for m in scene.array.mics() {
            if !scene.room.contains(m) {
                return Err(err(line, "array extends outside the room"));
            }
        }
    }

    let center = scene.array.center();
    let target_point = |e: Entry| -> Result<Point> {
        let p = parse_list::<3>(e)?;
        let az = azimuth_deg(&center, &p);
        if az.abs() > CAMERA_HALF_ANGLE + 1e-9 {
            return Err(err(
                e.line,
                format!("target azimuth {az:.2} deg is outside +/-{CAMERA_HALF_ANGLE} deg"),
            ));
        }
        Ok(p)
    };
    if let Some(e) = get("target_start") {
        scene.target.start = target_point(e)?;
        if !moving {
            scene.target.end = scene.target.start;
        }
    }
    if let Some(e) = get("target_end") {
        scene.target.end = target_point(e)?;
    }

    if let Some(e) = get("sir_db") {
        let v = check_sir(e, free_sir)?;
        scene.sir_db.iter_mut().for_each(|s| *s = v);
    }
    for (k, sec) in interferers.iter().enumerate() {
        let pos = sec
            .position
            .ok_or_else(|| err(sec.header, "[interferer] needs a position"))?;
        scene.interferers[k] = parse_list::<3>(pos)?;
        if let Some(e) = sec.sir_db {
            scene.sir_db[k] = check_sir(e, free_sir)?;
        }
    }

    if let Some(e) = get("sensor_snr_db") {
        scene.sensor_snr_db = if e.value == "none" {
            None
        } else {
            let [lo, hi] = parse_list::<2>(e)?;
            if lo > hi {
                return Err(err(e.line, format!("sensor_snr_db range [{lo}, {hi}] is reversed")));
            }
            Some([lo, hi])
        };
    }

    // Remaining failures are geometric; report the key most likely at fault.
    scene.validate().map_err(|e| {
        let line = match &e {
            Error::OutsideRoom { x, y, z } => {
                let p = [*x, *y, *z];
                let hit = |k: &str| get(k).filter(|en| parse_list::<3>(*en).ok() == Some(p));
                hit("target_start")
                    .or_else(|| hit("target_end"))
                    .map(|en| en.line)
                    .or_else(|| {
                        interferers
                            .iter()
                            .filter_map(|s| s.position)
                            .find(|en| parse_list::<3>(*en).ok() == Some(p))
                            .map(|en| en.line)
                    })
                    .or_else(|| get("room").map(|en| en.line))
                    .unwrap_or(last_line)
            }
            _ => last_line,
        };
        err(line, e.to_string())
    })?;
    Ok(scene)
}
