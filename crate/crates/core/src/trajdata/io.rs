//! Plain-text formats.
//!
//! Scene records, one block per scene:
//! ```text
//! #scene <scene_id> <frame_rate>
//! <frame>\t<agent_id>\t<ped|veh>\t<x>\t<y>
//! ```
//! Ego poses use the same block header with `<frame>\t<x>\t<y>\t<heading>`
//! lines. Sequence files hold one `#seq` block per window with one line per
//! agent; absent positions are written as `-`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{read_text, write_file};

use super::scene::{AgentKind, AgentTrack, EgoPose, Scene, TrackPoint};
use super::window::SequenceSample;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, what: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {what} `{s}`")))
}

fn header<'a>(path: &Path, line: usize, rest: &'a str, tag: &str) -> Result<(&'a str, f64)> {
    let parts: Vec<&str> = rest.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(parse_err(path, line, format!("expected `#{tag} <id> <rate>`")));
    }
    Ok((parts[0], num(path, line, "frame rate", parts[1])?))
}

pub fn write_scenes(scenes: &[Scene]) -> String {
    let mut out = String::new();
    for s in scenes {
        writeln!(out, "#scene {} {}", s.scene_id(), s.frame_rate()).unwrap();
        let mut rows: Vec<(i64, usize, &TrackPoint)> = Vec::new();
        for (k, t) in s.tracks().iter().enumerate() {
            rows.extend(t.samples().iter().map(|p| (p.frame, k, p)));
        }
        rows.sort_by_key(|r| (r.0, r.1));
        for (_, k, p) in rows {
            let t = &s.tracks()[k];
            writeln!(out, "{}\t{}\t{}\t{}\t{}", p.frame, t.agent_id(), t.kind().tag(), p.x, p.y).unwrap();
        }
    }
    out
}

pub fn parse_scenes(path: &Path, text: &str) -> Result<Vec<Scene>> {
    struct Block {
        id: String,
        rate: f64,
        line: usize,
        agents: BTreeMap<String, (usize, AgentKind, Vec<TrackPoint>)>,
    }
    let finish = |b: Block| -> Result<Scene> {
        let mut agents: Vec<_> = b.agents.into_iter().collect();
        agents.sort_by_key(|(_, (order, _, _))| *order);
        let tracks = agents
            .into_iter()
            .map(|(id, (_, kind, mut pts))| {
                pts.sort_by_key(|p| p.frame);
                AgentTrack::new(id, kind, pts)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| parse_err(path, b.line, e.to_string()))?;
        Scene::new(b.id, b.rate, tracks).map_err(|e| parse_err(path, b.line, e.to_string()))
    };
    let mut scenes = Vec::new();
    let mut current: Option<Block> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#scene") {
            if let Some(b) = current.take() {
                scenes.push(finish(b)?);
            }
            let (id, rate) = header(path, lineno, rest, "scene")?;
            current = Some(Block {
                id: id.to_string(),
                rate,
                line: lineno,
                agents: BTreeMap::new(),
            });
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let block = current
            .as_mut()
            .ok_or_else(|| parse_err(path, lineno, "record before any `#scene` header"))?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(parse_err(path, lineno, format!("expected 5 tab-separated fields, got {}", f.len())));
        }
        let frame: i64 = num(path, lineno, "frame", f[0])?;
        let kind = AgentKind::from_tag(f[2].trim())
            .ok_or_else(|| parse_err(path, lineno, format!("unknown kind `{}`", f[2])))?;
        let x: f64 = num(path, lineno, "x", f[3])?;
        let y: f64 = num(path, lineno, "y", f[4])?;
        if !x.is_finite() || !y.is_finite() {
            return Err(parse_err(path, lineno, "non-finite coordinate"));
        }
        let order = block.agents.len();
        let entry = block
            .agents
            .entry(f[1].to_string())
            .or_insert_with(|| (order, kind, Vec::new()));
        if entry.1 != kind {
            return Err(parse_err(path, lineno, format!("agent {} changes kind", f[1])));
        }
        if entry.2.iter().any(|p| p.frame == frame) {
            return Err(parse_err(path, lineno, format!("duplicate frame {frame} for agent {}", f[1])));
        }
        entry.2.push(TrackPoint::new(frame, x, y));
    }
    if let Some(b) = current {
        scenes.push(finish(b)?);
    }
    Ok(scenes)
}

pub fn save_scene_records(scenes: &[Scene], path: &Path) -> Result<()> {
    write_file(path, write_scenes(scenes).as_bytes())
}

pub fn load_scene_records(path: &Path) -> Result<Vec<Scene>> {
    parse_scenes(path, &read_text(path)?)
}

/// Ego poses keyed by scene id.
pub fn load_poses(path: &Path) -> Result<BTreeMap<String, Vec<EgoPose>>> {
    let text = read_text(path)?;
    let mut out: BTreeMap<String, Vec<EgoPose>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#scene") {
            let id = rest.split_whitespace().next().ok_or_else(|| parse_err(path, lineno, "missing scene id"))?;
            out.entry(id.to_string()).or_default();
            current = Some(id.to_string());
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let id = current
            .as_ref()
            .ok_or_else(|| parse_err(path, lineno, "pose before any `#scene` header"))?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(parse_err(path, lineno, format!("expected 4 tab-separated fields, got {}", f.len())));
        }
        out.get_mut(id).unwrap().push(EgoPose {
            frame: num(path, lineno, "frame", f[0])?,
            x: num(path, lineno, "x", f[1])?,
            y: num(path, lineno, "y", f[2])?,
            heading: num(path, lineno, "heading", f[3])?,
        });
    }
    Ok(out)
}

pub fn save_poses(poses: &BTreeMap<String, Vec<EgoPose>>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (id, list) in poses {
        writeln!(out, "#scene {id} 0").unwrap();
        for p in list {
            writeln!(out, "{}\t{}\t{}\t{}", p.frame, p.x, p.y, p.heading).unwrap();
        }
    }
    write_file(path, out.as_bytes())
}

fn write_row(out: &mut String, tag: &str, id: &str, pts: impl Iterator<Item = ([f64; 2], bool)>) {
    write!(out, "{tag}\t{id}").unwrap();
    for (p, present) in pts {
        if present {
            write!(out, "\t{},{}", p[0], p[1]).unwrap();
        } else {
            out.push_str("\t-");
        }
    }
    out.push('\n');
}

pub fn write_sequences(samples: &[SequenceSample]) -> String {
    let mut out = String::new();
    for s in samples {
        writeln!(
            out,
            "#seq {} {} {} {} {} {}",
            s.scene_id,
            s.start_frame,
            s.t_obs(),
            s.t_pred(),
            s.n_ped(),
            s.n_veh()
        )
        .unwrap();
        for i in 0..s.n_ped() {
            let pts = s.ped_obs[i].iter().chain(&s.ped_future[i]).copied();
            write_row(&mut out, "ped", &s.ped_ids[i], pts.zip(s.ped_mask[i].iter().copied()));
        }
        for j in 0..s.n_veh() {
            let pts = s.veh_obs[j].iter().copied();
            write_row(&mut out, "veh", &s.veh_ids[j], pts.zip(s.veh_mask[j].iter().copied()));
        }
    }
    out
}

pub fn parse_sequences(path: &Path, text: &str) -> Result<Vec<SequenceSample>> {
    let mut out: Vec<SequenceSample> = Vec::new();
    let mut dims = (0usize, 0usize, 0usize, 0usize);
    let mut header_line = 0;
    let check = |s: &SequenceSample, dims: (usize, usize, usize, usize), line: usize| {
        if s.n_ped() != dims.2 || s.n_veh() != dims.3 {
            return Err(parse_err(path, line, "agent count does not match header"));
        }
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#seq") {
            if let Some(prev) = out.last() {
                check(prev, dims, header_line)?;
            }
            let p: Vec<&str> = rest.split_whitespace().collect();
            if p.len() != 6 {
                return Err(parse_err(path, lineno, "expected `#seq <scene> <start> <t_obs> <t_pred> <n_ped> <n_veh>`"));
            }
            dims = (
                num(path, lineno, "t_obs", p[2])?,
                num(path, lineno, "t_pred", p[3])?,
                num(path, lineno, "pedestrian count", p[4])?,
                num(path, lineno, "vehicle count", p[5])?,
            );
            header_line = lineno;
            out.push(SequenceSample {
                scene_id: p[0].to_string(),
                start_frame: num(path, lineno, "start frame", p[1])?,
                ped_ids: Vec::new(),
                ped_obs: Vec::new(),
                ped_future: Vec::new(),
                ped_mask: Vec::new(),
                veh_ids: Vec::new(),
                veh_obs: Vec::new(),
                veh_mask: Vec::new(),
            });
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let s = out
            .last_mut()
            .ok_or_else(|| parse_err(path, lineno, "row before any `#seq` header"))?;
        let f: Vec<&str> = line.split('\t').collect();
        let expected = match f[0] {
            "ped" => dims.0 + dims.1,
            "veh" => dims.0,
            other => return Err(parse_err(path, lineno, format!("unknown row kind `{other}`"))),
        };
        if f.len() != expected + 2 {
            return Err(parse_err(path, lineno, format!("expected {expected} positions, got {}", f.len().saturating_sub(2))));
        }
        let mut pts = Vec::with_capacity(expected);
        let mut mask = Vec::with_capacity(expected);
        for cell in &f[2..] {
            if *cell == "-" {
                pts.push([0.0, 0.0]);
                mask.push(false);
                continue;
            }
            let (x, y) = cell
                .split_once(',')
                .ok_or_else(|| parse_err(path, lineno, format!("bad position `{cell}`")))?;
            pts.push([num(path, lineno, "x", x)?, num(path, lineno, "y", y)?]);
            mask.push(true);
        }
        if f[0] == "ped" {
            s.ped_ids.push(f[1].to_string());
            s.ped_future.push(pts.split_off(dims.0));
            s.ped_obs.push(pts);
            s.ped_mask.push(mask);
        } else {
            s.veh_ids.push(f[1].to_string());
            s.veh_obs.push(pts);
            s.veh_mask.push(mask);
        }
    }
    if let Some(prev) = out.last() {
        check(prev, dims, header_line)?;
    }
    Ok(out)
}

pub fn save_sequences(samples: &[SequenceSample], path: &Path) -> Result<()> {
    write_file(path, write_sequences(samples).as_bytes())
}

pub fn load_sequences(path: &Path) -> Result<Vec<SequenceSample>> {
    parse_sequences(path, &read_text(path)?)
}

/// Seeded shuffle of `0..n` split into `(train, val)` with
/// `round(n · train_fraction)` training items, each half sorted.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((n as f64 * train_fraction).round() as usize).min(n);
    let mut val = idx.split_off(k);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

/// Every file path in `path` (recursively, sorted) or `path` itself.
pub fn list_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let rd = std::fs::read_dir(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        for entry in rd {
            let p = entry.map_err(|e| Error::io(dir.display().to_string(), e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::{synth_corpus, window_sequences, SynthConfig};

    #[test]
    fn scene_round_trip() {
        let scenes = synth_corpus(&SynthConfig { seed: 3, ..Default::default() }, 3).unwrap();
        let back = parse_scenes(Path::new("mem"), &write_scenes(&scenes)).unwrap();
        assert_eq!(back, scenes);
    }

    #[test]
    fn empty_file_gives_no_scenes() {
        assert!(parse_scenes(Path::new("mem"), "").unwrap().is_empty());
    }

    #[test]
    fn vehicle_only_scene_loads_but_yields_no_windows() {
        let mut text = String::from("#scene car 2.5\n");
        for f in 0..25 {
            text.push_str(&format!("{f}\tv\tveh\t{}\t0\n", f as f64));
        }
        let scenes = parse_scenes(Path::new("mem"), &text).unwrap();
        assert_eq!(scenes[0].count(AgentKind::Pedestrian), 0);
        assert!(window_sequences(&scenes[0], 8, 12, 1).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "#scene a 10\n0\tp\tped\t1.0\t2.0\n1\tp\tped\tabc\t2.0\n";
        match parse_scenes(Path::new("f.txt"), text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_scenes(Path::new("f.txt"), "0\tp\tped\t1\t2\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn sequence_round_trip() {
        let scenes = synth_corpus(&SynthConfig { seed: 1, ..Default::default() }, 2).unwrap();
        let mut seqs = Vec::new();
        for s in &scenes {
            let r = crate::trajdata::resample(s, 4).unwrap();
            seqs.extend(window_sequences(&r, 8, 12, 1).unwrap());
        }
        assert!(!seqs.is_empty());
        let back = parse_sequences(Path::new("mem"), &write_sequences(&seqs)).unwrap();
        assert_eq!(back, seqs);
    }

    #[test]
    fn split_is_seeded_partition() {
        let (a, b) = split_indices(20, 0.9, 5);
        assert_eq!((a.len(), b.len()), (18, 2));
        assert_eq!(split_indices(20, 0.9, 5), (a.clone(), b.clone()));
        let mut all: Vec<_> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }
}
