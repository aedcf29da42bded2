use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    Pedestrian,
    Vehicle,
}

impl AgentKind {
    /// Tag used in the scene record format.
    pub fn tag(self) -> &'static str {
        match self {
            AgentKind::Pedestrian => "ped",
            AgentKind::Vehicle => "veh",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "ped" => Some(AgentKind::Pedestrian),
            "veh" => Some(AgentKind::Vehicle),
            _ => None,
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
}

impl TrackPoint {
    pub fn new(frame: i64, x: f64, y: f64) -> Self {
        TrackPoint { frame, x, y }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Positions of one agent; frame indices strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    agent_id: String,
    kind: AgentKind,
    samples: Vec<TrackPoint>,
}

impl AgentTrack {
    pub fn new(agent_id: impl Into<String>, kind: AgentKind, samples: Vec<TrackPoint>) -> Result<Self> {
        let agent_id = agent_id.into();
        if agent_id.is_empty() || agent_id.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("bad agent id {agent_id:?}")));
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].frame <= w[0].frame) {
            return Err(Error::invalid(format!(
                "track {agent_id}: frame {} does not follow {}",
                w[1].frame, w[0].frame
            )));
        }
        if samples.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::invalid(format!("track {agent_id}: non-finite position")));
        }
        Ok(AgentTrack {
            agent_id,
            kind,
            samples,
        })
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn samples(&self) -> &[TrackPoint] {
        &self.samples
    }

    pub fn at(&self, frame: i64) -> Option<&TrackPoint> {
        self.samples
            .binary_search_by_key(&frame, |p| p.frame)
            .ok()
            .map(|i| &self.samples[i])
    }

    pub(crate) fn map_points(&self, mut f: impl FnMut(&TrackPoint) -> Option<TrackPoint>) -> Self {
        AgentTrack {
            agent_id: self.agent_id.clone(),
            kind: self.kind,
            samples: self.samples.iter().filter_map(&mut f).collect(),
        }
    }
}

/// Pedestrian and vehicle tracks sharing one planar frame and frame clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    scene_id: String,
    frame_rate: f64,
    tracks: Vec<AgentTrack>,
    frame_range: Option<(i64, i64)>,
    frame_step: i64,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Scene {
    /// Validates and assembles a scene. Frame range and frame step (the
    /// spacing of the frame grid, 1 for raw data) are derived from the
    /// samples.
    pub fn new(scene_id: impl Into<String>, frame_rate: f64, tracks: Vec<AgentTrack>) -> Result<Self> {
        let scene_id = scene_id.into();
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "scene {scene_id}: frame rate must be positive, got {frame_rate}"
            )));
        }
        if scene_id.is_empty() || scene_id.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("bad scene id {scene_id:?}")));
        }
        let mut ids = std::collections::HashSet::new();
        for t in &tracks {
            if !ids.insert(t.agent_id()) {
                return Err(Error::invalid(format!(
                    "scene {scene_id}: duplicate agent id {}",
                    t.agent_id()
                )));
            }
        }
        let frames = tracks.iter().flat_map(|t| t.samples.iter().map(|p| p.frame));
        let frame_range = frames.clone().fold(None, |acc: Option<(i64, i64)>, f| {
            Some(acc.map_or((f, f), |(lo, hi)| (lo.min(f), hi.max(f))))
        });
        let frame_step = match frame_range {
            Some((lo, _)) => frames.fold(0, |g, f| gcd(g, f - lo)).max(1),
            None => 1,
        };
        Ok(Scene {
            scene_id,
            frame_rate,
            tracks,
            frame_range,
            frame_step,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn tracks(&self) -> &[AgentTrack] {
        &self.tracks
    }

    /// `[first, last]`, or `None` for a scene without samples.
    pub fn frame_range(&self) -> Option<(i64, i64)> {
        self.frame_range
    }

    pub fn frame_step(&self) -> i64 {
        self.frame_step
    }

    /// Number of grid frames between first and last inclusive.
    pub fn len_frames(&self) -> usize {
        self.frame_range
            .map_or(0, |(lo, hi)| ((hi - lo) / self.frame_step) as usize + 1)
    }

    pub fn count(&self, kind: AgentKind) -> usize {
        self.tracks.iter().filter(|t| t.kind == kind).count()
    }

    pub fn with_tracks(&self, tracks: Vec<AgentTrack>, frame_rate: f64) -> Result<Self> {
        Scene::new(self.scene_id.clone(), frame_rate, tracks)
    }

    /// Shifts every position by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let tracks = self
            .tracks
            .iter()
            .map(|t| t.map_points(|p| Some(TrackPoint::new(p.frame, p.x + dx, p.y + dy))))
            .collect();
        Scene {
            tracks,
            ..self.clone()
        }
    }
}

/// Ego-vehicle pose of one frame: local point `p` maps to
/// `translation + R(heading)·p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoPose {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}
