use std::collections::HashMap;

use crate::error::{Error, Result};

use super::scene::{EgoPose, Scene, TrackPoint};

fn pose_map<'a>(scene: &Scene, poses: &'a [EgoPose]) -> Result<HashMap<i64, &'a EgoPose>> {
    let mut map = HashMap::with_capacity(poses.len());
    for p in poses {
        if map.insert(p.frame, p).is_some() {
            return Err(Error::invalid(format!(
                "scene {}: two poses for frame {}",
                scene.scene_id(),
                p.frame
            )));
        }
    }
    for t in scene.tracks() {
        for s in t.samples() {
            if !map.contains_key(&s.frame) {
                return Err(Error::MissingPose {
                    scene: scene.scene_id().to_string(),
                    frame: s.frame,
                });
            }
        }
    }
    Ok(map)
}

/// Maps ego-local coordinates to the global frame:
/// `p ↦ translation + R(heading)·p`.
pub fn to_global_frame(scene: &Scene, poses: &[EgoPose]) -> Result<Scene> {
    let map = pose_map(scene, poses)?;
    let tracks = scene
        .tracks()
        .iter()
        .map(|t| {
            t.map_points(|p| {
                let pose = map[&p.frame];
                let (s, c) = pose.heading.sin_cos();
                Some(TrackPoint::new(
                    p.frame,
                    pose.x + c * p.x - s * p.y,
                    pose.y + s * p.x + c * p.y,
                ))
            })
        })
        .collect();
    scene.with_tracks(tracks, scene.frame_rate())
}

/// Inverse of [`to_global_frame`].
pub fn to_local_frame(scene: &Scene, poses: &[EgoPose]) -> Result<Scene> {
    let map = pose_map(scene, poses)?;
    let tracks = scene
        .tracks()
        .iter()
        .map(|t| {
            t.map_points(|p| {
                let pose = map[&p.frame];
                let (s, c) = pose.heading.sin_cos();
                let (dx, dy) = (p.x - pose.x, p.y - pose.y);
                Some(TrackPoint::new(p.frame, c * dx + s * dy, -s * dx + c * dy))
            })
        })
        .collect();
    scene.with_tracks(tracks, scene.frame_rate())
}

/// Drops samples farther than `radius` meters from the sensor origin of an
/// ego-local scene.
pub fn filter_range(scene: &Scene, radius: f64) -> Result<Scene> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("range radius must be positive, got {radius}")));
    }
    let tracks = scene
        .tracks()
        .iter()
        .map(|t| t.map_points(|p| (p.x.hypot(p.y) <= radius).then_some(*p)))
        .collect();
    scene.with_tracks(tracks, scene.frame_rate())
}

/// Keeps every `keep_every`-th grid frame counted from the first frame and
/// divides the frame rate accordingly.
pub fn resample(scene: &Scene, keep_every: usize) -> Result<Scene> {
    if keep_every < 1 {
        return Err(Error::invalid("keep_every must be at least 1"));
    }
    if keep_every == 1 {
        return Ok(scene.clone());
    }
    let Some((first, _)) = scene.frame_range() else {
        return scene.with_tracks(Vec::new(), scene.frame_rate() / keep_every as f64);
    };
    let stride = scene.frame_step() * keep_every as i64;
    let tracks = scene
        .tracks()
        .iter()
        .map(|t| t.map_points(|p| ((p.frame - first).rem_euclid(stride) == 0).then_some(*p)))
        .collect();
    scene.with_tracks(tracks, scene.frame_rate() / keep_every as f64)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::trajdata::scene::{AgentKind, AgentTrack};

    fn one_point_scene(x: f64, y: f64) -> Scene {
        let t = AgentTrack::new("p", AgentKind::Pedestrian, vec![TrackPoint::new(0, x, y)]).unwrap();
        Scene::new("s", 10.0, vec![t]).unwrap()
    }

    fn first_point(s: &Scene) -> (f64, f64) {
        let p = s.tracks()[0].samples()[0];
        (p.x, p.y)
    }

    #[test]
    fn identity_rotation_translates() {
        let pose = EgoPose { frame: 0, x: 5.0, y: 3.0, heading: 0.0 };
        let g = to_global_frame(&one_point_scene(0.0, 0.0), &[pose]).unwrap();
        assert_eq!(first_point(&g), (5.0, 3.0));
    }

    #[test]
    fn quarter_turn() {
        let pose = EgoPose { frame: 0, x: 0.0, y: 0.0, heading: std::f64::consts::FRAC_PI_2 };
        let (x, y) = first_point(&to_global_frame(&one_point_scene(1.0, 0.0), &[pose]).unwrap());
        assert!(x.abs() < 1e-15 && (y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn missing_pose_is_reported() {
        let err = to_global_frame(&one_point_scene(1.0, 0.0), &[]).unwrap_err();
        assert!(matches!(err, Error::MissingPose { frame: 0, .. }));
    }

    #[test]
    fn global_local_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<TrackPoint> = (0..50)
            .map(|f| TrackPoint::new(f, rng.gen_range(-80.0..80.0), rng.gen_range(-80.0..80.0)))
            .collect();
        let poses: Vec<EgoPose> = (0..50)
            .map(|f| EgoPose {
                frame: f,
                x: rng.gen_range(-1e3..1e3),
                y: rng.gen_range(-1e3..1e3),
                heading: rng.gen_range(-3.2..3.2),
            })
            .collect();
        let t = AgentTrack::new("v", AgentKind::Vehicle, pts.clone()).unwrap();
        let global = Scene::new("s", 10.0, vec![t]).unwrap();
        let back = to_global_frame(&to_local_frame(&global, &poses).unwrap(), &poses).unwrap();
        for (a, b) in pts.iter().zip(back.tracks()[0].samples()) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }

    fn dense_scene(frames: i64) -> Scene {
        let pts = (0..frames).map(|f| TrackPoint::new(f, f as f64, 0.0)).collect();
        let t = AgentTrack::new("p", AgentKind::Pedestrian, pts).unwrap();
        Scene::new("s", 10.0, vec![t]).unwrap()
    }

    #[test]
    fn resample_selects_every_fourth_frame() {
        let r = resample(&dense_scene(20), 4).unwrap();
        let frames: Vec<i64> = r.tracks()[0].samples().iter().map(|p| p.frame).collect();
        assert_eq!(frames, vec![0, 4, 8, 12, 16]);
        assert_eq!(r.frame_rate(), 2.5);
        assert_eq!(r.frame_step(), 4);
    }

    #[test]
    fn resample_identity_and_invalid() {
        let s = dense_scene(7);
        assert_eq!(resample(&s, 1).unwrap(), s);
        assert!(matches!(resample(&s, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn range_filter_drops_far_points() {
        let pts = vec![TrackPoint::new(0, 10.0, 0.0), TrackPoint::new(1, 80.0, 0.0)];
        let t = AgentTrack::new("p", AgentKind::Pedestrian, pts).unwrap();
        let s = Scene::new("s", 10.0, vec![t]).unwrap();
        let f = filter_range(&s, 75.0).unwrap();
        assert_eq!(f.tracks()[0].samples().len(), 1);
    }
}
