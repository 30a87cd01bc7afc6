//! Per-robot sensing with field-of-view, range and occlusion limits, plus the
//! synthetic appearance encoder and pose-keypoint generator that stand in for
//! a camera pipeline.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Polygon, Vec2};
use crate::rng::{derive_seed, stream, tag};
use crate::world::{ObjectKind, Pose, WorldState};

pub const KEYPOINT_COUNT: usize = 17;
pub const KEYPOINT_DIM: usize = 2 * KEYPOINT_COUNT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionConfig {
    pub fov_deg: f64,
    pub range: f64,
    /// Per-detection miss probability.
    pub p_miss: f64,
    /// Length F of each half of a node feature.
    pub feature_dim: usize,
    /// Observation noise on the local descriptor.
    pub noise_sigma: f64,
    /// Gaussian jitter on normalized keypoint coordinates.
    pub keypoint_jitter: f64,
    /// Amplitude of the position-dependent term of the local descriptor.
    pub position_amplitude: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub camera_height: f64,
    pub encoder_seed: u64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            fov_deg: 90.0,
            range: 10.0,
            p_miss: 0.05,
            feature_dim: 64,
            noise_sigma: 0.01,
            keypoint_jitter: 0.005,
            position_amplitude: 0.25,
            image_width: 640.0,
            image_height: 480.0,
            camera_height: 0.5,
            encoder_seed: 0x5eed_f00d,
        }
    }
}

/// Pinhole camera looking along the robot heading.
#[derive(Clone, Copy, Debug)]
pub struct Camera {
    pub focal: f64,
    pub width: f64,
    pub height: f64,
    pub height_m: f64,
}

impl Camera {
    pub fn new(cfg: &PerceptionConfig) -> Self {
        let half = (cfg.fov_deg.to_radians() / 2.0).tan();
        Camera {
            focal: cfg.image_width / 2.0 / half,
            width: cfg.image_width,
            height: cfg.image_height,
            height_m: cfg.camera_height,
        }
    }

    /// Image coordinates (pixels) of a point at `elevation` metres above the floor.
    pub fn project(&self, robot_frame: Vec2, elevation: f64) -> Vec2 {
        let fwd = robot_frame.x;
        Vec2::new(
            self.width / 2.0 - self.focal * robot_frame.y / fwd,
            self.height / 2.0 + self.focal * (self.height_m - elevation) / fwd,
        )
    }

    /// Lateral offset (metres, robot frame) of an image column at a known depth.
    pub fn lateral_at(&self, u: f64, forward: f64) -> f64 {
        (self.width / 2.0 - u) * forward / self.focal
    }
}

pub fn to_robot_frame(pose: &Pose, p: Vec2) -> Vec2 {
    let rel = p - pose.position;
    let fwd = Vec2::from_angle(pose.heading);
    Vec2::new(rel.dot(fwd), rel.dot(fwd.perp()))
}

pub fn to_world_frame(pose: &Pose, p: Vec2) -> Vec2 {
    let fwd = Vec2::from_angle(pose.heading);
    pose.position + fwd * p.x + fwd.perp() * p.y
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub kind: ObjectKind,
    /// (forward, left) in metres.
    pub robot_frame: Vec2,
    pub bbox_center: Vec2,
    pub bbox_size: Vec2,
    pub robot: usize,
    pub tick: u64,
}

/// True when the target is inside the view cone, in range and not hidden
/// behind an obstacle.
pub fn visible(pose: &Pose, target: Vec2, obstacles: &[Polygon], cfg: &PerceptionConfig) -> bool {
    let local = to_robot_frame(pose, target);
    let dist = local.norm();
    if dist > cfg.range || local.x <= 0.1 {
        return false;
    }
    if local.y.atan2(local.x).abs() > cfg.fov_deg.to_radians() / 2.0 {
        return false;
    }
    !obstacles
        .iter()
        .any(|o| o.intersects_segment(pose.position, target))
}

/// Detects the human and station objects seen by `robot`. The human, when
/// present, is always the first entry.
pub fn sense(
    robot: usize,
    world: &WorldState,
    obstacles: &[Polygon],
    cfg: &PerceptionConfig,
    seed: u64,
) -> Vec<Detection> {
    let pose = world.robots[robot].pose;
    let cam = Camera::new(cfg);
    let mut rng = stream(seed, &[tag("miss"), robot as u64, world.tick]);
    let targets = std::iter::once((ObjectKind::Human, world.human.position))
        .chain(world.objects.iter().map(|o| (o.kind, o.position)));
    let mut out = Vec::new();
    for (kind, pos) in targets {
        if !visible(&pose, pos, obstacles, cfg) {
            continue;
        }
        if rng.random::<f64>() < cfg.p_miss {
            continue;
        }
        let local = to_robot_frame(&pose, pos);
        let (w, h) = kind.size();
        out.push(Detection {
            kind,
            robot_frame: local,
            bbox_center: cam.project(local, h / 2.0),
            bbox_size: Vec2::new(cam.focal * w / local.x, cam.focal * h / local.x),
            robot,
            tick: world.tick,
        });
    }
    out
}

/// Global scene descriptor (first half) concatenated with a local object
/// descriptor (second half).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeFeature(pub Vec<f64>);

impl NodeFeature {
    pub fn half(&self) -> usize {
        self.0.len() / 2
    }

    pub fn global(&self) -> &[f64] {
        &self.0[..self.half()]
    }

    pub fn local(&self) -> &[f64] {
        &self.0[self.half()..]
    }
}

/// Seeded appearance encoder. Category embeddings and the position basis are
/// fixed by `encoder_seed`; per-observation noise comes from the frame seed.
#[derive(Clone, Debug)]
pub struct Encoder {
    dim: usize,
    seed: u64,
    noise_sigma: f64,
    amplitude: f64,
    categories: Vec<Vec<f64>>,
    basis: Vec<(f64, f64, f64)>,
}

impl Encoder {
    pub fn new(cfg: &PerceptionConfig) -> Self {
        let dim = cfg.feature_dim;
        let categories = ObjectKind::ALL
            .iter()
            .map(|k| {
                let mut rng = stream(cfg.encoder_seed, &[tag("category"), k.index() as u64]);
                (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
        let mut rng = stream(cfg.encoder_seed, &[tag("fourier")]);
        let freq = Normal::new(0.0, 0.6).expect("valid normal");
        let basis = (0..dim)
            .map(|_| {
                (
                    freq.sample(&mut rng),
                    freq.sample(&mut rng),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        Encoder {
            dim,
            seed: cfg.encoder_seed,
            noise_sigma: cfg.noise_sigma,
            amplitude: cfg.position_amplitude,
            categories,
            basis,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }

    pub fn category_embedding(&self, kind: ObjectKind) -> &[f64] {
        &self.categories[kind.index()]
    }

    fn global(&self, scenario: u8, detections: &[Detection]) -> Vec<f64> {
        let mut counts = [0u64; ObjectKind::ALL.len()];
        for d in detections {
            counts[d.kind.index()] = (counts[d.kind.index()] + 1).min(3);
        }
        let signature = counts.iter().fold(0u64, |acc, &c| acc * 4 + c);
        let mut rng = stream(self.seed, &[tag("global"), scenario as u64, signature]);
        (0..self.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// One feature per detection, in the same order.
    pub fn encode(&self, detections: &[Detection], scenario: u8, frame_seed: u64) -> Vec<NodeFeature> {
        if detections.is_empty() {
            return Vec::new();
        }
        let global = self.global(scenario, detections);
        let noise = Normal::new(0.0, self.noise_sigma.max(0.0)).expect("valid sigma");
        detections
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut rng = stream(frame_seed, &[tag("noise"), d.robot as u64, d.tick, i as u64]);
                let mut v = Vec::with_capacity(2 * self.dim);
                v.extend_from_slice(&global);
                let cat = self.category_embedding(d.kind);
                for (j, &(kx, ky, phase)) in self.basis.iter().enumerate() {
                    let pos = self.amplitude * (kx * d.robot_frame.x + ky * d.robot_frame.y + phase).cos();
                    let eps = if self.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    v.push(cat[j] + pos + eps);
                }
                NodeFeature(v)
            })
            .collect()
    }
}

/// Free-function form of [`Encoder::encode`].
pub fn encode_features(
    detections: &[Detection],
    scenario: u8,
    cfg: &PerceptionConfig,
    frame_seed: u64,
) -> Vec<NodeFeature> {
    Encoder::new(cfg).encode(detections, scenario, frame_seed)
}

/// Flattened (x, y) image-plane keypoints normalized to [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseKeypoints {
    pub coords: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PoseKeypoints {
    pub fn absent() -> Self {
        PoseKeypoints {
            coords: vec![0.0; KEYPOINT_DIM],
            valid: vec![false; KEYPOINT_COUNT],
        }
    }

    pub fn any_valid(&self) -> bool {
        self.valid.iter().any(|&v| v)
    }

    pub fn point(&self, k: usize) -> Option<Vec2> {
        self.valid[k].then(|| Vec2::new(self.coords[2 * k], self.coords[2 * k + 1]))
    }
}

/// Skeleton template: (lateral offset to the body's left, forward offset, height), metres.
pub const SKELETON: [(f64, f64, f64); KEYPOINT_COUNT] = [
    (0.0, 0.10, 1.62),   // nose
    (0.03, 0.08, 1.66),  // left eye
    (-0.03, 0.08, 1.66), // right eye
    (0.07, 0.0, 1.64),   // left ear
    (-0.07, 0.0, 1.64),  // right ear
    (0.20, 0.0, 1.42),   // left shoulder
    (-0.20, 0.0, 1.42),  // right shoulder
    (0.25, 0.0, 1.12),   // left elbow
    (-0.25, 0.0, 1.12),  // right elbow
    (0.27, 0.05, 0.85),  // left wrist
    (-0.27, 0.05, 0.85), // right wrist
    (0.12, 0.0, 0.95),   // left hip
    (-0.12, 0.0, 0.95),  // right hip
    (0.12, 0.02, 0.50),  // left knee
    (-0.12, 0.02, 0.50), // right knee
    (0.12, 0.0, 0.08),   // left ankle
    (-0.12, 0.0, 0.08),  // right ankle
];

/// Projects the skeleton of the human into the robot's image. Returns the
/// all-zero vector when the human was not detected.
pub fn extract_keypoints(
    human: Option<&Detection>,
    world: &WorldState,
    robot: usize,
    cfg: &PerceptionConfig,
    seed: u64,
) -> PoseKeypoints {
    let Some(det) = human.filter(|d| d.kind == ObjectKind::Human) else {
        return PoseKeypoints::absent();
    };
    let pose = world.robots[robot].pose;
    let cam = Camera::new(cfg);
    let facing = Vec2::from_angle(world.human.heading);
    let left = facing.perp();
    let mut rng = stream(seed, &[tag("keypoints"), robot as u64, det.tick]);
    let jitter = Normal::new(0.0, cfg.keypoint_jitter.max(0.0)).expect("valid sigma");
    let mut kp = PoseKeypoints::absent();
    for (k, &(lat, fwd, z)) in SKELETON.iter().enumerate() {
        let p = world.human.position + facing * fwd + left * lat;
        let local = to_robot_frame(&pose, p);
        let (dx, dy) = if cfg.keypoint_jitter > 0.0 {
            (jitter.sample(&mut rng), jitter.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        if local.x <= 0.1 {
            continue;
        }
        let px = cam.project(local, z);
        let (u, v) = (px.x / cam.width, px.y / cam.height);
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            continue;
        }
        kp.coords[2 * k] = (u + dx).clamp(0.0, 1.0);
        kp.coords[2 * k + 1] = (v + dy).clamp(0.0, 1.0);
        kp.valid[k] = true;
    }
    kp
}

/// Head position in world coordinates: bearing from keypoint 0, depth from the
/// human detection's range.
pub fn head_world_position(
    human: &Detection,
    keypoints: &PoseKeypoints,
    pose: &Pose,
    cfg: &PerceptionConfig,
) -> Option<Vec2> {
    let nose = keypoints.point(0)?;
    let cam = Camera::new(cfg);
    let forward = human.robot_frame.x;
    let lateral = cam.lateral_at(nose.x * cam.width, forward);
    Some(to_world_frame(pose, Vec2::new(forward, lateral)))
}

/// Detection count of one robot over an observation window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityRecord {
    pub robot: usize,
    pub window_start: u64,
    pub window_end: u64,
    pub detections: usize,
    pub window_len: usize,
}

/// Seed for everything observed by one robot at one tick of one episode.
pub fn frame_seed(episode_seed: u64, robot: usize, tick: u64) -> u64 {
    derive_seed(episode_seed, &[tag("frame"), robot as u64, tick])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldConfig};

    fn quiet() -> PerceptionConfig {
        PerceptionConfig {
            p_miss: 0.0,
            keypoint_jitter: 0.0,
            ..Default::default()
        }
    }

    fn scene(human: Vec2, heading: f64) -> (WorldState, WorldConfig) {
        let c = WorldConfig::standard(1, 1, 3);
        let mut s = generate_world(&c).unwrap();
        s.robots[0].pose = Pose {
            position: Vec2::ZERO,
            heading: 0.0,
        };
        s.human.position = human;
        s.human.heading = heading;
        s.objects.clear();
        (s, c)
    }

    #[test]
    fn occluded_and_out_of_range_objects_are_missing() {
        let (mut s, _) = scene(Vec2::new(4.0, 0.0), 0.0);
        s.objects.push(crate::world::PlacedObject {
            kind: ObjectKind::Crate,
            station: crate::StationId::new(1).unwrap(),
            position: Vec2::new(6.0, 1.0),
        });
        s.objects.push(crate::world::PlacedObject {
            kind: ObjectKind::Box,
            station: crate::StationId::new(1).unwrap(),
            position: Vec2::new(12.0, 0.0),
        });
        let wall = Polygon::rect(5.0, 0.5, 5.5, 1.5);
        let dets = sense(0, &s, &[wall.clone()], &quiet(), 1);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].kind, ObjectKind::Human);
        let dets = sense(0, &s, &[], &quiet(), 1);
        assert_eq!(dets.len(), 2, "crate visible without the wall, box beyond 10 m");
    }

    #[test]
    fn no_detection_sees_through_obstacles() {
        let c = WorldConfig::standard(2, 4, 12);
        let log = crate::world::generate_episode(&c, 80).unwrap();
        let cfg = PerceptionConfig::default();
        for s in &log.states {
            for r in 0..s.robots.len() {
                for d in sense(r, s, &c.obstacles, &cfg, 5) {
                    let target = to_world_frame(&s.robots[r].pose, d.robot_frame);
                    for o in &c.obstacles {
                        assert!(!o.intersects_segment(s.robots[r].pose.position, target));
                    }
                }
            }
        }
    }

    #[test]
    fn everything_in_cone_is_detected_without_misses() {
        let c = WorldConfig::standard(1, 1, 9);
        let mut s = generate_world(&c).unwrap();
        s.robots[0].pose = Pose {
            position: Vec2::new(10.0, -3.0),
            heading: std::f64::consts::FRAC_PI_2,
        };
        let cfg = PerceptionConfig {
            range: 30.0,
            ..quiet()
        };
        let expected = 1 + s
            .objects
            .iter()
            .filter(|o| visible(&s.robots[0].pose, o.position, &[], &cfg))
            .count();
        assert!(expected > 8);
        assert_eq!(sense(0, &s, &[], &cfg, 3).len(), expected);
    }

    #[test]
    fn features_share_global_half_and_are_deterministic() {
        let (mut s, _) = scene(Vec2::new(4.0, 0.0), 0.0);
        for y in [0.5, -0.5] {
            s.objects.push(crate::world::PlacedObject {
                kind: ObjectKind::Crate,
                station: crate::StationId::new(1).unwrap(),
                position: Vec2::new(5.0, y),
            });
        }
        let cfg = quiet();
        let dets = sense(0, &s, &[], &cfg, 1);
        let enc = Encoder::new(&cfg);
        let f = enc.encode(&dets, 1, 42);
        assert_eq!(f.len(), 3);
        assert_eq!(f[1].global(), f[2].global());
        assert_eq!(f[1].0.len(), 2 * cfg.feature_dim);
        assert_eq!(f, enc.encode(&dets, 1, 42));
    }

    #[test]
    fn category_embeddings_are_well_separated() {
        let cfg = PerceptionConfig::default();
        let enc = Encoder::new(&cfg);
        let a = enc.category_embedding(ObjectKind::Crate);
        let b = enc.category_embedding(ObjectKind::CncMachine);
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        // the position term shifts each component by at most twice the amplitude
        let worst = d - 2.0 * cfg.position_amplitude * (cfg.feature_dim as f64).sqrt();
        assert!(worst > 10.0 * cfg.noise_sigma, "separation {d}");
    }

    #[test]
    fn undetected_human_gives_zero_keypoints() {
        let (s, _) = scene(Vec2::new(4.0, 0.0), 0.0);
        let kp = extract_keypoints(None, &s, 0, &quiet(), 1);
        assert_eq!(kp.coords, vec![0.0; KEYPOINT_DIM]);
        assert!(kp.valid.iter().all(|v| !v));
    }

    #[test]
    fn heading_flip_mirrors_left_right_order() {
        let cfg = quiet();
        let order = |heading: f64| {
            let (s, _) = scene(Vec2::new(5.0, 0.0), heading);
            let dets = sense(0, &s, &[], &cfg, 1);
            let kp = extract_keypoints(dets.first(), &s, 0, &cfg, 1);
            (0..8)
                .map(|p| {
                    let l = kp.point(1 + 2 * p).unwrap().x;
                    let r = kp.point(2 + 2 * p).unwrap().x;
                    (l - r).signum()
                })
                .collect::<Vec<_>>()
        };
        let east = order(0.0);
        let west = order(std::f64::consts::PI);
        assert!(east.iter().all(|&s| s != 0.0));
        assert_eq!(east.iter().map(|s| -s).collect::<Vec<_>>(), west);
    }

    #[test]
    fn static_scene_without_jitter_repeats() {
        let cfg = quiet();
        let (s, _) = scene(Vec2::new(5.0, 1.0), 0.3);
        let mut s2 = s.clone();
        s2.tick += 1;
        let a = extract_keypoints(sense(0, &s, &[], &cfg, 1).first(), &s, 0, &cfg, 1);
        let b = extract_keypoints(sense(0, &s2, &[], &cfg, 1).first(), &s2, 0, &cfg, 1);
        assert_eq!(a, b);
        assert_eq!(a.coords.len(), KEYPOINT_DIM);
    }

    #[test]
    fn head_position_round_trips_through_the_image() {
        let cfg = quiet();
        let (mut s, _) = scene(Vec2::new(6.0, 1.5), 0.0);
        s.robots[0].pose = Pose {
            position: Vec2::new(1.0, 1.0),
            heading: 0.2,
        };
        let dets = sense(0, &s, &[], &cfg, 1);
        let kp = extract_keypoints(dets.first(), &s, 0, &cfg, 1);
        let head = head_world_position(&dets[0], &kp, &s.robots[0].pose, &cfg).unwrap();
        assert!(head.dist(s.human.position) < 0.15, "{head:?}");
    }
}
