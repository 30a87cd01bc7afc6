//! Deterministic 2D factory-floor simulation.
//!
//! A single human walks between four stations while one to four robots either
//! stand still or patrol. The human plans a waypoint path on an occupancy grid
//! (A* plus line-of-sight smoothing) and steers reactively around robots. All
//! randomness is keyed on `(config.seed, tick)` so [`step_world`] is a pure
//! function of its inputs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Aabb, Polygon, Vec2};
use crate::rng::{stream, tag};

pub const EPISODE_SCHEMA_VERSION: u32 = 1;
pub const MIN_EPISODE_TICKS: usize = 60;

/// One of the four work stations. 1 = Storage Area, 2 = Workstation,
/// 3 = Assembly Station, 4 = Manufacturing Station.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct StationId(u8);

impl StationId {
    pub const ALL: [StationId; 4] = [StationId(1), StationId(2), StationId(3), StationId(4)];
    pub const COUNT: usize = 4;

    pub fn new(id: u8) -> Result<Self> {
        if (1..=4).contains(&id) {
            Ok(StationId(id))
        } else {
            Err(Error::InvalidConfig(format!("station id {id} outside 1..=4")))
        }
    }

    /// Zero-based class index used by the classifiers.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < 4, "class index {i} out of range");
        StationId(i as u8 + 1)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            1 => "Storage Area",
            2 => "Workstation",
            3 => "Assembly Station",
            _ => "Manufacturing Station",
        }
    }
}

impl TryFrom<u8> for StationId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        StationId::new(v)
    }
}

impl From<StationId> for u8 {
    fn from(s: StationId) -> u8 {
        s.0
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Everything a robot can detect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Human,
    Crate,
    Box,
    Pallet,
    Desk,
    Chair,
    StorageDrawers,
    Computer,
    Workbench,
    CncMachine,
    Table,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 11] = [
        ObjectKind::Human,
        ObjectKind::Crate,
        ObjectKind::Box,
        ObjectKind::Pallet,
        ObjectKind::Desk,
        ObjectKind::Chair,
        ObjectKind::StorageDrawers,
        ObjectKind::Computer,
        ObjectKind::Workbench,
        ObjectKind::CncMachine,
        ObjectKind::Table,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Physical (width, height) in metres, used for the synthetic bounding boxes.
    pub fn size(self) -> (f64, f64) {
        match self {
            ObjectKind::Human => (0.5, 1.75),
            ObjectKind::Crate => (0.6, 0.5),
            ObjectKind::Box => (0.4, 0.4),
            ObjectKind::Pallet => (1.2, 0.15),
            ObjectKind::Desk => (1.4, 0.75),
            ObjectKind::Chair => (0.5, 0.9),
            ObjectKind::StorageDrawers => (0.5, 1.0),
            ObjectKind::Computer => (0.5, 0.45),
            ObjectKind::Workbench => (1.8, 0.9),
            ObjectKind::CncMachine => (1.6, 1.8),
            ObjectKind::Table => (1.2, 0.75),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationObject {
    pub kind: ObjectKind,
    /// Offset from the station centroid.
    pub offset: Vec2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationSpec {
    pub id: StationId,
    /// Station centroid, which is also the human's goal point.
    pub position: Vec2,
    pub objects: Vec<StationObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub pose: Pose,
    /// Ping-pong patrol polyline. Empty for a stationary robot.
    #[serde(default)]
    pub patrol: Vec<Vec2>,
    /// Point the camera of a patrolling robot keeps facing.
    #[serde(default)]
    pub look_at: Option<Vec2>,
}

impl RobotSpec {
    pub fn is_moving(&self) -> bool {
        self.patrol.len() >= 2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub schema_version: u32,
    /// Arena extent in metres; the lower-left corner is the origin.
    pub arena: Vec2,
    pub stations: Vec<StationSpec>,
    /// At least one station pair must lie within this distance.
    pub close_proximity: f64,
    #[serde(default)]
    pub obstacles: Vec<Polygon>,
    pub scenario: u8,
    pub robots: Vec<RobotSpec>,
    pub human_speed: f64,
    pub robot_speed: f64,
    pub tick_rate: f64,
    pub seed: u64,
    /// Region the human's start position is drawn from.
    pub start_region: Aabb,
    /// Radius of the seeded displacement applied to every robot's pose or patrol.
    pub robot_jitter: f64,
    pub robot_heading_jitter: f64,
    /// Dwell time at a station, uniform in [min, max] seconds.
    pub dwell_seconds: [f64; 2],
    /// Leading fraction of a station-to-station leg reported as `Transitioning`.
    pub transition_fraction: f64,
    /// Clearance kept from obstacles when planning.
    pub human_clearance: f64,
    /// Minimum human-robot separation.
    pub robot_clearance: f64,
    pub avoid_lookahead: f64,
    pub grid_resolution: f64,
}

impl WorldConfig {
    /// The default 20 m x 15 m layout. Assembly and Manufacturing stations sit
    /// 2 m apart; scenarios 2 and 3 add two shelving racks and a pillar.
    pub fn standard(scenario: u8, robots: usize, seed: u64) -> Self {
        let obj = |kind, x, y| StationObject {
            kind,
            offset: Vec2::new(x, y),
        };
        let stations = vec![
            StationSpec {
                id: StationId(1),
                position: Vec2::new(6.0, 5.5),
                objects: vec![
                    obj(ObjectKind::Crate, -0.9, -0.5),
                    obj(ObjectKind::Box, 0.9, -0.5),
                    obj(ObjectKind::Pallet, 0.0, -1.0),
                ],
            },
            StationSpec {
                id: StationId(2),
                position: Vec2::new(14.0, 5.5),
                objects: vec![
                    obj(ObjectKind::Desk, 0.0, -1.0),
                    obj(ObjectKind::Chair, -0.8, -0.4),
                    obj(ObjectKind::StorageDrawers, 0.9, -0.6),
                    obj(ObjectKind::Computer, 0.3, -1.1),
                ],
            },
            StationSpec {
                id: StationId(3),
                position: Vec2::new(9.0, 10.0),
                objects: vec![
                    obj(ObjectKind::Workbench, 0.0, 1.0),
                    obj(ObjectKind::Chair, -0.8, 0.5),
                ],
            },
            StationSpec {
                id: StationId(4),
                position: Vec2::new(11.0, 10.0),
                objects: vec![
                    obj(ObjectKind::CncMachine, 0.2, 1.1),
                    obj(ObjectKind::Table, 0.9, 0.4),
                ],
            },
        ];
        let obstacles = if scenario == 1 {
            Vec::new()
        } else {
            vec![
                Polygon::rect(5.0, 7.3, 8.5, 8.0),
                Polygon::rect(11.5, 7.3, 15.0, 8.0),
                Polygon::rect(9.6, 2.2, 10.4, 2.8),
            ]
        };
        let centre = Vec2::new(10.0, 7.5);
        let posts = [
            (Vec2::new(10.0, 0.8), 90f64, [Vec2::new(5.0, 0.8), Vec2::new(15.0, 0.8)]),
            (Vec2::new(10.0, 14.2), -90.0, [Vec2::new(5.0, 14.2), Vec2::new(15.0, 14.2)]),
            (Vec2::new(0.8, 7.5), 0.0, [Vec2::new(0.8, 3.0), Vec2::new(0.8, 12.0)]),
            (Vec2::new(19.2, 7.5), 180.0, [Vec2::new(19.2, 3.0), Vec2::new(19.2, 12.0)]),
        ];
        let robots = posts
            .iter()
            .take(robots.clamp(1, 4))
            .map(|(p, h, patrol)| RobotSpec {
                pose: Pose {
                    position: *p,
                    heading: h.to_radians(),
                },
                patrol: if scenario == 3 { patrol.to_vec() } else { Vec::new() },
                look_at: (scenario == 3).then_some(centre),
            })
            .collect();
        WorldConfig {
            schema_version: EPISODE_SCHEMA_VERSION,
            arena: Vec2::new(20.0, 15.0),
            stations,
            close_proximity: 2.5,
            obstacles,
            scenario,
            robots,
            human_speed: 1.6,
            robot_speed: 2.0,
            tick_rate: 10.0,
            seed,
            start_region: Aabb {
                min: Vec2::new(4.0, 3.0),
                max: Vec2::new(16.0, 12.0),
            },
            robot_jitter: 0.5,
            robot_heading_jitter: 0.15,
            dwell_seconds: [1.0, 3.0],
            transition_fraction: 0.6,
            human_clearance: 0.35,
            robot_clearance: 0.6,
            avoid_lookahead: 1.5,
            grid_resolution: 0.25,
        }
    }

    pub fn station(&self, id: StationId) -> &StationSpec {
        self.stations
            .iter()
            .find(|s| s.id == id)
            .expect("validated config holds every station")
    }

    pub fn station_positions(&self) -> Vec<(StationId, Vec2)> {
        StationId::ALL
            .iter()
            .map(|&id| (id, self.station(id).position))
            .collect()
    }

    fn step_length(&self) -> f64 {
        self.human_speed / self.tick_rate
    }

    /// Checks every structural invariant and station reachability.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.schema_version != EPISODE_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if !(1..=3).contains(&self.scenario) {
            return bad(format!("scenario must be 1, 2 or 3, got {}", self.scenario));
        }
        if self.arena.x <= 0.0 || self.arena.y <= 0.0 {
            return bad("arena must have positive extent".into());
        }
        if self.stations.len() != 4 {
            return bad(format!("expected 4 stations, got {}", self.stations.len()));
        }
        for id in StationId::ALL {
            if self.stations.iter().filter(|s| s.id == id).count() != 1 {
                return bad(format!("station {id} must appear exactly once"));
            }
        }
        let mut closest = f64::INFINITY;
        for (i, a) in self.stations.iter().enumerate() {
            for b in &self.stations[i + 1..] {
                let d = a.position.dist(b.position);
                if d <= 1e-9 {
                    return bad(format!("stations {} and {} coincide", a.id, b.id));
                }
                closest = closest.min(d);
            }
        }
        if closest > self.close_proximity {
            return bad(format!(
                "no station pair within close_proximity {} m (closest {closest:.2} m)",
                self.close_proximity
            ));
        }
        if self.robots.is_empty() || self.robots.len() > 4 {
            return bad(format!("robot count must be 1..=4, got {}", self.robots.len()));
        }
        let moving = self.robots.iter().filter(|r| r.is_moving()).count();
        match self.scenario {
            1 if !self.obstacles.is_empty() => return bad("scenario 1 forbids obstacles".into()),
            1 | 2 if moving > 0 => {
                return bad(format!("scenario {} requires stationary robots", self.scenario))
            }
            2 | 3 if self.obstacles.is_empty() => {
                return bad(format!("scenario {} requires obstacles", self.scenario))
            }
            3 if moving != self.robots.len() => {
                return bad("scenario 3 requires every robot to patrol".into())
            }
            _ => {}
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.is_convex_ccw() {
                return bad(format!("obstacle {i} is not a convex counter-clockwise polygon"));
            }
        }
        let positive = [
            ("human_speed", self.human_speed),
            ("robot_speed", self.robot_speed),
            ("tick_rate", self.tick_rate),
            ("grid_resolution", self.grid_resolution),
            ("human_clearance", self.human_clearance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.dwell_seconds[0] > 0.0 && self.dwell_seconds[1] >= self.dwell_seconds[0]) {
            return bad("dwell_seconds must satisfy 0 < min <= max".into());
        }
        if !(0.0..=1.0).contains(&self.transition_fraction) {
            return bad("transition_fraction must lie in [0, 1]".into());
        }
        let grid = Grid::new(self);
        let Some(anchor) = grid.cell_of(self.stations[0].position).filter(|&c| grid.free(c)) else {
            return Err(Error::Unreachable(
                self.stations[0].id.get(),
                "its goal point is blocked".into(),
            ));
        };
        let reach = grid.flood(anchor);
        for s in &self.stations {
            let ok = grid
                .cell_of(s.position)
                .is_some_and(|c| grid.free(c) && reach[grid.idx(c)]);
            if !ok {
                return Err(Error::Unreachable(s.id.get(), format!("station {}", self.stations[0].id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanPhase {
    MovingToGoal,
    Transitioning,
    Stationary,
}

impl HumanPhase {
    pub const ALL: [HumanPhase; 3] = [
        HumanPhase::MovingToGoal,
        HumanPhase::Transitioning,
        HumanPhase::Stationary,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanState {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub phase: HumanPhase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    /// Arc-length position along the patrol polyline.
    #[serde(default)]
    pub patrol_s: f64,
    #[serde(default)]
    pub patrol_dir: f64,
    /// Seeded displacement applied to the configured patrol.
    #[serde(default)]
    pub offset: Vec2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub kind: ObjectKind,
    pub station: StationId,
    pub position: Vec2,
}

/// Internal motion bookkeeping of the human.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanMotion {
    /// Remaining waypoints; the last one is the goal point.
    pub path: Vec<Vec2>,
    pub leg_length: f64,
    pub leg_travelled: f64,
    pub leg_from_station: bool,
    /// Ticks left at the current station; `None` while travelling.
    pub dwell_remaining: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub human: HumanState,
    pub goal: StationId,
    pub robots: Vec<RobotState>,
    pub motion: HumanMotion,
    /// Static station objects, rebuilt from the config when a log is read.
    #[serde(skip)]
    pub objects: Vec<PlacedObject>,
}

pub fn placed_objects(config: &WorldConfig) -> Vec<PlacedObject> {
    let mut out = Vec::new();
    for id in StationId::ALL {
        let s = config.station(id);
        for o in &s.objects {
            out.push(PlacedObject {
                kind: o.kind,
                station: id,
                position: s.position + o.offset,
            });
        }
    }
    out
}

/// Occupancy grid inflated by the human clearance.
struct Grid {
    res: f64,
    nx: usize,
    ny: usize,
    free: Vec<bool>,
}

type Cell = (usize, usize);

impl Grid {
    fn new(config: &WorldConfig) -> Self {
        let res = config.grid_resolution;
        let nx = (config.arena.x / res).floor() as usize;
        let ny = (config.arena.y / res).floor() as usize;
        let c = config.human_clearance;
        let mut free = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let p = Vec2::new((i as f64 + 0.5) * res, (j as f64 + 0.5) * res);
                let inside = p.x >= c && p.y >= c && p.x <= config.arena.x - c && p.y <= config.arena.y - c;
                free[j * nx + i] = inside && config.obstacles.iter().all(|o| o.distance(p) > c);
            }
        }
        Grid { res, nx, ny, free }
    }

    fn idx(&self, c: Cell) -> usize {
        c.1 * self.nx + c.0
    }

    fn free(&self, c: Cell) -> bool {
        self.free[self.idx(c)]
    }

    fn cell_of(&self, p: Vec2) -> Option<Cell> {
        let i = (p.x / self.res).floor();
        let j = (p.y / self.res).floor();
        (i >= 0.0 && j >= 0.0 && (i as usize) < self.nx && (j as usize) < self.ny)
            .then(|| (i as usize, j as usize))
    }

    fn centre(&self, c: Cell) -> Vec2 {
        Vec2::new((c.0 as f64 + 0.5) * self.res, (c.1 as f64 + 0.5) * self.res)
    }

    fn neighbours(&self, c: Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
        const D: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        D.iter().filter_map(move |&(dx, dy)| {
            let x = c.0 as i64 + dx;
            let y = c.1 as i64 + dy;
            if x < 0 || y < 0 || x >= self.nx as i64 || y >= self.ny as i64 {
                return None;
            }
            let n = (x as usize, y as usize);
            // no corner cutting
            if !self.free(n) || (dx != 0 && dy != 0 && (!self.free((x as usize, c.1)) || !self.free((c.0, y as usize)))) {
                return None;
            }
            Some((n, if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 }))
        })
    }

    fn flood(&self, start: Cell) -> Vec<bool> {
        let mut seen = vec![false; self.free.len()];
        let mut stack = vec![start];
        seen[self.idx(start)] = true;
        while let Some(c) = stack.pop() {
            for (n, _) in self.neighbours(c) {
                let k = self.idx(n);
                if !seen[k] {
                    seen[k] = true;
                    stack.push(n);
                }
            }
        }
        seen
    }

    fn nearest_free(&self, p: Vec2) -> Option<Cell> {
        let c = self.cell_of(p)?;
        if self.free(c) {
            return Some(c);
        }
        let mut best: Option<(f64, Cell)> = None;
        for r in 1..8i64 {
            for dy in -r..=r {
                for dx in -r..=r {
                    let x = c.0 as i64 + dx;
                    let y = c.1 as i64 + dy;
                    if x < 0 || y < 0 || x >= self.nx as i64 || y >= self.ny as i64 {
                        continue;
                    }
                    let n = (x as usize, y as usize);
                    if self.free(n) {
                        let d = self.centre(n).dist(p);
                        if best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, n));
                        }
                    }
                }
            }
            if best.is_some() {
                break;
            }
        }
        best.map(|(_, c)| c)
    }

    fn astar(&self, start: Cell, goal: Cell) -> Option<Vec<Cell>> {
        #[derive(PartialEq)]
        struct Node {
            f: f64,
            order: u64,
            cell: Cell,
        }
        impl Eq for Node {}
        impl Ord for Node {
            fn cmp(&self, o: &Self) -> Ordering {
                o.f.total_cmp(&self.f).then_with(|| o.order.cmp(&self.order))
            }
        }
        impl PartialOrd for Node {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        let h = |c: Cell| {
            let dx = (c.0 as f64 - goal.0 as f64).abs();
            let dy = (c.1 as f64 - goal.1 as f64).abs();
            dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
        };
        let n = self.free.len();
        let mut g = vec![f64::INFINITY; n];
        let mut parent: Vec<Option<Cell>> = vec![None; n];
        let mut open = BinaryHeap::new();
        let mut order = 0u64;
        g[self.idx(start)] = 0.0;
        open.push(Node { f: h(start), order, cell: start });
        while let Some(Node { cell, f, .. }) = open.pop() {
            if cell == goal {
                let mut path = vec![cell];
                let mut cur = cell;
                while let Some(p) = parent[self.idx(cur)] {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            if f > g[self.idx(cell)] + h(cell) + 1e-9 {
                continue;
            }
            for (nb, cost) in self.neighbours(cell) {
                let cand = g[self.idx(cell)] + cost;
                let k = self.idx(nb);
                if cand + 1e-12 < g[k] {
                    g[k] = cand;
                    parent[k] = Some(cell);
                    order += 1;
                    open.push(Node { f: cand + h(nb), order, cell: nb });
                }
            }
        }
        None
    }
}

/// True when the straight segment keeps the planning clearance from every obstacle.
fn segment_clear(config: &WorldConfig, a: Vec2, b: Vec2, clearance: f64) -> bool {
    let len = a.dist(b);
    let steps = (len / 0.05).ceil().max(1.0) as usize;
    (0..=steps).all(|k| {
        let p = a + (b - a) * (k as f64 / steps as f64);
        config.obstacles.iter().all(|o| o.distance(p) >= clearance)
    })
}

/// Plans a smoothed waypoint path from `from` to `to`. The returned list
/// excludes `from` and ends exactly at `to`.
fn plan_path(config: &WorldConfig, grid: &Grid, from: Vec2, to: Vec2) -> Option<Vec<Vec2>> {
    let clearance = config.human_clearance * 0.9;
    if segment_clear(config, from, to, clearance) {
        return Some(vec![to]);
    }
    let start = grid.nearest_free(from)?;
    let goal = grid.nearest_free(to)?;
    let cells = grid.astar(start, goal)?;
    let mut raw: Vec<Vec2> = vec![from];
    raw.extend(cells.iter().skip(1).map(|&c| grid.centre(c)));
    raw.push(to);
    // string pulling
    let mut out = Vec::new();
    let mut anchor = 0;
    while anchor < raw.len() - 1 {
        let mut next = anchor + 1;
        for k in (anchor + 1..raw.len()).rev() {
            if segment_clear(config, raw[anchor], raw[k], clearance) {
                next = k;
                break;
            }
        }
        out.push(raw[next]);
        anchor = next;
    }
    Some(out)
}

fn path_length(from: Vec2, path: &[Vec2]) -> f64 {
    let mut prev = from;
    let mut total = 0.0;
    for &p in path {
        total += prev.dist(p);
        prev = p;
    }
    total
}

fn patrol_position(spec: &RobotSpec, offset: Vec2, s: f64) -> Vec2 {
    let mut rem = s;
    for w in spec.patrol.windows(2) {
        let seg = w[0].dist(w[1]);
        if rem <= seg {
            return w[0] + (w[1] - w[0]) * (rem / seg.max(1e-12)) + offset;
        }
        rem -= seg;
    }
    *spec.patrol.last().expect("patrol has points") + offset
}

fn patrol_length(spec: &RobotSpec) -> f64 {
    spec.patrol.windows(2).map(|w| w[0].dist(w[1])).sum()
}

fn robot_heading(spec: &RobotSpec, position: Vec2, fallback: f64) -> f64 {
    match spec.look_at {
        Some(t) if t.dist(position) > 1e-9 => (t - position).angle(),
        _ => fallback,
    }
}

fn clamp_to_arena(config: &WorldConfig, p: Vec2) -> Vec2 {
    Vec2::new(p.x.clamp(0.1, config.arena.x - 0.1), p.y.clamp(0.1, config.arena.y - 0.1))
}

fn dwell_ticks(config: &WorldConfig, rng: &mut impl Rng) -> u32 {
    let lo = (config.dwell_seconds[0] * config.tick_rate).round() as u32;
    let hi = (config.dwell_seconds[1] * config.tick_rate).round() as u32;
    rng.random_range(lo.max(1)..=hi.max(lo.max(1)))
}

/// Builds the initial state: seeded human start and goal, jittered robot poses.
pub fn generate_world(config: &WorldConfig) -> Result<WorldState> {
    config.validate()?;
    let grid = Grid::new(config);
    let mut rng = stream(config.seed, &[tag("world")]);

    let anchor = grid
        .cell_of(config.stations[0].position)
        .expect("validated station cell");
    let reach = grid.flood(anchor);
    let mut start = None;
    for _ in 0..10_000 {
        let p = Vec2::new(
            rng.random_range(config.start_region.min.x..=config.start_region.max.x),
            rng.random_range(config.start_region.min.y..=config.start_region.max.y),
        );
        let ok = grid.cell_of(p).is_some_and(|c| grid.free(c) && reach[grid.idx(c)])
            && config.obstacles.iter().all(|o| o.distance(p) > config.human_clearance);
        if ok {
            start = Some(p);
            break;
        }
    }
    let start = start.ok_or_else(|| Error::InvalidConfig("start region has no free cell".into()))?;
    let goal = StationId::from_index(rng.random_range(0..4));

    let mut robots = Vec::with_capacity(config.robots.len());
    for spec in &config.robots {
        let r = config.robot_jitter * rng.random::<f64>().sqrt();
        let offset = Vec2::from_angle(rng.random_range(0.0..std::f64::consts::TAU)) * r;
        let dh = rng.random_range(-1.0..=1.0) * config.robot_heading_jitter;
        let state = if spec.is_moving() {
            let len = patrol_length(spec);
            let s = rng.random_range(0.0..=len);
            let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let pos = clamp_to_arena(config, patrol_position(spec, offset, s));
            RobotState {
                pose: Pose {
                    position: pos,
                    heading: wrap_angle(robot_heading(spec, pos, spec.pose.heading) + dh),
                },
                patrol_s: s,
                patrol_dir: dir,
                offset,
            }
        } else {
            RobotState {
                pose: Pose {
                    position: clamp_to_arena(config, spec.pose.position + offset),
                    heading: wrap_angle(spec.pose.heading + dh),
                },
                patrol_s: 0.0,
                patrol_dir: 0.0,
                offset,
            }
        };
        robots.push(state);
    }

    let target = config.station(goal).position;
    let path = plan_path(config, &grid, start, target)
        .ok_or(Error::Unreachable(goal.get(), "the human start".into()))?;
    let heading = (path[0] - start).angle();
    Ok(WorldState {
        tick: 0,
        human: HumanState {
            position: start,
            heading,
            speed: 0.0,
            phase: HumanPhase::MovingToGoal,
        },
        goal,
        robots,
        motion: HumanMotion {
            leg_length: path_length(start, &path),
            path,
            leg_travelled: 0.0,
            leg_from_station: false,
            dwell_remaining: None,
        },
        objects: placed_objects(config),
    })
}

fn position_ok(config: &WorldConfig, robots: &[RobotState], from: Vec2, to: Vec2) -> bool {
    let margin = 0.05;
    if to.x < margin || to.y < margin || to.x > config.arena.x - margin || to.y > config.arena.y - margin {
        return false;
    }
    if config.obstacles.iter().any(|o| o.distance(to) <= margin || o.intersects_segment(from, to)) {
        return false;
    }
    robots.iter().all(|r| {
        let before = r.pose.position.dist(from);
        let after = r.pose.position.dist(to);
        after >= config.robot_clearance.min(before)
    })
}

/// Advances the world by one tick.
pub fn step_world(state: &WorldState, config: &WorldConfig) -> WorldState {
    let mut next = state.clone();
    next.tick = state.tick + 1;
    if next.objects.is_empty() {
        next.objects = placed_objects(config);
    }
    let dt = 1.0 / config.tick_rate;

    for (spec, robot) in config.robots.iter().zip(next.robots.iter_mut()) {
        if !spec.is_moving() {
            continue;
        }
        let len = patrol_length(spec);
        let mut s = robot.patrol_s + robot.patrol_dir * config.robot_speed * dt;
        if s > len {
            s = 2.0 * len - s;
            robot.patrol_dir = -robot.patrol_dir;
        } else if s < 0.0 {
            s = -s;
            robot.patrol_dir = -robot.patrol_dir;
        }
        robot.patrol_s = s.clamp(0.0, len);
        let pos = clamp_to_arena(config, patrol_position(spec, robot.offset, robot.patrol_s));
        let jitter = wrap_angle(robot.pose.heading - robot_heading(spec, robot.pose.position, spec.pose.heading));
        robot.pose = Pose {
            position: pos,
            heading: wrap_angle(robot_heading(spec, pos, spec.pose.heading) + jitter),
        };
    }

    let mut rng = stream(config.seed, &[tag("step"), next.tick]);
    if let Some(rem) = next.motion.dwell_remaining {
        if rem > 1 {
            next.motion.dwell_remaining = Some(rem - 1);
            next.human.speed = 0.0;
            next.human.phase = HumanPhase::Stationary;
            return next;
        }
        // dwell over: pick a different station and leave
        let choices: Vec<StationId> = StationId::ALL.iter().copied().filter(|&s| s != state.goal).collect();
        let goal = choices[rng.random_range(0..choices.len())];
        let grid = Grid::new(config);
        let from = next.human.position;
        let path = plan_path(config, &grid, from, config.station(goal).position)
            .unwrap_or_else(|| vec![config.station(goal).position]);
        next.goal = goal;
        next.motion = HumanMotion {
            leg_length: path_length(from, &path),
            path,
            leg_travelled: 0.0,
            leg_from_station: true,
            dwell_remaining: None,
        };
    }

    advance_human(&mut next, config, &mut rng);
    next
}

fn advance_human(next: &mut WorldState, config: &WorldConfig, rng: &mut impl Rng) {
    let step = config.step_length();
    let pos = next.human.position;
    let Some(&waypoint) = next.motion.path.first() else {
        next.human.phase = HumanPhase::Stationary;
        next.human.speed = 0.0;
        return;
    };
    let goal_point = *next.motion.path.last().expect("non-empty path");

    if next.motion.path.len() == 1 && pos.dist(goal_point) <= step {
        let travelled = pos.dist(goal_point);
        next.human.position = goal_point;
        next.human.speed = travelled * config.tick_rate;
        next.human.phase = HumanPhase::Stationary;
        next.motion.path.clear();
        next.motion.leg_travelled += travelled;
        next.motion.dwell_remaining = Some(dwell_ticks(config, rng));
        return;
    }

    let desired = (waypoint - pos).normalized();
    let mut push = Vec2::ZERO;
    for r in &next.robots {
        let rel = r.pose.position - pos;
        let d = rel.norm();
        if d < config.avoid_lookahead && d > 1e-9 && rel.dot(desired) > 0.0 {
            let away = -rel.normalized();
            // sidestep to the side the robot is not on
            let side = if desired.cross(rel) > 0.0 { -desired.perp() } else { desired.perp() };
            push = push + (away * 0.5 + side) * ((config.avoid_lookahead - d) / config.avoid_lookahead);
        }
    }
    let steered = (desired + push * 1.5).normalized();
    let mut candidates = vec![steered, desired];
    for a in [0.5f64, -0.5, 1.0, -1.0, 1.5, -1.5] {
        candidates.push(desired.rotate(a));
    }
    let moved = candidates
        .into_iter()
        .filter(|d| d.norm() > 0.5)
        .map(|d| pos + d * step)
        .find(|&p| position_ok(config, &next.robots, pos, p));

    let Some(new_pos) = moved else {
        next.human.speed = 0.0;
        next.human.phase = HumanPhase::Stationary;
        return;
    };
    next.human.heading = (new_pos - pos).angle();
    next.human.position = new_pos;
    next.human.speed = config.human_speed;
    next.motion.leg_travelled += step;
    if new_pos.dist(waypoint) <= step * 0.5 && next.motion.path.len() > 1 {
        next.motion.path.remove(0);
    }
    let clearance = config.human_clearance * 0.5;
    let target = next.motion.path[0];
    if !segment_clear(config, new_pos, target, clearance) {
        let grid = Grid::new(config);
        if let Some(p) = plan_path(config, &grid, new_pos, goal_point) {
            next.motion.path = p;
        }
    }
    next.human.phase = if next.motion.leg_from_station
        && next.motion.leg_travelled < config.transition_fraction * next.motion.leg_length
    {
        HumanPhase::Transitioning
    } else {
        HumanPhase::MovingToGoal
    };
}

/// A simulated episode with one ground-truth label per tick.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub config: WorldConfig,
    pub states: Vec<WorldState>,
    pub labels: Vec<StationId>,
}

/// Simulates at least `ticks` ticks. If the human is still walking at that
/// point the episode is extended (by at most half again) until they arrive, so
/// the final labels refer to an observed arrival.
pub fn generate_episode(config: &WorldConfig, ticks: usize) -> Result<EpisodeLog> {
    if ticks < MIN_EPISODE_TICKS {
        return Err(Error::InvalidConfig(format!(
            "episodes need at least {MIN_EPISODE_TICKS} ticks, got {ticks}"
        )));
    }
    let mut state = generate_world(config)?;
    let mut states = Vec::with_capacity(ticks + ticks / 2);
    states.push(state.clone());
    let limit = ticks + ticks / 2;
    while states.len() < ticks || (states.len() < limit && state.motion.dwell_remaining.is_none()) {
        state = step_world(&state, config);
        states.push(state.clone());
    }
    let labels = states.iter().map(|s| s.goal).collect();
    Ok(EpisodeLog {
        config: config.clone(),
        states,
        labels,
    })
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    record: String,
    schema_version: u32,
    ticks: usize,
    config: WorldConfig,
}

#[derive(Serialize, Deserialize)]
struct StateLine {
    record: String,
    label: StationId,
    #[serde(flatten)]
    state: WorldState,
}

impl EpisodeLog {
    /// Line-delimited JSON: a header record with the config, then one record per tick.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = HeaderLine {
            record: "header".into(),
            schema_version: EPISODE_SCHEMA_VERSION,
            ticks: self.states.len(),
            config: self.config.clone(),
        };
        let io = |e| Error::io("<episode log>", e);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(io)?;
        for (state, &label) in self.states.iter().zip(&self.labels) {
            let line = StateLine {
                record: "state".into(),
                label,
                state: state.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let io = |e| Error::io("<episode log>", e);
        let first = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig("empty episode log".into()))?
            .map_err(io)?;
        let header: HeaderLine = serde_json::from_str(&first)?;
        if header.record != "header" || header.schema_version != EPISODE_SCHEMA_VERSION {
            return Err(Error::InvalidConfig("episode log header missing or wrong schema".into()));
        }
        let objects = placed_objects(&header.config);
        let mut states = Vec::with_capacity(header.ticks);
        let mut labels = Vec::with_capacity(header.ticks);
        for line in lines {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let mut rec: StateLine = serde_json::from_str(&line)?;
            rec.state.objects = objects.clone();
            labels.push(rec.label);
            states.push(rec.state);
        }
        if states.len() != header.ticks {
            return Err(Error::InvalidConfig(format!(
                "episode log declares {} ticks but holds {}",
                header.ticks,
                states.len()
            )));
        }
        Ok(EpisodeLog {
            config: header.config,
            states,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn station_ids_are_bounded() {
        assert!(StationId::new(0).is_err());
        assert!(StationId::new(5).is_err());
        assert_eq!(StationId::new(3).unwrap().index(), 2);
        assert_eq!(StationId::from_index(0).get(), 1);
    }

    #[test]
    fn standard_configs_validate() {
        for s in 1..=3 {
            for r in 1..=4 {
                WorldConfig::standard(s, r, 1).validate().unwrap();
            }
        }
    }

    #[test]
    fn scenario_one_rejects_obstacles() {
        let mut c = WorldConfig::standard(1, 2, 7);
        c.obstacles.push(Polygon::rect(1.0, 1.0, 2.0, 2.0));
        assert!(matches!(generate_world(&c), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn scenario_rules_on_robots() {
        let mut c = WorldConfig::standard(2, 2, 7);
        c.robots[0].patrol = vec![Vec2::new(5.0, 1.0), Vec2::new(15.0, 1.0)];
        assert!(c.validate().is_err());
        let mut c = WorldConfig::standard(3, 2, 7);
        c.robots[1].patrol.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn walled_off_station_is_unreachable() {
        let mut c = WorldConfig::standard(2, 1, 3);
        let p = c.station(StationId(2)).position;
        // ring of four walls around the workstation
        c.obstacles.push(Polygon::rect(p.x - 1.5, p.y - 1.5, p.x + 1.5, p.y - 1.2));
        c.obstacles.push(Polygon::rect(p.x - 1.5, p.y + 1.2, p.x + 1.5, p.y + 1.5));
        c.obstacles.push(Polygon::rect(p.x - 1.5, p.y - 1.2, p.x - 1.2, p.y + 1.2));
        c.obstacles.push(Polygon::rect(p.x + 1.2, p.y - 1.2, p.x + 1.5, p.y + 1.2));
        assert!(matches!(c.validate(), Err(Error::Unreachable(2, _))));
    }

    #[test]
    fn seeds_change_the_start() {
        let a = generate_world(&WorldConfig::standard(1, 2, 7)).unwrap();
        let b = generate_world(&WorldConfig::standard(1, 2, 8)).unwrap();
        assert_ne!(a.human.position, b.human.position);
        let a2 = generate_world(&WorldConfig::standard(1, 2, 7)).unwrap();
        assert_eq!(a, a2);
    }

    #[test]
    fn dwell_holds_position() {
        let c = WorldConfig::standard(1, 1, 11);
        let mut s = generate_world(&c).unwrap();
        while s.motion.dwell_remaining.is_none() {
            s = step_world(&s, &c);
        }
        assert!(s.motion.dwell_remaining.unwrap() >= 2, "dwell of at least 1 s");
        let next = step_world(&s, &c);
        assert_eq!(next.human.position, s.human.position);
        assert_eq!(next.human.phase, HumanPhase::Stationary);
        assert_eq!(next.goal, s.goal);
    }

    #[test]
    fn scenario_one_first_leg_is_straight() {
        let c = WorldConfig::standard(1, 1, 5);
        let s0 = generate_world(&c).unwrap();
        let goal = c.station(s0.goal).position;
        let dir = (goal - s0.human.position).normalized();
        let mut s = s0.clone();
        while s.motion.dwell_remaining.is_none() {
            s = step_world(&s, &c);
            let off = (s.human.position - s0.human.position).cross(dir).abs();
            assert!(off < 1e-9, "lateral deviation {off}");
        }
        assert_eq!(s.human.position, goal);
    }

    #[test]
    fn blocked_direct_line_detours_around_rack() {
        let mut c = WorldConfig::standard(2, 1, 0);
        c.start_region = Aabb {
            min: Vec2::new(6.4, 4.0),
            max: Vec2::new(6.6, 4.2),
        };
        let mut s = generate_world(&c).unwrap();
        // force the goal behind the left rack
        let goal = StationId(3);
        let grid = Grid::new(&c);
        s.goal = goal;
        s.motion.path = plan_path(&c, &grid, s.human.position, c.station(goal).position).unwrap();
        let start = s.human.position;
        let end = c.station(goal).position;
        let line = (end - start).normalized();
        assert!(c.obstacles[0].intersects_segment(start, end));
        let mut max_dev: f64 = 0.0;
        let mut min_clear = f64::INFINITY;
        while s.motion.dwell_remaining.is_none() {
            s = step_world(&s, &c);
            max_dev = max_dev.max((s.human.position - start).cross(line).abs());
            for o in &c.obstacles {
                assert!(!o.contains(s.human.position));
                min_clear = min_clear.min(o.distance(s.human.position));
            }
        }
        assert!(max_dev > 0.3, "path should leave the straight line, got {max_dev}");
        assert!(min_clear > 0.0);
    }

    #[test]
    fn labels_follow_goals_and_arrivals() {
        let c = WorldConfig::standard(2, 2, 21);
        let log = generate_episode(&c, 300).unwrap();
        assert!(log.states.len() >= 300);
        for (k, s) in log.states.iter().enumerate() {
            assert_eq!(log.labels[k], s.goal);
            if s.motion.dwell_remaining.is_some() {
                assert_eq!(s.human.position, c.station(s.goal).position);
            }
        }
        assert!(generate_episode(&c, 59).is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let c = WorldConfig::standard(3, 3, 4);
        let log = generate_episode(&c, 80).unwrap();
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let back = EpisodeLog::read_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, log);
    }
}
