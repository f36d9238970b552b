//! Scene and episode generation, navigability, and geodesic oracles.

use super::{
    panorama_class_histogram, wall_with_holes, Door, Room, Scene, SceneJson, Surface, CLASS_FLOOR,
    EYE_HEIGHT, NUM_CLASSES, WALL_HEIGHT,
};
use crate::error::{HnrError, Result};
use crate::geometry::{normalize_angle, Pose2p5D, Ray, Vec3, TAU};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const NUM_HEADINGS: usize = 12;
/// Kept clear of walls when proposing motion.
pub const CLEARANCE_MARGIN: f64 = 0.2;
/// Legs shorter than this are dropped: they would merge with their source
/// node anyway.
pub const MIN_LEG: f64 = 0.6;
/// Probe cone half-angle for per-heading clearance.
const PROBE_SPREAD: f64 = 5.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Standard,
    Hard,
}

/// Direction and landmark vocabulary used by instructions.
pub const TOKEN_LEFT: &str = "left";
pub const TOKEN_RIGHT: &str = "right";
pub const TOKEN_FORWARD: &str = "forward";
pub const TOKEN_STOP: &str = "stop";
pub const TOKEN_THEN: &str = "then";

#[derive(Debug, Clone)]
pub struct Episode {
    pub scene: Scene,
    pub start: Pose2p5D,
    pub goal: Vec3,
    /// Collision-free waypoint sequence from start to within the success
    /// radius of the goal.
    pub route: Vec<Pose2p5D>,
    pub instruction: Vec<String>,
    pub seed: u64,
    /// Geodesic start→goal distance (shortest-path length for SPL).
    pub shortest_geodesic: f64,
}

// ---------------------------------------------------------------------------
// Scene synthesis
// ---------------------------------------------------------------------------

struct SceneRecipe {
    chain_rooms: std::ops::RangeInclusive<usize>,
    branch_rooms: std::ops::RangeInclusive<usize>,
    door_width: std::ops::Range<f64>,
    goal_band: (f64, f64),
}

fn recipe(difficulty: Difficulty) -> SceneRecipe {
    match difficulty {
        Difficulty::Easy => SceneRecipe {
            chain_rooms: 3..=3,
            branch_rooms: 0..=0,
            door_width: 1.3..1.5,
            goal_band: (6.0, 9.0),
        },
        Difficulty::Standard => SceneRecipe {
            chain_rooms: 2..=4,
            branch_rooms: 1..=2,
            door_width: 1.1..1.4,
            goal_band: (6.0, 14.0),
        },
        Difficulty::Hard => SceneRecipe {
            chain_rooms: 4..=4,
            branch_rooms: 2..=2,
            door_width: 1.0..1.2,
            goal_band: (9.0, 14.0),
        },
    }
}

/// Furniture classes (everything except wall/floor/ceiling/door).
const FURNITURE: [u8; 12] = [4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15];

pub fn generate_scene(seed: u64, difficulty: Difficulty) -> Scene {
    let mut rng = crate::rng::substream(seed, crate::rng::streams::SCENE, seed);
    let r = recipe(difficulty);

    let n_chain = rng.gen_range(r.chain_rooms.clone());
    let n_branch = rng.gen_range(r.branch_rooms.clone());

    // Chain of rooms along +x, each sharing its right wall with the next.
    let mut rooms: Vec<Room> = Vec::new();
    let mut x = 0.0;
    let mut prev: Option<usize> = None;
    let mut adjacency: Vec<(usize, usize)> = Vec::new();
    for _ in 0..n_chain {
        let w = rng.gen_range(4.0..7.0);
        let d = rng.gen_range(4.0..7.0);
        let y0 = match prev {
            None => 0.0,
            Some(p) => {
                // Overlap at least 2.5 m with the previous room's y-span.
                let (pmin, pmax) = (rooms[p].min[1], rooms[p].max[1]);
                let lo = pmin - (d - 2.5);
                let hi = pmax - 2.5;
                rng.gen_range(lo..hi.max(lo + 1e-9))
            }
        };
        let idx = rooms.len();
        rooms.push(Room { min: [x, y0], max: [x + w, y0 + d] });
        if let Some(p) = prev {
            adjacency.push((p, idx));
        }
        prev = Some(idx);
        x += w;
    }
    // Branch rooms hang off chain rooms in ±y.
    for _ in 0..n_branch {
        let host = rng.gen_range(0..n_chain);
        let hw = rooms[host].max[0] - rooms[host].min[0];
        let w = rng.gen_range(4.0..(hw.max(4.2)).min(7.0));
        let d = rng.gen_range(4.0..7.0);
        let x0 = rng.gen_range(rooms[host].min[0]..(rooms[host].max[0] - w).max(rooms[host].min[0] + 1e-9));
        let up = rng.gen_bool(0.5);
        let room = if up {
            Room { min: [x0, rooms[host].max[1]], max: [x0 + w, rooms[host].max[1] + d] }
        } else {
            Room { min: [x0, rooms[host].min[1] - d], max: [x0 + w, rooms[host].min[1]] }
        };
        // Reject overlap with existing rooms (other than the host wall).
        let overlaps = rooms.iter().any(|r| {
            r.min[0] < room.max[0] - 1e-9
                && room.min[0] < r.max[0] - 1e-9
                && r.min[1] < room.max[1] - 1e-9
                && room.min[1] < r.max[1] - 1e-9
        });
        if overlaps {
            continue;
        }
        let idx = rooms.len();
        rooms.push(room);
        adjacency.push((host, idx));
    }

    // Doors in each shared wall.
    let mut doors: Vec<Door> = Vec::new();
    for &(a, b) in &adjacency {
        let (ra, rb) = (&rooms[a], &rooms[b]);
        // Shared plane: either an x-wall (chain) or a y-wall (branch).
        if (ra.max[0] - rb.min[0]).abs() < 1e-9 || (rb.max[0] - ra.min[0]).abs() < 1e-9 {
            let plane = if (ra.max[0] - rb.min[0]).abs() < 1e-9 { ra.max[0] } else { ra.min[0] };
            let lo = ra.min[1].max(rb.min[1]) + 0.5;
            let hi = ra.max[1].min(rb.max[1]) - 0.5;
            let width = rng.gen_range(r.door_width.clone()).min(hi - lo);
            let c = rng.gen_range(lo + width / 2.0..(hi - width / 2.0).max(lo + width / 2.0 + 1e-9));
            doors.push(Door { axis: 0, plane, u0: c - width / 2.0, u1: c + width / 2.0, rooms: (a, b) });
        } else {
            let plane = if (ra.max[1] - rb.min[1]).abs() < 1e-9 { ra.max[1] } else { ra.min[1] };
            let lo = ra.min[0].max(rb.min[0]) + 0.5;
            let hi = ra.max[0].min(rb.max[0]) - 0.5;
            let width = rng.gen_range(r.door_width.clone()).min(hi - lo);
            let c = rng.gen_range(lo + width / 2.0..(hi - width / 2.0).max(lo + width / 2.0 + 1e-9));
            doors.push(Door { axis: 1, plane, u0: c - width / 2.0, u1: c + width / 2.0, rooms: (a, b) });
        }
    }

    // Geometry: per room, four walls with the holes of its doors, plus floor
    // and ceiling.
    let mut surfaces: Vec<Surface> = Vec::new();
    for (i, room) in rooms.iter().enumerate() {
        let holes_on = |axis: usize, plane: f64, lo: f64, hi: f64| -> Vec<(f64, f64)> {
            doors
                .iter()
                .filter(|d| {
                    d.axis == axis
                        && (d.plane - plane).abs() < 1e-9
                        && (d.rooms.0 == i || d.rooms.1 == i)
                        && d.u0 >= lo - 1e-9
                        && d.u1 <= hi + 1e-9
                })
                .map(|d| (d.u0, d.u1))
                .collect()
        };
        let h = holes_on(0, room.min[0], room.min[1], room.max[1]);
        wall_with_holes(0, room.min[0], room.min[1], room.max[1], &h, &mut surfaces);
        let h = holes_on(0, room.max[0], room.min[1], room.max[1]);
        wall_with_holes(0, room.max[0], room.min[1], room.max[1], &h, &mut surfaces);
        let h = holes_on(1, room.min[1], room.min[0], room.max[0]);
        wall_with_holes(1, room.min[1], room.min[0], room.max[0], &h, &mut surfaces);
        let h = holes_on(1, room.max[1], room.min[0], room.max[0]);
        wall_with_holes(1, room.max[1], room.min[0], room.max[0], &h, &mut surfaces);
        surfaces.push(Surface {
            axis: 2,
            plane: 0.0,
            u0: room.min[0],
            u1: room.max[0],
            v0: room.min[1],
            v1: room.max[1],
            class_id: CLASS_FLOOR,
            priority: 0,
        });
        surfaces.push(Surface {
            axis: 2,
            plane: WALL_HEIGHT,
            u0: room.min[0],
            u1: room.max[0],
            v0: room.min[1],
            v1: room.max[1],
            class_id: super::CLASS_CEILING,
            priority: 0,
        });
    }

    // Decals: each room gets a distinctive primary furniture class (floor
    // patch plus a wall patch) and one secondary wall patch.
    let mut palette = FURNITURE.to_vec();
    for i in (1..palette.len()).rev() {
        let j = rng.gen_range(0..=i);
        palette.swap(i, j);
    }
    for (i, room) in rooms.iter().enumerate() {
        let primary = palette[i % palette.len()];
        let secondary = palette[(i + rooms.len()) % palette.len()];
        // Floor patch.
        let fw = rng.gen_range(1.4..2.4);
        let fd = rng.gen_range(1.4..2.4);
        let fx = rng.gen_range(room.min[0] + 0.4..(room.max[0] - 0.4 - fw).max(room.min[0] + 0.41));
        let fy = rng.gen_range(room.min[1] + 0.4..(room.max[1] - 0.4 - fd).max(room.min[1] + 0.41));
        surfaces.push(Surface {
            axis: 2,
            plane: 0.0,
            u0: fx,
            u1: fx + fw,
            v0: fy,
            v1: fy + fd,
            class_id: primary,
            priority: 1,
        });
        // Wall patches avoid door holes: collect this room's holes per wall.
        for (n, &class) in [primary, secondary].iter().enumerate() {
            let side = rng.gen_range(0..4usize);
            let (axis, plane, lo, hi) = match side {
                0 => (0usize, room.min[0], room.min[1], room.max[1]),
                1 => (0, room.max[0], room.min[1], room.max[1]),
                2 => (1, room.min[1], room.min[0], room.max[0]),
                _ => (1, room.max[1], room.min[0], room.max[0]),
            };
            let mut holes: Vec<(f64, f64)> = doors
                .iter()
                .filter(|d| d.axis == axis && (d.plane - plane).abs() < 1e-9)
                .map(|d| (d.u0 - 0.2, d.u1 + 0.2))
                .collect();
            holes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            // Free segments of the wall.
            let mut segs: Vec<(f64, f64)> = Vec::new();
            let mut cur = lo + 0.3;
            for (a, b) in holes {
                if a > cur {
                    segs.push((cur, a));
                }
                cur = cur.max(b);
            }
            if hi - 0.3 > cur {
                segs.push((cur, hi - 0.3));
            }
            let wide: Vec<&(f64, f64)> = segs.iter().filter(|(a, b)| b - a > 1.2).collect();
            if wide.is_empty() {
                continue;
            }
            let seg = wide[rng.gen_range(0..wide.len())];
            let w = rng.gen_range(0.9..(seg.1 - seg.0).min(2.2));
            let u0 = rng.gen_range(seg.0..(seg.1 - w).max(seg.0 + 1e-9));
            let (v0, v1) = if n == 0 { (0.8, 2.2) } else { (1.0, 1.9) };
            surfaces.push(Surface {
                axis,
                plane,
                u0,
                u1: u0 + w,
                v0,
                v1,
                class_id: class,
                priority: 1,
            });
        }
    }

    Scene { rooms, doors, surfaces, seed }
}

// ---------------------------------------------------------------------------
// Navigability
// ---------------------------------------------------------------------------

/// Per-heading clearance from the exact ray caster: min over a 3-ray probe
/// cone per heading, horizontal at the pose's height.
pub fn heading_clearances_oracle(scene: &Scene, pose: &Pose2p5D) -> [f64; NUM_HEADINGS] {
    let mut out = [f64::INFINITY; NUM_HEADINGS];
    for (i, o) in out.iter_mut().enumerate() {
        let heading = normalize_angle(pose.heading + TAU * i as f64 / NUM_HEADINGS as f64);
        for delta in [-PROBE_SPREAD, 0.0, PROBE_SPREAD] {
            let a = heading + delta;
            let ray = Ray::new(pose.position(), [a.cos(), a.sin(), 0.0]);
            let d = scene.raycast(&ray).distance().unwrap_or(f64::INFINITY);
            *o = o.min(d);
        }
    }
    out
}

/// Turn per-heading clearances into candidate poses: a leg of
/// `min(step, clearance − margin)` along each heading, dropped when shorter
/// than [`MIN_LEG`].
pub fn navigable_from_clearances(
    pose: &Pose2p5D,
    clearances: &[f64; NUM_HEADINGS],
    step: f64,
) -> Vec<Pose2p5D> {
    let mut out = Vec::new();
    for (i, &c) in clearances.iter().enumerate() {
        let heading = normalize_angle(pose.heading + TAU * i as f64 / NUM_HEADINGS as f64);
        let leg = step.min(c - CLEARANCE_MARGIN);
        if leg < MIN_LEG {
            continue;
        }
        out.push(Pose2p5D::new(
            pose.x + leg * heading.cos(),
            pose.y + leg * heading.sin(),
            pose.z,
            heading,
        ));
    }
    out
}

/// Oracle-mode navigable neighbors of a pose.
pub fn navigable_neighbors(scene: &Scene, pose: &Pose2p5D, step: f64) -> Vec<Pose2p5D> {
    assert!(step > 0.0);
    navigable_from_clearances(pose, &heading_clearances_oracle(scene, pose), step)
}

// ---------------------------------------------------------------------------
// Geodesic field
// ---------------------------------------------------------------------------

/// Grid-sampled geodesic distances from one source point, respecting walls
/// and door openings.
#[derive(Debug, Clone)]
pub struct GeodesicField {
    min: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    z: f64,
    dist: Vec<f64>,
}

pub fn geodesic_field(scene: &Scene, from: Vec3) -> GeodesicField {
    let cell = 0.25;
    let (bmin, bmax) = scene.bounds();
    let min = [bmin[0] - cell, bmin[1] - cell];
    let nx = ((bmax[0] - min[0]) / cell).ceil() as usize + 2;
    let ny = ((bmax[1] - min[1]) / cell).ceil() as usize + 2;
    let z = from[2];
    let center = |ix: usize, iy: usize| -> Vec3 {
        [min[0] + (ix as f64 + 0.5) * cell, min[1] + (iy as f64 + 0.5) * cell, z]
    };
    let free: Vec<bool> = (0..nx * ny)
        .map(|i| scene.is_free(center(i % nx, i / nx)))
        .collect();

    let mut dist = vec![f64::INFINITY; nx * ny];
    // Seed at the cell containing the source.
    let sx = (((from[0] - min[0]) / cell).floor() as isize).clamp(0, nx as isize - 1) as usize;
    let sy = (((from[1] - min[1]) / cell).floor() as isize).clamp(0, ny as isize - 1) as usize;
    let mut heap = std::collections::BinaryHeap::new();
    let start_idx = sy * nx + sx;
    if free[start_idx] {
        dist[start_idx] = 0.0;
        heap.push(std::cmp::Reverse((ordered(0.0), start_idx)));
    }
    while let Some(std::cmp::Reverse((d, i))) = heap.pop() {
        let d = d.0;
        if d > dist[i] {
            continue;
        }
        let (ix, iy) = (i % nx, i / nx);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let jx = ix as i64 + dx;
                let jy = iy as i64 + dy;
                if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                    continue;
                }
                let j = jy as usize * nx + jx as usize;
                if !free[j] {
                    continue;
                }
                let step = cell * ((dx * dx + dy * dy) as f64).sqrt();
                let nd = d + step;
                if nd < dist[j] && scene.segment_free(center(ix, iy), center(jx as usize, jy as usize)) {
                    dist[j] = nd;
                    heap.push(std::cmp::Reverse((ordered(nd), j)));
                }
            }
        }
    }
    GeodesicField { min, cell, nx, ny, z, dist }
}

#[derive(PartialEq, PartialOrd)]
struct Ordered(f64);
impl Eq for Ordered {}
#[allow(clippy::derive_ord_xor_partial_ord)]
impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).unwrap()
    }
}
fn ordered(x: f64) -> Ordered {
    Ordered(x)
}

impl GeodesicField {
    /// Geodesic distance from the field source to `p` (approximate to the
    /// grid resolution). Infinite when unreachable.
    pub fn distance_to(&self, p: Vec3) -> f64 {
        let fx = (p[0] - self.min[0]) / self.cell - 0.5;
        let fy = (p[1] - self.min[1]) / self.cell - 0.5;
        let ix = fx.round().clamp(0.0, self.nx as f64 - 1.0) as usize;
        let iy = fy.round().clamp(0.0, self.ny as f64 - 1.0) as usize;
        // Search a small neighborhood for the best anchored estimate, so
        // points just inside walls still resolve.
        let mut best = f64::INFINITY;
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let jx = ix as i64 + dx;
                let jy = iy as i64 + dy;
                if jx < 0 || jy < 0 || jx >= self.nx as i64 || jy >= self.ny as i64 {
                    continue;
                }
                let j = jy as usize * self.nx + jx as usize;
                if self.dist[j].is_finite() {
                    let cx = self.min[0] + (jx as f64 + 0.5) * self.cell;
                    let cy = self.min[1] + (jy as f64 + 0.5) * self.cell;
                    let link = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
                    best = best.min(self.dist[j] + link);
                }
            }
        }
        best
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// Free cells whose distance lies in [lo, hi], as world points.
    pub fn band(&self, lo: f64, hi: f64) -> Vec<Vec3> {
        let mut out = Vec::new();
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let d = self.dist[iy * self.nx + ix];
                if d >= lo && d <= hi {
                    out.push([
                        self.min[0] + (ix as f64 + 0.5) * self.cell,
                        self.min[1] + (iy as f64 + 0.5) * self.cell,
                        self.z,
                    ]);
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Episode generation
// ---------------------------------------------------------------------------

const SUCCESS_RADIUS: f64 = 3.0;
pub const STEP_LENGTH: f64 = 1.5;

/// Expand the step lattice from `start` and return (nodes, parent edges).
/// Nodes merge within 0.5 m.
fn step_lattice(scene: &Scene, start: &Pose2p5D, cap: usize) -> (Vec<Pose2p5D>, Vec<Vec<(usize, f64)>>) {
    let merge = 0.5;
    let mut nodes: Vec<Pose2p5D> = vec![*start];
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    let mut frontier = vec![0usize];
    while let Some(i) = frontier.pop() {
        if nodes.len() >= cap {
            break;
        }
        let here = nodes[i];
        for cand in navigable_neighbors(scene, &here, STEP_LENGTH) {
            let existing = nodes
                .iter()
                .position(|n| n.horizontal_distance(&cand) < merge);
            let j = match existing {
                Some(j) => j,
                None => {
                    nodes.push(cand);
                    adj.push(Vec::new());
                    frontier.push(nodes.len() - 1);
                    nodes.len() - 1
                }
            };
            if j != i && !adj[i].iter().any(|&(k, _)| k == j) {
                // A merged target can sit up to the merge radius away from
                // the probed leg; re-check the actual segment.
                if scene.segment_free(here.position(), nodes[j].position()) {
                    let d = here.horizontal_distance(&nodes[j]);
                    adj[i].push((j, d));
                    adj[j].push((i, d));
                }
            }
        }
    }
    (nodes, adj)
}

fn dijkstra_path(adj: &[Vec<(usize, f64)>], from: usize, to: usize) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = std::collections::BinaryHeap::new();
    dist[from] = 0.0;
    heap.push(std::cmp::Reverse((ordered(0.0), from)));
    while let Some(std::cmp::Reverse((d, i))) = heap.pop() {
        if d.0 > dist[i] {
            continue;
        }
        if i == to {
            break;
        }
        for &(j, w) in &adj[i] {
            let nd = d.0 + w;
            if nd < dist[j] {
                dist[j] = nd;
                prev[j] = i;
                heap.push(std::cmp::Reverse((ordered(nd), j)));
            }
        }
    }
    if !dist[to].is_finite() {
        return None;
    }
    let mut path = vec![to];
    while *path.last().unwrap() != from {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    Some(path)
}

/// Most common furniture class visible from a point; falls back to "wall".
fn dominant_landmark(scene: &Scene, position: Vec3) -> String {
    let hist = panorama_class_histogram(scene, position);
    let mut best: Option<(usize, usize)> = None;
    for (id, &count) in hist.iter().enumerate().take(NUM_CLASSES).skip(4) {
        if count > 0 && best.map_or(true, |(_, c)| count > c) {
            best = Some((id, count));
        }
    }
    match best {
        Some((id, _)) => super::class_name(id as u8).to_string(),
        None => "wall".to_string(),
    }
}

fn leg_direction_token(prev_heading: f64, leg_heading: f64) -> &'static str {
    let mut d = leg_heading - prev_heading;
    while d > std::f64::consts::PI {
        d -= TAU;
    }
    while d < -std::f64::consts::PI {
        d += TAU;
    }
    if d.abs() <= std::f64::consts::PI / 6.0 + 1e-9 {
        TOKEN_FORWARD
    } else if d > 0.0 {
        TOKEN_LEFT
    } else {
        TOKEN_RIGHT
    }
}

/// Deterministic episode synthesis: scene, start, goal in the requested
/// geodesic band, shortest lattice route, and a leg-by-leg instruction.
pub fn generate_episode(seed: u64, difficulty: Difficulty) -> Result<Episode> {
    for attempt in 0..16u64 {
        let scene_seed = seed.wrapping_add(attempt.wrapping_mul(0x9e3779b97f4a7c15));
        if let Some(ep) = try_generate(seed, scene_seed, difficulty)? {
            return Ok(ep);
        }
    }
    Err(HnrError::Contract(format!("episode generation failed for seed {seed}")))
}

fn try_generate(seed: u64, scene_seed: u64, difficulty: Difficulty) -> Result<Option<Episode>> {
    let scene = generate_scene(scene_seed, difficulty);
    let mut rng: ChaCha8Rng = crate::rng::substream(seed, crate::rng::streams::EPISODE, seed);
    let band = recipe(difficulty).goal_band;

    // Start pose in a random room, clear of walls.
    let room = &scene.rooms[rng.gen_range(0..scene.rooms.len())];
    let margin = 0.8;
    let start = Pose2p5D::new(
        rng.gen_range(room.min[0] + margin..room.max[0] - margin),
        rng.gen_range(room.min[1] + margin..room.max[1] - margin),
        EYE_HEIGHT,
        rng.gen_range(0.0..TAU),
    );
    if !scene.is_free(start.position()) {
        return Ok(None);
    }

    let field = geodesic_field(&scene, start.position());
    let band_cells = field.band(band.0, band.1);
    if band_cells.is_empty() {
        return Ok(None);
    }
    let goal = band_cells[rng.gen_range(0..band_cells.len())];
    let shortest_geodesic = field.distance_to(goal);

    // Route over the step lattice to the node nearest the goal.
    let (nodes, adj) = step_lattice(&scene, &start, 400);
    let mut target: Option<(usize, f64)> = None;
    for (i, n) in nodes.iter().enumerate() {
        let d = ((n.x - goal[0]).powi(2) + (n.y - goal[1]).powi(2)).sqrt();
        if target.map_or(true, |(_, bd)| d < bd) {
            target = Some((i, d));
        }
    }
    let Some((target, goal_gap)) = target else { return Ok(None) };
    if goal_gap > SUCCESS_RADIUS {
        return Ok(None);
    }
    let Some(path) = dijkstra_path(&adj, 0, target) else { return Ok(None) };
    if path.len() < 2 {
        return Ok(None);
    }
    let route: Vec<Pose2p5D> = path.iter().map(|&i| nodes[i]).collect();

    // Instruction: per leg, a direction token plus the destination landmark.
    let mut tokens: Vec<String> = Vec::new();
    let mut prev_heading = start.heading;
    for leg in 1..route.len() {
        let a = route[leg - 1];
        let b = route[leg];
        let leg_heading = (b.y - a.y).atan2(b.x - a.x);
        if leg > 1 {
            tokens.push(TOKEN_THEN.to_string());
        }
        tokens.push(leg_direction_token(prev_heading, leg_heading).to_string());
        tokens.push(dominant_landmark(&scene, b.position()));
        prev_heading = leg_heading;
    }
    tokens.push(TOKEN_STOP.to_string());

    Ok(Some(Episode {
        scene,
        start,
        goal,
        route,
        instruction: tokens,
        seed,
        shortest_geodesic,
    }))
}

// ---------------------------------------------------------------------------
// Episode serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct EpisodeJson {
    pub version: u32,
    pub seed: u64,
    pub scene: SceneJson,
    pub start: Pose2p5D,
    pub goal: [f64; 3],
    pub route: Vec<Pose2p5D>,
    pub instruction: Vec<String>,
    pub shortest_geodesic: f64,
}

impl From<&Episode> for EpisodeJson {
    fn from(e: &Episode) -> Self {
        EpisodeJson {
            version: 1,
            seed: e.seed,
            scene: (&e.scene).into(),
            start: e.start,
            goal: e.goal,
            route: e.route.clone(),
            instruction: e.instruction.clone(),
            shortest_geodesic: e.shortest_geodesic,
        }
    }
}

impl TryFrom<EpisodeJson> for Episode {
    type Error = HnrError;
    fn try_from(j: EpisodeJson) -> Result<Episode> {
        Ok(Episode {
            scene: j.scene.try_into()?,
            start: j.start,
            goal: j.goal,
            route: j.route,
            instruction: j.instruction,
            seed: j.seed,
            shortest_geodesic: j.shortest_geodesic,
        })
    }
}
