//! Deterministic synthetic environments with exact ray casting.
//!
//! A scene is a set of axis-aligned rectangular rooms on one floor,
//! connected by door openings. All geometry is axis-aligned rectangles, so
//! ray intersection is closed-form and the same surface list drives
//! rendering targets, navigability, and every test oracle. Semantic variety
//! comes from decal rectangles (priority 1) painted onto walls and floors;
//! they carry class ids but add no occluders.

mod embedder;
mod episode;
mod observe;

pub use embedder::ClassEmbedder;
pub use episode::{
    generate_episode, geodesic_field, heading_clearances_oracle, navigable_from_clearances,
    navigable_neighbors, Episode, GeodesicField, NUM_HEADINGS,
};
pub use observe::{observe, oracle_targets, panorama_class_histogram, ViewObservation};

use crate::error::{HnrError, Result};
use crate::geometry::{Ray, Vec3};
use serde::{Deserialize, Serialize};

pub const WALL_HEIGHT: f64 = 3.0;
pub const DOOR_HEIGHT: f64 = 2.2;
pub const EYE_HEIGHT: f64 = 1.5;

pub const NUM_CLASSES: usize = 16;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "wall", "floor", "ceiling", "door", "window", "sofa", "table", "bed", "lamp", "plant",
    "shelf", "counter", "stairs", "rug", "painting", "appliance",
];

pub const CLASS_WALL: u8 = 0;
pub const CLASS_FLOOR: u8 = 1;
pub const CLASS_CEILING: u8 = 2;
pub const CLASS_DOOR: u8 = 3;

pub fn class_name(id: u8) -> &'static str {
    CLASS_NAMES[id as usize]
}

pub fn class_id(name: &str) -> Option<u8> {
    CLASS_NAMES.iter().position(|&n| n == name).map(|i| i as u8)
}

/// Fixed per-class base color, used for the RGB observation channel.
pub fn class_color(id: u8) -> [f64; 3] {
    // Spread hues around the wheel; structural classes get muted tones.
    match id {
        0 => [0.75, 0.73, 0.70], // wall
        1 => [0.45, 0.40, 0.35], // floor
        2 => [0.92, 0.92, 0.90], // ceiling
        3 => [0.55, 0.35, 0.18], // door
        other => {
            let t = other as f64 / NUM_CLASSES as f64;
            let h = t * 6.0;
            let x = 1.0 - (h % 2.0 - 1.0).abs();
            let (r, g, b) = match h as usize {
                0 => (1.0, x, 0.2),
                1 => (x, 1.0, 0.2),
                2 => (0.2, 1.0, x),
                3 => (0.2, x, 1.0),
                4 => (x, 0.2, 1.0),
                _ => (1.0, 0.2, x),
            };
            [r, g, b]
        }
    }
}

/// Axis-aligned rectangle. `axis` is the normal direction; the rectangle
/// spans `[u0,u1]×[v0,v1]` over the other two axes in ascending order
/// (axis 0 → (y,z), axis 1 → (x,z), axis 2 → (x,y)).
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub axis: usize,
    pub plane: f64,
    pub u0: f64,
    pub u1: f64,
    pub v0: f64,
    pub v1: f64,
    pub class_id: u8,
    /// At equal hit distance, higher priority wins (decals over base walls).
    pub priority: u8,
}

impl Surface {
    pub fn uv_axes(axis: usize) -> (usize, usize) {
        match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    pub fn corner_min(&self) -> Vec3 {
        let (ua, va) = Self::uv_axes(self.axis);
        let mut c = [0.0; 3];
        c[self.axis] = self.plane;
        c[ua] = self.u0;
        c[va] = self.v0;
        c
    }

    pub fn corner_max(&self) -> Vec3 {
        let (ua, va) = Self::uv_axes(self.axis);
        let mut c = [0.0; 3];
        c[self.axis] = self.plane;
        c[ua] = self.u1;
        c[va] = self.v1;
        c
    }

    pub fn from_corners(min: Vec3, max: Vec3, class_id: u8, priority: u8) -> Result<Self> {
        let axis = (0..3)
            .find(|&a| (min[a] - max[a]).abs() < 1e-12)
            .ok_or_else(|| HnrError::Format { offset: 0, msg: "surface corners are not coplanar".into() })?;
        let (ua, va) = Self::uv_axes(axis);
        Ok(Self {
            axis,
            plane: min[axis],
            u0: min[ua],
            u1: max[ua],
            v0: min[va],
            v1: max[va],
            class_id,
            priority,
        })
    }

    /// Ray-rectangle intersection distance, if any (t > 1e-9).
    pub fn hit(&self, ray: &Ray) -> Option<f64> {
        let d = ray.direction[self.axis];
        if d.abs() < 1e-15 {
            return None;
        }
        let t = (self.plane - ray.origin[self.axis]) / d;
        if t <= 1e-9 {
            return None;
        }
        let (ua, va) = Self::uv_axes(self.axis);
        let u = ray.origin[ua] + t * ray.direction[ua];
        let v = ray.origin[va] + t * ray.direction[va];
        if u >= self.u0 && u <= self.u1 && v >= self.v0 && v <= self.v1 {
            Some(t)
        } else {
            None
        }
    }
}

/// Planar room footprint; every room spans z ∈ [0, WALL_HEIGHT].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Room {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Room {
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }
}

/// Door opening in a shared wall between two rooms.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Door {
    /// Normal axis of the wall the door pierces (0 = x-wall, 1 = y-wall).
    pub axis: usize,
    pub plane: f64,
    /// Span of the opening along the wall (the other horizontal axis).
    pub u0: f64,
    pub u1: f64,
    pub rooms: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub rooms: Vec<Room>,
    pub doors: Vec<Door>,
    pub surfaces: Vec<Surface>,
    pub seed: u64,
}

/// Result of casting a ray into a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RaycastHit {
    Hit { distance: f64, class_id: u8 },
    /// The ray left the scene without touching any surface.
    Exit,
}

impl RaycastHit {
    pub fn distance(&self) -> Option<f64> {
        match self {
            RaycastHit::Hit { distance, .. } => Some(*distance),
            RaycastHit::Exit => None,
        }
    }
}

impl Scene {
    /// Exact nearest-surface intersection. Ties at equal distance go to the
    /// higher-priority surface (decals sit on their base wall), then to the
    /// lower surface index.
    pub fn raycast(&self, ray: &Ray) -> RaycastHit {
        let mut best: Option<(f64, u8, usize)> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            if let Some(t) = s.hit(ray) {
                let better = match &best {
                    None => true,
                    Some((bt, bp, _)) => t < *bt || (t == *bt && s.priority > *bp),
                };
                if better {
                    best = Some((t, s.priority, i));
                }
            }
        }
        match best {
            Some((t, _, i)) => RaycastHit::Hit { distance: t, class_id: self.surfaces[i].class_id },
            None => RaycastHit::Exit,
        }
    }

    /// True when the point lies inside some room volume.
    pub fn is_free(&self, p: Vec3) -> bool {
        if p[2] < 0.0 || p[2] > WALL_HEIGHT {
            return false;
        }
        self.rooms.iter().any(|r| r.contains_xy(p[0], p[1]))
    }

    /// True when the straight segment stays in free space (walls block,
    /// door openings pass).
    pub fn segment_free(&self, a: Vec3, b: Vec3) -> bool {
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if len < 1e-12 {
            return self.is_free(a);
        }
        if !self.is_free(a) || !self.is_free(b) {
            return false;
        }
        let ray = Ray::new(a, d);
        match self.raycast(&ray) {
            RaycastHit::Hit { distance, .. } => distance >= len,
            RaycastHit::Exit => true,
        }
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for r in &self.rooms {
            for a in 0..2 {
                min[a] = min[a].min(r.min[a]);
                max[a] = max[a].max(r.max[a]);
            }
        }
        (min, max)
    }
}

// ---------------------------------------------------------------------------
// Serialization (scene JSON schema)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SurfaceJson {
    min: [f64; 3],
    max: [f64; 3],
    class_id: u8,
    priority: u8,
}

#[derive(Serialize, Deserialize)]
pub struct SceneJson {
    pub version: u32,
    pub seed: u64,
    rooms: Vec<Room>,
    doors: Vec<Door>,
    surfaces: Vec<SurfaceJson>,
}

impl From<&Scene> for SceneJson {
    fn from(s: &Scene) -> Self {
        SceneJson {
            version: 1,
            seed: s.seed,
            rooms: s.rooms.clone(),
            doors: s.doors.clone(),
            surfaces: s
                .surfaces
                .iter()
                .map(|r| SurfaceJson {
                    min: r.corner_min(),
                    max: r.corner_max(),
                    class_id: r.class_id,
                    priority: r.priority,
                })
                .collect(),
        }
    }
}

impl TryFrom<SceneJson> for Scene {
    type Error = HnrError;
    fn try_from(j: SceneJson) -> Result<Scene> {
        let surfaces = j
            .surfaces
            .into_iter()
            .map(|s| Surface::from_corners(s.min, s.max, s.class_id, s.priority))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene { rooms: j.rooms, doors: j.doors, surfaces, seed: j.seed })
    }
}

/// Emit wall rectangles for a wall spanning `[u0,u1] × [0, WALL_HEIGHT]`
/// with full-height-to-lintel door holes, plus door-frame decals.
pub(crate) fn wall_with_holes(
    axis: usize,
    plane: f64,
    u0: f64,
    u1: f64,
    holes: &[(f64, f64)],
    out: &mut Vec<Surface>,
) {
    let mut cursor = u0;
    let mut holes = holes.to_vec();
    holes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for &(a, b) in &holes {
        if a > cursor {
            out.push(Surface { axis, plane, u0: cursor, u1: a, v0: 0.0, v1: WALL_HEIGHT, class_id: CLASS_WALL, priority: 0 });
        }
        // Lintel above the opening.
        out.push(Surface { axis, plane, u0: a, u1: b, v0: DOOR_HEIGHT, v1: WALL_HEIGHT, class_id: CLASS_WALL, priority: 0 });
        // Door-frame decals: jamb strips beside and above the opening.
        let frame = 0.15;
        out.push(Surface { axis, plane, u0: a - frame, u1: a, v0: 0.0, v1: DOOR_HEIGHT, class_id: CLASS_DOOR, priority: 1 });
        out.push(Surface { axis, plane, u0: b, u1: b + frame, v0: 0.0, v1: DOOR_HEIGHT, class_id: CLASS_DOOR, priority: 1 });
        out.push(Surface { axis, plane, u0: a - frame, u1: b + frame, v0: DOOR_HEIGHT, v1: DOOR_HEIGHT + frame, class_id: CLASS_DOOR, priority: 1 });
        cursor = b;
    }
    if cursor < u1 {
        out.push(Surface { axis, plane, u0: cursor, u1, v0: 0.0, v1: WALL_HEIGHT, class_id: CLASS_WALL, priority: 0 });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Ray;

    /// Single 4×4×3 room centered at the origin in x,y.
    pub(crate) fn box_room() -> Scene {
        let room = Room { min: [-2.0, -2.0], max: [2.0, 2.0] };
        let mut surfaces = Vec::new();
        wall_with_holes(0, -2.0, -2.0, 2.0, &[], &mut surfaces);
        wall_with_holes(0, 2.0, -2.0, 2.0, &[], &mut surfaces);
        wall_with_holes(1, -2.0, -2.0, 2.0, &[], &mut surfaces);
        wall_with_holes(1, 2.0, -2.0, 2.0, &[], &mut surfaces);
        surfaces.push(Surface { axis: 2, plane: 0.0, u0: -2.0, u1: 2.0, v0: -2.0, v1: 2.0, class_id: CLASS_FLOOR, priority: 0 });
        surfaces.push(Surface { axis: 2, plane: WALL_HEIGHT, u0: -2.0, u1: 2.0, v0: -2.0, v1: 2.0, class_id: CLASS_CEILING, priority: 0 });
        Scene { rooms: vec![room], doors: vec![], surfaces, seed: 0 }
    }

    #[test]
    fn center_ray_hits_wall_at_two_meters() {
        let scene = box_room();
        let ray = Ray::new([0.0, 0.0, 1.5], [1.0, 0.0, 0.0]);
        match scene.raycast(&ray) {
            RaycastHit::Hit { distance, class_id } => {
                assert!((distance - 2.0).abs() < 1e-12);
                assert_eq!(class_id, CLASS_WALL);
            }
            RaycastHit::Exit => panic!("expected hit"),
        }
    }

    #[test]
    fn open_corridor_ray_exits() {
        // Two parallel walls, open at both ends; a ray straight down the
        // middle never hits anything.
        let mut surfaces = Vec::new();
        wall_with_holes(1, -1.0, 0.0, 30.0, &[], &mut surfaces);
        wall_with_holes(1, 1.0, 0.0, 30.0, &[], &mut surfaces);
        let scene = Scene {
            rooms: vec![Room { min: [0.0, -1.0], max: [30.0, 1.0] }],
            doors: vec![],
            surfaces,
            seed: 0,
        };
        let ray = Ray::new([1.0, 0.0, 1.5], [1.0, 0.0, 0.0]);
        assert_eq!(scene.raycast(&ray), RaycastHit::Exit);
    }

    #[test]
    fn raycast_matches_exhaustive_oracle() {
        // Independent re-implementation: test every surface, keep the
        // nearest hit with the same tie rules.
        let scene = super::episode::tests::multi_room_scene(42);
        let mut rng = crate::rng::stream(9, 31);
        use rand::Rng;
        for _ in 0..10_000 {
            let origin = [
                rng.gen_range(-1.0..12.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(0.1..2.9),
            ];
            let dir: Vec3 = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.5..0.5),
            ];
            if dir[0].abs() + dir[1].abs() + dir[2].abs() < 1e-3 {
                continue;
            }
            let ray = Ray::new(origin, dir);
            let got = scene.raycast(&ray);
            let mut best: Option<(f64, u8, usize)> = None;
            for (i, s) in scene.surfaces.iter().enumerate() {
                if let Some(t) = s.hit(&ray) {
                    let replace = match best {
                        None => true,
                        Some((bt, bp, _)) => t < bt || (t == bt && s.priority > bp),
                    };
                    if replace {
                        best = Some((t, s.priority, i));
                    }
                }
            }
            let want = match best {
                Some((t, _, i)) => RaycastHit::Hit { distance: t, class_id: scene.surfaces[i].class_id },
                None => RaycastHit::Exit,
            };
            assert_eq!(got, want);
        }
    }

    #[test]
    fn scene_json_round_trip() {
        let scene = box_room();
        let json = serde_json::to_string(&SceneJson::from(&scene)).unwrap();
        let parsed: SceneJson = serde_json::from_str(&json).unwrap();
        let back: Scene = parsed.try_into().unwrap();
        assert_eq!(back.rooms, scene.rooms);
        assert_eq!(back.surfaces, scene.surfaces);
    }
}
