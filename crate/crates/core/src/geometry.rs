//! Coordinate transforms, projections, and ray construction.
//!
//! Conventions, used consistently everywhere:
//! - world frame is right-handed with z up; headings are radians
//!   counterclockwise from world +x, normalized to [0, 2π);
//! - a camera looks along the +x axis of its local frame; +y is left,
//!   +z is up; pixel column w grows to the right (-y), pixel row h grows
//!   down (-z);
//! - depth means Euclidean range from the camera center along the ray,
//!   matching what the analytic ray caster reports.

use crate::error::{HnrError, Result};

pub const TAU: f64 = std::f64::consts::TAU;

/// Normalize an angle to [0, 2π).
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r.is_sign_negative() {
        r + TAU
    } else {
        r
    }
}

pub type Vec3 = [f64; 3];

pub fn v_add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
pub fn v_sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
pub fn v_scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
pub fn v_dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
pub fn v_norm(a: Vec3) -> f64 {
    v_dot(a, a).sqrt()
}
pub fn v_dist(a: Vec3, b: Vec3) -> f64 {
    v_norm(v_sub(a, b))
}
pub fn v_unit(a: Vec3) -> Vec3 {
    let n = v_norm(a);
    v_scale(a, 1.0 / n)
}

/// Row-major 3×3 matrix.
pub type Mat3 = [[f64; 3]; 3];

pub fn m_identity() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

pub fn m_mul_v(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn m_transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            t[j][i] = x;
        }
    }
    t
}

/// Rotation about the world z axis by `a` radians (counterclockwise).
pub fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn m_is_orthonormal(m: &Mat3, tol: f64) -> bool {
    for i in 0..3 {
        for j in 0..3 {
            let acc: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (acc - want).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Pinhole camera over a feature grid.
///
/// `rotation` maps world vectors into the camera frame; `translation` is the
/// negated camera center, so the center is `-translation`. Intrinsics are in
/// grid-cell units: cell (h, w) is sampled at pixel (h + 0.5, w + 0.5).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub hfov: f64,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: Vec3,
        hfov: f64,
        grid_h: usize,
        grid_w: usize,
    ) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(HnrError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(hfov > 0.0 && hfov < std::f64::consts::PI) {
            return Err(HnrError::InvalidCamera(format!("hfov out of (0, π): {hfov}")));
        }
        if grid_h == 0 || grid_w == 0 {
            return Err(HnrError::InvalidCamera("grid must be at least 1×1".into()));
        }
        if !m_is_orthonormal(&rotation, 1e-9) {
            return Err(HnrError::InvalidCamera("rotation is not orthonormal".into()));
        }
        Ok(Self { fx, fy, cx, cy, rotation, translation, hfov, grid_h, grid_w })
    }

    /// Horizontal camera at `center` looking along `heading`, with intrinsics
    /// derived from `hfov` over a `grid_h × grid_w` grid and square pixels
    /// (vfov follows from the aspect ratio).
    pub fn looking(center: Vec3, heading: f64, hfov: f64, grid_h: usize, grid_w: usize) -> Result<Self> {
        let fx = (grid_w as f64 / 2.0) / (hfov / 2.0).tan();
        let fy = fx;
        let cx = grid_w as f64 / 2.0;
        let cy = grid_h as f64 / 2.0;
        // Camera frame: +x forward, +y left, +z up. A point in the world is
        // brought into this frame by rotating by -heading.
        let rotation = rot_z(-heading);
        let translation = v_scale(center, -1.0);
        Self::new(fx, fy, cx, cy, rotation, translation, hfov, grid_h, grid_w)
    }

    pub fn center(&self) -> Vec3 {
        v_scale(self.translation, -1.0)
    }

    /// Heading of the optical axis in the world frame.
    pub fn heading(&self) -> f64 {
        let axis = m_mul_v(&m_transpose(&self.rotation), [1.0, 0.0, 0.0]);
        normalize_angle(axis[1].atan2(axis[0]))
    }

    /// Unit direction through the center of cell (h, w), in the world frame.
    pub fn cell_direction(&self, h: usize, w: usize) -> Vec3 {
        self.pixel_direction(h as f64 + 0.5, w as f64 + 0.5)
    }

    /// Unit direction through pixel (ph, pw) in grid units.
    pub fn pixel_direction(&self, ph: f64, pw: f64) -> Vec3 {
        let cam = [1.0, -(pw - self.cx) / self.fx, -(ph - self.cy) / self.fy];
        let world = m_mul_v(&m_transpose(&self.rotation), cam);
        v_unit(world)
    }

    /// Ray through the center of cell (h, w).
    pub fn cell_ray(&self, h: usize, w: usize) -> Ray {
        Ray::new(self.center(), self.cell_direction(h, w))
    }
}

/// Half-line with a precomputed horizontal heading.
#[derive(Debug, Clone, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub horizontal_heading: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        let direction = v_unit(direction);
        let horizontal_heading = normalize_angle(direction[1].atan2(direction[0]));
        Self { origin, direction, horizontal_heading }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        v_add(self.origin, v_scale(self.direction, t))
    }
}

/// Planar pose: position plus horizontal heading.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pose2p5D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
}

impl Pose2p5D {
    pub fn new(x: f64, y: f64, z: f64, heading: f64) -> Self {
        Self { x, y, z, heading: normalize_angle(heading) }
    }

    pub fn position(&self) -> Vec3 {
        [self.x, self.y, self.z]
    }

    pub fn horizontal_distance(&self, other: &Pose2p5D) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Map cell (h, w) at `depth` meters of range to its world position.
pub fn unproject(cam: &CameraModel, cell: (usize, usize), depth: f64) -> Result<Vec3> {
    if depth <= 0.0 {
        return Err(HnrError::Contract(format!("unproject requires depth > 0, got {depth}")));
    }
    let (h, w) = cell;
    if h >= cam.grid_h || w >= cam.grid_w {
        return Err(HnrError::Contract(format!(
            "cell ({h},{w}) outside grid {}×{}",
            cam.grid_h, cam.grid_w
        )));
    }
    Ok(cam.cell_ray(h, w).at(depth))
}

/// Inverse of [`unproject`]: cell indices and range of a world point.
///
/// Returns an error when the point is not in front of the camera or its
/// projection falls outside the grid.
pub fn project(cam: &CameraModel, point: Vec3) -> Result<((usize, usize), f64)> {
    let rel = v_add(m_mul_v(&cam.rotation, point), m_mul_v(&cam.rotation, cam.translation));
    if rel[0] <= 0.0 {
        return Err(HnrError::Contract("point behind camera".into()));
    }
    let pw = cam.cx - cam.fx * rel[1] / rel[0];
    let ph = cam.cy - cam.fy * rel[2] / rel[0];
    let w = pw.floor();
    let h = ph.floor();
    if h < 0.0 || w < 0.0 || h >= cam.grid_h as f64 || w >= cam.grid_w as f64 {
        return Err(HnrError::Contract("projection outside grid".into()));
    }
    Ok(((h as usize, w as usize), v_norm(rel)))
}

/// Footprint (meters) of one grid cell at `depth`.
pub fn region_size(cam: &CameraModel, depth: f64) -> f64 {
    (1.0 / cam.grid_w as f64) * (cam.hfov / 2.0).tan() * depth
}

/// Offset of `feature_pos` from `sample_pos`, rotated into the frame of a ray
/// with horizontal heading `ray_heading`: x along the ray's horizontal
/// direction, y to its left, z up.
pub fn relative_position(feature_pos: Vec3, sample_pos: Vec3, ray_heading: f64) -> Vec3 {
    let dx = feature_pos[0] - sample_pos[0];
    let dy = feature_pos[1] - sample_pos[1];
    let dz = feature_pos[2] - sample_pos[2];
    let (s, c) = ray_heading.sin_cos();
    [dx * c + dy * s, dy * c - dx * s, dz]
}

/// [sin(θ−Θ), cos(θ−Θ)] of a feature heading relative to a ray heading.
pub fn relative_orientation(feature_heading: f64, ray_heading: f64) -> [f64; 2] {
    let d = feature_heading - ray_heading;
    [d.sin(), d.cos()]
}

/// `n_views` headings spaced 2π/n starting at `base_heading`.
pub fn panorama_headings(n_views: usize, base_heading: f64) -> Vec<f64> {
    assert!(n_views >= 1, "panorama needs at least one view");
    (0..n_views)
        .map(|i| normalize_angle(base_heading + TAU * i as f64 / n_views as f64))
        .collect()
}
