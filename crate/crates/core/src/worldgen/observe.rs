//! Observation synthesis: depth, semantic features, and RGB per view.

use super::{class_color, ClassEmbedder, RaycastHit, Scene, NUM_CLASSES};
use crate::error::{HnrError, Result};
use crate::geometry::{panorama_headings, CameraModel, Pose2p5D, Vec3};

/// Supersampling factor per cell edge for class-mix features.
const SUPERSAMPLE: usize = 4;

/// One rendered view of the scene from a pose.
#[derive(Debug, Clone)]
pub struct ViewObservation {
    pub cam: CameraModel,
    /// Per cell, row-major; `None` where the center ray exits the scene.
    pub depth: Vec<Option<f64>>,
    /// Unit class-mix vector per cell, zero vector where nothing was hit.
    pub features: Vec<Vec<f64>>,
    pub rgb: Vec<[f64; 3]>,
}

fn cell_class_weights(scene: &Scene, cam: &CameraModel, h: usize, w: usize) -> [f64; NUM_CLASSES] {
    let mut weights = [0.0; NUM_CLASSES];
    for sh in 0..SUPERSAMPLE {
        for sw in 0..SUPERSAMPLE {
            let ph = h as f64 + (sh as f64 + 0.5) / SUPERSAMPLE as f64;
            let pw = w as f64 + (sw as f64 + 0.5) / SUPERSAMPLE as f64;
            let ray = crate::geometry::Ray::new(cam.center(), cam.pixel_direction(ph, pw));
            if let RaycastHit::Hit { class_id, .. } = scene.raycast(&ray) {
                weights[class_id as usize] += 1.0;
            }
        }
    }
    weights
}

/// Render one panorama: `n_views` views of feature/depth/rgb grids.
///
/// Depth is sampled at cell centers from the exact ray caster; features are
/// the supersampled class mix re-normalized to unit length; RGB is the hit
/// class color with distance shading.
pub fn observe(
    scene: &Scene,
    pose: &Pose2p5D,
    embedder: &ClassEmbedder,
    hfov: f64,
    grid_h: usize,
    grid_w: usize,
    n_views: usize,
) -> Result<Vec<ViewObservation>> {
    if !scene.is_free(pose.position()) {
        return Err(HnrError::Contract(format!(
            "observe pose ({}, {}, {}) is inside solid geometry",
            pose.x, pose.y, pose.z
        )));
    }
    let headings = panorama_headings(n_views, pose.heading);
    let mut views = Vec::with_capacity(n_views);
    for heading in headings {
        let cam = CameraModel::looking(pose.position(), heading, hfov, grid_h, grid_w)?;
        let mut depth = Vec::with_capacity(grid_h * grid_w);
        let mut features = Vec::with_capacity(grid_h * grid_w);
        let mut rgb = Vec::with_capacity(grid_h * grid_w);
        for h in 0..grid_h {
            for w in 0..grid_w {
                let ray = cam.cell_ray(h, w);
                match scene.raycast(&ray) {
                    RaycastHit::Hit { distance, class_id } => {
                        depth.push(Some(distance));
                        let weights = cell_class_weights(scene, &cam, h, w);
                        let feat = embedder
                            .mix(&weights)
                            .unwrap_or_else(|| embedder.embed(class_id).to_vec());
                        features.push(feat);
                        let shade = 1.0 / (1.0 + 0.12 * distance);
                        let base = class_color(class_id);
                        rgb.push([base[0] * shade, base[1] * shade, base[2] * shade]);
                    }
                    RaycastHit::Exit => {
                        depth.push(None);
                        features.push(vec![0.0; embedder.dim()]);
                        rgb.push([0.0; 3]);
                    }
                }
            }
        }
        views.push(ViewObservation { cam, depth, features, rgb });
    }
    Ok(views)
}

/// Ground-truth alignment targets for one future view: the per-cell class-mix
/// embeddings and the whole-view embedding (normalized mean of valid cells).
///
/// Returns `(region_targets, view_target, valid_mask)`.
pub fn oracle_targets(
    scene: &Scene,
    position: Vec3,
    heading: f64,
    embedder: &ClassEmbedder,
    hfov: f64,
    grid_h: usize,
    grid_w: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<bool>)> {
    let cam = CameraModel::looking(position, heading, hfov, grid_h, grid_w)?;
    let mut regions = Vec::with_capacity(grid_h * grid_w);
    let mut valid = Vec::with_capacity(grid_h * grid_w);
    let mut mean = vec![0.0; embedder.dim()];
    let mut n_valid = 0.0;
    for h in 0..grid_h {
        for w in 0..grid_w {
            let weights = cell_class_weights(scene, &cam, h, w);
            match embedder.mix(&weights) {
                Some(feat) => {
                    for (m, x) in mean.iter_mut().zip(&feat) {
                        *m += x;
                    }
                    n_valid += 1.0;
                    regions.push(feat);
                    valid.push(true);
                }
                None => {
                    regions.push(vec![0.0; embedder.dim()]);
                    valid.push(false);
                }
            }
        }
    }
    if n_valid == 0.0 {
        return Err(HnrError::Contract("future view sees no surface at all".into()));
    }
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for m in &mut mean {
            *m /= norm;
        }
    }
    Ok((regions, mean, valid))
}

/// Histogram of classes visible from a pose over a coarse panoramic probe.
/// Used for instruction landmarks.
pub fn panorama_class_histogram(scene: &Scene, position: Vec3) -> [usize; NUM_CLASSES] {
    let mut hist = [0usize; NUM_CLASSES];
    for i in 0..24 {
        let heading = i as f64 / 24.0 * crate::geometry::TAU;
        for &pitch in &[-0.5f64, -0.2, 0.0, 0.2] {
            let dir = [
                heading.cos() * pitch.cos(),
                heading.sin() * pitch.cos(),
                pitch.sin(),
            ];
            let ray = crate::geometry::Ray::new(position, dir);
            if let RaycastHit::Hit { class_id, .. } = scene.raycast(&ray) {
                hist[class_id as usize] += 1;
            }
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::tests::box_room;
    use crate::worldgen::{Surface, CLASS_DOOR, CLASS_WALL};

    #[test]
    fn single_class_cell_is_exact_embedding() {
        let scene = box_room();
        let embedder = ClassEmbedder::new(1, 32);
        let pose = Pose2p5D::new(0.0, 0.0, 1.5, 0.0);
        let views = observe(&scene, &pose, &embedder, std::f64::consts::FRAC_PI_2, 7, 7, 1).unwrap();
        // Central cell looks straight at the wall two meters ahead.
        let center = 3 * 7 + 3;
        let feat = &views[0].features[center];
        let cos = super::super::embedder::cosine(feat, embedder.embed(CLASS_WALL));
        assert!(cos > 1.0 - 1e-9, "cos {cos}");
        let d = views[0].depth[center].unwrap();
        assert!(d >= 2.0 && d < 2.1);
    }

    #[test]
    fn equal_mix_cell() {
        // Paint the right half of the facing wall with a decal so a cell
        // straddling the boundary mixes the two classes equally.
        let mut scene = box_room();
        scene.surfaces.push(Surface {
            axis: 0,
            plane: 2.0,
            u0: 0.0,
            u1: 2.0,
            v0: 0.0,
            v1: 3.0,
            class_id: CLASS_DOOR,
            priority: 1,
        });
        let embedder = ClassEmbedder::new(1, 32);
        // A 1×1 grid with a narrow fov centered on the boundary at y=0.
        let pose = Pose2p5D::new(0.0, 0.0, 1.5, 0.0);
        let views = observe(&scene, &pose, &embedder, 0.4, 1, 1, 1).unwrap();
        let feat = &views[0].features[0];
        let mut expected = [0.0; NUM_CLASSES];
        expected[CLASS_WALL as usize] = 1.0;
        expected[CLASS_DOOR as usize] = 1.0;
        let want = embedder.mix(&expected).unwrap();
        let cos = super::super::embedder::cosine(feat, &want);
        assert!(cos > 1.0 - 1e-9, "cos {cos}");
    }

    #[test]
    fn depth_grid_matches_raycast_oracle() {
        let scene = box_room();
        let embedder = ClassEmbedder::new(1, 16);
        let pose = Pose2p5D::new(0.3, -0.4, 1.5, 1.1);
        let views = observe(&scene, &pose, &embedder, std::f64::consts::FRAC_PI_2, 5, 5, 4).unwrap();
        for view in &views {
            for h in 0..5 {
                for w in 0..5 {
                    let ray = view.cam.cell_ray(h, w);
                    let want = scene.raycast(&ray).distance();
                    assert_eq!(view.depth[h * 5 + w], want);
                }
            }
        }
    }

    #[test]
    fn view_target_is_mean_of_regions() {
        let scene = box_room();
        let embedder = ClassEmbedder::new(1, 16);
        let (regions, view, valid) = oracle_targets(
            &scene,
            [0.0, 0.0, 1.5],
            0.7,
            &embedder,
            std::f64::consts::FRAC_PI_2,
            7,
            7,
        )
        .unwrap();
        let mut mean = vec![0.0; 16];
        for (r, &ok) in regions.iter().zip(&valid) {
            if ok {
                for (m, x) in mean.iter_mut().zip(r) {
                    *m += x;
                }
            }
        }
        let n = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        for m in &mut mean {
            *m /= n;
        }
        for (a, b) in mean.iter().zip(&view) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn observe_rejects_pose_in_solid() {
        let scene = box_room();
        let embedder = ClassEmbedder::new(1, 16);
        let pose = Pose2p5D::new(10.0, 0.0, 1.5, 0.0);
        assert!(observe(&scene, &pose, &embedder, 1.0, 3, 3, 1).is_err());
    }
}
