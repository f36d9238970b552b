//! Append-only semantic feature cloud with a spatial index.
//!
//! Each entry carries a feature vector, its world position, the horizontal
//! heading of the view that produced it, and the metric footprint of its
//! grid cell. Ingestion appends one entry per grid cell and rebuilds the
//! KD-tree; queries on a frozen cloud are safe to share across threads.

use crate::error::{HnrError, Result};
use crate::geometry::{region_size, unproject, CameraModel, Vec3};
use crate::kdtree::{KdTree, Neighbor};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEntry {
    pub feature: Vec<f64>,
    pub position: Vec3,
    pub heading: f64,
    pub region_size: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FeatureCloud {
    entries: Vec<FeatureEntry>,
    index: KdTree,
    dim: usize,
}

impl FeatureCloud {
    pub fn new(dim: usize) -> Self {
        Self { entries: Vec::new(), index: KdTree::default(), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> &FeatureEntry {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    /// Append one observation: per view, one entry per grid cell with a
    /// valid depth. Cells whose depth is `None` (rays that exited the scene)
    /// are skipped.
    pub fn ingest_observation(
        &mut self,
        cams: &[CameraModel],
        feature_grids: &[Vec<Vec<f64>>],
        depth_grids: &[Vec<Option<f64>>],
    ) -> Result<()> {
        if cams.len() != feature_grids.len() || cams.len() != depth_grids.len() {
            return Err(HnrError::Contract(format!(
                "ingest arity mismatch: {} cams, {} feature grids, {} depth grids",
                cams.len(),
                feature_grids.len(),
                depth_grids.len()
            )));
        }
        for ((cam, feats), depths) in cams.iter().zip(feature_grids).zip(depth_grids) {
            let cells = cam.grid_h * cam.grid_w;
            if feats.len() != cells || depths.len() != cells {
                return Err(HnrError::Contract(format!(
                    "grid size mismatch: camera {}×{} vs {} features / {} depths",
                    cam.grid_h,
                    cam.grid_w,
                    feats.len(),
                    depths.len()
                )));
            }
            let heading = cam.heading();
            for h in 0..cam.grid_h {
                for w in 0..cam.grid_w {
                    let i = h * cam.grid_w + w;
                    let Some(depth) = depths[i] else { continue };
                    let feature = &feats[i];
                    if feature.len() != self.dim {
                        return Err(HnrError::Dimension { expected: self.dim, got: feature.len() });
                    }
                    let position = unproject(cam, (h, w), depth)?;
                    self.entries.push(FeatureEntry {
                        feature: feature.clone(),
                        position,
                        heading,
                        region_size: region_size(cam, depth),
                    });
                }
            }
        }
        self.rebuild_index();
        Ok(())
    }

    /// Append a raw entry (test fixtures, benches).
    pub fn push_entry(&mut self, entry: FeatureEntry) -> Result<()> {
        if entry.feature.len() != self.dim {
            return Err(HnrError::Dimension { expected: self.dim, got: entry.feature.len() });
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Rebuild the KD-tree to cover all entries. `push_entry` callers must
    /// invoke this before querying.
    pub fn rebuild_index(&mut self) {
        self.index = KdTree::build(self.entries.iter().map(|e| e.position).collect());
    }

    /// Up to `k` nearest entries within `radius`, nearest first, ties by
    /// insertion order.
    pub fn knn_radius(&self, query: Vec3, k: usize, radius: f64) -> Vec<Neighbor> {
        debug_assert!(k >= 1 && radius > 0.0);
        self.index.knn_radius(query, k, radius)
    }

    /// Exhaustive-scan twin of [`knn_radius`], for oracle comparisons and the
    /// no-index benchmark variant.
    pub fn knn_radius_linear(&self, query: Vec3, k: usize, radius: f64) -> Vec<Neighbor> {
        let points: Vec<[f64; 3]> = self.entries.iter().map(|e| e.position).collect();
        crate::kdtree::linear_knn_radius(&points, query, k, radius)
    }

    pub fn has_neighbor_within(&self, query: Vec3, radius: f64) -> bool {
        debug_assert!(radius > 0.0);
        self.index.has_within(query, radius)
    }

    pub fn has_neighbor_within_linear(&self, query: Vec3, radius: f64) -> bool {
        let r_sq = radius * radius;
        self.entries.iter().any(|e| {
            let d = [
                e.position[0] - query[0],
                e.position[1] - query[1],
                e.position[2] - query[2],
            ];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r_sq
        })
    }

    /// Distance from `query` to the nearest entry, if any.
    pub fn nearest_dist(&self, query: Vec3) -> Option<f64> {
        self.index.nearest_dist(query)
    }

    pub fn nearest_dist_linear(&self, query: Vec3) -> Option<f64> {
        self.entries
            .iter()
            .map(|e| {
                let dx = e.position[0] - query[0];
                let dy = e.position[1] - query[1];
                let dz = e.position[2] - query[2];
                (dx * dx + dy * dy + dz * dz).sqrt()
            })
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::with_capacity(16 + self.entries.len() * (5 + self.dim) * 4);
        buf.extend_from_slice(b"FCLD");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            for &p in &e.position {
                buf.extend_from_slice(&(p as f32).to_le_bytes());
            }
            buf.extend_from_slice(&(e.heading as f32).to_le_bytes());
            buf.extend_from_slice(&(e.region_size as f32).to_le_bytes());
            for &f in &e.feature {
                buf.extend_from_slice(&(f as f32).to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
            if *pos + n > buf.len() {
                return Err(HnrError::Format {
                    offset: *pos as u64,
                    msg: format!("truncated while reading {what}"),
                });
            }
            let s = &buf[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4, "magic")? != b"FCLD" {
            return Err(HnrError::Format { offset: 0, msg: "bad magic, expected FCLD".into() });
        }
        let version = u32::from_le_bytes(take(&mut pos, 4, "version")?.try_into().unwrap());
        if version != 1 {
            return Err(HnrError::Format { offset: 4, msg: format!("unsupported version {version}") });
        }
        let dim = u32::from_le_bytes(take(&mut pos, 4, "dim")?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(take(&mut pos, 8, "count")?.try_into().unwrap()) as usize;
        let mut cloud = FeatureCloud::new(dim);
        let f32_at = |pos: &mut usize, what: &str| -> Result<f64> {
            let b = take(pos, 4, what)?;
            Ok(f32::from_le_bytes(b.try_into().unwrap()) as f64)
        };
        for _ in 0..count {
            let position = [
                f32_at(&mut pos, "position")?,
                f32_at(&mut pos, "position")?,
                f32_at(&mut pos, "position")?,
            ];
            let heading = f32_at(&mut pos, "heading")?;
            let region_size = f32_at(&mut pos, "region_size")?;
            let mut feature = Vec::with_capacity(dim);
            for _ in 0..dim {
                feature.push(f32_at(&mut pos, "feature")?);
            }
            cloud.entries.push(FeatureEntry { feature, position, heading, region_size });
        }
        if pos != buf.len() {
            return Err(HnrError::Format {
                offset: pos as u64,
                msg: format!("{} trailing bytes after {count} entries", buf.len() - pos),
            });
        }
        cloud.rebuild_index();
        Ok(cloud)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::m_identity;
    use rand::Rng;

    fn entry_at(p: Vec3, dim: usize) -> FeatureEntry {
        FeatureEntry { feature: vec![1.0; dim], position: p, heading: 0.0, region_size: 0.1 }
    }

    #[test]
    fn single_cell_ingest_places_entry_on_axis() {
        let cam = CameraModel::new(
            1.0,
            1.0,
            0.5,
            0.5,
            m_identity(),
            [0.0; 3],
            std::f64::consts::FRAC_PI_2,
            1,
            1,
        )
        .unwrap();
        let mut cloud = FeatureCloud::new(4);
        cloud
            .ingest_observation(&[cam], &[vec![vec![0.5; 4]]], &[vec![Some(1.0)]])
            .unwrap();
        assert_eq!(cloud.len(), 1);
        let e = cloud.entry(0);
        assert!((e.position[0] - 1.0).abs() < 1e-12);
        assert!(e.position[1].abs() < 1e-12 && e.position[2].abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut cloud = FeatureCloud::new(4);
        assert!(matches!(
            cloud.push_entry(entry_at([0.0; 3], 3)),
            Err(HnrError::Dimension { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn predicate_matches_knn_nonempty() {
        let mut cloud = FeatureCloud::new(2);
        let mut rng = crate::rng::stream(5, 23);
        for _ in 0..500 {
            cloud
                .push_entry(entry_at(
                    [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
                    2,
                ))
                .unwrap();
        }
        cloud.rebuild_index();
        for _ in 0..200 {
            let q = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let has = cloud.has_neighbor_within(q, 0.7);
            let knn = cloud.knn_radius(q, 1, 0.7);
            assert_eq!(has, !knn.is_empty());
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.fcld");
        let mut cloud = FeatureCloud::new(3);
        let mut rng = crate::rng::stream(7, 29);
        for _ in 0..100 {
            cloud
                .push_entry(FeatureEntry {
                    // f32-representable values so the round trip is bit-exact.
                    feature: (0..3).map(|_| rng.gen_range(-100i32..100) as f64 * 0.5).collect(),
                    position: [
                        rng.gen_range(-100i32..100) as f64 * 0.25,
                        rng.gen_range(-100i32..100) as f64 * 0.25,
                        rng.gen_range(-100i32..100) as f64 * 0.25,
                    ],
                    heading: 0.5,
                    region_size: 0.25,
                })
                .unwrap();
        }
        cloud.rebuild_index();
        cloud.save(&path).unwrap();
        let loaded = FeatureCloud::load(&path).unwrap();
        assert_eq!(loaded.entries(), cloud.entries());

        // Truncation is a format error.
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 2]).unwrap();
        assert!(matches!(FeatureCloud::load(&path), Err(HnrError::Format { .. })));

        // An empty cloud round-trips.
        let empty = FeatureCloud::new(5);
        empty.save(&path).unwrap();
        let loaded = FeatureCloud::load(&path).unwrap();
        assert_eq!(loaded.len(), 0);
        assert_eq!(loaded.dim(), 5);
    }
}
