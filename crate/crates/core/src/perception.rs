//! Multi-camera point-cloud fusion into per-object centroids.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{voxelize, CodecError, WorkspaceBounds};
use crate::observation::{Observation, ObservationError};
use crate::par;

/// Default edge of the downsampling grid used by [`CentroidStrategy::Prune`].
pub const DEFAULT_PRUNE_VOXEL: f64 = 0.02;

pub type Point = [f64; 3];

/// Points of one object as seen by one camera, world frame, meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedCloud {
    pub camera_id: String,
    pub object_name: String,
    pub points: Vec<Point>,
}

impl MaskedCloud {
    pub fn new(camera_id: impl Into<String>, object_name: impl Into<String>, points: Vec<Point>) -> Self {
        Self {
            camera_id: camera_id.into(),
            object_name: object_name.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentroidStrategy {
    /// Mean of the per-camera centroids.
    Standard,
    /// Centroid of the union of all points.
    Concat,
    /// Union, voxel-grid downsampled (one mean point per cell), then centroid.
    #[default]
    Prune,
}

impl CentroidStrategy {
    pub const ALL: [CentroidStrategy; 3] = [Self::Standard, Self::Concat, Self::Prune];

    pub fn name(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::Concat => "concat",
            Self::Prune => "prune",
        }
    }
}

impl fmt::Display for CentroidStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CentroidStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown centroid strategy '{s}'"))
    }
}

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("no points for object '{0}'")]
    EmptyObject(String),
    #[error("non-finite point in cloud of '{object}' from camera '{camera}'")]
    NonFinite { object: String, camera: String },
    #[error("voxel size must be positive, got {0}")]
    InvalidVoxelSize(f64),
    #[error("object '{object}': {source}")]
    Codec {
        object: String,
        #[source]
        source: CodecError,
    },
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error("fixture line {line}: {msg}")]
    Fixture { line: usize, msg: String },
}

fn mean(points: &[Point]) -> Point {
    let mut acc = [0.0; 3];
    for p in points {
        for axis in 0..3 {
            acc[axis] += p[axis];
        }
    }
    let n = points.len() as f64;
    acc.map(|s| s / n)
}

/// One representative per occupied cell of edge `voxel_size`: the mean of
/// the points in that cell. Cells are visited in key order.
pub fn voxel_downsample(points: &[Point], voxel_size: f64) -> Vec<Point> {
    let mut cells: BTreeMap<[i64; 3], ([f64; 3], usize)> = BTreeMap::new();
    for p in points {
        let key = p.map(|c| (c / voxel_size).floor() as i64);
        let cell = cells.entry(key).or_insert(([0.0; 3], 0));
        for (s, c) in cell.0.iter_mut().zip(p) {
            *s += c;
        }
        cell.1 += 1;
    }
    cells
        .into_values()
        .map(|(sum, n)| sum.map(|s| s / n as f64))
        .collect()
}

/// Fused centroid of one object from all its camera clouds.
pub fn extract_centroid(
    clouds: &[MaskedCloud],
    strategy: CentroidStrategy,
    voxel_size: f64,
) -> Result<Point, PerceptionError> {
    let object = clouds
        .first()
        .map(|c| c.object_name.clone())
        .unwrap_or_default();
    for c in clouds {
        if c.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PerceptionError::NonFinite {
                object: c.object_name.clone(),
                camera: c.camera_id.clone(),
            });
        }
    }
    let visible: Vec<&MaskedCloud> = clouds.iter().filter(|c| !c.points.is_empty()).collect();
    if visible.is_empty() {
        return Err(PerceptionError::EmptyObject(object));
    }
    let union = || -> Vec<Point> {
        visible
            .iter()
            .flat_map(|c| c.points.iter().copied())
            .collect()
    };
    let centroid = match strategy {
        CentroidStrategy::Standard => {
            let per_camera: Vec<Point> = visible.iter().map(|c| mean(&c.points)).collect();
            mean(&per_camera)
        }
        CentroidStrategy::Concat => mean(&union()),
        CentroidStrategy::Prune => {
            if !(voxel_size > 0.0 && voxel_size.is_finite()) {
                return Err(PerceptionError::InvalidVoxelSize(voxel_size));
            }
            mean(&voxel_downsample(&union(), voxel_size))
        }
    };
    Ok(centroid)
}

/// Fuses each object's clouds and voxelizes the centroid. Output order
/// follows input order; objects are fused concurrently.
pub fn build_observation(
    object_clouds: &IndexMap<String, Vec<MaskedCloud>>,
    strategy: CentroidStrategy,
    voxel_size: f64,
    bounds: &WorkspaceBounds,
) -> Result<Observation, PerceptionError> {
    let objects: Vec<(&String, &Vec<MaskedCloud>)> = object_clouds.iter().collect();
    let voxels = par::map(&objects, |_, (name, clouds)| {
        let centroid = extract_centroid(clouds, strategy, voxel_size).map_err(|e| match e {
            PerceptionError::EmptyObject(_) => PerceptionError::EmptyObject((*name).clone()),
            other => other,
        })?;
        voxelize(centroid, bounds).map_err(|source| PerceptionError::Codec {
            object: (*name).clone(),
            source,
        })
    });
    let mut obs = Observation::new();
    for ((name, _), voxel) in objects.into_iter().zip(voxels) {
        obs.insert(name.clone(), voxel?)?;
    }
    Ok(obs)
}

/// Euclidean distance in centimeters.
pub fn centroid_error(estimated: Point, ground_truth: Point) -> f64 {
    let d2: f64 = (0..3).map(|i| (estimated[i] - ground_truth[i]).powi(2)).sum();
    d2.sqrt() * 100.0
}

/// Parses a point fixture: one `camera_id object_name x y z` record per
/// line, `#` starts a comment. Objects and cameras keep first-seen order.
pub fn parse_cloud_fixture(text: &str) -> Result<IndexMap<String, Vec<MaskedCloud>>, PerceptionError> {
    let mut out: IndexMap<String, Vec<MaskedCloud>> = IndexMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [camera, object, x, y, z] = fields.as_slice() else {
            return Err(PerceptionError::Fixture {
                line: i + 1,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        };
        let mut p = [0.0; 3];
        for (slot, s) in p.iter_mut().zip([x, y, z]) {
            *slot = s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PerceptionError::Fixture {
                    line: i + 1,
                    msg: format!("invalid coordinate '{s}'"),
                })?;
        }
        let clouds = out.entry((*object).to_string()).or_default();
        match clouds.iter_mut().find(|c| c.camera_id == *camera) {
            Some(c) => c.points.push(p),
            None => clouds.push(MaskedCloud::new(*camera, *object, vec![p])),
        }
    }
    Ok(out)
}

pub mod synthetic {
    //! Box-shaped objects observed by simple pinhole-free cameras: each
    //! camera samples the faces turned towards it (never the bottom face,
    //! which rests on the table), optionally clipped by an occluder plane,
    //! with isotropic Gaussian noise on every coordinate.

    use rand::Rng;
    use rand_distr::{Distribution, Normal};
    use serde::{Deserialize, Serialize};

    use super::{MaskedCloud, Point};

    #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
    pub struct BoxObject {
        pub center: Point,
        pub half_extents: [f64; 3],
    }

    /// Keeps only points `p` with `dot(p - center, normal) >= min_fraction * r`,
    /// where `r` is the box's support extent along `normal`.
    #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
    pub struct Occluder {
        pub normal: [f64; 3],
        pub min_fraction: f64,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct Camera {
        pub id: String,
        /// Camera position relative to the object centre.
        pub relative_position: [f64; 3],
        /// Expected points per square meter of visible surface.
        pub density: f64,
        pub occluder: Option<Occluder>,
    }

    fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    /// Faces as (normal axis, sign); bottom (z, -1) excluded.
    const FACES: [(usize, f64); 5] = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0)];

    pub fn sample_camera<R: Rng + ?Sized>(
        rng: &mut R,
        object_name: &str,
        obj: &BoxObject,
        cam: &Camera,
        noise_sigma: f64,
    ) -> MaskedCloud {
        let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
        let h = obj.half_extents;
        let mut points = Vec::new();
        for (axis, sign) in FACES {
            let mut normal = [0.0; 3];
            normal[axis] = sign;
            let mut face_center_rel = [0.0; 3];
            face_center_rel[axis] = sign * h[axis];
            let to_cam = [
                cam.relative_position[0] - face_center_rel[0],
                cam.relative_position[1] - face_center_rel[1],
                cam.relative_position[2] - face_center_rel[2],
            ];
            if dot(normal, to_cam) <= 0.0 {
                continue;
            }
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let area = 4.0 * h[u] * h[v];
            let count = (cam.density * area).round() as usize;
            for _ in 0..count {
                let mut rel = face_center_rel;
                rel[u] = rng.random_range(-h[u]..=h[u]);
                rel[v] = rng.random_range(-h[v]..=h[v]);
                if let Some(occ) = &cam.occluder {
                    let support: f64 = (0..3).map(|i| occ.normal[i].abs() * h[i]).sum();
                    if dot(rel, occ.normal) < occ.min_fraction * support {
                        continue;
                    }
                }
                let p = [
                    obj.center[0] + rel[0] + noise.sample(rng),
                    obj.center[1] + rel[1] + noise.sample(rng),
                    obj.center[2] + rel[2] + noise.sample(rng),
                ];
                points.push(p);
            }
        }
        MaskedCloud::new(cam.id.clone(), object_name, points)
    }

    pub fn sample_object<R: Rng + ?Sized>(
        rng: &mut R,
        object_name: &str,
        obj: &BoxObject,
        cameras: &[Camera],
        noise_sigma: f64,
    ) -> Vec<MaskedCloud> {
        cameras
            .iter()
            .map(|cam| sample_camera(rng, object_name, obj, cam, noise_sigma))
            .collect()
    }

    /// A desk rig: one dense front camera, two shoulder cameras, an overhead
    /// camera and a sparse wrist camera that only sees one corner.
    pub fn desk_rig<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Vec<Camera> {
        let mut d = |lo: f64, hi: f64| rng.random_range(lo..hi) * scale;
        let diag = std::f64::consts::FRAC_1_SQRT_2;
        vec![
            Camera {
                id: "front".into(),
                relative_position: [1.0, 0.0, 0.4],
                density: d(60_000.0, 90_000.0),
                occluder: None,
            },
            Camera {
                id: "over_shoulder_left".into(),
                relative_position: [-0.4, -0.8, 0.8],
                density: d(10_000.0, 30_000.0),
                occluder: None,
            },
            Camera {
                id: "over_shoulder_right".into(),
                relative_position: [-0.4, 0.8, 0.8],
                density: d(10_000.0, 30_000.0),
                occluder: None,
            },
            Camera {
                id: "overhead".into(),
                relative_position: [0.0, 0.0, 1.2],
                density: d(10_000.0, 30_000.0),
                occluder: None,
            },
            Camera {
                id: "wrist_right".into(),
                relative_position: [0.3, 0.3, 0.2],
                density: d(3_000.0, 6_000.0),
                occluder: Some(Occluder {
                    normal: [diag, diag, 0.0],
                    min_fraction: 0.5,
                }),
            },
        ]
    }

    /// One trial of the noisy localisation benchmark: a random box on the
    /// desk seen by a randomized [`desk_rig`], noise sigma 5 mm.
    pub fn benchmark_trial<R: Rng + ?Sized>(rng: &mut R) -> (BoxObject, Vec<MaskedCloud>) {
        let obj = BoxObject {
            center: [
                rng.random_range(0.0..0.4),
                rng.random_range(-0.3..0.3),
                rng.random_range(0.8..0.9),
            ],
            half_extents: [
                rng.random_range(0.02..0.06),
                rng.random_range(0.02..0.06),
                rng.random_range(0.02..0.06),
            ],
        };
        let cams = desk_rig(rng, 1.0);
        let clouds = sample_object(rng, "object", &obj, &cams, 0.005);
        (obj, clouds)
    }
}
