//! Pinhole camera rays and their encodings for 3D pose conditioning.
//!
//! A camera produces one ray per pixel, `r = (o, d)` with shared origin `o`
//! (the camera center) and unit direction `d` in world coordinates. Rays can
//! be compressed to a single combined point — the unit-distance point along
//! the ray, its image-plane intersection, or its intersection with an
//! object-centered sphere — and expressed in cartesian or polar coordinates
//! before sinusoidal encoding into a channel grid.
//!
//! The training pipeline of this crate uses 2D coordinate windows for pose;
//! the 3D ray machinery here is exercised by tests and available for
//! renderer-backed datasets.

use crate::error::{CoreError, Result};
use crate::network::posenc::{self, PosEncodingConfig};
use soda_numerics::{Array, Scalar};

const EPS: f64 = 1e-12;
/// Orthonormality tolerance for camera rotations.
const ROTATION_TOL: f64 = 1e-6;

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    /// Principal point; `(W/2, H/2)` centers it.
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Focal length `f`, principal point at the center of an `h` x `w` image.
    pub fn centered(f: f64, h: usize, w: usize) -> Self {
        Self {
            fx: f,
            fy: f,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
        }
    }
}

/// World-to-camera rigid transform plus intrinsics. The camera looks along
/// `-z` in its own frame, with `+x` right and `+y` up.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation: `p_cam = R p_world + t`.
    pub translation: [f64; 3],
    pub intrinsics: Intrinsics,
}

impl Camera {
    /// Identity pose: camera at the origin looking down `-z`.
    pub fn identity(intrinsics: Intrinsics) -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            intrinsics,
        }
    }

    /// Camera at `eye` oriented so `-z` points toward `target`.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], intrinsics: Intrinsics) -> Result<Self> {
        let back = normalize(sub(eye, target)).ok_or_else(|| CoreError::DegenerateGeometry {
            context: "look_at",
            msg: "eye coincides with target".into(),
        })?;
        let right = normalize(cross(up, back)).ok_or_else(|| CoreError::DegenerateGeometry {
            context: "look_at",
            msg: "up vector parallel to view direction".into(),
        })?;
        let true_up = cross(back, right);
        let rotation = [right, true_up, back];
        let translation = [
            -dot(rotation[0], eye),
            -dot(rotation[1], eye),
            -dot(rotation[2], eye),
        ];
        Ok(Self {
            rotation,
            translation,
            intrinsics,
        })
    }

    /// Reject non-rigid extrinsics and zero focal lengths.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = dot(r[i], r[j]);
                if (got - want).abs() > ROTATION_TOL {
                    return Err(CoreError::DegenerateGeometry {
                        context: "camera extrinsics",
                        msg: format!("rotation rows not orthonormal (R{i}.R{j} = {got})"),
                    });
                }
            }
        }
        if self.intrinsics.fx.abs() < EPS || self.intrinsics.fy.abs() < EPS {
            return Err(CoreError::DegenerateGeometry {
                context: "camera intrinsics",
                msg: "zero focal length".into(),
            });
        }
        Ok(())
    }

    /// Camera center in world coordinates: `-R^T t`.
    pub fn center(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = self.translation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }

    /// Rotate a camera-frame vector into world coordinates (`R^T v`).
    fn to_world(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
            r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
            r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
        ]
    }
}

/// How a ray is reduced to channels before sinusoidal encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RayRepresentation {
    /// Keep both origin and unit direction (6 raw channels).
    Concat,
    /// The point one unit along the ray from its origin.
    Normalized,
    /// Intersection with the `z = 0` plane.
    Plane,
    /// Intersection with an origin-centered sphere of this radius.
    Sphere { radius: f64 },
}

/// Coordinate system for each encoded 3-vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RayCoords {
    Cartesian,
    /// `(radius, azimuth, elevation)`; azimuth in `(-pi, pi]` from `+x` in
    /// the xy-plane and defined as 0 at the poles, elevation in
    /// `[-pi/2, pi/2]`.
    Polar,
}

/// Per-pixel ray bundle with its declared encoding scheme.
#[derive(Debug, Clone)]
pub struct RayGrid {
    pub origins: Vec<[f64; 3]>,
    pub directions: Vec<[f64; 3]>,
    pub height: usize,
    pub width: usize,
    pub representation: RayRepresentation,
    pub coords: RayCoords,
}

/// Cast one unit ray through each pixel center of an `h` x `w` image.
pub fn ray_grid_from_camera(
    camera: &Camera,
    h: usize,
    w: usize,
    representation: RayRepresentation,
    coords: RayCoords,
) -> Result<RayGrid> {
    camera.validate()?;
    if h == 0 || w == 0 {
        return Err(CoreError::InvalidInput {
            context: "ray_grid_from_camera",
            msg: "empty image grid".into(),
        });
    }
    let center = camera.center();
    let k = &camera.intrinsics;
    let mut origins = Vec::with_capacity(h * w);
    let mut directions = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            // Pixel centers; image rows grow downward while camera +y is up.
            let xc = (col as f64 + 0.5 - k.cx) / k.fx;
            let yc = -(row as f64 + 0.5 - k.cy) / k.fy;
            let d_cam = [xc, yc, -1.0];
            let d_world = camera.to_world(d_cam);
            let d = normalize(d_world).expect("pinhole ray has unit z-component");
            origins.push(center);
            directions.push(d);
        }
    }
    Ok(RayGrid {
        origins,
        directions,
        height: h,
        width: w,
        representation,
        coords,
    })
}

impl RayGrid {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// The combined point `o + s*d` for every ray under the grid's
    /// representation. Errors for zero directions, rays parallel to the
    /// image plane, and rays that miss the sphere.
    pub fn combined_points(&self) -> Result<Vec<[f64; 3]>> {
        let mut points = Vec::with_capacity(self.len());
        for (o, d_raw) in self.origins.iter().zip(&self.directions) {
            let d = normalize(*d_raw).ok_or_else(|| CoreError::DegenerateGeometry {
                context: "ray_encode",
                msg: "zero-length ray direction".into(),
            })?;
            let p = match self.representation {
                RayRepresentation::Concat => {
                    return Err(CoreError::InvalidInput {
                        context: "ray_encode",
                        msg: "concat representation has no combined point".into(),
                    });
                }
                RayRepresentation::Normalized => add(*o, d),
                RayRepresentation::Plane => {
                    if d[2].abs() < EPS {
                        return Err(CoreError::DegenerateGeometry {
                            context: "ray_encode",
                            msg: "ray parallel to the z=0 plane".into(),
                        });
                    }
                    let s = -o[2] / d[2];
                    add(*o, scale(d, s))
                }
                RayRepresentation::Sphere { radius } => {
                    let b = dot(*o, d);
                    let c = dot(*o, *o) - radius * radius;
                    let disc = b * b - c;
                    if disc < 0.0 {
                        return Err(CoreError::DegenerateGeometry {
                            context: "ray_encode",
                            msg: format!("ray misses the radius-{radius} sphere"),
                        });
                    }
                    let root = disc.sqrt();
                    let near = -b - root;
                    let far = -b + root;
                    let s = if near > 0.0 {
                        near
                    } else if far > 0.0 {
                        far
                    } else {
                        return Err(CoreError::DegenerateGeometry {
                            context: "ray_encode",
                            msg: "sphere lies behind the ray".into(),
                        });
                    };
                    add(*o, scale(d, s))
                }
            };
            points.push(p);
        }
        Ok(points)
    }
}

/// `(x, y, z)` to `(radius, azimuth, elevation)` under the conventions of
/// [`RayCoords::Polar`].
pub fn cartesian_to_polar(p: [f64; 3]) -> [f64; 3] {
    let r = dot(p, p).sqrt();
    if r < EPS {
        return [0.0, 0.0, 0.0];
    }
    let elevation = (p[2] / r).clamp(-1.0, 1.0).asin();
    let azimuth = if p[0].abs() < EPS && p[1].abs() < EPS {
        0.0
    } else {
        p[1].atan2(p[0])
    };
    [r, azimuth, elevation]
}

/// Inverse of [`cartesian_to_polar`].
pub fn polar_to_cartesian(p: [f64; 3]) -> [f64; 3] {
    let [r, azimuth, elevation] = p;
    let xy = r * elevation.cos();
    [xy * azimuth.cos(), xy * azimuth.sin(), r * elevation.sin()]
}

/// Settings for turning a ray grid into sinusoidal channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RayEncodeConfig {
    pub posenc: PosEncodingConfig,
    /// Scene half-width: cartesian components and radii are divided by this
    /// before encoding and must land in `[-1, 1]`.
    pub scene_extent: f64,
}

impl Default for RayEncodeConfig {
    fn default() -> Self {
        Self {
            posenc: PosEncodingConfig::default(),
            scene_extent: 4.0,
        }
    }
}

impl RayEncodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.posenc.validate()?;
        if !(self.scene_extent > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "scene extent {} must be positive",
                self.scene_extent
            )));
        }
        Ok(())
    }
}

/// Encode a ray grid into a `(C * posenc.dim, H, W)` channel grid.
///
/// Raw channels are `[o, d]` for the concat representation and the combined
/// point for the others, converted per `coords`, normalized into `[-1, 1]`
/// (lengths by `scene_extent`, azimuth by `pi`, elevation by `pi/2`), and
/// sinusoidally encoded channel-by-channel.
pub fn ray_encode<T: Scalar>(grid: &RayGrid, cfg: &RayEncodeConfig) -> Result<Array<T>> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(CoreError::InvalidInput {
            context: "ray_encode",
            msg: "empty ray grid".into(),
        });
    }
    let (h, w) = (grid.height, grid.width);
    let vectors: Vec<Vec<[f64; 3]>> = match grid.representation {
        RayRepresentation::Concat => {
            let mut dirs = Vec::with_capacity(grid.len());
            for d in &grid.directions {
                dirs.push(normalize(*d).ok_or_else(|| CoreError::DegenerateGeometry {
                    context: "ray_encode",
                    msg: "zero-length ray direction".into(),
                })?);
            }
            vec![grid.origins.clone(), dirs]
        }
        _ => vec![grid.combined_points()?],
    };

    let raw_channels = 3 * vectors.len();
    let mut components = Array::<f64>::zeros(&[1, raw_channels, h, w]);
    for (g_idx, vecs) in vectors.iter().enumerate() {
        for (pix, v) in vecs.iter().enumerate() {
            let triple = match grid.coords {
                RayCoords::Cartesian => {
                    let s = cfg.scene_extent;
                    [v[0] / s, v[1] / s, v[2] / s]
                }
                RayCoords::Polar => {
                    let [r, az, el] = cartesian_to_polar(*v);
                    [
                        r / cfg.scene_extent,
                        az / std::f64::consts::PI,
                        el / std::f64::consts::FRAC_PI_2,
                    ]
                }
            };
            for (axis, &val) in triple.iter().enumerate() {
                if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&val) {
                    return Err(CoreError::InvalidInput {
                        context: "ray_encode",
                        msg: format!("component {val} outside [-1, 1]; increase scene_extent"),
                    });
                }
                let (row, col) = (pix / w, pix % w);
                *components.at_mut(&[0, 3 * g_idx + axis, row, col]) = val.clamp(-1.0, 1.0);
            }
        }
    }
    let comp_t: Array<T> = components.cast();
    let encoded = posenc::encode_grid(&comp_t, &cfg.posenc)?;
    let c = raw_channels * cfg.posenc.dim;
    encoded.reshape(&[c, h, w]).map_err(Into::into)
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot(v, v).sqrt();
    if n < EPS {
        None
    } else {
        Some(scale(v, 1.0 / n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
        // Normalized quaternion to rotation matrix.
        let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    #[test]
    fn central_pixel_of_identity_camera_points_down_negative_z() {
        let cam = Camera::identity(Intrinsics::centered(8.0, 9, 9));
        let grid = ray_grid_from_camera(&cam, 9, 9, RayRepresentation::Concat, RayCoords::Cartesian).unwrap();
        let central = grid.directions[4 * 9 + 4];
        assert!(close(central, [0.0, 0.0, -1.0], 1e-12));
        assert!(close(grid.origins[0], [0.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn translating_the_camera_shifts_origins_only() {
        let intr = Intrinsics::centered(10.0, 5, 7);
        let base = Camera::identity(intr);
        let delta = [0.3, -1.2, 2.5];
        let moved = Camera {
            translation: [-delta[0], -delta[1], -delta[2]],
            ..base.clone()
        };
        let a = ray_grid_from_camera(&base, 5, 7, RayRepresentation::Concat, RayCoords::Cartesian).unwrap();
        let b = ray_grid_from_camera(&moved, 5, 7, RayRepresentation::Concat, RayCoords::Cartesian).unwrap();
        for i in 0..a.len() {
            assert!(close(b.origins[i], add(a.origins[i], delta), 1e-12));
            assert!(close(b.directions[i], a.directions[i], 1e-12));
        }
    }

    #[test]
    fn yaw_rotates_the_central_ray_against_a_matrix_oracle() {
        // Camera yawed 90 degrees about the +y up-axis: camera-to-world is
        // the standard Ry(t), so world-to-camera is its transpose.
        let t = std::f64::consts::FRAC_PI_2;
        let world_to_cam = [
            [t.cos(), 0.0, -t.sin()],
            [0.0, 1.0, 0.0],
            [t.sin(), 0.0, t.cos()],
        ];
        let cam = Camera {
            rotation: world_to_cam,
            translation: [0.0; 3],
            intrinsics: Intrinsics::centered(6.0, 3, 3),
        };
        let grid = ray_grid_from_camera(&cam, 3, 3, RayRepresentation::Concat, RayCoords::Cartesian).unwrap();
        // Oracle: d_world = Ry(t) * (0,0,-1) = (-sin t, 0, -cos t) by hand.
        let expect = [-t.sin(), 0.0, -t.cos()];
        assert!(close(grid.directions[4], expect, 1e-12));
    }

    #[test]
    fn non_rigid_extrinsics_are_rejected() {
        let mut cam = Camera::identity(Intrinsics::centered(4.0, 4, 4));
        cam.rotation[2] = [0.0, 0.0, 0.0];
        assert!(ray_grid_from_camera(&cam, 4, 4, RayRepresentation::Concat, RayCoords::Cartesian).is_err());
        let mut sheared = Camera::identity(Intrinsics::centered(4.0, 4, 4));
        sheared.rotation[0] = [1.0, 0.5, 0.0];
        assert!(sheared.validate().is_err());
        let mut flat = Camera::identity(Intrinsics::centered(4.0, 4, 4));
        flat.intrinsics.fx = 0.0;
        assert!(flat.validate().is_err());
    }

    #[test]
    fn sphere_and_normalized_points_satisfy_norm_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let radius = 2.0;
        for _ in 0..20 {
            // Cameras inside the sphere see it in every direction.
            let rotation = random_rotation(&mut rng);
            let center: [f64; 3] = [
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            ];
            let translation = {
                let r = &rotation;
                [
                    -(r[0][0] * center[0] + r[0][1] * center[1] + r[0][2] * center[2]),
                    -(r[1][0] * center[0] + r[1][1] * center[1] + r[1][2] * center[2]),
                    -(r[2][0] * center[0] + r[2][1] * center[1] + r[2][2] * center[2]),
                ]
            };
            let cam = Camera {
                rotation,
                translation,
                intrinsics: Intrinsics::centered(5.0, 4, 4),
            };
            let sphere =
                ray_grid_from_camera(&cam, 4, 4, RayRepresentation::Sphere { radius }, RayCoords::Cartesian).unwrap();
            for p in sphere.combined_points().unwrap() {
                assert!((dot(p, p).sqrt() - radius).abs() <= 1e-6);
            }
            let normed =
                ray_grid_from_camera(&cam, 4, 4, RayRepresentation::Normalized, RayCoords::Cartesian).unwrap();
            for (p, o) in normed.combined_points().unwrap().iter().zip(&normed.origins) {
                assert!((dot(sub(*p, *o), sub(*p, *o)).sqrt() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn plane_points_lie_on_the_plane() {
        let cam = Camera::look_at([0.5, 0.3, 3.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], Intrinsics::centered(6.0, 4, 4))
            .unwrap();
        let grid = ray_grid_from_camera(&cam, 4, 4, RayRepresentation::Plane, RayCoords::Cartesian).unwrap();
        for p in grid.combined_points().unwrap() {
            assert!(p[2].abs() <= 1e-9);
        }
    }

    #[test]
    fn sphere_miss_and_zero_direction_error() {
        let cam = Camera::look_at([5.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], Intrinsics::centered(1.0, 3, 3))
            .unwrap();
        // Wide FOV from far away: corner rays miss a small sphere.
        let grid =
            ray_grid_from_camera(&cam, 3, 3, RayRepresentation::Sphere { radius: 0.05 }, RayCoords::Cartesian)
                .unwrap();
        assert!(grid.combined_points().is_err());

        let mut degenerate =
            ray_grid_from_camera(&cam, 3, 3, RayRepresentation::Normalized, RayCoords::Cartesian).unwrap();
        degenerate.directions[0] = [0.0; 3];
        assert!(degenerate.combined_points().is_err());
        assert!(ray_encode::<f64>(&degenerate, &RayEncodeConfig::default()).is_err());
    }

    #[test]
    fn polar_pole_convention_and_round_trip() {
        let north = cartesian_to_polar([0.0, 0.0, 1.0]);
        assert!((north[0] - 1.0).abs() <= 1e-12);
        assert!((north[2] - std::f64::consts::FRAC_PI_2).abs() <= 1e-12);
        assert_eq!(north[1], 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let v: [f64; 3] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let Some(u) = normalize(v) else { continue };
            let back = polar_to_cartesian(cartesian_to_polar(u));
            for i in 0..3 {
                worst = worst.max((back[i] - u[i]).abs());
            }
        }
        assert!(worst <= 1e-6, "round-trip error {worst}");
    }

    #[test]
    fn azimuth_range_is_half_open() {
        let p = cartesian_to_polar([-1.0, 0.0, 0.0]);
        assert!((p[1] - std::f64::consts::PI).abs() <= 1e-12);
        let q = cartesian_to_polar([-1.0, -1e-9, 0.0]);
        assert!(q[1] < 0.0);
    }

    #[test]
    fn encode_produces_channel_grid_in_both_coordinate_systems() {
        let cam = Camera::look_at([0.2, 0.1, 2.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], Intrinsics::centered(5.0, 4, 6))
            .unwrap();
        let pe = PosEncodingConfig {
            dim: 8,
            ..Default::default()
        };
        let cfg = RayEncodeConfig {
            posenc: pe,
            scene_extent: 4.0,
        };
        for (rep, raw) in [
            (RayRepresentation::Concat, 6),
            (RayRepresentation::Normalized, 3),
            (RayRepresentation::Sphere { radius: 3.0 }, 3),
        ] {
            for coords in [RayCoords::Cartesian, RayCoords::Polar] {
                let grid = ray_grid_from_camera(&cam, 4, 6, rep, coords).unwrap();
                let enc = ray_encode::<f32>(&grid, &cfg).unwrap();
                assert_eq!(enc.shape(), &[raw * 8, 4, 6]);
            }
        }
    }

    #[test]
    fn out_of_extent_components_are_rejected() {
        let cam = Camera::look_at([9.0, 0.0, 1.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], Intrinsics::centered(5.0, 3, 3))
            .unwrap();
        let grid = ray_grid_from_camera(&cam, 3, 3, RayRepresentation::Concat, RayCoords::Cartesian).unwrap();
        let cfg = RayEncodeConfig {
            posenc: PosEncodingConfig {
                dim: 8,
                ..Default::default()
            },
            scene_extent: 4.0,
        };
        assert!(ray_encode::<f64>(&grid, &cfg).is_err());
    }
}
