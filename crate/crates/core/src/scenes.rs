//! Procedural scenes: textured planes, spheres and boxes inside an
//! enclosing room, ray-cast from a camera trajectory with exact depth.
//!
//! Camera convention: x right, y down, z forward. Poses map camera to
//! world, and every sample is expressed in the camera frame of its first
//! frame.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ppm, write_dir_atomic};
use crate::model::{Image, Pointmap};
use crate::tensor::dump;

const SCENE_VERSION: u32 = 1;
const ROOM_HALF: f64 = 4.0;
const HIT_EPS: f64 = 1e-9;

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Camera at `eye` looking at `target`, image y axis along world `-up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Degenerate("camera target coincides with eye".into()))?;
        let x = (-up)
            .cross(&z)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Degenerate("view direction parallel to up".into()))?;
        let y = z.cross(&x);
        Ok(Pose { rotation: Matrix3::from_columns(&[x, y, z]), translation: eye })
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for (r, row) in m.iter_mut().enumerate().take(3) {
            for (c, v) in row.iter_mut().enumerate().take(3) {
                *v = self.rotation[(r, c)];
            }
            row[3] = self.translation[r];
        }
        m[3][3] = 1.0;
        m
    }

    pub fn from_matrix(m: &[[f64; 4]; 4]) -> Result<Self> {
        let rotation = Matrix3::from_fn(|r, c| m[r][c]);
        let pose = Pose { rotation, translation: Vector3::new(m[0][3], m[1][3], m[2][3]) };
        if m[3] != [0.0, 0.0, 0.0, 1.0] || !pose.is_rigid(1e-5) {
            return Err(Error::Format("pose matrix is not a rigid transform".into()));
        }
        Ok(pose)
    }

    pub fn is_rigid(&self, tol: f64) -> bool {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        e.abs().max() < tol && (self.rotation.determinant() - 1.0).abs() < tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pinhole with the principal point at the image center.
    pub fn with_fov(size: usize, fov_deg: f64) -> Self {
        let f = 0.5 * size as f64 / (0.5 * fov_deg.to_radians()).tan();
        let c = 0.5 * size as f64;
        Intrinsics { fx: f, fy: f, cx: c, cy: c }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
    }

    /// Camera-frame ray through pixel center `(u, v)` with unit z.
    pub fn ray(&self, u: usize, v: usize) -> Vector3<f64> {
        Vector3::new(
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Cuboid { min: [f64; 3], max: [f64; 3] },
    /// Rectangle spanned by `u` and `normal x u` around `center`.
    Quad { center: [f64; 3], normal: [f64; 3], u: [f64; 3], half_u: f64, half_v: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub color: [f64; 3],
    pub texture_seed: u64,
    pub texture_freq: f64,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Slab test; returns the entry or, from inside, the exit distance.
fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    if t0 > t1 {
        return None;
    }
    [t0, t1].into_iter().find(|t| *t > HIT_EPS)
}

impl Shape {
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match self {
            Shape::Sphere { center, radius } => {
                let oc = o - v3(*center);
                let a = d.dot(d);
                let b = oc.dot(d);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(-b - s) / a, (-b + s) / a].into_iter().find(|t| *t > HIT_EPS)
            }
            Shape::Cuboid { min, max } => ray_box(o, d, &v3(*min), &v3(*max)),
            Shape::Quad { center, normal, u, half_u, half_v } => {
                let n = v3(*normal).normalize();
                let denom = n.dot(d);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let c = v3(*center);
                let t = n.dot(&(c - o)) / denom;
                if t <= HIT_EPS {
                    return None;
                }
                let uu = v3(*u).normalize();
                let vv = n.cross(&uu);
                let rel = o + d * t - c;
                (rel.dot(&uu).abs() <= *half_u && rel.dot(&vv).abs() <= *half_v).then_some(t)
            }
        }
    }
}

fn hash3(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [x, y, z] {
        h ^= (v as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = h.rotate_left(27).wrapping_mul(0x94D0_49BB_1331_11EB);
    }
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth trilinear value noise in `[0, 1]`.
pub fn value_noise(seed: u64, p: &Vector3<f64>) -> f64 {
    let f = p.map(f64::floor);
    let w = (p - f).map(|t| t * t * (3.0 - 2.0 * t));
    let (ix, iy, iz) = (f[0] as i64, f[1] as i64, f[2] as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let wx = if dx == 1 { w[0] } else { 1.0 - w[0] };
        let wy = if dy == 1 { w[1] } else { 1.0 - w[1] };
        let wz = if dz == 1 { w[2] } else { 1.0 - w[2] };
        acc += wx * wy * wz * hash3(seed, ix + dx as i64, iy + dy as i64, iz + dz as i64);
    }
    acc
}

impl Primitive {
    fn shade(&self, p: &Vector3<f64>) -> [f64; 3] {
        let q = p * self.texture_freq;
        let n = 0.65 * value_noise(self.texture_seed, &q) + 0.35 * value_noise(self.texture_seed + 1, &(q * 2.7));
        let k = 0.25 + 0.75 * n;
        let c = self.color;
        [c[0] * k, c[1] * k, c[2] * k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    /// Textured room box `[-h, h]^3` seen from inside; `None` leaves rays
    /// that miss everything invalid.
    pub room_half: Option<f64>,
    pub room_texture_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Render {
    pub image: Image,
    /// Camera-frame z per pixel; 0 where the ray escaped.
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
    /// World hit points (zero where invalid).
    pub world: Vec<[f64; 3]>,
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

impl Scene {
    fn room(&self) -> Option<Primitive> {
        self.room_half.map(|h| Primitive {
            shape: Shape::Cuboid { min: [-h; 3], max: [h; 3] },
            color: [0.85, 0.8, 0.7],
            texture_seed: self.room_texture_seed,
            texture_freq: 1.3,
        })
    }

    /// Closest-hit ray casting; colors are quantized to 8 bits.
    pub fn render(&self, pose: &Pose, k: &Intrinsics, width: usize, height: usize) -> Render {
        let room = self.room();
        let n = width * height;
        let mut image = Vec::with_capacity(n * 3);
        let mut depth = vec![0.0; n];
        let mut valid = vec![false; n];
        let mut world = vec![[0.0; 3]; n];
        let o = pose.translation;
        for v in 0..height {
            for u in 0..width {
                let i = v * width + u;
                let ray_cam = k.ray(u, v);
                let d = pose.rotation * ray_cam;
                let best = self
                    .primitives
                    .iter()
                    .chain(room.iter())
                    .filter_map(|p| p.shape.intersect(&o, &d).map(|t| (t, p)))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                match best {
                    Some((t, prim)) => {
                        let hit = o + d * t;
                        image.extend(prim.shade(&hit).map(quantize));
                        // ray_cam has unit z, so the ray parameter is the depth
                        depth[i] = t;
                        valid[i] = true;
                        world[i] = [hit[0], hit[1], hit[2]];
                    }
                    None => image.extend([0.55, 0.7, 0.95].map(quantize)),
                }
            }
        }
        Render { image: Image { width, height, data: image }, depth, valid, world }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    Orbit,
    Forward,
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub n_frames: usize,
    pub n_primitives: usize,
    pub trajectory: Trajectory,
    pub image_size: usize,
    pub fov_deg: f64,
    /// Drop the room box so escaping rays produce invalid pixels.
    pub sky: bool,
    /// Camera motion per frame: radians for orbits, world units otherwise.
    pub step: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            n_frames: 20,
            n_primitives: 6,
            trajectory: Trajectory::Orbit,
            image_size: 32,
            fov_deg: 60.0,
            sky: false,
            step: 0.12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneSample {
    pub frames: Vec<Image>,
    pub intrinsics: Intrinsics,
    /// Camera-to-world, with the world frame anchored at the first frame.
    pub poses: Vec<Pose>,
    /// Ground-truth points in the world frame.
    pub gt_pointmaps: Vec<Pointmap>,
    pub depths: Vec<Vec<f64>>,
    pub diameter: f64,
    /// Maps the sample's world frame back to the scene's construction frame.
    pub anchor: Pose,
}

impl SceneSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width)
    }

    pub fn all_gt_points(&self) -> Vec<[f64; 3]> {
        self.gt_pointmaps.iter().flat_map(Pointmap::valid_points).collect()
    }
}

/// Twice the largest distance from the centroid.
pub fn diameter(points: &[[f64; 3]]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let c = points.iter().fold([0.0; 3], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n, a[2] + p[2] / n]);
    let r = points
        .iter()
        .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    2.0 * r
}

/// Backprojects camera depth through `pose` into world points.
pub fn backproject(depth: &[f64], valid: &[bool], k: &Intrinsics, pose: &Pose, width: usize) -> Vec<[f64; 3]> {
    depth
        .iter()
        .zip(valid)
        .enumerate()
        .map(|(i, (&z, &ok))| {
            if !ok {
                return [0.0; 3];
            }
            let p = pose.apply(&(k.ray(i % width, i / width) * z));
            [p[0], p[1], p[2]]
        })
        .collect()
}

/// Builds a sample from a scene and construction-frame camera poses.
pub fn render_sample(scene: &Scene, poses: &[Pose], k: &Intrinsics, size: usize) -> Result<SceneSample> {
    let anchor = *poses
        .first()
        .ok_or_else(|| Error::InsufficientLength("no camera poses".into()))?;
    let to_local = anchor.inverse();
    let mut sample = SceneSample {
        frames: Vec::with_capacity(poses.len()),
        intrinsics: *k,
        poses: Vec::with_capacity(poses.len()),
        gt_pointmaps: Vec::with_capacity(poses.len()),
        depths: Vec::with_capacity(poses.len()),
        diameter: 0.0,
        anchor,
    };
    for pose in poses {
        let r = scene.render(pose, k, size, size);
        let local: Vec<[f64; 3]> = r
            .world
            .iter()
            .zip(&r.valid)
            .map(|(w, &ok)| {
                if !ok {
                    return [0.0; 3];
                }
                let p = to_local.apply(&v3(*w));
                [p[0], p[1], p[2]]
            })
            .collect();
        sample.gt_pointmaps.push(Pointmap::from_points(size, size, &local, r.valid)?);
        sample.frames.push(r.image);
        sample.depths.push(r.depth);
        sample.poses.push(to_local.compose(pose));
    }
    sample.diameter = diameter(&sample.all_gt_points());
    Ok(sample)
}

fn random_scene(rng: &mut ChaCha8Rng, params: &SceneParams) -> Scene {
    let mut primitives = Vec::with_capacity(params.n_primitives);
    let mut centre = || Vector3::new(rng.gen_range(-1.4..1.4), rng.gen_range(-1.0..1.0), rng.gen_range(-1.4..1.4));
    let mut centers = Vec::new();
    for _ in 0..params.n_primitives {
        centers.push(centre());
    }
    for c in centers {
        let shape = match rng.gen_range(0..3) {
            0 => Shape::Sphere { center: c.into(), radius: rng.gen_range(0.3..0.7) },
            1 => {
                let h = Vector3::new(rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6));
                Shape::Cuboid { min: (c - h).into(), max: (c + h).into() }
            }
            _ => {
                let n: Vector3<f64> = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let n = n.try_normalize(1e-6).unwrap_or(Vector3::z());
                let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
                let u = n.cross(&helper).normalize();
                Shape::Quad {
                    center: c.into(),
                    normal: n.into(),
                    u: u.into(),
                    half_u: rng.gen_range(0.4..0.9),
                    half_v: rng.gen_range(0.4..0.9),
                }
            }
        };
        primitives.push(Primitive {
            shape,
            color: [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)],
            texture_seed: rng.gen(),
            texture_freq: rng.gen_range(1.5..4.0),
        });
    }
    Scene {
        primitives,
        room_half: (!params.sky).then_some(ROOM_HALF),
        room_texture_seed: rng.gen(),
    }
}

fn trajectory(rng: &mut ChaCha8Rng, params: &SceneParams) -> Result<Vec<Pose>> {
    let up = Vector3::y();
    let n = params.n_frames;
    let mut poses = Vec::with_capacity(n);
    match params.trajectory {
        Trajectory::Orbit => {
            let radius = rng.gen_range(2.7..3.1);
            let height = rng.gen_range(-0.6..0.6);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            for i in 0..n {
                let a = phase + params.step * i as f64;
                let eye = Vector3::new(radius * a.cos(), height, radius * a.sin());
                poses.push(Pose::look_at(eye, Vector3::zeros(), up)?);
            }
        }
        Trajectory::Forward => {
            let x0 = rng.gen_range(-0.5..0.5);
            for i in 0..n {
                let z = -3.2 + params.step * i as f64;
                let eye = Vector3::new(x0, 0.0, z);
                let yaw = 0.25 * (0.4 * i as f64).sin();
                poses.push(Pose::look_at(eye, eye + Vector3::new(yaw.sin(), 0.0, yaw.cos()), up)?);
            }
        }
        Trajectory::RandomWalk => {
            let mut eye = Vector3::new(rng.gen_range(-0.5..0.5), 0.0, -3.0);
            let mut yaw: f64 = 0.0;
            let mut pitch: f64 = 0.0;
            for _ in 0..n {
                let dir = Vector3::new(yaw.sin() * pitch.cos(), pitch.sin(), yaw.cos() * pitch.cos());
                poses.push(Pose::look_at(eye, eye + dir, up)?);
                let step = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..1.0));
                eye = (eye + step * params.step).map(|v| v.clamp(-3.3, 3.3));
                yaw += rng.gen_range(-0.1..0.1);
                pitch = (pitch + rng.gen_range(-0.05..0.05)).clamp(-0.4, 0.4);
            }
        }
    }
    Ok(poses)
}

/// Deterministic per seed.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SceneSample> {
    if params.n_frames < 2 {
        return Err(Error::Config(format!("scene needs at least 2 frames, got {}", params.n_frames)));
    }
    if params.n_primitives == 0 {
        return Err(Error::Config("scene needs at least one primitive".into()));
    }
    if params.image_size == 0 || !(1.0..179.0).contains(&params.fov_deg) {
        return Err(Error::Config("scene image_size must be > 0 and fov in (1, 179) degrees".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = random_scene(&mut rng, params);
    let poses = trajectory(&mut rng, params)?;
    let k = Intrinsics::with_fov(params.image_size, params.fov_deg);
    let sample = render_sample(&scene, &poses, &k, params.image_size)?;
    if sample.all_gt_points().is_empty() {
        return Err(Error::Degenerate("rendered scene has no valid pixels".into()));
    }
    Ok(sample)
}

/// Frames `start, start + interval, ...`, re-anchored at the first of them.
pub fn sample_clip(scene: &SceneSample, start: usize, interval: usize, n_frames: usize) -> Result<SceneSample> {
    if interval == 0 || n_frames == 0 {
        return Err(Error::Config("clip interval and length must be positive".into()));
    }
    let last = start + (n_frames - 1) * interval;
    if last >= scene.len() {
        return Err(Error::InsufficientLength(format!(
            "clip of {n_frames} frames at interval {interval} from {start} needs index {last}, scene has {}",
            scene.len()
        )));
    }
    let idx: Vec<usize> = (0..n_frames).map(|k| start + k * interval).collect();
    let to_local = scene.poses[start].inverse();
    let mut gt = Vec::with_capacity(n_frames);
    for &i in &idx {
        let g = &scene.gt_pointmaps[i];
        let pts: Vec<[f64; 3]> = (0..g.valid.len())
            .map(|j| {
                if !g.valid[j] {
                    return [0.0; 3];
                }
                let p = to_local.apply(&v3(g.point(j)));
                [p[0], p[1], p[2]]
            })
            .collect();
        gt.push(Pointmap::from_points(g.width(), g.height(), &pts, g.valid.clone())?);
    }
    let mut clip = SceneSample {
        frames: idx.iter().map(|&i| scene.frames[i].clone()).collect(),
        intrinsics: scene.intrinsics,
        poses: idx.iter().map(|&i| to_local.compose(&scene.poses[i])).collect(),
        gt_pointmaps: gt,
        depths: idx.iter().map(|&i| scene.depths[i].clone()).collect(),
        diameter: 0.0,
        anchor: scene.anchor.compose(&scene.poses[start]),
    };
    clip.diameter = diameter(&clip.all_gt_points());
    Ok(clip)
}

/// Random start for a clip of `n_frames` at `interval`.
pub fn sample_clip_random<R: Rng>(scene: &SceneSample, interval: usize, n_frames: usize, rng: &mut R) -> Result<SceneSample> {
    let span = (n_frames.max(1) - 1) * interval;
    if span >= scene.len() {
        return sample_clip(scene, 0, interval, n_frames);
    }
    let start = rng.gen_range(0..scene.len() - span);
    sample_clip(scene, start, interval, n_frames)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    version: u32,
    image_size: usize,
    intrinsics: Intrinsics,
    poses: Vec<[[f64; 4]; 4]>,
    anchor: [[f64; 4]; 4],
    diameter: f64,
}

/// Writes `frames/NNNN.ppm`, a depth archive and `cameras.json`.
pub fn dump_scene(sample: &SceneSample, dir: &Path) -> Result<()> {
    write_dir_atomic(dir, |tmp| {
        let frames = tmp.join("frames");
        fs::create_dir_all(&frames)?;
        for (i, f) in sample.frames.iter().enumerate() {
            ppm::write_ppm(&frames.join(format!("{i:04}.ppm")), f.width, f.height, &f.data)?;
        }
        let size = sample.image_size();
        let names: Vec<String> = (0..sample.len()).map(|i| format!("depth.{i:04}")).collect();
        let shape = [size, size];
        let depth_dir = tmp.join("depth");
        fs::create_dir_all(&depth_dir)?;
        let entries: Vec<(&str, &[usize], &[f64])> = names
            .iter()
            .zip(&sample.depths)
            .map(|(n, d)| (n.as_str(), &shape[..], d.as_slice()))
            .collect();
        dump::write_into(&depth_dir, &entries, serde_json::json!({ "unit": "camera z", "invalid": 0.0 }))?;
        let cams = CameraFile {
            version: SCENE_VERSION,
            image_size: size,
            intrinsics: sample.intrinsics,
            poses: sample.poses.iter().map(Pose::to_matrix).collect(),
            anchor: sample.anchor.to_matrix(),
            diameter: sample.diameter,
        };
        let mut bytes = serde_json::to_vec_pretty(&cams)?;
        bytes.push(b'\n');
        fs::write(tmp.join("cameras.json"), bytes)?;
        Ok(())
    })
}

/// Inverse of [`dump_scene`]; ground truth is rebuilt from depth and poses.
pub fn load_scene(dir: &Path) -> Result<SceneSample> {
    let cams: CameraFile = serde_json::from_slice(&fs::read(dir.join("cameras.json"))?)?;
    if cams.version != SCENE_VERSION {
        return Err(Error::Format(format!("unsupported scene version {}", cams.version)));
    }
    let depth = dump::read_archive(&dir.join("depth"))?;
    let size = cams.image_size;
    let mut sample = SceneSample {
        frames: Vec::new(),
        intrinsics: cams.intrinsics,
        poses: Vec::new(),
        gt_pointmaps: Vec::new(),
        depths: Vec::new(),
        diameter: cams.diameter,
        anchor: Pose::from_matrix(&cams.anchor)?,
    };
    for (i, m) in cams.poses.iter().enumerate() {
        let pose = Pose::from_matrix(m)?;
        let (w, h, rgb) = ppm::read_ppm(&dir.join("frames").join(format!("{i:04}.ppm")))?;
        if w != size || h != size {
            return Err(Error::Format(format!("frame {i} is {w}x{h}, expected {size}x{size}")));
        }
        let name = format!("depth.{i:04}");
        let d = depth
            .get(&name)
            .ok_or_else(|| Error::Format(format!("missing {name}")))?
            .data()
            .to_vec();
        let valid: Vec<bool> = d.iter().map(|z| *z > 0.0).collect();
        let pts = backproject(&d, &valid, &sample.intrinsics, &pose, size);
        sample.gt_pointmaps.push(Pointmap::from_points(size, size, &pts, valid)?);
        sample.frames.push(Image::new(w, h, rgb)?);
        sample.depths.push(d);
        sample.poses.push(pose);
    }
    if sample.is_empty() {
        return Err(Error::Format("scene directory holds no frames".into()));
    }
    Ok(sample)
}
