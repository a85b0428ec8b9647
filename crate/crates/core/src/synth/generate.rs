use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Checker, Primitive, Scene, View};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{anchor_to_first, intrinsics_from_fov, Intrinsics, Mat3, Pose, Vec3};
use crate::supervision::{compute_scale_target, ScaleTarget, DEPTH_CAP_FACTOR};

/// Recipe for one synthetic scene. World axes: z up, ground at z = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal field-of-view range in degrees.
    pub fov_deg: [f64; 2],
    pub boxes: usize,
    pub spheres: usize,
    /// Camera distance from the look-at point, metres.
    pub radius: [f64; 2],
    pub elevation_deg: [f64; 2],
    /// Azimuth range covered by the cameras, degrees.
    pub azimuth_spread_deg: f64,
    /// Standard deviation of the look-at point, metres.
    pub look_at_jitter: f64,
    /// Objects are placed within this distance of the origin, metres.
    pub layout_radius: f64,
    pub ground_half_extent: f64,
    /// Ground checker cell, metres. Gives images an absolute size cue.
    pub ground_tile: f64,
    pub metric: bool,
    /// Minimum fraction of pixels that must hit a surface in every frame.
    pub min_valid_fraction: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 4,
            width: 64,
            height: 64,
            fov_deg: [45.0, 75.0],
            boxes: 3,
            spheres: 2,
            radius: [3.0, 8.0],
            elevation_deg: [15.0, 40.0],
            azimuth_spread_deg: 60.0,
            look_at_jitter: 0.3,
            layout_radius: 2.5,
            ground_half_extent: 12.0,
            ground_tile: 1.0,
            metric: true,
            min_valid_fraction: 0.3,
        }
    }
}

const MAX_ATTEMPTS: usize = 32;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("scene spec: {m}")));
        if self.frames == 0 || self.width == 0 || self.height == 0 {
            return fail("frames, width and height must be positive");
        }
        if !(self.fov_deg[0] > 0.0 && self.fov_deg[0] <= self.fov_deg[1] && self.fov_deg[1] < 180.0) {
            return fail("fov_deg must be an increasing range inside (0, 180)");
        }
        if !(self.radius[0] > 0.0 && self.radius[0] <= self.radius[1]) {
            return fail("radius must be an increasing positive range");
        }
        if !(self.elevation_deg[0] <= self.elevation_deg[1] && self.elevation_deg[1] < 90.0) {
            return fail("elevation_deg must be an increasing range below 90");
        }
        if !(self.ground_half_extent > 0.0 && self.ground_tile > 0.0 && self.layout_radius >= 0.0) {
            return fail("ground_half_extent and ground_tile must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            return fail("min_valid_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

/// A scene ready for training or evaluation. Images and depths are stored
/// in single precision, as on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub width: usize,
    pub height: usize,
    /// `[N, 3, H, W]`, values in `[0, 1]`.
    pub images: Vec<f32>,
    /// `[N, H, W]` z-depth; 0 where no surface was hit.
    pub depths: Vec<f32>,
    /// Shared by every frame.
    pub intrinsics: Intrinsics,
    /// World-from-camera, anchored so that frame 0 is the identity.
    pub poses: Vec<Pose>,
    pub metric: bool,
    /// Cached scale target for metric scenes.
    pub scale: Option<f64>,
}

impl SceneSample {
    pub fn frames(&self) -> usize {
        self.poses.len()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn images_tensor(&self) -> Result<Tensor> {
        Tensor::new(
            [self.frames(), 3, self.height, self.width],
            self.images.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn frame_depth(&self, i: usize) -> Vec<f64> {
        let hw = self.pixels();
        self.depths[i * hw..(i + 1) * hw].iter().map(|&d| d as f64).collect()
    }

    pub fn depth_frames(&self) -> Vec<Vec<f64>> {
        (0..self.frames()).map(|i| self.frame_depth(i)).collect()
    }

    pub fn intrinsics_list(&self) -> Vec<Intrinsics> {
        vec![self.intrinsics; self.frames()]
    }

    pub fn scale_target(&self) -> Result<ScaleTarget> {
        compute_scale_target(&self.depth_frames(), &self.intrinsics_list(), &self.poses, DEPTH_CAP_FACTOR)
    }

    /// Keeps the listed frames, re-anchored to the first of them.
    pub fn select_frames(&self, idx: &[usize]) -> Result<SceneSample> {
        if idx.is_empty() || idx.iter().any(|&i| i >= self.frames()) {
            return Err(Error::InvalidInput(format!(
                "frame selection {idx:?} out of range for {} frames",
                self.frames()
            )));
        }
        let hw = self.pixels();
        let mut images = Vec::with_capacity(idx.len() * 3 * hw);
        let mut depths = Vec::with_capacity(idx.len() * hw);
        for &i in idx {
            images.extend_from_slice(&self.images[i * 3 * hw..(i + 1) * 3 * hw]);
            depths.extend_from_slice(&self.depths[i * hw..(i + 1) * hw]);
        }
        let poses: Vec<Pose> = idx.iter().map(|&i| self.poses[i]).collect();
        let mut out = SceneSample {
            images,
            depths,
            poses: anchor_to_first(&poses),
            scale: None,
            ..self.clone()
        };
        if out.metric {
            out.scale = Some(out.scale_target()?.s_gt);
        }
        Ok(out)
    }
}

/// Output of the generator including the world it was rendered from.
#[derive(Clone, Debug)]
pub struct GeneratedScene {
    pub sample: SceneSample,
    pub world: Scene,
    /// Unanchored world-from-camera poses used for rendering.
    pub world_poses: Vec<Pose>,
    /// Double-precision renders before storage rounding.
    pub views: Vec<View>,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.15..0.95), rng.random_range(0.15..0.95), rng.random_range(0.15..0.95)]
}

fn object_texture(rng: &mut ChaCha8Rng) -> Checker {
    let a = random_color(rng);
    Checker {
        a,
        b: a.map(|v| v * 0.55),
        cell: rng.random_range(0.15..0.4),
    }
}

fn build_world(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Scene {
    let g = rng.random_range(0.45..0.75);
    let tint = [rng.random_range(0.85..1.0), 1.0, rng.random_range(0.8..1.0)];
    let mut primitives = vec![Primitive::Plane {
        point: [0.0, 0.0, 0.0],
        normal: [0.0, 0.0, 1.0],
        half_extent: Some(spec.ground_half_extent),
        texture: Checker {
            a: tint.map(|t| t * g),
            b: tint.map(|t| t * g * 0.45),
            cell: spec.ground_tile,
        },
    }];
    let place = |rng: &mut ChaCha8Rng| {
        let r = spec.layout_radius * rng.random::<f64>().sqrt();
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        (r * a.cos(), r * a.sin())
    };
    for _ in 0..spec.boxes {
        let (x, y) = place(rng);
        let sx = rng.random_range(0.2..0.75);
        let sy = rng.random_range(0.2..0.75);
        let sz = rng.random_range(0.3..1.6);
        primitives.push(Primitive::Box {
            min: [x - sx, y - sy, 0.0],
            max: [x + sx, y + sy, sz],
            texture: object_texture(rng),
        });
    }
    for _ in 0..spec.spheres {
        let (x, y) = place(rng);
        let r = rng.random_range(0.25..0.8);
        let lift = if rng.random::<f64>() < 0.3 { rng.random_range(0.2..1.0) } else { 0.0 };
        primitives.push(Primitive::Sphere {
            center: [x, y, r + lift],
            radius: r,
            texture: object_texture(rng),
        });
    }
    let el = rng.random_range(0.6..1.2f64);
    let az = rng.random_range(0.0..std::f64::consts::TAU);
    Scene {
        primitives,
        light: [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()],
        ambient: 0.35,
    }
}

/// Camera at `eye` looking at `target` with world z up; x right, y down.
pub fn look_at(eye: Vec3, target: Vec3) -> Result<Pose> {
    let z = (target - eye).normalize();
    let x = z.cross(&Vec3::z());
    if x.norm() < 1e-9 {
        return Err(Error::Degenerate("camera looks straight up or down".into()));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Pose::new(Mat3::from_columns(&[x, y, z]), eye)
}

fn place_cameras(spec: &SceneSpec, world: &Scene, k: &Intrinsics, rng: &mut ChaCha8Rng) -> Option<(Vec<Pose>, Vec<View>)> {
    let az0 = rng.random_range(0.0..std::f64::consts::TAU);
    let r0 = uniform(rng, spec.radius);
    let spread = spec.azimuth_spread_deg.to_radians();
    let mut poses = Vec::with_capacity(spec.frames);
    let mut views = Vec::with_capacity(spec.frames);
    for _ in 0..spec.frames {
        let az = az0 + spread * (rng.random::<f64>() - 0.5);
        let el = uniform(rng, spec.elevation_deg).to_radians();
        let r = (r0 * rng.random_range(0.85..1.15)).clamp(spec.radius[0], spec.radius[1]);
        let eye = Vec3::new(r * el.cos() * az.cos(), r * el.cos() * az.sin(), 0.3 + r * el.sin());
        let jitter = Vec3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            0.5 * (rng.random::<f64>() - 0.5),
        ) * (2.0 * spec.look_at_jitter);
        let target = Vec3::new(0.0, 0.0, 0.4) + jitter;
        if world.camera_inside(&eye) {
            return None;
        }
        let pose = look_at(eye, target).ok()?;
        let view = world.render(k, &pose);
        if view.valid_fraction() < spec.min_valid_fraction {
            return None;
        }
        poses.push(pose);
        views.push(view);
    }
    Some((poses, views))
}

/// Renders a scene from its spec. The same spec always yields the same
/// bits. Non-metric scenes are divided by their own scale so that their
/// recomputed scale is 1.
pub fn generate_scene(spec: &SceneSpec) -> Result<SceneSample> {
    Ok(generate_scene_full(spec)?.sample)
}

pub fn generate_scene_full(spec: &SceneSpec) -> Result<GeneratedScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fov = uniform(&mut rng, spec.fov_deg).to_radians();
    let fov_y = 2.0 * ((fov / 2.0).tan() * spec.height as f64 / spec.width as f64).atan();
    let k = intrinsics_from_fov([fov, fov_y], spec.width, spec.height)?;
    for _ in 0..MAX_ATTEMPTS {
        let world = build_world(spec, &mut rng);
        let Some((world_poses, views)) = place_cameras(spec, &world, &k, &mut rng) else {
            continue;
        };
        let anchored = anchor_to_first(&world_poses);
        let sample = if spec.metric {
            let mut s = assemble(spec, k, &views, &anchored, 1.0);
            s.scale = Some(s.scale_target()?.s_gt);
            s
        } else {
            let depths: Vec<Vec<f64>> = views.iter().map(|v| v.depth.clone()).collect();
            let s = compute_scale_target(&depths, &vec![k; spec.frames], &anchored, DEPTH_CAP_FACTOR)?.s_gt;
            assemble(spec, k, &views, &anchored, 1.0 / s)
        };
        return Ok(GeneratedScene {
            sample,
            world,
            world_poses,
            views,
        });
    }
    Err(Error::Degenerate(format!(
        "no valid camera placement for scene seed {} after {MAX_ATTEMPTS} attempts",
        spec.seed
    )))
}

fn assemble(spec: &SceneSpec, k: Intrinsics, views: &[View], anchored: &[Pose], factor: f64) -> SceneSample {
    let mut images = Vec::with_capacity(views.len() * 3 * k.pixel_count());
    let mut depths = Vec::with_capacity(views.len() * k.pixel_count());
    for v in views {
        images.extend(v.rgb.iter().map(|&c| c as f32));
        depths.extend(v.depth.iter().map(|&d| (d * factor) as f32));
    }
    SceneSample {
        width: spec.width,
        height: spec.height,
        images,
        depths,
        intrinsics: k,
        poses: anchored.iter().map(|p| p.scaled(factor)).collect(),
        metric: spec.metric,
        scale: None,
    }
}
