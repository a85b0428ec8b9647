//! Camera-prior encoders, routing of prior embeddings and the training-time
//! prior sampler.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{anchor_to_first, make_raymap, matrix_to_quat, matrix_to_rot6d, Intrinsics, Pose};
use crate::model::layers::{Init, Linear, LinearInit};
use crate::model::{patchify, ModelConfig, PoseEncoding};

/// Optional per-frame camera priors. Each prior type is given for every
/// frame or for none.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PriorBundle {
    poses: Option<Vec<Pose>>,
    intrinsics: Option<Vec<Intrinsics>>,
}

impl PriorBundle {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Poses are re-anchored so that the first frame is the identity.
    pub fn new(poses: Option<Vec<Pose>>, intrinsics: Option<Vec<Intrinsics>>) -> Result<Self> {
        if let (Some(p), Some(k)) = (&poses, &intrinsics) {
            if p.len() != k.len() {
                return Err(Error::InvalidInput(format!(
                    "{} pose priors but {} intrinsics priors",
                    p.len(),
                    k.len()
                )));
            }
        }
        if poses.as_ref().is_some_and(|p| p.is_empty()) || intrinsics.as_ref().is_some_and(|k| k.is_empty()) {
            return Err(Error::InvalidInput("a prior list must not be empty".into()));
        }
        Ok(Self {
            poses: poses.map(|p| anchor_to_first(&p)),
            intrinsics,
        })
    }

    pub fn poses(&self) -> Option<&[Pose]> {
        self.poses.as_deref()
    }

    pub fn intrinsics(&self) -> Option<&[Intrinsics]> {
        self.intrinsics.as_deref()
    }

    pub fn has_pose(&self) -> bool {
        self.poses.is_some()
    }

    pub fn has_intrinsics(&self) -> bool {
        self.intrinsics.is_some()
    }

    pub fn is_empty(&self) -> bool {
        !self.has_pose() && !self.has_intrinsics()
    }

    /// Keeps only the prior types enabled by the flags.
    pub fn filtered(&self, use_pose: bool, use_intrinsics: bool) -> Self {
        Self {
            poses: if use_pose { self.poses.clone() } else { None },
            intrinsics: if use_intrinsics { self.intrinsics.clone() } else { None },
        }
    }

    pub fn check_frames(&self, n: usize) -> Result<()> {
        for (what, len) in [
            ("pose", self.poses.as_ref().map(Vec::len)),
            ("intrinsics", self.intrinsics.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != n {
                    return Err(Error::InvalidInput(format!("{len} {what} priors for {n} frames")));
                }
            }
        }
        Ok(())
    }
}

/// Translation normaliser for pose priors: the mean camera-centre distance
/// from the first camera, or 1 when all centres coincide.
pub fn pose_scale_norm(anchored: &[Pose]) -> f64 {
    if anchored.is_empty() {
        return 1.0;
    }
    let mean = anchored.iter().map(|p| p.center().norm()).sum::<f64>() / anchored.len() as f64;
    if mean > 1e-9 {
        mean
    } else {
        1.0
    }
}

/// Encoder input `(R, T / scale_norm)`, with `R` as 6D columns or a
/// quaternion.
pub fn pose_vector(pose: &Pose, scale_norm: f64, encoding: PoseEncoding) -> Result<Vec<f64>> {
    if !(scale_norm > 0.0) || !scale_norm.is_finite() {
        return Err(Error::InvalidInput(format!("scale_norm must be positive, got {scale_norm}")));
    }
    let mut v: Vec<f64> = match encoding {
        PoseEncoding::Rot6d => matrix_to_rot6d(pose.rotation())?.0.to_vec(),
        PoseEncoding::Quaternion => matrix_to_quat(pose.rotation())?.to_vec(),
    };
    let t = pose.translation() / scale_norm;
    v.extend([t.x, t.y, t.z]);
    Ok(v)
}

/// Two-layer MLP from the pose vector to the token width.
#[derive(Clone, Copy, Debug)]
pub struct PoseEncoder {
    pub fc1: Linear,
    pub fc2: Linear,
    pub encoding: PoseEncoding,
}

impl PoseEncoder {
    pub fn new(init: &mut Init<'_>, encoding: PoseEncoding, dim: usize) -> Result<Self> {
        Ok(Self {
            fc1: init.linear("fc1", encoding.input_dim(), dim, LinearInit::Fan(2f64.sqrt()))?,
            fc2: init.linear("fc2", dim, dim, LinearInit::Zero)?,
            encoding,
        })
    }

    /// Embeddings `[N, C]` for anchored poses.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, poses: &[Pose], scale_norm: f64) -> Result<Var> {
        let n = poses.len();
        let d = self.encoding.input_dim();
        let mut data = Vec::with_capacity(n * d);
        for p in poses {
            data.extend(pose_vector(p, scale_norm, self.encoding)?);
        }
        let x = g.constant(Tensor::new([n, d], data)?);
        let h = self.fc1.forward(g, store, x)?;
        let h = g.relu(h)?;
        self.fc2.forward(g, store, h)
    }
}

/// Per-patch linear projection of the raymap.
#[derive(Clone, Copy, Debug)]
pub struct RayEncoder {
    pub proj: Linear,
}

impl RayEncoder {
    pub fn new(init: &mut Init<'_>, patch_size: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            proj: init.linear("proj", 3 * patch_size * patch_size, dim, LinearInit::Zero)?,
        })
    }

    /// Embeddings `[N, P, C]`, one raymap per frame.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, ks: &[Intrinsics], cfg: &ModelConfig) -> Result<Var> {
        let mut data = Vec::new();
        for k in ks {
            data.extend(patchified_raymap(k, cfg)?);
        }
        let p = cfg.patch_count();
        let x = g.constant(Tensor::new([ks.len(), p, 3 * cfg.patch_size * cfg.patch_size], data)?);
        self.proj.forward(g, store, x)
    }
}

/// Raymap laid out like an image (`[3, H, W]`) and cut into patches,
/// `P × 3p²` values.
pub fn patchified_raymap(k: &Intrinsics, cfg: &ModelConfig) -> Result<Vec<f64>> {
    if k.width != cfg.image_size || k.height != cfg.image_size {
        return Err(Error::InvalidInput(format!(
            "intrinsics are for {}x{} images, model expects {}x{}",
            k.width, k.height, cfg.image_size, cfg.image_size
        )));
    }
    let rays = make_raymap(k)?;
    let hw = k.pixel_count();
    let mut planar = vec![0.0; 3 * hw];
    for (i, px) in rays.data().chunks(3).enumerate() {
        for c in 0..3 {
            planar[c * hw + i] = px[c];
        }
    }
    Ok(patchify(&planar, cfg.image_size, cfg.patch_size))
}

/// Embeddings computed once per forward pass and routed to one or both
/// destinations.
#[derive(Clone, Copy, Debug, Default)]
pub struct PriorEmbeddings {
    /// `[N, C]`
    pub pose: Option<Var>,
    /// `[N, P, C]`
    pub ray: Option<Var>,
}

/// Where embeddings are added.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Destination {
    /// Input camera and patch tokens of the aggregator.
    MainTokens,
    /// Aggregated camera tokens before normalisation and aggregated patch
    /// tokens before pooling.
    ScaleHead,
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Destination::MainTokens => "main-tokens",
            Destination::ScaleHead => "scale-head",
        })
    }
}

impl FromStr for Destination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main-tokens" => Ok(Destination::MainTokens),
            "scale-head" => Ok(Destination::ScaleHead),
            _ => Err(Error::Config(format!(
                "unknown prior destination {s:?}; expected main-tokens or scale-head"
            ))),
        }
    }
}

/// The token streams priors may be added to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenStreams {
    /// `[N, C]`
    pub camera: Var,
    /// `[N, P, C]`
    pub patches: Var,
    /// `[N, C]`
    pub class: Var,
}

/// Adds pose embeddings to the camera stream and ray embeddings to the patch
/// stream. With `pose_into_class` the pose embedding goes to the class
/// stream instead, which is how the scale head works without camera tokens.
/// Registers are not part of the streams and are never touched.
pub fn route(
    g: &mut Graph,
    streams: TokenStreams,
    emb: &PriorEmbeddings,
    destination: Destination,
    pose_into_class: bool,
) -> Result<TokenStreams> {
    if pose_into_class && destination == Destination::MainTokens {
        return Err(Error::InvalidInput("pose priors enter main tokens through the camera token".into()));
    }
    let mut out = streams;
    if let Some(pose) = emb.pose {
        let target = if pose_into_class { &mut out.class } else { &mut out.camera };
        if g.shape(pose) != g.shape(*target) {
            return Err(Error::shape("route", g.shape(pose), g.shape(*target)));
        }
        *target = g.add(*target, pose)?;
    }
    if let Some(ray) = emb.ray {
        if g.shape(ray) != g.shape(out.patches) {
            return Err(Error::shape("route", g.shape(ray), g.shape(out.patches)));
        }
        out.patches = g.add(out.patches, ray)?;
    }
    Ok(out)
}

/// Bernoulli rates of the training-time prior sampler.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorProbabilities {
    pub inject: f64,
    pub pose: f64,
    pub intrinsics: f64,
    pub scale_supervision: f64,
}

impl Default for PriorProbabilities {
    fn default() -> Self {
        Self {
            inject: 0.5,
            pose: 0.9,
            intrinsics: 0.9,
            scale_supervision: 0.95,
        }
    }
}

impl PriorProbabilities {
    /// Never injects priors, always supervises scale on metric data.
    pub fn none() -> Self {
        Self {
            inject: 0.0,
            scale_supervision: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("inject", self.inject),
            ("pose", self.pose),
            ("intrinsics", self.intrinsics),
            ("scale_supervision", self.scale_supervision),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {name}={p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Always draws four uniforms so the stream position does not depend on
    /// the outcome.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, metric: bool) -> PriorConfig {
        let u: [f64; 4] = [rng.random(), rng.random(), rng.random(), rng.random()];
        let inject_any = u[0] < self.inject;
        PriorConfig {
            inject_any,
            use_pose: inject_any && u[1] < self.pose,
            use_intrinsics: inject_any && u[2] < self.intrinsics,
            supervise_scale: metric && u[3] < self.scale_supervision,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub inject_any: bool,
    pub use_pose: bool,
    pub use_intrinsics: bool,
    pub supervise_scale: bool,
}

pub fn sample_prior_config<R: Rng + ?Sized>(rng: &mut R, batch_is_metric: bool) -> PriorConfig {
    PriorProbabilities::default().sample(rng, batch_is_metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, Vec3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundle_anchors_and_checks_counts() {
        let a = Pose::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let b = Pose::from_translation(Vec3::new(1.0, 2.0, 0.0));
        let bundle = PriorBundle::new(Some(vec![a, b]), None).unwrap();
        assert_eq!(bundle.poses().unwrap()[0], Pose::identity());
        assert_eq!(*bundle.poses().unwrap()[1].translation(), Vec3::new(0.0, 2.0, 0.0));
        assert!(bundle.check_frames(2).is_ok());
        assert!(bundle.check_frames(3).is_err());
        let k = Intrinsics::centered(10.0, 10.0, 16, 16).unwrap();
        assert!(PriorBundle::new(Some(vec![a, b]), Some(vec![k])).is_err());
    }

    #[test]
    fn pose_vector_is_scale_normalised() {
        let r = axis_angle(Vec3::new(0.3, 1.0, 0.0), 0.4);
        let p1 = Pose::new(r, Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let p2 = Pose::new(r, Vec3::new(3.0, 6.0, 9.0)).unwrap();
        let a = pose_vector(&p1, 2.0, PoseEncoding::Rot6d).unwrap();
        let b = pose_vector(&p2, 6.0, PoseEncoding::Rot6d).unwrap();
        assert_eq!(a, b);
        assert_eq!(pose_vector(&p1, 1.0, PoseEncoding::Quaternion).unwrap().len(), 7);
        assert!(pose_vector(&p1, 0.0, PoseEncoding::Rot6d).is_err());
    }

    #[test]
    fn scale_norm_falls_back_to_one() {
        assert_eq!(pose_scale_norm(&[Pose::identity()]), 1.0);
        let p = [Pose::identity(), Pose::from_translation(Vec3::new(0.0, 0.0, 4.0))];
        assert_eq!(pose_scale_norm(&p), 2.0);
    }

    #[test]
    fn destination_names_parse() {
        assert_eq!("scale-head".parse::<Destination>().unwrap(), Destination::ScaleHead);
        assert_eq!("main-tokens".parse::<Destination>().unwrap(), Destination::MainTokens);
        assert!("registers".parse::<Destination>().is_err());
    }

    #[test]
    fn non_metric_never_supervises_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert!(!sample_prior_config(&mut rng, false).supervise_scale);
        }
    }

    #[test]
    fn sampler_is_reproducible() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64).map(|_| sample_prior_config(&mut rng, true)).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
    }
}
