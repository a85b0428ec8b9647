use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{sincos_2d, AffineNorm, Attention, Block, Init, Linear, LinearInit, NORM_EPS};
use super::{patchify, ModelConfig};
use crate::autodiff::{Checkpoint, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::CameraParam;
use crate::prior::{pose_scale_norm, route, Destination, PoseEncoder, PriorBundle, PriorEmbeddings, RayEncoder, TokenStreams};

/// Output channels of the dense head: depth, depth confidence, three point
/// coordinates, point confidence.
pub const DENSE_CHANNELS: usize = 6;

/// Per-frame token streams entering the aggregator.
#[derive(Clone, Copy, Debug)]
pub struct FrameTokens {
    /// `[N, C]`
    pub class: Var,
    /// `[N, C]`
    pub camera: Var,
    /// `[N, R, C]`, absent when the model has no registers.
    pub registers: Option<Var>,
    /// `[N, P, C]`
    pub patches: Var,
}

/// Aggregator outputs that the heads consume.
#[derive(Clone, Copy, Debug)]
pub struct AggregatedTokens {
    /// `[N, C]`
    pub camera: Var,
    /// `[N, P, C]`
    pub patches: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `[N, 9]`: quaternion, translation, field of view.
    pub cameras: Var,
    /// `[N, H, W]`
    pub depth: Var,
    pub depth_conf: Var,
    /// `[N, H, W, 3]`
    pub points: Var,
    pub point_conf: Var,
    /// Scalar metric scale; absent without a scale head.
    pub scale: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
struct CameraHead {
    norm1: AffineNorm,
    attn: Attention,
    norm2: AffineNorm,
    out: Linear,
}

#[derive(Clone, Copy, Debug)]
struct DenseHead {
    norm: AffineNorm,
    up1: Linear,
    up2: Linear,
    out: Linear,
    channels: usize,
}

/// Pooling projection and MLP of the metric-scale head.
#[derive(Clone, Copy, Debug)]
pub struct ScaleHead {
    pub pool: Linear,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
struct Parts {
    patch_embed: Linear,
    pos_embed: ParamId,
    cls_token: ParamId,
    cls_proj: Linear,
    cam0: ParamId,
    cam: ParamId,
    reg0: Option<ParamId>,
    reg: Option<ParamId>,
    blocks: Vec<Block>,
    camera_head: CameraHead,
    depth_head: DenseHead,
    point_head: DenseHead,
    scale_head: Option<ScaleHead>,
    pose_encoder: Option<PoseEncoder>,
    ray_encoder: Option<RayEncoder>,
}

/// The network together with its parameters.
#[derive(Clone, Debug)]
pub struct UniScaleModel {
    config: ModelConfig,
    store: ParamStore,
    parts: Parts,
}

impl UniScaleModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.embed_dim;
        let p = config.patch_size;
        let r = config.register_count;
        let variant = config.variant;

        let mut bb = Init::new(&mut store, &mut rng, ParamGroup::Backbone, "");
        let patch_embed = bb.linear("patch_embed", 3 * p * p, c, LinearInit::Fan(1.0))?;
        let pos_embed = bb.tensor("pos_embed", sincos_2d(config.grid(), c), false)?;
        let cls_token = bb.randn("cls_token", &[c], 0.02)?;
        let cls_proj = bb.linear("cls_proj", c, c, LinearInit::Fan(1.0))?;
        let cam0 = bb.randn("camera_token_first", &[c], 0.02)?;
        let cam = bb.randn("camera_token", &[c], 0.02)?;
        let (reg0, reg) = if r > 0 {
            (
                Some(bb.randn("register_tokens_first", &[r, c], 0.02)?),
                Some(bb.randn("register_tokens", &[r, c], 0.02)?),
            )
        } else {
            (None, None)
        };
        let mut blocks = Vec::with_capacity(config.aggregator_blocks);
        for i in 0..config.aggregator_blocks {
            blocks.push(Block::new(&mut bb.sub(&format!("block{i}")), c, config.attention_heads, config.mlp_ratio)?);
        }
        let camera_head = {
            let mut h = bb.sub("camera_head");
            let head = CameraHead {
                norm1: h.norm("norm1", c)?,
                attn: Attention::new(&mut h.sub("attn"), c, config.attention_heads)?,
                norm2: h.norm("norm2", c)?,
                out: h.linear("out", c, 9, LinearInit::Fan(0.1))?,
            };
            h.store.get_mut(head.out.b).value.data_mut()[0] = 1.0;
            head
        };
        let [c1, c2] = config.dense_channels;
        let q = p / 4;
        let mut dense = |name: &str, channels: usize| -> Result<DenseHead> {
            let mut h = bb.sub(name);
            Ok(DenseHead {
                norm: h.norm("norm", c)?,
                up1: h.linear("up1", c, 4 * c1, LinearInit::Fan(2f64.sqrt()))?,
                up2: h.linear("up2", c1, 4 * c2, LinearInit::Fan(2f64.sqrt()))?,
                out: h.linear("out", c2, channels * q * q, LinearInit::Fan(0.1))?,
                channels,
            })
        };
        let depth_head = dense("depth_head", 2)?;
        let point_head = dense("point_head", DENSE_CHANNELS - 2)?;

        let mut sp = Init::new(&mut store, &mut rng, ParamGroup::ScaleAndPriors, "");
        let scale_head = if variant.has_scale_head() {
            let inputs = [variant.scale_uses_camera(), variant.scale_uses_patches(), variant.scale_uses_class()]
                .iter()
                .filter(|&&b| b)
                .count();
            let mut h = sp.sub("scale_head");
            Some(ScaleHead {
                pool: h.linear("pool", c, 1, LinearInit::Fan(1.0))?,
                fc1: h.linear("fc1", inputs * c, c, LinearInit::Fan(2f64.sqrt()))?,
                fc2: h.linear("fc2", c, 1, LinearInit::Zero)?,
            })
        } else {
            None
        };
        let (pose_encoder, ray_encoder) = if variant.uses_priors() {
            (
                Some(PoseEncoder::new(&mut sp.sub("pose_encoder"), variant.pose_encoding(), c)?),
                Some(RayEncoder::new(&mut sp.sub("ray_encoder"), p, c)?),
            )
        } else {
            (None, None)
        };

        Ok(Self {
            config,
            store,
            parts: Parts {
                patch_embed,
                pos_embed,
                cls_token,
                cls_proj,
                cam0,
                cam,
                reg0,
                reg,
                blocks,
                camera_head,
                depth_head,
                point_head,
                scale_head,
                pose_encoder,
                ray_encoder,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn scale_head_parts(&self) -> Option<ScaleHead> {
        self.parts.scale_head
    }

    /// Ids of every parameter of the scale head.
    pub fn scale_head_param_ids(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| self.store.get(id).name.starts_with("scale_head."))
            .collect()
    }

    /// Linear patch projection and class token. `images` is `[N, 3, H, W]`;
    /// returns the class token `[N, C]` and patch tokens `[N, P, C]`.
    pub fn embed(&self, g: &mut Graph, images: &Tensor) -> Result<(Var, Var)> {
        let s = self.config.image_size;
        let p = self.config.patch_size;
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("model expects images of shape [N, 3, {s}, {s}]"),
            });
        }
        let n = shape[0];
        let frame = 3 * s * s;
        let mut data = Vec::with_capacity(n * frame);
        for f in images.data().chunks(frame) {
            data.extend(patchify(f, s, p));
        }
        let x = g.constant(Tensor::new([n, self.config.patch_count(), 3 * p * p], data)?);
        let patches = self.parts.patch_embed.forward(g, &self.store, x)?;
        let mean = g.mean(patches, 1)?;
        let cls = self.parts.cls_proj.forward(g, &self.store, mean)?;
        let token = g.param(&self.store, self.parts.cls_token);
        let class = g.add(cls, token)?;
        Ok((class, patches))
    }

    /// Encodes the priors present in `priors`. The variant without prior
    /// injection returns no embeddings.
    pub fn encode_priors(&self, g: &mut Graph, priors: &PriorBundle) -> Result<PriorEmbeddings> {
        let mut emb = PriorEmbeddings::default();
        if let (Some(enc), Some(poses)) = (&self.parts.pose_encoder, priors.poses()) {
            emb.pose = Some(enc.encode(g, &self.store, poses, pose_scale_norm(poses))?);
        }
        if let (Some(enc), Some(ks)) = (&self.parts.ray_encoder, priors.intrinsics()) {
            emb.ray = Some(enc.encode(g, &self.store, ks, &self.config)?);
        }
        Ok(emb)
    }

    /// Builds the per-frame token streams: learned camera and register
    /// tokens (distinct for frame 0), routed prior embeddings and the
    /// positional embedding on patches.
    pub fn assemble_tokens(&self, g: &mut Graph, class: Var, patches: Var, emb: &PriorEmbeddings) -> Result<FrameTokens> {
        let n = g.shape(patches)[0];
        let c = self.config.embed_dim;
        let per_frame = |g: &mut Graph, first: ParamId, rest: ParamId, shape: &[usize]| -> Result<Var> {
            let f = g.param(&self.store, first);
            let mut s1 = vec![1];
            s1.extend_from_slice(shape);
            let f = g.reshape(f, &s1)?;
            if n == 1 {
                return Ok(f);
            }
            let r = g.param(&self.store, rest);
            let mut sr = vec![n - 1];
            sr.extend_from_slice(shape);
            let zeros = g.constant(Tensor::zeros(sr));
            let r = g.add(zeros, r)?;
            g.concat(&[f, r], 0)
        };
        let camera = per_frame(g, self.parts.cam0, self.parts.cam, &[c])?;
        let registers = match (self.parts.reg0, self.parts.reg) {
            (Some(a), Some(b)) => Some(per_frame(g, a, b, &[self.config.register_count, c])?),
            _ => None,
        };
        let streams = route(
            g,
            TokenStreams { camera, patches, class },
            emb,
            Destination::MainTokens,
            false,
        )?;
        let pos = g.param(&self.store, self.parts.pos_embed);
        let patches = g.add(streams.patches, pos)?;
        Ok(FrameTokens {
            class: streams.class,
            camera: streams.camera,
            registers,
            patches,
        })
    }

    /// Alternating frame-level and global attention. Frames carry no
    /// positional signal in global attention apart from their tokens.
    pub fn aggregate(&self, g: &mut Graph, tokens: &FrameTokens) -> Result<AggregatedTokens> {
        let n = g.shape(tokens.patches)[0];
        if n == 0 {
            return Err(Error::InvalidInput("aggregate needs at least one frame".into()));
        }
        let c = self.config.embed_dim;
        let t = self.config.tokens_per_frame();
        let class = g.reshape(tokens.class, &[n, 1, c])?;
        let camera = g.reshape(tokens.camera, &[n, 1, c])?;
        let mut parts = vec![class, camera];
        if let Some(r) = tokens.registers {
            parts.push(r);
        }
        parts.push(tokens.patches);
        let mut x = g.concat(&parts, 1)?;
        for (i, block) in self.parts.blocks.iter().enumerate() {
            if i % 2 == 0 {
                x = block.forward(g, &self.store, x)?;
            } else {
                let flat = g.reshape(x, &[1, n * t, c])?;
                let y = block.forward(g, &self.store, flat)?;
                x = g.reshape(y, &[n, t, c])?;
            }
        }
        let camera = g.slice(x, 1, 1, 2)?;
        let camera = g.reshape(camera, &[n, c])?;
        let patches = g.slice(x, 1, 2 + self.config.register_count, t)?;
        Ok(AggregatedTokens { camera, patches })
    }

    /// `[N, 9]` camera vectors; frame 0 is the identity pose by construction.
    pub fn camera_head(&self, g: &mut Graph, camera: Var) -> Result<Var> {
        let n = g.shape(camera)[0];
        let c = self.config.embed_dim;
        let h = &self.parts.camera_head;
        let x = g.reshape(camera, &[1, n, c])?;
        let y = h.norm1.forward(g, &self.store, x)?;
        let y = h.attn.forward(g, &self.store, y)?;
        let x = g.add(x, y)?;
        let y = h.norm2.forward(g, &self.store, x)?;
        let raw = h.out.forward(g, &self.store, y)?;
        let raw = g.reshape(raw, &[n, 9])?;

        let fov = g.slice(raw, 1, 7, 9)?;
        let fov = g.sigmoid(fov)?;
        let fov = g.scale(fov, std::f64::consts::PI)?;
        let q0 = g.constant(Tensor::new([1, 4], vec![1.0, 0.0, 0.0, 0.0])?);
        let t0 = g.constant(Tensor::zeros([1, 3]));
        let (q, t) = if n == 1 {
            (q0, t0)
        } else {
            let rest = g.slice(raw, 0, 1, n)?;
            let q = g.slice(rest, 1, 0, 4)?;
            let q = g.l2_normalize(q)?;
            let t = g.slice(rest, 1, 4, 7)?;
            (g.concat(&[q0, q], 0)?, g.concat(&[t0, t], 0)?)
        };
        g.concat(&[q, t, fov], 1)
    }

    /// Depth and point decoders, each a per-patch MLP with two 2×
    /// upsampling stages; returns `[N, 6, H, W]` raw channels (depth,
    /// depth confidence, xyz, point confidence).
    pub fn dense_head(&self, g: &mut Graph, patches: Var) -> Result<Var> {
        let d = self.decode(g, &self.parts.depth_head, patches)?;
        let p = self.decode(g, &self.parts.point_head, patches)?;
        g.concat(&[d, p], 1)
    }

    fn decode(&self, g: &mut Graph, h: &DenseHead, patches: Var) -> Result<Var> {
        let n = g.shape(patches)[0];
        let gs = self.config.grid();
        let q = self.config.patch_size / 4;
        let [c1, c2] = self.config.dense_channels;
        let pc = self.config.patch_count();
        let k = h.channels;
        let x = h.norm.forward(g, &self.store, patches)?;
        let x = h.up1.forward(g, &self.store, x)?;
        let x = g.relu(x)?;
        let x = g.reshape(x, &[n, pc, 4, c1])?;
        let x = h.up2.forward(g, &self.store, x)?;
        let x = g.relu(x)?;
        let x = g.reshape(x, &[n, pc, 16, c2])?;
        let x = h.out.forward(g, &self.store, x)?;
        let x = g.reshape(x, &[n, gs, gs, 2, 2, 2, 2, k, q, q])?;
        let x = g.permute(x, &[0, 7, 1, 3, 5, 8, 2, 4, 6, 9])?;
        let s = self.config.image_size;
        g.reshape(x, &[n, k, s, s])
    }

    /// Softmax-weighted sum of patch tokens. Returns the pooled tokens
    /// `[N, C]` and the weights `[N, P, 1]`.
    pub fn attention_pool(&self, g: &mut Graph, patches: Var) -> Result<(Var, Var)> {
        let head = self
            .parts
            .scale_head
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("model has no scale head".into()))?;
        attention_pool(g, &self.store, &head.pool, patches)
    }

    /// Metric scale `S`: mean over frames of `exp(MLP(T_i))` where `T_i`
    /// concatenates the normalised camera token, pooled patch tokens and
    /// class token. Errors for the variant without a scale head.
    pub fn scale_head(&self, g: &mut Graph, camera: Var, patches: Var, class: Var, emb: &PriorEmbeddings) -> Result<Var> {
        let head = self
            .parts
            .scale_head
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("model has no scale head".into()))?;
        let n = g.shape(camera)[0];
        if g.shape(patches)[0] != n || g.shape(class)[0] != n {
            return Err(Error::InvalidInput(format!(
                "scale head frame counts differ: camera {n}, patches {}, class {}",
                g.shape(patches)[0],
                g.shape(class)[0]
            )));
        }
        let v = self.config.variant;
        let s = route(
            g,
            TokenStreams { camera, patches, class },
            emb,
            Destination::ScaleHead,
            !v.scale_uses_camera(),
        )?;
        let mut inputs = Vec::new();
        if v.scale_uses_camera() {
            inputs.push(g.layer_norm(s.camera, NORM_EPS)?);
        }
        if v.scale_uses_patches() {
            let (pooled, _) = attention_pool(g, &self.store, &head.pool, s.patches)?;
            inputs.push(g.layer_norm(pooled, NORM_EPS)?);
        }
        if v.scale_uses_class() {
            inputs.push(g.layer_norm(s.class, NORM_EPS)?);
        }
        let t = g.concat(&inputs, 1)?;
        let h = head.fc1.forward(g, &self.store, t)?;
        let h = g.relu(h)?;
        let o = head.fc2.forward(g, &self.store, h)?;
        let e = g.exp(o)?;
        g.mean_all(e)
    }

    /// Full pipeline: embed, inject, aggregate, then the three heads.
    pub fn forward(&self, g: &mut Graph, images: &Tensor, priors: &PriorBundle) -> Result<ForwardOutput> {
        let n = images.shape().first().copied().unwrap_or(0);
        if images.rank() != 4 || n == 0 {
            return Err(Error::InvalidShape {
                shape: images.shape().to_vec(),
                reason: "expected a non-empty [N, 3, H, W] image stack".into(),
            });
        }
        priors.check_frames(n)?;
        let v = self.config.variant;
        let (class, patches) = self.embed(g, images)?;
        let emb = self.encode_priors(g, priors)?;
        let tokens = self.assemble_tokens(g, class, patches, &emb)?;
        let agg = self.aggregate(g, &tokens)?;
        let cameras = self.camera_head(g, agg.camera)?;
        let dense = self.dense_head(g, agg.patches)?;

        let s = self.config.image_size;
        let chan = |g: &mut Graph, a: usize, b: usize| g.slice(dense, 1, a, b);
        let d = chan(g, 0, 1)?;
        let d = g.reshape(d, &[n, s, s])?;
        let depth = g.exp(d)?;
        let dc = chan(g, 1, 2)?;
        let dc = g.reshape(dc, &[n, s, s])?;
        let depth_conf = g.exp(dc)?;
        let pts = chan(g, 2, 5)?;
        let points = g.permute(pts, &[0, 2, 3, 1])?;
        let pc = chan(g, 5, 6)?;
        let pc = g.reshape(pc, &[n, s, s])?;
        let point_conf = g.exp(pc)?;

        let scale = if v.has_scale_head() {
            let scale_emb = if v.priors_into_scale_head() { emb } else { PriorEmbeddings::default() };
            Some(self.scale_head(g, agg.camera, agg.patches, tokens.class, &scale_emb)?)
        } else {
            None
        };
        Ok(ForwardOutput {
            cameras,
            depth,
            depth_conf,
            points,
            point_conf,
            scale,
        })
    }

    /// Forward pass without gradient tracking, copied out of the graph.
    pub fn predict(&self, images: &Tensor, priors: &PriorBundle) -> Result<Prediction> {
        let mut g = Graph::inference();
        let out = self.forward(&mut g, images, priors)?;
        Prediction::from_graph(&g, &out)
    }

    pub fn checkpoint_header(&self, train: Option<serde_json::Value>) -> Result<String> {
        Ok(serde_json::to_string(&CheckpointHeader {
            model: self.config.clone(),
            train,
        })?)
    }

    pub fn to_checkpoint(&self, train: Option<serde_json::Value>) -> Result<Checkpoint> {
        Ok(Checkpoint {
            header: self.checkpoint_header(train)?,
            records: self.store.value_records(),
        })
    }

    /// Rebuilds the model described by a checkpoint header and loads its
    /// parameter records. Records whose name contains `/` (optimizer state)
    /// are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, Option<serde_json::Value>)> {
        let header: CheckpointHeader =
            serde_json::from_str(&ckpt.header).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let mut model = Self::new(header.model)?;
        let records: Vec<(String, Tensor)> = ckpt.records.iter().filter(|(n, _)| !n.contains('/')).cloned().collect();
        model.store.load_values(&records)?;
        Ok((model, header.train))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    model: ModelConfig,
    #[serde(default)]
    train: Option<serde_json::Value>,
}

pub fn attention_pool(g: &mut Graph, store: &ParamStore, l1: &Linear, patches: Var) -> Result<(Var, Var)> {
    let shape = g.shape(patches).to_vec();
    if shape.len() != 3 || shape[1] == 0 {
        return Err(Error::InvalidShape {
            shape,
            reason: "attention_pool expects [N, P, C] with P ≥ 1".into(),
        });
    }
    let logits = l1.forward(g, store, patches)?;
    let w = g.softmax(logits, 1)?;
    let wt = g.transpose_last_two(w)?;
    let pooled = g.matmul(wt, patches)?;
    let pooled = g.reshape(pooled, &[shape[0], shape[2]])?;
    Ok((pooled, w))
}

/// Values of a forward pass in the normalised frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub cameras: Vec<CameraParam>,
    /// `[N, H, W]`
    pub depth: Tensor,
    pub depth_conf: Tensor,
    /// `[N, H, W, 3]`
    pub points: Tensor,
    pub point_conf: Tensor,
    /// 1 for models without a scale head.
    pub scale: f64,
}

impl Prediction {
    pub fn from_graph(g: &Graph, out: &ForwardOutput) -> Result<Self> {
        let cams = g.value(out.cameras);
        let cameras = cams.data().chunks(9).map(CameraParam::from_slice).collect::<Result<_>>()?;
        Ok(Self {
            cameras,
            depth: g.value(out.depth).clone(),
            depth_conf: g.value(out.depth_conf).clone(),
            points: g.value(out.points).clone(),
            point_conf: g.value(out.point_conf).clone(),
            scale: match out.scale {
                Some(s) => g.value(s).item()?,
                None => 1.0,
            },
        })
    }

    pub fn frames(&self) -> usize {
        self.cameras.len()
    }

    /// Depth of one frame, row-major.
    pub fn frame_depth(&self, i: usize) -> &[f64] {
        let hw = self.depth.numel() / self.frames();
        &self.depth.data()[i * hw..(i + 1) * hw]
    }

    /// Multiplies depth, points and translations by `s`; rotations and
    /// fields of view are unchanged.
    pub fn metricize(&self, s: f64) -> Result<Prediction> {
        metricize(self, s)
    }
}

pub fn metricize(pred: &Prediction, s: f64) -> Result<Prediction> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidInput(format!("metric scale must be positive, got {s}")));
    }
    let mut out = pred.clone();
    out.depth = pred.depth.map(|d| d * s);
    out.points = pred.points.map(|p| p * s);
    for c in &mut out.cameras {
        c.t = c.t.map(|t| t * s);
    }
    Ok(out)
}
