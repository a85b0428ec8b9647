//! `USCN` scene container.
//!
//! ```text
//! "USCN" | version u32 | header_len u32 | header (UTF-8 JSON) |
//!   images f32 LE × N·3·H·W | depths f32 LE × N·H·W
//! ```
//!
//! Depth is z-depth in the units named by the header (metres for metric
//! scenes, normalised units otherwise); 0 marks pixels without a surface.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SceneSample;
use crate::autodiff::{put_u32, ByteReader};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};

pub const SCENE_MAGIC: &[u8; 4] = b"USCN";
pub const SCENE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneHeader {
    width: usize,
    height: usize,
    frames: usize,
    intrinsics: Intrinsics,
    poses: Vec<Pose>,
    metric: bool,
    scale: Option<f64>,
    depth_kind: String,
    payload: Vec<String>,
}

fn payload_order() -> Vec<String> {
    vec!["images:f32le:N,3,H,W".into(), "depths:f32le:N,H,W".into()]
}

pub fn encode_scene(s: &SceneSample) -> Result<Vec<u8>> {
    let n = s.frames();
    if s.images.len() != n * 3 * s.pixels() || s.depths.len() != n * s.pixels() {
        return Err(Error::InvalidInput("scene payload does not match its extents".into()));
    }
    let header = serde_json::to_string(&SceneHeader {
        width: s.width,
        height: s.height,
        frames: n,
        intrinsics: s.intrinsics,
        poses: s.poses.clone(),
        metric: s.metric,
        scale: s.scale,
        depth_kind: "z".into(),
        payload: payload_order(),
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + 4 * (s.images.len() + s.depths.len()));
    out.extend_from_slice(SCENE_MAGIC);
    put_u32(&mut out, SCENE_VERSION);
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(header.as_bytes());
    for v in s.images.iter().chain(&s.depths) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_scene(bytes: &[u8]) -> Result<SceneSample> {
    let mut r = ByteReader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != SCENE_MAGIC {
        return Err(Error::Format(format!("bad scene magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != SCENE_VERSION {
        return Err(Error::Format(format!("unsupported scene version {version}")));
    }
    let hlen = r.u32("header length")? as usize;
    let h: SceneHeader = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| Error::Format(format!("scene header: {e}")))?;
    if h.depth_kind != "z" || h.payload != payload_order() {
        return Err(Error::Format(format!(
            "unsupported payload layout {:?} / depth kind {}",
            h.payload, h.depth_kind
        )));
    }
    if h.poses.len() != h.frames || h.intrinsics.width != h.width || h.intrinsics.height != h.height {
        return Err(Error::Format("scene header is inconsistent".into()));
    }
    h.intrinsics.validate().map_err(|e| Error::Format(e.to_string()))?;
    let hw = h.width.checked_mul(h.height).ok_or_else(|| Error::Format("extent overflow".into()))?;
    let read = |r: &mut ByteReader<'_>, count: usize, what: &str| -> Result<Vec<f32>> {
        let bytes = r.take(
            count.checked_mul(4).ok_or_else(|| Error::Format("payload overflow".into()))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    };
    let images = read(&mut r, h.frames * 3 * hw, "images")?;
    let depths = read(&mut r, h.frames * hw, "depths")?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after scene payload", bytes.len() - r.pos)));
    }
    Ok(SceneSample {
        width: h.width,
        height: h.height,
        images,
        depths,
        intrinsics: h.intrinsics,
        poses: h.poses,
        metric: h.metric,
        scale: h.scale,
    })
}

pub fn write_scene(sample: &SceneSample, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_scene(sample)?)?;
    Ok(())
}

pub fn read_scene(path: impl AsRef<Path>) -> Result<SceneSample> {
    decode_scene(&std::fs::read(path)?)
}
