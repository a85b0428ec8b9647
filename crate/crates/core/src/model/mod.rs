//! Toy-scale multi-view network with camera, dense and metric-scale heads.

mod config;
pub mod layers;
mod network;

pub use config::{ModelConfig, PoseEncoding, Variant};
pub use network::{
    attention_pool, metricize, AggregatedTokens, ForwardOutput, FrameTokens, Prediction, ScaleHead, UniScaleModel,
    DENSE_CHANNELS,
};

/// Cuts a planar `[3, S, S]` image into `(S/p)²` patches of `3·p²` values,
/// row-major over the patch grid; within a patch the order is channel, row,
/// column.
pub fn patchify(planar: &[f64], size: usize, p: usize) -> Vec<f64> {
    let g = size / p;
    let mut out = Vec::with_capacity(planar.len());
    for gy in 0..g {
        for gx in 0..g {
            for c in 0..3 {
                for y in 0..p {
                    let row = (c * size + gy * p + y) * size + gx * p;
                    out.extend_from_slice(&planar[row..row + p]);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patchify_orders_channel_row_column() {
        let size = 4;
        let planar: Vec<f64> = (0..3 * size * size).map(|i| i as f64).collect();
        let out = patchify(&planar, size, 2);
        assert_eq!(out.len(), planar.len());
        // second patch on the first row: columns 2..4, rows 0..2, channel 0
        assert_eq!(&out[12..16], &[2.0, 3.0, 6.0, 7.0]);
        // its channel 1 block starts at pixel (0, 2) of plane 1
        assert_eq!(out[16], 18.0);
    }
}
