//! Camera geometry, the depth and pose networks and the self-supervised loss.

mod geometry;
mod loss;
mod networks;

pub use geometry::{
    axis_angle_to_matrix, depth_to_disp, determinant, disp_to_depth, mat_mul, project_and_warp, transpose, CameraIntrinsics,
    Mat3, Pose, PoseBatch, Warp,
};
pub use loss::{
    auto_mask, min_reprojection, photometric_error, smoothness_loss, ssim, total_loss, LossInputs, LossReport, LossSettings,
};
pub use networks::{Decoder, PoseNet, POSE_SCALE};

use crate::config::ModelConfig;
use crate::encoder::Encoder;
use crate::error::Result;
use crate::nn::{Ctx, Init, ParamStore};
use crate::profile;
use crate::scalar::Scalar;
use crate::tensor::{concat, Tensor};

/// Depth network (encoder and decoder) plus pose network, with all
/// parameters in one store. Depth parameters live under `depth.`, pose
/// parameters under `pose.`.
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    pub pose: PoseNet<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let (encoder, decoder, pose) = {
            let mut init = Init::new(&mut store, config.seed);
            let mut depth = init.sub("depth");
            let encoder = Encoder::new(&mut depth, "encoder", config)?;
            let decoder = Decoder::new(&mut depth, "decoder", config);
            drop(depth);
            (encoder, decoder, PoseNet::new(&mut init, "pose", config.pose_width))
        };
        Ok(Model { config: config.clone(), store, encoder, decoder, pose })
    }

    /// Sigmoid disparities, finest first.
    pub fn disparities(&self, image: &Tensor<T>, ctx: &Ctx) -> Result<Vec<Tensor<T>>> {
        let feats = {
            let _s = profile::scope("encoder");
            self.encoder.forward(image, ctx)?
        };
        let _s = profile::scope("decoder");
        self.decoder.forward(&feats)
    }

    /// Target-to-source motion as a B×6 (axis-angle, translation) tensor.
    pub fn motion(&self, target: &Tensor<T>, source: &Tensor<T>, ctx: &Ctx) -> Result<Tensor<T>> {
        let _s = profile::scope("pose");
        self.pose.forward(&concat(&[target, source], 1)?, ctx)
    }

    pub fn depth_param_count(&self) -> usize {
        self.store.count_prefix("depth.")
    }

    pub fn pose_param_count(&self) -> usize {
        self.store.count_prefix("pose.")
    }
}
