//! Encoders, heads, the parameter store, and gradient verification.

mod checkpoint;
mod encoder;
mod gradcheck;
mod head;
pub mod layers;
mod matrix;
mod params;
mod scalar;

pub use checkpoint::{Checkpoint, IndexEntry, META_FILE, PARAMS_FILE};
pub use encoder::{encode, Encoder, EncoderCache, EncoderConfig, EncoderProfile, ParamSpec};
pub use gradcheck::{gradient_check, relative_error, GradCheckConfig, GradCheckReport};
pub use head::{
    apply_head, init_head, init_params, strip_all_heads_and_freeze, strip_head_and_freeze, Head, HeadCache, HeadKind,
    HeadSpec,
};
pub use matrix::{dot, norm, FeatureBatch, LatentBatch, Matrix};
pub use params::{Grads, Param, ParamRole, ParamStore};
pub use scalar::Scalar;
