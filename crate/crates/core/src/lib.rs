//! Synthetic seed-image datasets, contrastive self-supervised pretraining
//! (SimCLR, MoCo, BYOL) on a from-scratch residual CNN, linear-probe
//! evaluation, and classification reports.

pub mod augment;
pub mod cli;
pub mod contrastive;
pub mod error;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod par;
pub mod probe;
pub mod raster;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
pub use raster::Image;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    mod augmentation {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/momentum.md")]
    mod momentum {}
    #[doc = include_str!("../../../book/src/probe.md")]
    mod probe {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
