//! Document binarization with an unrolled primal-dual total-variation
//! solver.
//!
//! A classical unary provider ([`unary`]) turns a gray page into per-pixel
//! FG/BG costs; [`pd`] refines them with a few Bregman primal-dual
//! iterations whose step sizes and edge sensitivity can be learned by
//! differentiating through the unrolled scheme ([`learn`]). [`metrics`]
//! scores results with F-measure, PSNR and DRD, [`synth`] generates
//! degraded pages with exact ground truth, and [`pipeline`] ties it all
//! together with patch extraction and stitching.

pub mod error;
pub mod grid;
pub mod io;
pub mod kv;
pub mod learn;
pub mod metrics;
pub mod pd;
pub mod pipeline;
pub mod synth;
pub mod unary;

pub use error::{Error, Result};
pub use grid::{CostVolume, Dims, DualField, GrayImage, LabelField, VecField};
pub use pd::{EdgeMap, PdParams, SolverState};
