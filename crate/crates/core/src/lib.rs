//! Analysis-by-synthesis correction of robot kinematics.
//!
//! A serial-chain tool model is posed from (possibly wrong) joint readings,
//! soft-rasterized, composited onto a mean background and compared to an
//! observed image in feature space. Gradient descent on the joint values (or
//! on the base frame / camera extrinsics) recovers the true kinematics, and
//! the corrected pose yields a tool segmentation mask.
//!
//! Pipeline stages and their modules:
//!
//! * [`kinematics`]: DH forward kinematics, posed meshes, vertex VJP.
//! * [`raster`]: soft silhouette and shading with vertex VJPs; hard masks.
//! * [`features`]: mean background, hybrid composition, feature extraction.
//! * [`losses`]: attention dilation, attentional cosine loss, smooth-L1.
//! * [`optimizer`]: loss evaluation with chained VJPs and the descent loop.
//! * [`scenegen`]: synthetic trajectories, perturbations, domain corruptions.
//! * [`metrics`]: Dice, joint MAE and table aggregation.

// Negated float comparisons are how NaN gets rejected; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod demo;
pub mod error;
pub mod features;
pub mod geom;
pub mod image;
pub mod kinematics;
pub mod losses;
pub mod cli;
pub mod config;
pub mod metrics;
pub mod optimizer;
pub mod plot;
pub mod raster;
pub mod scenegen;

pub use error::{Error, Result};
pub use geom::{PinholeCamera, PointLight, RigidTransform, TriangleMesh, Vec2, Vec3};
pub use image::{Image, Mask, Plane};
pub use kinematics::{DhChain, DhRow, JointConfig, JointKind, LinkMesh};
