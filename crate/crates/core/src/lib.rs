//! Source-free open-set domain adaptation with inheritable models.
//!
//! A vendor trains an [`InheritableModel`] on labeled source data: a feature
//! extractor plus a classifier with extra negative classes fitted to
//! spliced out-of-distribution features. A client receives only the model
//! file, scores how well it suits an unlabeled target set, and adapts it to
//! that target without ever seeing source data.

pub mod client;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod inheritability;
pub mod losses;
pub mod model;
pub mod negatives;
pub mod numcore;
pub mod pipeline;
pub mod vendor;

pub use client::{adapt, predict, AdaptConfig, TargetModel};
pub use data::{generate_pair, DomainPair, LabeledSet, ShiftSpec, UnlabeledSet};
pub use error::{Error, Result};
pub use eval::{score, EvalReport, OpenSetLabel};
pub use model::{InheritableModel, NetworkSpec};
pub use vendor::{train_vendor, VendorConfig};
