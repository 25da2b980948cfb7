//! Mask-guided two-stream person search workbench.
//!
//! Pipeline: synthetic scene generation with ground-truth boxes and instance
//! masks, a simulated pedestrian detector, mask-guided two-stream feature
//! extraction trained with an online instance matching loss, and ranking
//! evaluation (detection AP/recall, search mAP, CMC top-K).

pub mod config;
pub mod detectsim;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod masking;
pub mod oimloss;
pub mod par;
pub mod reidnet;
pub mod rng;
pub mod synthdata;

pub use error::{Error, Result};
