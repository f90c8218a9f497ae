//! Transmit antenna muting for multi-user MIMO downlink.
//!
//! The crate simulates a cross-polarized base-station array serving several
//! multi-antenna users, and searches for the smallest set of active antenna
//! elements that still meets a per-user throughput target. Heuristic solvers
//! ([`tam`]) produce labels for a small neural classifier ([`nam`]) that picks
//! one of a few fixed array configurations directly from channel features.
//! [`complexity`] accounts the floating-point cost of every approach and
//! [`experiment`] wires everything into reproducible runs.

// `!(x > 0.0)` guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod complexity;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod nam;
pub mod tam;
pub mod txrx;

pub use channel::{ArrayGeometry, ChannelParams, ChannelSet, Drop};
pub use error::{Error, Result};
pub use nam::{Architecture, EvalMetrics, LossConfig, NamModel, Sample};
pub use tam::{AntennaMask, ColumnClass, TamProblem, TamSolution};
pub use txrx::{LinkParams, UserRate};
