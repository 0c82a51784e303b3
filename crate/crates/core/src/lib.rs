//! Desk-scale simulator and analytical library for adaptive expert replication
//! in Mixture-of-Experts training clusters.
//!
//! The library models a cluster of `N` nodes, each exposing `s` expert slots,
//! hosting `E` expert classes whose per-iteration token popularity shifts over
//! time. It provides:
//!
//! - [`model`] — shared domain types ([`ClusterSpec`], [`ExpertPlacement`],
//!   popularity traces) and their validation.
//! - [`scheduler`] — the expert placement scheduler that sizes each class's
//!   replica count proportionally to observed popularity.
//! - [`router`] — Top-1 token routing with per-slot capacity, replica-level
//!   load balancing and token-drop accounting.
//! - [`commplan`] — explicit communication plans for one training iteration:
//!   intra+inter-rank gradient all-reduce, the consecutive-rank group
//!   registry, gradient-shard collection and updated-weight scatter.
//! - [`costmodel`] — closed-form memory, data-volume and communication-time
//!   model for the static-replication baseline and the decoupled-optimizer
//!   design, including the k-partition bound and migration costs.
//! - [`policies`] — the three replication policies compared by the simulator:
//!   static uniform, interval rebalancing with optimizer migration, and
//!   per-iteration rebalancing with zero migration.
//! - [`tracegen`] — seeded synthetic expert-popularity trace generation and
//!   CSV trace ingestion.
//! - [`simulator`] — the per-iteration replay loop producing [`SimReport`]s.
//! - [`verify`] — the built-in verification suite (oracle fuzzing and golden
//!   analytic numbers) backing the `verify` CLI subcommand.
//!
//! All types are immutable after construction and all operations are pure, so
//! everything here is safe to share across concurrent workers.

pub mod commplan;
pub mod costmodel;
pub mod error;
pub mod model;
pub mod policies;
pub mod router;
pub mod scheduler;
pub mod simulator;
pub mod tracegen;
pub mod verify;

pub use error::{Error, Result};
pub use model::{ClusterSpec, ExpertPlacement, PopularityVector, Trace};
pub use simulator::SimReport;
