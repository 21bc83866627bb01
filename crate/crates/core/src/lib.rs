//! Deterministic desk-scale simulator of decentralized personalized
//! federated learning over a heterogeneous LEO Walker Star constellation.
//!
//! The crate is organized around five subsystems:
//!
//! - [`constellation`]: Walker Star geometry, circular-orbit propagation,
//!   line-of-sight visibility, time-varying topology, link rates, and
//!   per-round delay/energy accounting.
//! - [`nn`]: a minimal self-contained CNN kernel (tensors, convolution,
//!   losses, backpropagation, SGD with momentum) with a finite-difference
//!   gradient oracle for tests.
//! - [`sr`]: the three-layer super-resolution network, bicubic
//!   preprocessing, decentralized SR training, and PSNR/SSIM metrics.
//! - [`pruning`]: binary masks, PQ-Index compressibility, prune quotas,
//!   plateau voting, pruning schedules, and sparse-momentum prune/regrow.
//! - [`pfl`]: Dirichlet partitioning, mask-based neighbor aggregation,
//!   masked local training, and the full round-synchronous training loop
//!   with metric emission.
//!
//! [`data`] generates the synthetic labeled texture dataset used at desk
//! scale, and [`sim`] wires everything into reproducible experiments.
//!
//! Everything is deterministic under a single `u64` seed: random streams
//! are derived per purpose (satellite capacities, weight init, masks,
//! batch shuffling, ...) so that subsystems never share RNG state.

pub mod constellation;
pub mod parallel;
pub mod data;
pub mod nn;
pub mod pfl;
pub mod pruning;
pub mod seed;
pub mod sim;
pub mod sr;
