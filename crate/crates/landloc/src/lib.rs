//! Landmark-based vehicle self-localization on synthetic worlds.
//!
//! The crate trains a permutation-invariant set network to regress the
//! pose offset between vehicle-frame landmark measurements and map
//! landmarks, and fuses the prediction with GPS readings and an EKF with
//! a constant-turn-rate-and-velocity motion model. Worlds (landmark maps
//! and ground-truth trajectories) are fully synthetic, so every
//! experiment is reproducible from a seed.
//!
//! Module map:
//! - [`geometry`]: poses, offsets, frame transforms
//! - [`world`]: landmark maps, trajectories, generation, persistence
//! - [`sensors`]: measurement and GPS simulation with impairments
//! - [`net`]: the set network, forward/backward, initialization
//! - [`train`]: sample generation, the two-task loss, ADAM, checkpoints
//! - [`infer`]: GPS correction, EKF fusion, particle-filter baseline
//! - [`eval`]: RMSE metrics, robustness sweeps, timing, reports

pub mod eval;
pub mod geometry;
pub mod infer;
pub mod net;
pub mod rng;
pub mod sensors;
pub mod train;
pub mod world;
