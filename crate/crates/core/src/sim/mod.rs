//! Closed-loop simulation: a scripted leader carrying the beacon, a rendered
//! camera on a unicycle robot, and the full detect, solve, track, follow chain.

pub mod config;
pub mod render;
pub mod trajectory;
pub mod world;

pub use config::{SimConfig, DEFAULT_CONFIG};
pub use render::{render_frame, FrameStatus, RenderedFrame};
pub use trajectory::{LeaderKind, LeaderTrajectory};
pub use world::{run, RobotState, RunSummary, SimError, StepRecord, World, TELEMETRY_HEADER};
