//! Follow-me pipeline for a three-emitter IR beacon.
//!
//! Perception ([`detector`]) finds candidate triangles in a grayscale frame,
//! [`solver`] recovers the beacon pose by Newton iteration on SE(3),
//! [`tracker`] smooths it with a particle filter, and [`follower`] turns the
//! resulting range/bearing into velocity commands. [`calibration`] fits the
//! quadratic fisheye correction and [`sim`] closes the loop around a
//! simulated differential-drive robot.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod detector;
pub mod geometry;
pub mod image;
pub mod solver;
pub mod follower;
pub mod tracker;
pub mod config;
pub mod sim;
pub mod cli;
