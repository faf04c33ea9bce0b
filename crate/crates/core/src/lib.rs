//! Automatic road lighting simulator.
//!
//! A camera looks down on a short road segment. Each frame is compared with
//! an empty-road background; the moving vehicle's centroid is tracked,
//! converted to meters, and turned into a speed estimate. The controller
//! predicts where the vehicle will be and drives eight latched lamps so that
//! each lamp is on before the vehicle reaches it and off once it has passed.
//!
//! [`imaging`] renders the synthetic camera frames and handles PGM files,
//! [`detection`] finds the vehicle, [`kinematics`] turns detections into
//! positions and speeds, [`controller`] switches the lamps, and [`harness`]
//! runs seeded Monte-Carlo trials against the renderer's ground truth.

pub mod cli;
pub mod config;
pub mod controller;
pub mod detection;
pub mod harness;
pub mod imaging;
pub mod kinematics;
pub mod rng;
