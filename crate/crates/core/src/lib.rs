//! Building surveillance controller: sensor-node emulation and polling,
//! Haar-cascade face detection, Fisherface recognition, GSM alerting and
//! MJPEG live streaming.

pub mod controller;
pub mod fisherface;
pub mod gsm;
pub mod image;
pub mod node_sim;
pub mod synth;
pub mod testbed;
pub mod vision;

pub use image::GrayImage;
pub use vision::{CascadeModel, DetectParams, FaceBox};
