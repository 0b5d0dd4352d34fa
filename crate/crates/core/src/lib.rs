//! Parametric linear-Delta robot hands.

pub mod characterize;
pub mod config;
pub mod grasp;
pub mod hand;
pub mod hull;
pub mod kinematics;
pub mod teleop;
pub mod urdf;
mod point;

pub use point::{format_sig6, Aabb, Point3};
