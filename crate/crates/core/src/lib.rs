pub mod camera;
pub mod config;
pub mod geometry;
pub mod lidar;
pub mod pipeline;
pub mod sim;
pub mod solver;
