pub mod bvh;
pub mod camera;
pub mod diffusion;
pub mod eval;
pub mod exec;
pub mod fields;
pub mod guidance;
pub mod imageio;
pub mod math;
pub mod mesh;
pub mod optim;
pub mod real;
pub mod render;
pub mod sds;
pub mod train;
