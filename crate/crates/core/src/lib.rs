//! Occlusion risk toolkit: phantom agents in blind zones, guided adversarial
//! trajectory generation, flow + collision risk grids, risk-aware speed
//! planning and the evaluation metrics used to compare planners.
//!
//! The numerical kernels ([`geom`], [`kinematics`], [`diffusion`]) are generic
//! over [`Scalar`] (`f32` or `f64`); scenario files and the pipeline stages
//! work in `f64` through the aliases below.

pub mod demo;
pub mod diffusion;
pub mod geom;
pub mod guidance;
pub mod io;
pub mod kinematics;
pub mod metrics;
pub mod phantom;
pub mod planner;
pub mod risk;
pub mod rng;
pub mod scalar;
pub mod scene;
pub mod trajgen;
pub mod visibility;

pub use scalar::Scalar;

pub type Point = geom::Vec2<f64>;
pub type Path = geom::Polyline<f64>;
pub type AgentState = kinematics::State<f64>;
pub type Controls = kinematics::ControlSequence<f64>;
pub type Traj = kinematics::Trajectory<f64>;

pub type Point32 = geom::Vec2<f32>;
pub type AgentState32 = kinematics::State<f32>;
pub type Controls32 = kinematics::ControlSequence<f32>;
pub type Traj32 = kinematics::Trajectory<f32>;

pub type Schedule = diffusion::DiffusionSchedule<f64>;
pub type Schedule32 = diffusion::DiffusionSchedule<f32>;
