//! Desk-scale neural motion planning: procedural scenes, expert planners,
//! a point-cloud-conditioned policy trained by behavior cloning, and the
//! evaluation metric suite.

pub mod expert_global;
pub mod expert_hybrid;
pub mod dataset;
pub mod encoder;
pub mod eval_metrics;
pub mod geometry;
pub mod kinematics;
pub mod nn;
pub mod policy;
pub mod render;
pub mod robot_builder;
pub mod scene;
pub mod scenegen;
pub mod seeding;
pub mod spline;

pub use geometry::Pose;
pub use kinematics::{JointConfig, NormalizedConfig, RobotModel};
pub use scene::{EnvKind, GoalVolume, Primitive, Scene, Shape};
pub use scenegen::PlanningProblem;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid robot description: {0}")]
    InvalidRobot(String),
    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("target unreachable")]
    Unreachable,
    #[error("scene generation exhausted after {0} rounds")]
    GenerationExhausted(usize),
    #[error("no valid start/target pair")]
    NoValidPair,
    #[error("no ray hit the scene")]
    EmptyView,
    #[error("inverse kinematics failed for the target pose")]
    IkFailed,
    #[error("search exhausted its budget without a solution")]
    SearchTimeout,
    #[error("trajectory failed validation: {0}")]
    ValidationFailed(String),
    #[error("controller stalled before reaching the final waypoint")]
    Stuck,
    #[error("a query ball contains no points")]
    EmptyBall,
    #[error("speed profile has no motion")]
    DegenerateProfile,
    #[error("non-finite loss at example {example}")]
    NonFiniteLoss { example: usize },
    #[error("corrupt record at line {line}: {msg}")]
    CorruptRecord { line: usize, msg: String },
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
