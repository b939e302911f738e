//! Kinematic 7-DoF arm, randomized table-top scenes, pinhole rasterizer and
//! the dataset factory for both render domains.
//!
//! Workspace coordinates are "scene units": the operational area on the
//! table spans 0.50 x 0.60 units and all error metrics report in cm-analog
//! (1 unit = 100 cm-analog).

mod chain;
mod dataset;
mod render;
mod scene;

pub use chain::{p_control_step, Joint, KinematicChain, DOF, REFERENCE_Q};
pub use dataset::{
    load_control_dataset, load_perception_dataset, make_control_dataset, make_perception_dataset,
    save_control_dataset, save_perception_dataset, ControlDataset, ControlFrame,
    PerceptionDataset, PerceptionSample, Trajectory, TrajectoryConfig,
};
pub use dataset::{generate_trajectory, item_seed};
pub use render::{render, render_with_mask, Camera};
pub use scene::{
    novel_distractor_set, pseudo_real_distractor_set, randomize_scene, Domain, Primitive,
    RenderProfile, Scene, Shape,
};

use nalgebra::Vector3;

/// Operational area bounds per axis, scene units.
pub const AREA_X: (f64, f64) = (0.25, 0.75);
pub const AREA_Y: (f64, f64) = (-0.30, 0.30);
/// Vertical normalization span (targets sit near the table plane).
pub const AREA_Z: (f64, f64) = (0.0, 0.20);

/// cm-analog per scene unit.
pub const CM_PER_UNIT: f64 = 100.0;

/// Target cuboid side, 6.5 cm-analog.
pub const TARGET_SIDE: f64 = 0.065;

/// A reach succeeds when the final end-effector distance to the target top
/// centre is below 4.6 cm-analog.
pub const SUCCESS_RADIUS: f64 = 0.046;

/// Per-axis spans of the operational volume in cm-analog, used to
/// denormalize perception errors.
pub fn axis_spans_cm() -> [f64; 3] {
    [
        (AREA_X.1 - AREA_X.0) * CM_PER_UNIT,
        (AREA_Y.1 - AREA_Y.0) * CM_PER_UNIT,
        (AREA_Z.1 - AREA_Z.0) * CM_PER_UNIT,
    ]
}

/// Map a workspace position into [0,1]^3 over the operational volume.
pub fn normalize_pos(p: &Vector3<f64>) -> [f64; 3] {
    [
        (p.x - AREA_X.0) / (AREA_X.1 - AREA_X.0),
        (p.y - AREA_Y.0) / (AREA_Y.1 - AREA_Y.0),
        (p.z - AREA_Z.0) / (AREA_Z.1 - AREA_Z.0),
    ]
}

pub fn denormalize_pos(n: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(
        AREA_X.0 + n[0] * (AREA_X.1 - AREA_X.0),
        AREA_Y.0 + n[1] * (AREA_Y.1 - AREA_Y.0),
        AREA_Z.0 + n[2] * (AREA_Z.1 - AREA_Z.0),
    )
}
