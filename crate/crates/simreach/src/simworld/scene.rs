use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::Camera;
use super::{AREA_X, AREA_Y, TARGET_SIDE};

/// Render domain tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Sim,
    PseudoReal,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::Sim => write!(f, "sim"),
            Domain::PseudoReal => write!(f, "pseudo_real"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned box before yaw; `sx, sy` footprint, `sz` height.
    Cuboid { sx: f64, sy: f64, sz: f64 },
    Sphere { r: f64 },
    Cylinder { r: f64, h: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    /// Base centre on the table plane.
    pub pos: Vector3<f64>,
    pub yaw: f64,
    pub color: [f64; 3],
}

/// A discrete appearance mode of the pseudo-real domain: one combination
/// of surface palette and lighting level, standing in for a particular
/// room / camera / daylight condition. Per-image jitter is applied around
/// the preset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionPreset {
    pub table: [f64; 3],
    pub floor: [f64; 3],
    pub target: [f64; 3],
    pub lighting: f64,
}

/// Per-domain randomization bounds and reference values. All jitter draws
/// are uniform within the stated intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderProfile {
    pub domain: Domain,
    pub resolution: usize,
    pub table_color: [f64; 3],
    pub floor_color: [f64; 3],
    pub target_color: [f64; 3],
    /// Relative per-channel color jitter.
    pub color_jitter: f64,
    /// Camera position jitter as a fraction of the camera-to-table distance.
    pub camera_jitter: f64,
    /// Relative field-of-view jitter.
    pub fov_jitter: f64,
    /// Table position jitter per axis, fractions of [span_x, span_y, 0.1].
    pub table_pos_jitter: [f64; 3],
    /// Table yaw jitter as a fraction of pi.
    pub table_yaw_jitter: f64,
    /// Gaussian pixel noise amplitude applied after shading.
    pub pixel_noise: f64,
    /// Global lighting gain range half-width around 1.
    pub lighting_jitter: f64,
    pub max_distractors: usize,
    /// Discrete appearance modes; empty means the base palette is used
    /// directly (the SIM domain).
    #[serde(default)]
    pub condition_presets: Vec<ConditionPreset>,
    /// Fixed translation of the camera mount relative to the SIM rig, in
    /// meters. Jitter is applied around the translated position.
    #[serde(default)]
    pub camera_offset: [f64; 3],
    /// The camera reads out mirrored (image columns reversed).
    #[serde(default)]
    pub sensor_mirrored: bool,
}

impl RenderProfile {
    pub fn sim(resolution: usize) -> Self {
        Self {
            domain: Domain::Sim,
            resolution,
            table_color: [0.55, 0.38, 0.25],
            floor_color: [0.35, 0.35, 0.38],
            target_color: [0.12, 0.18, 0.85],
            color_jitter: 0.10,
            camera_jitter: 0.01,
            fov_jitter: 0.02,
            table_pos_jitter: [0.015, 0.05, 0.01],
            table_yaw_jitter: 0.07,
            pixel_noise: 0.0,
            lighting_jitter: 0.0,
            max_distractors: 9,
            condition_presets: Vec::new(),
            camera_offset: [0.0; 3],
            sensor_mirrored: false,
        }
    }

    /// Rendering-shifted domain standing in for the real world: images
    /// come from one of eight discrete appearance conditions (palette +
    /// lighting level), plus pixel noise, camera jitter and its own fixed
    /// set of 11 distractor shape/color combinations. The base colors
    /// below are the nominal (first-preset) palette.
    pub fn pseudo_real(resolution: usize) -> Self {
        Self {
            domain: Domain::PseudoReal,
            resolution,
            table_color: [0.38, 0.45, 0.32],
            floor_color: [0.24, 0.27, 0.34],
            target_color: [0.12, 0.42, 0.65],
            color_jitter: 0.12,
            camera_jitter: 0.02,
            fov_jitter: 0.03,
            table_pos_jitter: [0.015, 0.05, 0.01],
            table_yaw_jitter: 0.07,
            pixel_noise: 0.05,
            lighting_jitter: 0.10,
            max_distractors: 9,
            condition_presets: pseudo_real_conditions(),
            camera_offset: [0.06, 0.12, -0.10],
            sensor_mirrored: true,
        }
    }

    pub fn reference_camera(&self) -> Camera {
        let off = Vector3::from(self.camera_offset);
        Camera {
            pos: Vector3::new(0.15, 0.0, 0.70) + off,
            look_at: Vector3::new(0.50, 0.0, 0.0) + off,
            fov: 62.0_f64.to_radians(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub domain: Domain,
    pub target: Primitive,
    pub distractors: Vec<Primitive>,
    pub table_color: [f64; 3],
    pub floor_color: [f64; 3],
    pub table_center: Vector3<f64>,
    pub table_yaw: f64,
    /// Table top footprint, slightly larger than the operational area.
    pub table_size: (f64, f64),
    pub camera: Camera,
    pub lighting_gain: f64,
    pub pixel_noise: f64,
    pub noise_seed: u64,
    /// Image columns are reversed after rasterization (the real rig's
    /// camera reads out mirrored).
    pub sensor_mirrored: bool,
}

impl Scene {
    /// The labelled target position: top centre of the target cuboid.
    pub fn target_top_center(&self) -> Vector3<f64> {
        self.target.pos + Vector3::new(0.0, 0.0, TARGET_SIDE)
    }
}

/// The nine simulated distractor geometries: five cuboids, two spheres and
/// two cylinders.
pub fn sim_distractor_shapes() -> Vec<Shape> {
    vec![
        Shape::Cuboid { sx: 0.05, sy: 0.05, sz: 0.05 },
        Shape::Cuboid { sx: 0.08, sy: 0.04, sz: 0.03 },
        Shape::Cuboid { sx: 0.03, sy: 0.09, sz: 0.06 },
        Shape::Cuboid { sx: 0.06, sy: 0.06, sz: 0.10 },
        Shape::Cuboid { sx: 0.10, sy: 0.03, sz: 0.02 },
        Shape::Sphere { r: 0.025 },
        Shape::Sphere { r: 0.035 },
        Shape::Cylinder { r: 0.02, h: 0.08 },
        Shape::Cylinder { r: 0.035, h: 0.04 },
    ]
}

/// Fixed set of 11 distractor shape/color combinations for the
/// pseudo-real domain.
pub fn pseudo_real_distractor_set() -> Vec<(Shape, [f64; 3])> {
    vec![
        (Shape::Cuboid { sx: 0.05, sy: 0.05, sz: 0.05 }, [0.80, 0.10, 0.12]),
        (Shape::Cuboid { sx: 0.07, sy: 0.04, sz: 0.04 }, [0.92, 0.88, 0.85]),
        (Shape::Cuboid { sx: 0.04, sy: 0.08, sz: 0.05 }, [0.15, 0.60, 0.20]),
        (Shape::Cuboid { sx: 0.09, sy: 0.05, sz: 0.02 }, [0.85, 0.70, 0.15]),
        (Shape::Cuboid { sx: 0.05, sy: 0.05, sz: 0.09 }, [0.45, 0.25, 0.55]),
        (Shape::Sphere { r: 0.028 }, [0.90, 0.45, 0.10]),
        (Shape::Sphere { r: 0.034 }, [0.20, 0.20, 0.22]),
        (Shape::Cylinder { r: 0.022, h: 0.07 }, [0.75, 0.75, 0.15]),
        (Shape::Cylinder { r: 0.030, h: 0.05 }, [0.55, 0.12, 0.10]),
        (Shape::Cuboid { sx: 0.06, sy: 0.03, sz: 0.07 }, [0.10, 0.45, 0.50]),
        (Shape::Sphere { r: 0.040 }, [0.60, 0.60, 0.58]),
    ]
}

/// Distractor shapes and colors excluded from both training domains, used
/// by the novel-clutter evaluation scenario.
pub fn novel_distractor_set() -> Vec<(Shape, [f64; 3])> {
    vec![
        (Shape::Cuboid { sx: 0.11, sy: 0.025, sz: 0.05 }, [0.95, 0.30, 0.55]),
        (Shape::Cuboid { sx: 0.02, sy: 0.02, sz: 0.12 }, [0.05, 0.85, 0.70]),
        (Shape::Sphere { r: 0.05 }, [0.98, 0.85, 0.40]),
        (Shape::Cylinder { r: 0.045, h: 0.02 }, [0.30, 0.05, 0.40]),
        (Shape::Cylinder { r: 0.015, h: 0.10 }, [0.70, 0.95, 0.20]),
        (Shape::Cuboid { sx: 0.07, sy: 0.07, sz: 0.03 }, [0.85, 0.55, 0.75]),
    ]
}

/// The eight appearance conditions of the pseudo-real domain.
pub fn pseudo_real_conditions() -> Vec<ConditionPreset> {
    vec![
        ConditionPreset { table: [0.36, 0.48, 0.30], floor: [0.22, 0.28, 0.34], target: [0.12, 0.45, 0.60], lighting: 1.00 },
        ConditionPreset { table: [0.20, 0.34, 0.38], floor: [0.14, 0.20, 0.24], target: [0.10, 0.55, 0.48], lighting: 0.66 },
        ConditionPreset { table: [0.55, 0.58, 0.60], floor: [0.40, 0.42, 0.46], target: [0.35, 0.60, 0.78], lighting: 1.34 },
        ConditionPreset { table: [0.24, 0.20, 0.30], floor: [0.16, 0.14, 0.20], target: [0.06, 0.38, 0.42], lighting: 0.80 },
        ConditionPreset { table: [0.48, 0.56, 0.40], floor: [0.34, 0.40, 0.28], target: [0.28, 0.42, 0.72], lighting: 1.18 },
        ConditionPreset { table: [0.30, 0.44, 0.24], floor: [0.20, 0.30, 0.18], target: [0.04, 0.32, 0.50], lighting: 0.70 },
        ConditionPreset { table: [0.33, 0.38, 0.55], floor: [0.24, 0.26, 0.40], target: [0.22, 0.62, 0.66], lighting: 1.26 },
        ConditionPreset { table: [0.44, 0.30, 0.42], floor: [0.30, 0.20, 0.30], target: [0.16, 0.50, 0.74], lighting: 0.90 },
    ]
}

fn jitter_color(rng: &mut impl Rng, c: &[f64; 3], rel: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = (c[i] * (1.0 + rng.gen_range(-rel..=rel))).clamp(0.0, 1.0);
    }
    out
}

fn random_area_pos(rng: &mut impl Rng, margin: f64) -> Vector3<f64> {
    Vector3::new(
        rng.gen_range(AREA_X.0 + margin..AREA_X.1 - margin),
        rng.gen_range(AREA_Y.0 + margin..AREA_Y.1 - margin),
        0.0,
    )
}

/// Draw a fully randomized scene under the profile's bounds.
pub fn randomize_scene(rng: &mut impl Rng, profile: &RenderProfile) -> Scene {
    // appearance condition first so the draw order stays stable for the
    // preset-free SIM domain
    let (base_target, base_table, base_floor, base_lighting) =
        if profile.condition_presets.is_empty() {
            (profile.target_color, profile.table_color, profile.floor_color, 1.0)
        } else {
            let p = &profile.condition_presets
                [rng.gen_range(0..profile.condition_presets.len())];
            (p.target, p.table, p.floor, p.lighting)
        };

    let target = Primitive {
        shape: Shape::Cuboid {
            sx: TARGET_SIDE,
            sy: TARGET_SIDE,
            sz: TARGET_SIDE,
        },
        pos: random_area_pos(rng, 0.04),
        yaw: rng.gen_range(0.0..std::f64::consts::TAU),
        color: jitter_color(rng, &base_target, profile.color_jitter),
    };

    let n_distractors = rng.gen_range(0..=profile.max_distractors);
    let mut distractors = Vec::with_capacity(n_distractors);
    for _ in 0..n_distractors {
        let (shape, color) = match profile.domain {
            Domain::Sim => {
                let shapes = sim_distractor_shapes();
                let shape = shapes[rng.gen_range(0..shapes.len())];
                let color = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
                (shape, color)
            }
            Domain::PseudoReal => {
                let set = pseudo_real_distractor_set();
                let (shape, base) = set[rng.gen_range(0..set.len())];
                (shape, jitter_color(rng, &base, profile.color_jitter))
            }
        };
        let mut pos = random_area_pos(rng, 0.02);
        // keep distractors from burying the target
        for _ in 0..20 {
            if (pos - target.pos).norm() > 0.07 {
                break;
            }
            pos = random_area_pos(rng, 0.02);
        }
        distractors.push(Primitive {
            shape,
            pos,
            yaw: rng.gen_range(0.0..std::f64::consts::TAU),
            color,
        });
    }

    let table_color = jitter_color(rng, &base_table, profile.color_jitter);
    let floor_color = jitter_color(rng, &base_floor, profile.color_jitter);

    let span_x = AREA_X.1 - AREA_X.0;
    let span_y = AREA_Y.1 - AREA_Y.0;
    let tj = &profile.table_pos_jitter;
    let table_center = Vector3::new(
        0.5 * (AREA_X.0 + AREA_X.1) + rng.gen_range(-tj[0]..=tj[0]) * span_x,
        0.5 * (AREA_Y.0 + AREA_Y.1) + rng.gen_range(-tj[1]..=tj[1]) * span_y,
        rng.gen_range(-tj[2]..=tj[2]) * 0.1,
    );
    let table_yaw = rng.gen_range(-profile.table_yaw_jitter..=profile.table_yaw_jitter)
        * std::f64::consts::PI;

    let reference = profile.reference_camera();
    let cam_scale = (reference.pos - reference.look_at).norm();
    let cj = profile.camera_jitter;
    let camera = Camera {
        pos: reference.pos
            + Vector3::new(
                rng.gen_range(-cj..=cj) * cam_scale,
                rng.gen_range(-cj..=cj) * cam_scale,
                rng.gen_range(-cj..=cj) * cam_scale,
            ),
        look_at: reference.look_at,
        fov: reference.fov * (1.0 + rng.gen_range(-profile.fov_jitter..=profile.fov_jitter)),
    };

    let lighting_gain =
        base_lighting + rng.gen_range(-profile.lighting_jitter..=profile.lighting_jitter);

    Scene {
        domain: profile.domain,
        target,
        distractors,
        table_color,
        floor_color,
        table_center,
        table_yaw,
        table_size: (span_x + 0.16, span_y + 0.16),
        camera,
        lighting_gain,
        pixel_noise: profile.pixel_noise,
        noise_seed: rng.gen(),
        sensor_mirrored: profile.sensor_mirrored,
    }
}
