use nalgebra::{Matrix3, Rotation3, SMatrix, Unit, Vector3};

use crate::{Error, Result};

/// One revolute joint: rotation about `axis`, then a rigid link offset.
#[derive(Clone, Debug)]
pub struct Joint {
    pub axis: Unit<Vector3<f64>>,
    pub offset: Vector3<f64>,
    pub limits: (f64, f64),
}

/// 7-revolute chain with alternating vertical/lateral axes.
///
/// The default geometry is scaled so the reach covers the 50x60 operational
/// area; the end-effector point is the bottom centre of the (virtual)
/// gripper, i.e. the tip of the last link.
#[derive(Clone, Debug)]
pub struct KinematicChain {
    pub base: Vector3<f64>,
    pub joints: Vec<Joint>,
}

pub const DOF: usize = 7;

/// Reference initial configuration: pitch joints bend the arm down toward
/// the table. Trajectory starts draw normal noise around this.
pub const REFERENCE_Q: [f64; 7] = [0.0, 0.45, 0.0, 0.5, 0.0, 0.35, 0.0];

impl KinematicChain {
    pub fn default_seven_dof() -> Self {
        let z = Unit::new_normalize(Vector3::z());
        let y = Unit::new_normalize(Vector3::y());
        let lengths = [0.10, 0.15, 0.15, 0.15, 0.15, 0.10, 0.08];
        let axes = [z, y, z, y, z, y, z];
        let joints = (0..DOF)
            .map(|i| Joint {
                axis: axes[i],
                offset: Vector3::new(lengths[i], 0.0, 0.0),
                limits: (-2.9, 2.9),
            })
            .collect();
        Self {
            base: Vector3::new(0.0, 0.0, 0.35),
            joints,
        }
    }

    /// Maximum distance the end-effector can be from the base.
    pub fn reach(&self) -> f64 {
        self.joints.iter().map(|j| j.offset.norm()).sum()
    }

    pub fn check_limits(&self, q: &[f64; 7]) -> Result<()> {
        for (i, j) in self.joints.iter().enumerate() {
            if q[i] < j.limits.0 || q[i] > j.limits.1 {
                return Err(Error::JointLimit {
                    index: i,
                    value: q[i],
                    min: j.limits.0,
                    max: j.limits.1,
                });
            }
        }
        Ok(())
    }

    pub fn clamp_limits(&self, q: &mut [f64; 7]) {
        for (i, j) in self.joints.iter().enumerate() {
            q[i] = q[i].clamp(j.limits.0, j.limits.1);
        }
    }

    /// End-effector bottom-centre position for configuration `q`.
    pub fn forward(&self, q: &[f64; 7]) -> Result<Vector3<f64>> {
        self.check_limits(q)?;
        Ok(self.forward_unchecked(q))
    }

    pub fn forward_unchecked(&self, q: &[f64; 7]) -> Vector3<f64> {
        let mut p = self.base;
        let mut r: Matrix3<f64> = Matrix3::identity();
        for (i, j) in self.joints.iter().enumerate() {
            r *= Rotation3::from_axis_angle(&j.axis, q[i]).into_inner();
            p += r * j.offset;
        }
        p
    }

    /// Geometric position Jacobian (3x7): column i is
    /// `axis_i^world x (p_ee - pivot_i)`.
    pub fn jacobian(&self, q: &[f64; 7]) -> SMatrix<f64, 3, 7> {
        let mut pivots = [Vector3::zeros(); DOF];
        let mut axes = [Vector3::zeros(); DOF];
        let mut p = self.base;
        let mut r: Matrix3<f64> = Matrix3::identity();
        for (i, j) in self.joints.iter().enumerate() {
            pivots[i] = p;
            r *= Rotation3::from_axis_angle(&j.axis, q[i]).into_inner();
            axes[i] = r * j.axis.into_inner();
            p += r * j.offset;
        }
        let mut jac = SMatrix::<f64, 3, 7>::zeros();
        for i in 0..DOF {
            let col = axes[i].cross(&(p - pivots[i]));
            jac.set_column(i, &col);
        }
        jac
    }

    /// Damped least-squares inverse kinematics from seed `q0`.
    ///
    /// Converges when the workspace error drops below 1e-3 units; damping
    /// 1e-3, at most 200 iterations.
    pub fn inverse(&self, target: &Vector3<f64>, q0: &[f64; 7]) -> Result<[f64; 7]> {
        const DAMPING: f64 = 1e-3;
        const MAX_ITERS: usize = 200;
        const TOL: f64 = 1e-3;
        const MAX_STEP: f64 = 0.5;

        if (target - self.base).norm() > self.reach() {
            return Err(Error::Unreachable(
                [target.x, target.y, target.z],
                "outside reach sphere".to_string(),
            ));
        }
        let mut q = *q0;
        for _ in 0..MAX_ITERS {
            let e = target - self.forward_unchecked(&q);
            if e.norm() < TOL {
                return Ok(q);
            }
            let jac = self.jacobian(&q);
            let jjt = jac * jac.transpose() + Matrix3::identity() * (DAMPING * DAMPING);
            let y = jjt
                .lu()
                .solve(&e)
                .ok_or_else(|| {
                    Error::Unreachable(
                        [target.x, target.y, target.z],
                        "singular damped system".to_string(),
                    )
                })?;
            let mut dq = jac.transpose() * y;
            let n = dq.norm();
            if n > MAX_STEP {
                dq *= MAX_STEP / n;
            }
            for i in 0..DOF {
                q[i] += dq[i];
            }
            self.clamp_limits(&mut q);
        }
        Err(Error::Unreachable(
            [target.x, target.y, target.z],
            format!("no convergence in {MAX_ITERS} iterations"),
        ))
    }

    /// Map joint angles into [0,1]^7 over the joint limits.
    pub fn normalize_q(&self, q: &[f64; 7]) -> [f64; 7] {
        let mut out = [0.0; 7];
        for (i, j) in self.joints.iter().enumerate() {
            out[i] = (q[i] - j.limits.0) / (j.limits.1 - j.limits.0);
        }
        out
    }

    pub fn denormalize_q(&self, n: &[f64; 7]) -> [f64; 7] {
        let mut out = [0.0; 7];
        for (i, j) in self.joints.iter().enumerate() {
            out[i] = j.limits.0 + n[i] * (j.limits.1 - j.limits.0);
        }
        out
    }
}

impl Default for KinematicChain {
    fn default() -> Self {
        Self::default_seven_dof()
    }
}

/// Proportional velocity command toward `q_star`, clamped per joint.
pub fn p_control_step(q: &[f64; 7], q_star: &[f64; 7], gain: f64, v_max: f64) -> [f64; 7] {
    let mut v = [0.0; 7];
    for i in 0..7 {
        v[i] = (gain * (q_star[i] - q[i])).clamp(-v_max, v_max);
    }
    v
}
