//! Preintegrated IMU and contact measurements.

mod contact;
mod imu;

pub use contact::{
    check_contact_persists, point_contact_preintegrate, point_contact_residual, rigid_contact_preintegrate,
    rigid_contact_preintegrate_with, rigid_contact_residual, ContactDelta, ContactEvent, ContactKind,
    PointContactPreintegrator, PointContactSample, RigidContactPreintegrator,
};
pub use imu::{imu_preintegrate, ImuBias, ImuDelta, ImuNoise, ImuPreintegrator, ImuSample, Matrix9, GRAVITY};
