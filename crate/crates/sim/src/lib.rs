//! Planar articulated characters: specification, kinematics, capsule
//! geometry and a reduced-coordinate simulator driven by PD targets.

pub mod dynamics;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod kinematics;
pub mod spec;
pub mod state;

pub use dynamics::{pd_torque, ContactReport, Control, Simulator};
pub use error::SimError;
pub use frame::{feature_len, features_in, gravity_features, self_features, to_reactor_frame, Frame};
pub use geometry::{capsules, min_separation, penetration, penetration_between, Capsule};
pub use kinematics::{energy, keypoints, Kinematics, Vec2};
pub use spec::{CharacterSpec, JointSpec, LinkSpec, SCHEMA_VERSION};
pub use state::{Action, CharacterState};
