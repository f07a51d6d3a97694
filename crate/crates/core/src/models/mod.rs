//! Networks, the shared common-space stack, Adam and the learning-rate schedule.

pub mod checkpoint;
mod common;
mod layers;
mod network;
mod optim;
mod params;

pub use checkpoint::{load_common_space, load_network, save_common_space, save_network};
pub use common::{CommonSpaceSpec, CommonSpaceStack, ADAPTER_WIDTH, COMMON_WIDTH};
pub use layers::{ClassifierHead, Linear, MlpEncoder, ProjectionHead, ProjectionSpec};
pub use network::{Forward, Network, NetworkSpec, Role, StudentModel, TeacherModel};
pub use optim::{cosine_lr, AdamConfig, OptimizerState};
pub use params::{Bound, Param, ParamId, ParamStore};
