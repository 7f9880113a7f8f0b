//! Architecture descriptions, the forward/backward passes, and checkpoints.

mod checkpoint;
mod model;
mod spec;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub(crate) use model::ReluRule;
pub use model::{ForwardCache, ForwardOutput, Mode, ModelState, ParamSet};
pub use spec::{desk_preset, table1_preset, Activation, LayerKind, LayerSpec, NetworkSpec, ShapeTrace};
