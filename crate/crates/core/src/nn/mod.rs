//! Layer specifications, models and the weight file format.

mod model;
mod spec;
mod weights;

pub use model::{Mode, Model};
pub use spec::{preset, LayerSpec, ModelSpec, Shape, DEFAULT_CLASSES, PRESETS};
pub use weights::{decode_weights, encode_weights, load_weights, read_weights, save_weights, MAGIC};
