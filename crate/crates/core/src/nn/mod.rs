//! Networks, encodings, optimizer and learnable state.

pub mod adam;
pub mod ce;
pub mod decode;
pub mod mlp;
pub mod params;
pub mod pe;

pub use adam::AdamState;
pub use ce::softmax_cross_entropy;
pub use decode::{
    color_decoder, decode_colors, decode_colors_with_embedding, elevation_mlp, encode_vertices, predict_elevations,
    shared_color_decoder, with_embedding, ElevationPass,
};
pub use mlp::{sigmoid, Linear, Mlp, MlpCache, OutputActivation};
pub use params::{ColorModel, ColorVariant, LearningRates, Optimizer, ParamGroup, ParamState};
pub use pe::PositionalEncoding;
