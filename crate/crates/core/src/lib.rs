//! Spherical rotary position encoding for geotokens, and everything needed
//! to reproduce its proof-of-concept experiment: a dense f64 tensor type
//! with reverse-mode autodiff, an Adam optimizer, a character-level
//! encoder-decoder transformer whose attention queries and keys are rotated
//! by per-token latitude/longitude, and a seeded geodesic dataset
//! generator.

pub mod autodiff;
pub mod data;
pub mod encoding;
pub mod error;
pub mod model;
pub mod optim;
pub mod tensor;

pub use autodiff::{Tape, VarId};
pub use data::{
    detokenize, dump_dataset, format_sample, generate_dataset, haversine, load_dataset,
    randomize_tags, tokenize, GeoSample, TokenSeq, Vocabulary, EARTH_RADIUS_M, MAX_SEQ_LEN,
};
pub use encoding::{
    apply_geo_rotation, euler_rotation, geo_attention_score, rope_frequencies, rope_rotate,
    sinusoidal_encoding, spherical_block, GeoAngles, GeoRotary, RopeFrequencies, RotationBlock3,
};
pub use error::{Error, Result};
pub use model::{
    assign_token_coordinates, load_checkpoint, save_checkpoint, train_step, BatchItem,
    EncDecActivations, GeoTransformer, ModelConfig, TokenGeoTag,
};
pub use optim::{adam_step, finite_diff_check, AdamState, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
