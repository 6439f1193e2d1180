//! Entropy coding for the ILLM codec: quantized CDF tables, a byte-oriented range
//! coder, the bitstream container, and the backend boundary used to plug in an
//! accelerated coder.

pub mod backend;
pub mod cdf;
pub mod coder;
pub mod container;
mod error;

pub use backend::{
    backend_from_env, probe, probe_with, select_backend, BackendCapabilities, BackendChoice,
    CoderBackend, FlatTables, GoldenVectors, ReferenceBackend,
};
pub use cdf::{build_cdf, CdfTable, CdfView, Density, TableParams};
pub use coder::{
    cross_entropy_bits, decode_indexed, encode_indexed, range_decode, range_encode, RangeDecoder,
    RangeEncoder,
};
pub use container::{bits_per_pixel, parse_container, serialize_container, BitstreamContainer};
pub use error::{EntropyError, Result};
