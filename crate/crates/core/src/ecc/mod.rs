//! Binary BCH encoding over GF(2^m).

mod bch;
mod field;
mod file;

pub use bch::{
    available_dimensions, build_code, encode, hamming_distance, is_codeword,
    min_distance_exhaustive, to_bipolar, CodeSpec, Codeword, EXHAUSTIVE_LIMIT,
};
pub use field::{is_irreducible, FieldSpec, Gf2m, MAX_DEGREE, MIN_DEGREE};
pub use file::{bits_to_hex, hex_to_bits, CodewordFile, CODEWORD_HEADER};
