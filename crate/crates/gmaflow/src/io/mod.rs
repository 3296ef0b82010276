//! Bit-exact file formats: `.flo` flow files, binary PPM/PGM images, and the
//! flat weight containers. All multi-byte values are little-endian.

pub mod container;
pub mod flo;
pub mod pnm;

pub use container::{
    load_pipeline_weights, read_encoder_weights, read_gma_params, read_refinement_weights,
    save_pipeline_weights, write_encoder_weights, write_gma_params, write_refinement_weights,
};
pub use flo::{read_flo, read_flo_file, write_flo, write_flo_file};
pub use pnm::{
    read_image, read_image_file, read_pgm_file, read_pgm_raw, read_ppm_raw, write_image,
    write_image_file, write_pgm_file, write_pgm_raw, write_ppm_raw, RawImage,
};
