//! Flat binary weight containers.
//!
//! Shared scheme: a 4-byte ASCII magic, a fixed run of unsigned 32-bit
//! header fields, then 64-bit float payload blocks in row-major order,
//! everything little-endian. Round trips are bit-exact.
//!
//! - `GMA1`: header `D_in, D_c, D_m, H_max, W_max`; payload `W_qry, W_key,
//!   W_val, alpha, pos_v, pos_h`.
//! - `ENC1`: header `num_layers`; then per layer `kernel, stride, c_in,
//!   c_out, nonlinearity code` followed by its weights and bias.
//! - `RFN1`: like `ENC1` with the refinement stack's nine layers in fixed
//!   order: motion encoder (corr1, corr2, flow1, fusion), GRU gates (z, r,
//!   candidate), flow head (1, 2).

use std::io::{Read, Write};

use crate::encoder::{ConvSpec, EncoderWeights, Nonlinearity};
use crate::error::{FlowError, Result};
use crate::gma::GmaParams;
use crate::grid::Matrix;
use crate::refinement::{GruWeights, MotionEncoderWeights};

pub const GMA_MAGIC: &[u8; 4] = b"GMA1";
pub const ENCODER_MAGIC: &[u8; 4] = b"ENC1";
pub const REFINEMENT_MAGIC: &[u8; 4] = b"RFN1";

pub fn write_gma_params<W: Write>(params: &GmaParams, sink: &mut W) -> Result<()> {
    params.validate()?;
    sink.write_all(GMA_MAGIC)?;
    for dim in [params.d_in, params.d_c, params.d_m, params.h_max, params.w_max] {
        write_u32(sink, dim)?;
    }
    write_f64_block(sink, params.w_qry.data())?;
    write_f64_block(sink, params.w_key.data())?;
    write_f64_block(sink, params.w_val.data())?;
    write_f64_block(sink, &[params.alpha])?;
    write_f64_block(sink, params.pos_v.data())?;
    write_f64_block(sink, params.pos_h.data())?;
    Ok(())
}

pub fn read_gma_params<R: Read>(source: &mut R) -> Result<GmaParams> {
    expect_magic(source, GMA_MAGIC)?;
    let d_in = read_u32(source, "D_in")?;
    let d_c = read_u32(source, "D_c")?;
    let d_m = read_u32(source, "D_m")?;
    let h_max = read_u32(source, "H_max")?;
    let w_max = read_u32(source, "W_max")?;
    if d_in == 0 || d_c == 0 || d_m == 0 || h_max == 0 || w_max == 0 {
        return Err(FlowError::Format("zero dimension in weight header".into()));
    }
    let w_qry = read_matrix(source, d_in, d_c)?;
    let w_key = read_matrix(source, d_in, d_c)?;
    let w_val = read_matrix(source, d_m, d_m)?;
    let alpha = read_f64(source)?;
    let pos_v = read_matrix(source, 2 * h_max - 1, d_in)?;
    let pos_h = read_matrix(source, 2 * w_max - 1, d_in)?;
    GmaParams::new(d_in, d_c, d_m, h_max, w_max, w_qry, w_key, w_val, alpha, pos_v, pos_h)
}

pub fn write_gma_file(params: &GmaParams, path: &std::path::Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_gma_params(params, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn read_gma_file(path: &std::path::Path) -> Result<GmaParams> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_gma_params(&mut file)
}

fn write_conv_spec<W: Write>(spec: &ConvSpec, sink: &mut W) -> Result<()> {
    spec.validate()?;
    for dim in [spec.kernel, spec.stride, spec.c_in, spec.c_out] {
        write_u32(sink, dim)?;
    }
    write_u32(sink, spec.nonlinearity.code() as usize)?;
    write_f64_block(sink, &spec.weights)?;
    write_f64_block(sink, &spec.bias)?;
    Ok(())
}

fn read_conv_spec<R: Read>(source: &mut R) -> Result<ConvSpec> {
    let kernel = read_u32(source, "kernel")?;
    let stride = read_u32(source, "stride")?;
    let c_in = read_u32(source, "c_in")?;
    let c_out = read_u32(source, "c_out")?;
    let code = read_u32(source, "nonlinearity")?;
    let nonlinearity = Nonlinearity::from_code(code as u32)?;
    if kernel == 0 || kernel > 31 || stride == 0 || c_in == 0 || c_out == 0 || c_in > 65_536
        || c_out > 65_536
    {
        return Err(FlowError::Format(format!(
            "implausible conv header: kernel {kernel}, stride {stride}, {c_in} -> {c_out}"
        )));
    }
    let weights = read_f64_block(source, kernel * kernel * c_in * c_out)?;
    let bias = read_f64_block(source, c_out)?;
    let spec = ConvSpec { kernel, stride, c_in, c_out, weights, bias, nonlinearity };
    spec.validate()?;
    Ok(spec)
}

pub fn write_encoder_weights<W: Write>(weights: &EncoderWeights, sink: &mut W) -> Result<()> {
    weights.validate()?;
    sink.write_all(ENCODER_MAGIC)?;
    write_u32(sink, weights.layers.len())?;
    for layer in &weights.layers {
        write_conv_spec(layer, sink)?;
    }
    Ok(())
}

pub fn read_encoder_weights<R: Read>(source: &mut R) -> Result<EncoderWeights> {
    expect_magic(source, ENCODER_MAGIC)?;
    let count = read_u32(source, "layer count")?;
    if count == 0 || count > 64 {
        return Err(FlowError::Format(format!("implausible encoder layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        layers.push(read_conv_spec(source)?);
    }
    let weights = EncoderWeights { layers };
    weights.validate()?;
    Ok(weights)
}

/// Motion encoder plus GRU, the nine layers the refinement loop owns.
pub fn write_refinement_weights<W: Write>(
    motion: &MotionEncoderWeights,
    gru: &GruWeights,
    sink: &mut W,
) -> Result<()> {
    motion.validate()?;
    gru.validate()?;
    sink.write_all(REFINEMENT_MAGIC)?;
    let layers: Vec<&ConvSpec> =
        motion.layers().into_iter().chain(gru.layers()).collect();
    write_u32(sink, layers.len())?;
    for layer in layers {
        write_conv_spec(layer, sink)?;
    }
    Ok(())
}

pub fn read_refinement_weights<R: Read>(
    source: &mut R,
) -> Result<(MotionEncoderWeights, GruWeights)> {
    expect_magic(source, REFINEMENT_MAGIC)?;
    let count = read_u32(source, "layer count")?;
    if count != 9 {
        return Err(FlowError::Format(format!(
            "refinement container must hold 9 layers, found {count}"
        )));
    }
    let mut layers = Vec::with_capacity(9);
    for _ in 0..9 {
        layers.push(read_conv_spec(source)?);
    }
    let mut iter = layers.into_iter();
    let motion = MotionEncoderWeights {
        corr1: iter.next().unwrap(),
        corr2: iter.next().unwrap(),
        flow1: iter.next().unwrap(),
        fusion: iter.next().unwrap(),
    };
    let gru = GruWeights {
        gate_z: iter.next().unwrap(),
        gate_r: iter.next().unwrap(),
        candidate: iter.next().unwrap(),
        flow_head1: iter.next().unwrap(),
        flow_head2: iter.next().unwrap(),
    };
    motion.validate()?;
    gru.validate()?;
    Ok((motion, gru))
}

/// File names used inside a weights directory.
pub const FEATURE_ENCODER_FILE: &str = "feature_encoder.bin";
pub const CONTEXT_ENCODER_FILE: &str = "context_encoder.bin";
pub const GMA_FILE: &str = "gma.bin";
pub const REFINEMENT_FILE: &str = "update.bin";

/// Writes all pipeline weights into `dir` (created if missing): the two
/// encoder stacks, the refinement stack, and the aggregation parameters when
/// present.
pub fn save_pipeline_weights(
    weights: &crate::refinement::PipelineWeights,
    dir: &std::path::Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let write = |name: &str, f: &dyn Fn(&mut std::io::BufWriter<std::fs::File>) -> Result<()>| {
        let mut file = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
        f(&mut file)?;
        std::io::Write::flush(&mut file)?;
        Ok::<(), FlowError>(())
    };
    write(FEATURE_ENCODER_FILE, &|f| write_encoder_weights(&weights.feature, f))?;
    write(CONTEXT_ENCODER_FILE, &|f| write_encoder_weights(&weights.context, f))?;
    write(REFINEMENT_FILE, &|f| write_refinement_weights(&weights.motion, &weights.gru, f))?;
    if let Some(gma) = &weights.gma {
        write(GMA_FILE, &|f| write_gma_params(gma, f))?;
    }
    Ok(())
}

/// Loads pipeline weights from `dir`. `with_gma` states whether the
/// aggregation file must be present; a missing or extra file is an error so
/// mode mismatches surface immediately.
pub fn load_pipeline_weights(
    dir: &std::path::Path,
    with_gma: bool,
) -> Result<crate::refinement::PipelineWeights> {
    let open = |name: &str| -> Result<std::io::BufReader<std::fs::File>> {
        Ok(std::io::BufReader::new(std::fs::File::open(dir.join(name))?))
    };
    let feature = read_encoder_weights(&mut open(FEATURE_ENCODER_FILE)?)?;
    let context = read_encoder_weights(&mut open(CONTEXT_ENCODER_FILE)?)?;
    let (motion, gru) = read_refinement_weights(&mut open(REFINEMENT_FILE)?)?;
    let gma_path = dir.join(GMA_FILE);
    let gma = if with_gma {
        Some(read_gma_params(&mut std::io::BufReader::new(std::fs::File::open(&gma_path)?))?)
    } else {
        if gma_path.exists() {
            return Err(FlowError::invalid(format!(
                "{} present but aggregation is off",
                gma_path.display()
            )));
        }
        None
    };
    Ok(crate::refinement::PipelineWeights { feature, context, motion, gma, gru })
}

pub(crate) fn expect_magic<R: Read>(source: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    source
        .read_exact(&mut buf)
        .map_err(|_| FlowError::Format("truncated container reading magic".into()))?;
    if &buf != magic {
        return Err(FlowError::Format(format!(
            "bad container magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub(crate) fn write_u32<W: Write>(sink: &mut W, value: usize) -> Result<()> {
    let v = u32::try_from(value)
        .map_err(|_| FlowError::invalid(format!("dimension {value} exceeds u32")))?;
    sink.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(source: &mut R, what: &str) -> Result<usize> {
    let mut buf = [0u8; 4];
    source
        .read_exact(&mut buf)
        .map_err(|_| FlowError::Format(format!("truncated container reading {what}")))?;
    Ok(u32::from_le_bytes(buf) as usize)
}

pub(crate) fn write_f64_block<W: Write>(sink: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        sink.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64<R: Read>(source: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    source
        .read_exact(&mut buf)
        .map_err(|_| FlowError::Format("truncated container payload".into()))?;
    Ok(f64::from_le_bytes(buf))
}

pub(crate) fn read_f64_block<R: Read>(source: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_f64(source)?);
    }
    Ok(out)
}

fn read_matrix<R: Read>(source: &mut R, rows: usize, cols: usize) -> Result<Matrix> {
    Matrix::from_vec(rows, cols, read_f64_block(source, rows * cols)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gma_round_trip_bit_exact() {
        use rand::{Rng, SeedableRng};
        let mut params = GmaParams::seeded(3, 4, 2, 3, 5, 77).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(78);
        for v in params.pos_v.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        params.alpha = 0.123456789012345;
        let mut bytes = Vec::new();
        write_gma_params(&params, &mut bytes).unwrap();
        let back = read_gma_params(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, params);
        let mut again = Vec::new();
        write_gma_params(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn gma_header_layout() {
        let params = GmaParams::seeded(3, 4, 2, 3, 5, 0).unwrap();
        let mut bytes = Vec::new();
        write_gma_params(&params, &mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"GMA1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 5);
        // header + (12 + 12 + 4 + 1 + 5*3 + 9*3) doubles
        let payload = 12 + 12 + 4 + 1 + 15 + 27;
        assert_eq!(bytes.len(), 24 + payload * 8);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let params = GmaParams::seeded(2, 2, 2, 2, 2, 1).unwrap();
        let mut bytes = Vec::new();
        write_gma_params(&params, &mut bytes).unwrap();
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(read_gma_params(&mut corrupt.as_slice()).is_err());
        bytes.truncate(bytes.len() - 1);
        assert!(read_gma_params(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn encoder_round_trip_bit_exact() {
        let weights = EncoderWeights::seeded_feature(8, 5);
        let mut bytes = Vec::new();
        write_encoder_weights(&weights, &mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"ENC1");
        let back = read_encoder_weights(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, weights);
        let mut again = Vec::new();
        write_encoder_weights(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn refinement_round_trip_bit_exact() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let motion = MotionEncoderWeights::seeded(27, 8, &mut rng);
        let gru = GruWeights::seeded(8, 16, &mut rng);
        let mut bytes = Vec::new();
        write_refinement_weights(&motion, &gru, &mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"RFN1");
        let (m2, g2) = read_refinement_weights(&mut bytes.as_slice()).unwrap();
        assert_eq!(m2, motion);
        assert_eq!(g2, gru);
    }

    #[test]
    fn weights_directory_round_trip() {
        use crate::refinement::{GmaSetting, PipelineConfig, PipelineWeights};
        let mut config = PipelineConfig::standard();
        config.d_feat = 8;
        config.d_c = 8;
        config.d_h = 8;
        config.d_m = 8;
        config.corr_levels = 2;
        config.corr_radius = 1;
        config.gma = GmaSetting::On(crate::gma::GmaConfig::standard(8, 8, 8));
        let weights = PipelineWeights::seeded(&config, 4, 4, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_pipeline_weights(&weights, dir.path()).unwrap();
        let back = load_pipeline_weights(dir.path(), true).unwrap();
        assert_eq!(back, weights);

        // off-mode load refuses a directory that still carries gma weights
        assert!(load_pipeline_weights(dir.path(), false).is_err());
    }
}
