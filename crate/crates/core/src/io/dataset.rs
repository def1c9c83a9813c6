//! The `GFUSE1` dataset container.
//!
//! Layout (little-endian):
//! magic `GFUSE1` | version u32 | height u32 | width u32 | classes u32 |
//! samples u32 | seed u64 | config echo (u32 length + utf-8) | per sample:
//! grayscale `H*W` f64, reduced spectra `H*W*64` f64, labels `H*W` u16,
//! validity bitmask `ceil(H*W/8)` bytes.

use std::path::Path;

use super::{pack_bits, push_f64_slice, push_string, push_u32, push_u64, unpack_bits, Reader};
use crate::error::{FormatError, Result};
use crate::graph::SPECTRUM_DIM;
use crate::synth::{Dataset, SampleData};

pub const DATASET_MAGIC: &str = "GFUSE1";
pub const DATASET_VERSION: u32 = 1;

/// Serializes and atomically writes the dataset.
pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let (h, w) = (data.height, data.width);
    let n_pixels = h * w;
    let mut buf = Vec::with_capacity(64 + data.samples.len() * n_pixels * (8 + SPECTRUM_DIM * 8 + 2));
    buf.extend_from_slice(DATASET_MAGIC.as_bytes());
    push_u32(&mut buf, DATASET_VERSION);
    push_u32(&mut buf, h as u32);
    push_u32(&mut buf, w as u32);
    push_u32(&mut buf, data.n_classes as u32);
    push_u32(&mut buf, data.samples.len() as u32);
    push_u64(&mut buf, data.seed);
    push_string(&mut buf, &data.config_echo);
    for s in &data.samples {
        push_f64_slice(&mut buf, &s.bse);
        push_f64_slice(&mut buf, &s.reduced);
        for &l in &s.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        buf.extend_from_slice(&pack_bits(&s.validity));
    }
    super::atomic_write(path, &buf)
}

/// Loads and validates a dataset container. Truncation errors carry the
/// failing sample index; a bad magic or version yields no partial result.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader::new(std::io::BufReader::new(file));

    let mut magic = [0u8; 6];
    r.read_exact(&mut magic, "magic")?;
    if magic != DATASET_MAGIC.as_bytes() {
        return Err(FormatError::BadMagic { expected: DATASET_MAGIC, found: magic.to_vec() }.into());
    }
    let version = r.read_u32("version")?;
    if version != DATASET_VERSION {
        return Err(FormatError::VersionMismatch { found: version, expected: DATASET_VERSION }.into());
    }
    let h = r.read_u32("height")? as usize;
    let w = r.read_u32("width")? as usize;
    let n_classes = r.read_u32("classes")? as usize;
    let n_samples = r.read_u32("sample count")? as usize;
    let seed = r.read_u64("seed")?;
    if h == 0 || w == 0 || h * w > (1 << 28) {
        return Err(r.corrupt(format!("implausible image shape {h}x{w}")));
    }
    if n_classes == 0 || n_classes > u16::MAX as usize {
        return Err(r.corrupt(format!("implausible class count {n_classes}")));
    }
    let config_echo = r.read_string("config echo")?;

    let n_pixels = h * w;
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let bse = r.read_f64_vec(n_pixels, &format!("sample {i}: bse"))?;
        let reduced = r.read_f64_vec(n_pixels * SPECTRUM_DIM, &format!("sample {i}: spectra"))?;
        let labels = r.read_u16_vec(n_pixels, &format!("sample {i}: labels"))?;
        let mut mask_bytes = vec![0u8; n_pixels.div_ceil(8)];
        r.read_exact(&mut mask_bytes, &format!("sample {i}: validity"))?;
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(r.corrupt(format!("sample {i}: label {bad} outside {n_classes} classes")));
        }
        samples.push(SampleData {
            bse,
            reduced,
            labels,
            validity: unpack_bits(&mask_bytes, n_pixels),
        });
    }

    Ok(Dataset { height: h, width: w, n_classes, seed, config_echo, samples })
}
