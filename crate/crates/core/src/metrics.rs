//! Patch-wise absolute cosine similarity, per-layer diversity profiles, and
//! the `PDMP` activation dump format.
//!
//! For patch rows `h_1..h_n` (class patch excluded) the similarity is the
//! mean of `|h_i·h_j| / (|h_i| |h_j|)` over all ordered pairs `i != j`. A value
//! of 1 means every patch points the same way (up to sign); 0 means the
//! patches are mutually orthogonal.
//!
//! PDMP layout, integers little-endian:
//!
//! ```text
//! "PDMP"  u32 version (=1)  u32 num_layers
//! per layer: u32 n_tokens, u32 dim, f32 data (row-major, n_tokens × dim)
//! ```

use std::io::Write;
use std::path::Path;

use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::vit::{ActivationStack, ViTParams};

/// Rows with a smaller Euclidean norm have no direction.
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Mean absolute cosine over ordered pairs of distinct patch rows of
/// `h: [rows, dim]`. Row 0 is skipped when `has_class_patch` is set.
pub fn patch_cosine<T: Scalar>(h: &Tensor<T>, has_class_patch: bool) -> Result<f64> {
    if h.rank() != 2 {
        return Err(Error::Contract(format!(
            "patch_cosine expects [rows, dim], got {:?}",
            h.shape()
        )));
    }
    let (rows, dim) = (h.shape()[0], h.shape()[1]);
    let skip = usize::from(has_class_patch);
    let n = rows.saturating_sub(skip);
    if n < 2 {
        return Err(Error::Contract(format!(
            "patch_cosine needs at least 2 patches, got {n}"
        )));
    }
    let mut unit = Vec::with_capacity(n * dim);
    for r in skip..rows {
        let row = &h.data()[r * dim..(r + 1) * dim];
        let norm = row.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        if norm.is_nan() || norm < MIN_ROW_NORM {
            return Err(Error::DegenerateRow { row: r, norm });
        }
        unit.extend(row.iter().map(|v| v.as_f64() / norm));
    }
    // Gram matrix without its diagonal; |cos| is symmetric so each unordered
    // pair counts twice.
    let mut total = 0.0;
    for i in 0..n {
        let ui = &unit[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            let uj = &unit[j * dim..(j + 1) * dim];
            total += ui.iter().zip(uj).map(|(a, b)| a * b).sum::<f64>().abs();
        }
    }
    Ok((2.0 * total / (n * (n - 1)) as f64).min(1.0))
}

/// Statistics of the similarity at one layer across a sample of inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStat {
    pub layer: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiversityProfile {
    pub layers: Vec<LayerStat>,
}

impl DiversityProfile {
    pub fn last(&self) -> Option<&LayerStat> {
        self.layers.last()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "mean_p", "std_p", "count"])?;
        for s in &self.layers {
            w.write_record([
                s.layer.to_string(),
                s.mean.to_string(),
                s.std.to_string(),
                s.count.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}

/// Per-layer similarity for the first `max_examples` inputs of
/// `patches: [N, n, pdim]`, evaluated without augmentation or drop-path.
pub fn profile(
    params: &ViTParams<f32>,
    patches: &Tensor<f32>,
    max_examples: usize,
) -> Result<DiversityProfile> {
    const CHUNK: usize = 32;
    let total = patches
        .shape()
        .first()
        .copied()
        .unwrap_or(0)
        .min(max_examples);
    if total == 0 {
        return Err(Error::EmptyBatch);
    }
    let per = patches.numel() / patches.shape()[0];
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(total); params.config.depth + 1];
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        let mut shape = patches.shape().to_vec();
        shape[0] = end - start;
        let chunk = Tensor::new(shape, patches.data()[start * per..end * per].to_vec())?;
        let inf = params.infer(&chunk)?;
        for (l, layer) in inf.layers.iter().enumerate() {
            for e in 0..end - start {
                values[l].push(patch_cosine(&layer.index0(e)?, true)?);
            }
        }
        start = end;
    }
    let layers = values
        .into_iter()
        .enumerate()
        .map(|(layer, v)| {
            let count = v.len();
            let mean = v.iter().sum::<f64>() / count as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / count as f64;
            LayerStat {
                layer,
                mean,
                std: var.sqrt(),
                count,
            }
        })
        .collect();
    Ok(DiversityProfile { layers })
}

pub const DUMP_MAGIC: &[u8; 4] = b"PDMP";
pub const DUMP_VERSION: u32 = 1;

pub fn encode_dump(stack: &ActivationStack<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    out.extend_from_slice(&(stack.layers.len() as u32).to_le_bytes());
    for layer in &stack.layers {
        if layer.rank() != 2 {
            return Err(Error::Contract(format!(
                "dump layers must be [n_tokens, dim], got {:?}",
                layer.shape()
            )));
        }
        out.extend_from_slice(&(layer.shape()[0] as u32).to_le_bytes());
        out.extend_from_slice(&(layer.shape()[1] as u32).to_le_bytes());
        for v in layer.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dump(bytes: &[u8]) -> Result<ActivationStack<f32>> {
    let mut r = Reader::new(bytes);
    r.magic(DUMP_MAGIC, DUMP_VERSION)?;
    let num_layers = r.u32_le("layer count")? as usize;
    let mut layers = Vec::with_capacity(num_layers.min(1 << 16));
    for l in 0..num_layers {
        let tokens = r.u32_le("token count")? as usize;
        let dim = r.u32_le("dim")? as usize;
        let data = r.f32_vec_le(tokens * dim, &format!("layer {l} data"))?;
        layers.push(Tensor::new([tokens, dim], data)?);
    }
    if !r.at_end() {
        return r.fail("trailing bytes after last layer");
    }
    Ok(ActivationStack { layers })
}

pub fn write_dump(stack: &ActivationStack<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_dump(stack)?)?;
    Ok(())
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<ActivationStack<f32>> {
    decode_dump(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::ModelConfig;

    fn t(shape: [usize; 2], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn collapsed_and_orthogonal_rows() {
        let same = t([3, 2], &[0.3, -2.0, 0.3, -2.0, 0.3, -2.0]);
        assert!((patch_cosine(&same, false).unwrap() - 1.0).abs() < 1e-12);
        let eye = Tensor::<f64>::eye(4);
        assert_eq!(patch_cosine(&eye, false).unwrap(), 0.0);
    }

    #[test]
    fn two_rows_at_45_degrees() {
        let h = t([2, 2], &[1.0, 0.0, 1.0, 1.0]);
        let p = patch_cosine(&h, false).unwrap();
        assert!((p - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5, "{p}");
    }

    #[test]
    fn class_patch_is_ignored() {
        let h = t([3, 2], &[1.0, 0.0, 0.0, 1.0, 0.0, 2.0]);
        assert!((patch_cosine(&h, true).unwrap() - 1.0).abs() < 1e-12);
        assert!(patch_cosine(&h, false).unwrap() < 1.0);
    }

    #[test]
    fn zero_row_is_an_error() {
        let h = t([3, 2], &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            patch_cosine(&h, false),
            Err(Error::DegenerateRow { row: 1, .. })
        ));
        assert!(patch_cosine(&t([2, 2], &[1.0, 0.0, 1.0, 1.0]), true).is_err());
    }

    #[test]
    fn dump_round_trip_and_truncation() {
        let stack = ActivationStack {
            layers: vec![
                Tensor::from_fn([3, 2], |i| i as f32 - 1.5),
                Tensor::from_fn([3, 2], |i| (i as f32).sin()),
            ],
        };
        let bytes = encode_dump(&stack).unwrap();
        assert_eq!(bytes.len(), 12 + 2 * (8 + 24));
        assert_eq!(decode_dump(&bytes).unwrap(), stack);
        let cut = bytes.len() - 5;
        match decode_dump(&bytes[..cut]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 12 + 32 + 8),
            other => panic!("{other:?}"),
        }
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            decode_dump(&bad),
            Err(Error::Parse { offset: 4, .. })
        ));
    }

    #[test]
    fn depth_zero_profile_is_raw_embedding_similarity() {
        let cfg = ModelConfig {
            image_size: 8,
            patch_size: 4,
            dim: 8,
            depth: 0,
            heads: 2,
            num_classes: 2,
            ..ModelConfig::default()
        };
        let p = ViTParams::<f32>::init(&cfg, 1).unwrap();
        let x = Tensor::<f32>::from_fn([3, 4, 16], |i| ((i * 7919) % 13) as f32 - 6.0);
        let prof = profile(&p, &x, 10).unwrap();
        assert_eq!(prof.layers.len(), 1);
        assert_eq!(prof.layers[0].count, 3);
        let inf = p.infer(&x).unwrap();
        let direct: f64 = (0..3)
            .map(|e| patch_cosine(&inf.layers[0].index0(e).unwrap(), true).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((prof.layers[0].mean - direct).abs() < 1e-12);
        assert!(prof
            .to_csv()
            .unwrap()
            .starts_with("layer,mean_p,std_p,count\n0,"));
        assert!(matches!(profile(&p, &x, 0), Err(Error::EmptyBatch)));
    }
}
