use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path as FsPath;

use super::TokenSequence;
use crate::{Error, Result};

const MAGIC: &str = "EMVOL1";

/// Dense 3D intensity volume stored in raster order (x fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || data.is_empty() {
            return Err(Error::EmptyVolume);
        }
        let expected = dims.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "volume {dims:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite intensity at voxel {i}")));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        let [_, h, w] = self.dims;
        self.data[(z * h + y) * w + x]
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let dims = read_header(&mut reader, MAGIC)?;
        let n = dims.iter().product::<usize>();
        let mut bytes = vec![0u8; n * 4];
        reader
            .read_exact(&mut bytes)
            .map_err(|e| Error::Format(format!("truncated volume body: {e}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(dims, data)
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<()> {
        let [d, h, w] = self.dims;
        write!(writer, "{MAGIC} {d} {h} {w}\n")?;
        for v in &self.data {
            writer.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

/// Parses an ASCII `MAGIC D H W` header line.
pub(crate) fn read_header<R: BufRead>(reader: &mut R, magic: &str) -> Result<[usize; 3]> {
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    let text = std::str::from_utf8(&line)
        .map_err(|_| Error::Format("header is not ASCII".into()))?
        .trim_end();
    let mut fields = text.split_ascii_whitespace();
    if fields.next() != Some(magic) {
        return Err(Error::Format(format!("expected `{magic}` header, got `{text}`")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Format(format!("malformed header `{text}`")))?;
    }
    if fields.next().is_some() {
        return Err(Error::Format(format!("trailing header fields in `{text}`")));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::EmptyVolume);
    }
    Ok(dims)
}

/// Quantizes per-patch mean intensity into `vocab_size` levels.
///
/// Patches are emitted in raster order (z, then y, then x). Means are
/// normalized by the global intensity range; a constant volume maps to 0.
pub fn tokenize_volume(
    volume: &Volume,
    patch: [usize; 3],
    vocab_size: u32,
) -> Result<TokenSequence> {
    if vocab_size < 2 {
        return Err(Error::Config("vocabulary size must be at least 2".into()));
    }
    let dims = volume.dims();
    if patch.iter().any(|&p| p == 0) || dims.iter().zip(&patch).any(|(d, p)| d % p != 0) {
        return Err(Error::DimensionMismatch(format!(
            "patch {patch:?} does not tile volume {dims:?}"
        )));
    }
    let (lo, hi) = volume
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let range = hi - lo;
    let [pd, ph, pw] = patch;
    let patch_len = (pd * ph * pw) as f64;
    let mut tokens = Vec::with_capacity(dims[0] / pd * (dims[1] / ph) * (dims[2] / pw));
    for bz in 0..dims[0] / pd {
        for by in 0..dims[1] / ph {
            for bx in 0..dims[2] / pw {
                let mut sum = 0.0f64;
                for z in bz * pd..(bz + 1) * pd {
                    for y in by * ph..(by + 1) * ph {
                        for x in bx * pw..(bx + 1) * pw {
                            sum += volume.at(z, y, x) as f64;
                        }
                    }
                }
                let token = if range > 0.0 {
                    let norm = (sum / patch_len - lo) / range;
                    ((norm * vocab_size as f64).floor().max(0.0) as u32).min(vocab_size - 1)
                } else {
                    0
                };
                tokens.push(token);
            }
        }
    }
    TokenSequence::new(tokens, vocab_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Volume {
        Volume::new([2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn constant_volume_maps_to_zero() {
        let v = Volume::new([2, 3, 4], vec![1.5; 24]).unwrap();
        let seq = tokenize_volume(&v, [1, 1, 2], 16).unwrap();
        assert_eq!(seq.len(), 12);
        assert!(seq.tokens().iter().all(|&t| t == 0));
    }

    #[test]
    fn unit_patches_follow_raster_order() {
        let seq = tokenize_volume(&ramp(), [1, 1, 1], 8).unwrap();
        assert_eq!(seq.tokens(), &[0, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn whole_volume_patch_gives_one_token() {
        let seq = tokenize_volume(&ramp(), [2, 2, 2], 4).unwrap();
        assert_eq!(seq.len(), 1);
        // mean 3.5 -> 0.5 of range -> floor(2.0)
        assert_eq!(seq.tokens(), &[2]);
    }

    #[test]
    fn rejects_non_tiling_patch() {
        assert!(matches!(
            tokenize_volume(&ramp(), [1, 1, 3], 4),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(tokenize_volume(&ramp(), [1, 1, 1], 1).is_err());
        assert!(matches!(Volume::new([0, 1, 1], vec![]), Err(Error::EmptyVolume)));
    }

    #[test]
    fn file_round_trip() {
        let v = Volume::new([1, 2, 3], vec![0.5, -1.0, 2.25, 3.0, 1e-3, 7.0]).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"EMVOL1 1 2 3\n"));
        assert_eq!(Volume::read_from(&buf[..]).unwrap(), v);
        assert!(Volume::read_from(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn tokenization_is_deterministic() {
        let data: Vec<f32> = (0..64).map(|i| ((i * 37) % 11) as f32 * 0.3).collect();
        let v = Volume::new([4, 4, 4], data).unwrap();
        let a = tokenize_volume(&v, [2, 2, 2], 5).unwrap();
        let b = tokenize_volume(&v.clone(), [2, 2, 2], 5).unwrap();
        assert_eq!(a, b);
    }
}
