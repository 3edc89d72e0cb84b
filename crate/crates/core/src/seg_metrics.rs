//! Variation of information and adjusted Rand error between two labelings
//! of the same 3D volume.

use std::collections::BTreeMap;
use std::io::{BufReader, Read, Write};
use std::path::Path as FsPath;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::token_core::read_header;
use crate::{Error, Result};

const MAGIC: &str = "EMSEG1";

/// A dense 3D array of segment ids, raster order with x fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    dims: [usize; 3],
    labels: Vec<u32>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], labels: Vec<u32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n == 0 {
            return Err(Error::EmptyVolume);
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{dims:?} needs {n} labels, got {}",
                labels.len()
            )));
        }
        Ok(Self { dims, labels })
    }

    /// A `1 x 1 x N` volume.
    pub fn from_flat(labels: Vec<u32>) -> Result<Self> {
        Self::new([1, 1, labels.len()], labels)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Reads `EMSEG1 D H W\n` followed by little-endian u32 labels.
    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let dims = read_header(&mut reader, MAGIC)?;
        let n = dims.iter().product::<usize>();
        let mut bytes = vec![0u8; n * 4];
        reader
            .read_exact(&mut bytes)
            .map_err(|e| Error::Format(format!("truncated label volume: {e}")))?;
        if reader.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Format("trailing bytes after label volume".into()));
        }
        let labels = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(dims, labels)
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<()> {
        let [d, h, w] = self.dims;
        write!(writer, "{MAGIC} {d} {h} {w}\n")?;
        for l in &self.labels {
            writer.write_all(&l.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

/// Joint label counts `n_ij` (rows: prediction, columns: ground truth).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: BTreeMap<(u32, u32), u64>,
    pub rows: BTreeMap<u32, u64>,
    pub cols: BTreeMap<u32, u64>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn from_labels(pred: &[u32], gt: &[u32]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} predicted labels vs {} ground-truth labels",
                pred.len(),
                gt.len()
            )));
        }
        let mut t = Self::default();
        for (&a, &b) in pred.iter().zip(gt) {
            t.add(a, b, 1);
        }
        Ok(t)
    }

    fn add(&mut self, a: u32, b: u32, n: u64) {
        *self.counts.entry((a, b)).or_default() += n;
        *self.rows.entry(a).or_default() += n;
        *self.cols.entry(b).or_default() += n;
        self.total += n;
    }

    /// Adds another table's counts into this one.
    pub fn merge(&mut self, other: &ContingencyTable) {
        for (&(a, b), &n) in &other.counts {
            self.add(a, b, n);
        }
    }
}

const SHARD: usize = 1 << 16;

/// Exact contingency table, accumulated in voxel shards on the rayon pool.
pub fn contingency(pred: &LabelVolume, gt: &LabelVolume) -> Result<ContingencyTable> {
    if pred.dims != gt.dims {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", pred.dims, gt.dims)));
    }
    let shards: Vec<ContingencyTable> = pred
        .labels
        .par_chunks(SHARD)
        .zip(gt.labels.par_chunks(SHARD))
        .map(|(a, b)| ContingencyTable::from_labels(a, b).expect("equal shard lengths"))
        .collect();
    let mut table = ContingencyTable::default();
    for s in &shards {
        table.merge(s);
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

impl LogBase {
    fn scale(self) -> f64 {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Two => std::f64::consts::LOG2_E,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Voi {
    /// `H(pred | gt)`: over-segmentation.
    pub split: f64,
    /// `H(gt | pred)`: under-segmentation.
    pub merge: f64,
    pub total: f64,
}

/// VOI components from a contingency table.
pub fn voi_from_table(table: &ContingencyTable, base: LogBase) -> Voi {
    let n = table.total as f64;
    let (mut split, mut merge) = (0.0, 0.0);
    for (&(a, b), &nij) in &table.counts {
        let nij = nij as f64;
        let p = nij / n;
        split -= p * (nij / table.cols[&b] as f64).ln();
        merge -= p * (nij / table.rows[&a] as f64).ln();
    }
    // Conditional entropies are non-negative; clear rounding residue.
    let (split, merge) = (split.max(0.0) * base.scale(), merge.max(0.0) * base.scale());
    Voi {
        split,
        merge,
        total: split + merge,
    }
}

pub fn voi(pred: &LabelVolume, gt: &LabelVolume) -> Result<Voi> {
    Ok(voi_from_table(&contingency(pred, gt)?, LogBase::Natural))
}

fn pairs(n: u64) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index. A zero denominator only arises when both labelings
/// are the same trivial partition (one segment, or all singletons), which
/// counts as perfect agreement.
pub fn adjusted_rand_index(table: &ContingencyTable) -> Result<f64> {
    if table.total < 2 {
        return Err(Error::Config("adjusted Rand index needs at least two voxels".into()));
    }
    let index: f64 = table.counts.values().map(|&n| pairs(n)).sum();
    let a: f64 = table.rows.values().map(|&n| pairs(n)).sum();
    let b: f64 = table.cols.values().map(|&n| pairs(n)).sum();
    let expected = a * b / pairs(table.total);
    let max = 0.5 * (a + b);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// `1 - ARI`, clamped to `[0, 1]`; 0 means identical partitions.
pub fn arand(pred: &LabelVolume, gt: &LabelVolume) -> Result<f64> {
    let ari = adjusted_rand_index(&contingency(pred, gt)?)?;
    Ok((1.0 - ari).clamp(0.0, 1.0))
}

/// All metrics reported by the command-line tool.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub voi_split: f64,
    pub voi_merge: f64,
    pub voi: f64,
    pub arand: f64,
}

pub fn evaluate(pred: &LabelVolume, gt: &LabelVolume, base: LogBase) -> Result<SegMetrics> {
    let table = contingency(pred, gt)?;
    let v = voi_from_table(&table, base);
    let ari = adjusted_rand_index(&table)?;
    Ok(SegMetrics {
        voi_split: v.split,
        voi_merge: v.merge,
        voi: v.total,
        arand: (1.0 - ari).clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(l: &[u32]) -> LabelVolume {
        LabelVolume::from_flat(l.to_vec()).unwrap()
    }

    #[test]
    fn four_voxel_table_and_metrics() {
        let (pred, gt) = (flat(&[1, 1, 1, 2]), flat(&[1, 1, 2, 2]));
        let t = contingency(&pred, &gt).unwrap();
        let want: BTreeMap<(u32, u32), u64> = [((1, 1), 2), ((1, 2), 1), ((2, 2), 1)].into();
        assert_eq!(t.counts, want);
        let v = voi(&pred, &gt).unwrap();
        assert!((v.split - 0.346574).abs() < 1e-6);
        assert!((v.merge - 0.477386).abs() < 1e-6);
        assert!((v.total - 0.823959).abs() < 1e-6);
        assert_eq!(arand(&pred, &gt).unwrap(), 1.0);
    }

    #[test]
    fn identical_and_relabelled() {
        let a = flat(&[3, 3, 7, 7, 9]);
        let v = voi(&a, &a).unwrap();
        assert_eq!((v.split, v.merge, v.total), (0.0, 0.0, 0.0));
        assert_eq!(arand(&a, &a).unwrap(), 0.0);
        assert_eq!(arand(&flat(&[2, 2, 1, 1]), &flat(&[1, 1, 2, 2])).unwrap(), 0.0);
    }

    #[test]
    fn full_merge() {
        let pred = flat(&[0; 6]);
        let gt = flat(&[4, 4, 4, 5, 5, 5]);
        let t = contingency(&pred, &gt).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.cols.values().copied().collect::<Vec<_>>(), vec![3, 3]);
        let v = voi(&pred, &gt).unwrap();
        assert_eq!(v.split, 0.0);
        assert!((v.merge - std::f64::consts::LN_2).abs() < 1e-15);
        let bits = voi_from_table(&t, LogBase::Two);
        assert!((bits.merge - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trivial_partitions_count_as_agreement() {
        let singles = flat(&[0, 1, 2, 3]);
        assert_eq!(arand(&singles, &singles).unwrap(), 0.0);
        assert!(arand(&flat(&[1, 2]), &flat(&[1, 1])).unwrap() > 0.0);
        assert!(arand(&flat(&[1]), &flat(&[1])).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let a = LabelVolume::new([1, 2, 2], vec![0; 4]).unwrap();
        let b = LabelVolume::new([2, 2, 1], vec![0; 4]).unwrap();
        assert!(matches!(voi(&a, &b), Err(Error::DimensionMismatch(_))));
        assert!(LabelVolume::new([1, 2, 2], vec![0; 3]).is_err());
    }

    #[test]
    fn emseg_round_trip() {
        let v = LabelVolume::new([2, 1, 3], vec![0, 5, u32::MAX, 7, 7, 1]).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"EMSEG1 2 1 3\n"));
        assert_eq!(LabelVolume::read_from(&buf[..]).unwrap(), v);
        assert!(LabelVolume::read_from(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn sharded_counts_match_single_pass() {
        let n = SHARD * 2 + 17;
        let pred: Vec<u32> = (0..n as u32).map(|i| i % 13).collect();
        let gt: Vec<u32> = (0..n as u32).map(|i| (i / 7) % 5).collect();
        let sharded = contingency(&flat(&pred), &flat(&gt)).unwrap();
        assert_eq!(sharded, ContingencyTable::from_labels(&pred, &gt).unwrap());
    }

    proptest! {
        #[test]
        fn invariances(
            pairs in proptest::collection::vec((0u32..4, 0u32..4), 2..40),
            perm_seed in any::<u64>(),
        ) {
            let (a, b): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
            let relabel = |l: &[u32]| -> Vec<u32> {
                l.iter().map(|&x| ((x as u64 * 7 + perm_seed % 3) % 4 + 10) as u32).collect()
            };
            let (pa, pb) = (flat(&a), flat(&b));
            let m = evaluate(&pa, &pb, LogBase::Natural).unwrap();
            let r = evaluate(&flat(&relabel(&a)), &flat(&b), LogBase::Natural).unwrap();
            prop_assert!((m.voi - r.voi).abs() < 1e-12);
            prop_assert!((m.arand - r.arand).abs() < 1e-12);
            let swapped = evaluate(&pb, &pa, LogBase::Natural).unwrap();
            prop_assert!((m.voi - swapped.voi).abs() < 1e-12);
            prop_assert!((m.voi_split - swapped.voi_merge).abs() < 1e-12);
            prop_assert!(m.voi >= 0.0);
            prop_assert!((0.0..=1.0).contains(&m.arand));
        }
    }
}
