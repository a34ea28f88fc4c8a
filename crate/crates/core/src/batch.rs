//! Encoded samples and padded, masked mini-batches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Record;
use crate::vocab::{Vocabs, END, PAD, START};

/// A record mapped to vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub nodes: Vec<u32>,
    pub edges: Vec<(usize, usize)>,
    pub sbt: Vec<u32>,
    pub code: Vec<u32>,
    /// Comment words without sentinels.
    pub comment: Vec<u32>,
}

impl Encoded {
    pub fn new(r: &Record, v: &Vocabs) -> Self {
        Self {
            nodes: v.nodes.encode(&r.nodes),
            edges: r.edges.clone(),
            sbt: v.sbt.encode(&r.sbt),
            code: v.code.encode(&r.code),
            comment: v.comment.encode(&r.comment),
        }
    }
}

/// Right-padded id matrix `rows × len` with per-row lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Padded {
    pub ids: Vec<u32>,
    pub lens: Vec<usize>,
    pub len: usize,
}

impl Padded {
    fn new(rows: &[&[u32]], min_len: usize) -> Self {
        let len = rows.iter().map(|r| r.len()).max().unwrap_or(0).max(min_len);
        let mut ids = vec![PAD; rows.len() * len];
        for (b, r) in rows.iter().enumerate() {
            ids[b * len..b * len + r.len()].copy_from_slice(r);
        }
        Self {
            ids,
            lens: rows.iter().map(|r| r.len()).collect(),
            len,
        }
    }

    pub fn rows(&self) -> usize {
        self.lens.len()
    }

    pub fn row(&self, b: usize) -> &[u32] {
        &self.ids[b * self.len..(b + 1) * self.len]
    }

    /// Pad mask: true where position `i` of row `b` holds a real token.
    pub fn keep(&self, b: usize, i: usize) -> bool {
        i < self.lens[b]
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.rows())
            .flat_map(|b| (0..self.len).map(move |i| i < self.lens[b]))
            .collect()
    }
}

/// Minimum padded extents, for re-padding a batch wider than its maxima.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PadTo {
    pub nodes: usize,
    pub sbt: usize,
    pub code: usize,
    pub comment: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// X: graph node labels.
    pub nodes: Padded,
    /// E: Ã per sample, `rows × l × l`; padded rows/cols are zero except the
    /// diagonal.
    pub adjacency: Vec<u8>,
    /// X′: SBT tokens.
    pub sbt: Padded,
    /// C: plain code tokens.
    pub code: Padded,
    /// Decoder input `<START> y…`.
    pub y_in: Padded,
    /// Decoder target `y… <END>`, same extent as `y_in`.
    pub y_out: Padded,
}

impl Batch {
    pub fn new(samples: &[&Encoded], pad: PadTo) -> Self {
        let nodes_rows: Vec<&[u32]> = samples.iter().map(|s| s.nodes.as_slice()).collect();
        let sbt_rows: Vec<&[u32]> = samples.iter().map(|s| s.sbt.as_slice()).collect();
        let code_rows: Vec<&[u32]> = samples.iter().map(|s| s.code.as_slice()).collect();
        let nodes = Padded::new(&nodes_rows, pad.nodes);
        let l = nodes.len;
        let mut adjacency = vec![0u8; samples.len() * l * l];
        for (b, s) in samples.iter().enumerate() {
            let m = &mut adjacency[b * l * l..(b + 1) * l * l];
            for i in 0..l {
                m[i * l + i] = 1;
            }
            for &(i, j) in &s.edges {
                m[i * l + j] = 1;
                m[j * l + i] = 1;
            }
        }
        let y_in: Vec<Vec<u32>> = samples
            .iter()
            .map(|s| std::iter::once(START).chain(s.comment.iter().copied()).collect())
            .collect();
        let y_out: Vec<Vec<u32>> = samples
            .iter()
            .map(|s| s.comment.iter().copied().chain(std::iter::once(END)).collect())
            .collect();
        let y_in: Vec<&[u32]> = y_in.iter().map(Vec::as_slice).collect();
        let y_out: Vec<&[u32]> = y_out.iter().map(Vec::as_slice).collect();
        Self {
            nodes,
            adjacency,
            sbt: Padded::new(&sbt_rows, pad.sbt),
            code: Padded::new(&code_rows, pad.code),
            y_in: Padded::new(&y_in, pad.comment),
            y_out: Padded::new(&y_out, pad.comment),
        }
    }

    pub fn size(&self) -> usize {
        self.nodes.rows()
    }

    /// l^Y
    pub fn target_len(&self) -> usize {
        self.y_in.len
    }

    pub fn adj(&self, b: usize, i: usize, j: usize) -> u8 {
        let l = self.nodes.len;
        self.adjacency[b * l * l + i * l + j]
    }

    /// M^Y as keep flags: query `i` may attend key `j` iff `j ≤ i` and `j`
    /// is not padding. Shape `rows × l^Y × l^Y`.
    pub fn target_mask(&self) -> Vec<bool> {
        let l = self.target_len();
        let mut out = Vec::with_capacity(self.size() * l * l);
        for b in 0..self.size() {
            for i in 0..l {
                for j in 0..l {
                    out.push(j <= i && self.y_in.keep(b, j));
                }
            }
        }
        out
    }
}

/// Sample order for one epoch; a pure function of `(n, seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Shuffled batches of at most `batch_size`; the short tail batch is kept.
pub fn make_batches(samples: &[Encoded], batch_size: usize, seed: u64, epoch: u64) -> Vec<Batch> {
    let order = epoch_order(samples.len(), seed, epoch);
    order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let refs: Vec<&Encoded> = chunk.iter().map(|&i| &samples[i]).collect();
            Batch::new(&refs, PadTo::default())
        })
        .collect()
}

/// Batches in the original order, for evaluation.
pub fn sequential_batches(samples: &[Encoded], batch_size: usize) -> Vec<Batch> {
    samples
        .chunks(batch_size.max(1))
        .map(|chunk| Batch::new(&chunk.iter().collect::<Vec<_>>(), PadTo::default()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(n_nodes: usize, comment: usize) -> Encoded {
        Encoded {
            nodes: vec![5; n_nodes],
            edges: (1..n_nodes).map(|j| (0, j)).collect(),
            sbt: vec![2, 6, 3],
            code: vec![2, 7, 3],
            comment: vec![9; comment],
        }
    }

    #[test]
    fn batch_sizes() {
        let samples: Vec<_> = (0..250).map(|_| enc(2, 4)).collect();
        let sizes: Vec<_> = make_batches(&samples, 100, 7, 0).iter().map(Batch::size).collect();
        assert_eq!(sizes, vec![100, 100, 50]);
    }

    #[test]
    fn padding_and_masks() {
        let a = enc(3, 2);
        let b = enc(5, 4);
        let batch = Batch::new(&[&a, &b], PadTo::default());
        assert_eq!(batch.nodes.len, 5);
        assert_eq!(batch.nodes.row(0), &[5, 5, 5, PAD, PAD]);
        assert_eq!(batch.nodes.mask()[..5], [true, true, true, false, false]);
        assert_eq!(batch.adj(0, 3, 3), 1);
        assert_eq!(batch.adj(0, 0, 3), 0);
        assert_eq!(batch.adj(0, 2, 0), 1);
        assert_eq!(batch.y_in.row(0), &[START, 9, 9, PAD, PAD]);
        assert_eq!(batch.y_out.row(0), &[9, 9, END, PAD, PAD]);
    }

    #[test]
    fn look_ahead_mask() {
        let a = enc(1, 2);
        let batch = Batch::new(&[&a], PadTo::default());
        let m = batch.target_mask();
        assert_eq!(batch.target_len(), 3);
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!(!m[i * 3 + j]);
        }
        assert!(m[2 * 3]);
    }

    #[test]
    fn epochs_partition_samples() {
        let order = epoch_order(37, 3, 5);
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, (0..37).collect::<Vec<_>>());
        assert_eq!(order, epoch_order(37, 3, 5));
        assert_ne!(order, epoch_order(37, 3, 6));
    }
}
