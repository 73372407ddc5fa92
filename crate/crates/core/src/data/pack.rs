use super::{special, Encoding};
use crate::error::{contract, Result};
use crate::tensor::Grid;

/// Fixed-length training rows with per-position word-start flags.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedDataset {
    pub sequences: Grid<u32>,
    pub word_starts: Grid<bool>,
}

impl PackedDataset {
    pub fn rows(&self) -> usize {
        self.sequences.rows()
    }

    pub fn seq_len(&self) -> usize {
        self.sequences.cols()
    }

    /// The subset of rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let cols = self.seq_len();
        let mut seq = Vec::with_capacity(indices.len() * cols);
        let mut starts = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            seq.extend_from_slice(self.sequences.row(i));
            starts.extend_from_slice(self.word_starts.row(i));
        }
        Ok(Self {
            sequences: Grid::new(indices.len(), cols, seq)?,
            word_starts: Grid::new(indices.len(), cols, starts)?,
        })
    }
}

/// Concatenates documents with one DOC token between neighbours and cuts the
/// stream into rows of `seq_len`, dropping the short tail.
pub fn pack_sequences(docs: &[Encoding], seq_len: usize) -> Result<PackedDataset> {
    if seq_len < 2 {
        return Err(contract(format!(
            "packing needs seq_len >= 2, got {seq_len}"
        )));
    }
    let mut ids = Vec::new();
    let mut starts = Vec::new();
    for (i, doc) in docs.iter().filter(|d| !d.ids.is_empty()).enumerate() {
        if i > 0 {
            ids.push(special::DOC);
            starts.push(true);
        }
        ids.extend_from_slice(&doc.ids);
        starts.extend_from_slice(&doc.word_starts);
    }
    let rows = ids.len() / seq_len;
    ids.truncate(rows * seq_len);
    starts.truncate(rows * seq_len);
    Ok(PackedDataset {
        sequences: Grid::new(rows, seq_len, ids)?,
        word_starts: Grid::new(rows, seq_len, starts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(ids: &[u32]) -> Encoding {
        Encoding {
            ids: ids.to_vec(),
            word_starts: ids.iter().map(|&i| i % 2 == 0).collect(),
        }
    }

    #[test]
    fn greedy_rows_drop_tail() {
        let p = pack_sequences(&[doc(&(10..20).collect::<Vec<_>>())], 4).unwrap();
        assert_eq!(p.rows(), 2);
        assert_eq!(p.sequences.row(1), &[14, 15, 16, 17]);
    }

    #[test]
    fn one_doc_token_between_documents() {
        let p = pack_sequences(&[doc(&[5, 6, 7]), doc(&[8, 9, 10, 11])], 4).unwrap();
        assert_eq!(p.sequences.data(), &[5, 6, 7, special::DOC, 8, 9, 10, 11]);
        assert_eq!(
            p.sequences
                .data()
                .iter()
                .filter(|&&t| t == special::DOC)
                .count(),
            1
        );
        assert!(p.word_starts.row(0)[3]);
    }

    #[test]
    fn seq_len_too_small() {
        assert!(pack_sequences(&[doc(&[5, 6])], 1).is_err());
    }

    proptest! {
        #[test]
        fn packed_token_count(
            docs in proptest::collection::vec(proptest::collection::vec(4u32..50, 0..30), 0..8),
            seq_len in 2usize..9,
        ) {
            let encoded: Vec<Encoding> = docs.iter().map(|d| doc(d)).collect();
            let nonempty = docs.iter().filter(|d| !d.is_empty()).count();
            let stream = docs.iter().map(Vec::len).sum::<usize>() + nonempty.saturating_sub(1);
            let p = pack_sequences(&encoded, seq_len).unwrap();
            prop_assert_eq!(p.sequences.data().len(), stream / seq_len * seq_len);
            prop_assert!(!p.sequences.data().contains(&special::PAD));
            let docs_seen = p.sequences.data().iter().filter(|&&t| t == special::DOC).count();
            prop_assert!(docs_seen <= nonempty.saturating_sub(1));
        }
    }
}
