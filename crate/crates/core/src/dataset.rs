//! User interaction sequences and the leave-last-out split.

use std::fmt::Write as _;
use std::path::Path;

use crate::artifact::{write_atomic, Digest};
use crate::error::{Error, Result};

/// Per-user item sequences, earliest interaction first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionDataset {
    sequences: Vec<Vec<u32>>,
    num_items: usize,
}

impl InteractionDataset {
    /// Every id must be below `num_items`; empty sequences are rejected.
    pub fn new(sequences: Vec<Vec<u32>>, num_items: usize) -> Result<Self> {
        for (user, seq) in sequences.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::data(format!("user {user} has an empty sequence")));
            }
            if let Some(&bad) = seq.iter().find(|&&i| i as usize >= num_items) {
                return Err(Error::data(format!(
                    "user {user}: item {bad} outside catalog of {num_items}"
                )));
            }
        }
        Ok(InteractionDataset {
            sequences,
            num_items,
        })
    }

    /// Parses the line format: one user per line, whitespace-separated item ids.
    /// Blank lines are skipped.
    pub fn parse(text: &str, num_items: usize) -> Result<Self> {
        let mut sequences = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let seq = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<u32>().map_err(|_| {
                        Error::data(format!("line {}: bad item id {tok:?}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            sequences.push(seq);
        }
        Self::new(sequences, num_items)
    }

    pub fn load(path: &Path, num_items: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, num_items)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for seq in &self.sequences {
            for (i, item) in seq.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{item}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn num_users(&self) -> usize {
        self.sequences.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_interactions(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn digest(&self) -> u64 {
        let mut h = Digest::new();
        h.str("dataset").u64(self.num_items as u64);
        for seq in &self.sequences {
            h.u64(seq.len() as u64);
            for &i in seq {
                h.bytes(&i.to_le_bytes());
            }
        }
        h.finish()
    }
}

/// One supervised prediction: a history and the item that followed it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub user: usize,
    pub history: Vec<u32>,
    pub target: u32,
}

/// Leave-last-out views of a dataset.
#[derive(Clone, Debug, Default)]
pub struct Split {
    /// Per retained user, the sequence without its last two items.
    pub train: Vec<Vec<u32>>,
    /// Second-to-last item given everything before it.
    pub valid: Vec<Query>,
    /// Last item given everything before it.
    pub test: Vec<Query>,
    /// Users dropped because their sequence is shorter than three.
    pub excluded: usize,
}

impl Split {
    /// Training pairs: every position `t >= 1` of each train prefix predicts item `t`
    /// from the items before it.
    pub fn train_pairs(&self) -> Vec<(usize, usize, usize)> {
        let mut pairs = Vec::new();
        for (u, seq) in self.train.iter().enumerate() {
            for (t, &item) in seq.iter().enumerate().skip(1) {
                pairs.push((u, t, item as usize));
            }
        }
        pairs
    }

    /// How often each item appears anywhere in the training prefixes.
    pub fn train_frequency(&self, num_items: usize) -> Vec<u32> {
        let mut freq = vec![0u32; num_items];
        for seq in &self.train {
            for &i in seq {
                freq[i as usize] += 1;
            }
        }
        freq
    }
}

pub fn split_leave_last_out(dataset: &InteractionDataset) -> Split {
    let mut split = Split::default();
    for (user, seq) in dataset.sequences().iter().enumerate() {
        let n = seq.len();
        if n < 3 {
            split.excluded += 1;
            continue;
        }
        split.train.push(seq[..n - 2].to_vec());
        split.valid.push(Query {
            user,
            history: seq[..n - 2].to_vec(),
            target: seq[n - 2],
        });
        split.test.push(Query {
            user,
            history: seq[..n - 1].to_vec(),
            target: seq[n - 1],
        });
    }
    if split.excluded > 0 {
        log::warn!(
            "leave-last-out split excluded {} users with fewer than 3 interactions",
            split.excluded
        );
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_item_sequence() {
        let ds = InteractionDataset::new(vec![vec![0, 1, 2]], 3).unwrap();
        let split = split_leave_last_out(&ds);
        assert_eq!(split.train, vec![vec![0]]);
        assert_eq!(
            split.valid,
            vec![Query {
                user: 0,
                history: vec![0],
                target: 1
            }]
        );
        assert_eq!(
            split.test,
            vec![Query {
                user: 0,
                history: vec![0, 1],
                target: 2
            }]
        );
        assert!(split.train_pairs().is_empty());
    }

    #[test]
    fn short_sequences_are_excluded() {
        let ds = InteractionDataset::new(vec![vec![0, 1], vec![1, 2, 0, 1], vec![2]], 3).unwrap();
        let split = split_leave_last_out(&ds);
        assert_eq!(split.excluded, 2);
        assert_eq!(split.test.len(), 1);
        assert_eq!(split.test[0].user, 1);
        assert_eq!(split.train_pairs(), vec![(0, 1, 2)]);
    }

    #[test]
    fn table_one_sized_corpus_has_one_test_target_per_user() {
        // Sports: 18,357 users; lengths chosen so every user is retained.
        let users = 18_357;
        let seqs = (0..users)
            .map(|u| (0..3 + u % 7).map(|i| ((u + i) % 100) as u32).collect())
            .collect();
        let ds = InteractionDataset::new(seqs, 100).unwrap();
        let split = split_leave_last_out(&ds);
        assert_eq!(split.test.len(), users);
        assert_eq!(split.valid.len(), users);
        assert_eq!(split.excluded, 0);
    }

    #[test]
    fn parse_and_render() {
        let ds = InteractionDataset::parse("0 1 2\n\n  3 4   5 \n", 6).unwrap();
        assert_eq!(ds.sequences(), &[vec![0, 1, 2], vec![3, 4, 5]]);
        assert_eq!(ds.to_text(), "0 1 2\n3 4 5\n");
        assert!(InteractionDataset::parse("0 x", 6).is_err());
        assert!(InteractionDataset::parse("0 6", 6).is_err());
    }
}
