//! Ratcliff/Obershelp sequence matching.
//!
//! Finds the longest contiguous matching block, then recurses on the
//! pieces to its left and right. No junk heuristics are applied, so the
//! result depends only on element equality.

use std::collections::HashMap;
use std::hash::Hash;
use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Equal,
    Replace,
    Insert,
    Delete,
}

/// One alignment opcode with half-open ranges into both sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opcode {
    pub kind: OpKind,
    pub original_range: Range<usize>,
    pub corrupted_range: Range<usize>,
}

/// A matching block `a[a_start..a_start+len] == b[b_start..b_start+len]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub a_start: usize,
    pub b_start: usize,
    pub len: usize,
}

pub struct SequenceMatcher<'a, T> {
    a: &'a [T],
    b: &'a [T],
    b2j: HashMap<&'a T, Vec<usize>>,
}

impl<'a, T: Eq + Hash> SequenceMatcher<'a, T> {
    pub fn new(a: &'a [T], b: &'a [T]) -> Self {
        let mut b2j: HashMap<&'a T, Vec<usize>> = HashMap::new();
        for (j, item) in b.iter().enumerate() {
            b2j.entry(item).or_default().push(j);
        }
        SequenceMatcher { a, b, b2j }
    }

    /// Longest matching block in `a[alo..ahi]` x `b[blo..bhi]`.
    ///
    /// Ties go to the block starting earliest in `a`, then earliest in `b`.
    pub fn find_longest_match(&self, alo: usize, ahi: usize, blo: usize, bhi: usize) -> Match {
        let mut best = Match {
            a_start: alo,
            b_start: blo,
            len: 0,
        };
        // run[j + 1] is the length of the match ending at (i - 1, j); only
        // touched slots are cleared between rows
        let mut prev = vec![0usize; self.b.len() + 1];
        let mut cur = vec![0usize; self.b.len() + 1];
        let (mut prev_touched, mut cur_touched) = (Vec::new(), Vec::new());
        for i in alo..ahi {
            if let Some(js) = self.b2j.get(&self.a[i]) {
                for &j in js {
                    if j < blo {
                        continue;
                    }
                    if j >= bhi {
                        break;
                    }
                    let k = prev[j] + 1;
                    cur[j + 1] = k;
                    cur_touched.push(j + 1);
                    if k > best.len {
                        best = Match {
                            a_start: i + 1 - k,
                            b_start: j + 1 - k,
                            len: k,
                        };
                    }
                }
            }
            for &t in &prev_touched {
                prev[t] = 0;
            }
            prev_touched.clear();
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut prev_touched, &mut cur_touched);
        }
        best
    }

    /// All matching blocks in increasing order, adjacent blocks merged.
    pub fn matching_blocks(&self) -> Vec<Match> {
        let mut queue = vec![(0, self.a.len(), 0, self.b.len())];
        let mut blocks = Vec::new();
        while let Some((alo, ahi, blo, bhi)) = queue.pop() {
            let m = self.find_longest_match(alo, ahi, blo, bhi);
            if m.len == 0 {
                continue;
            }
            blocks.push(m);
            if alo < m.a_start && blo < m.b_start {
                queue.push((alo, m.a_start, blo, m.b_start));
            }
            if m.a_start + m.len < ahi && m.b_start + m.len < bhi {
                queue.push((m.a_start + m.len, ahi, m.b_start + m.len, bhi));
            }
        }
        blocks.sort_by_key(|m| (m.a_start, m.b_start));

        let mut merged: Vec<Match> = Vec::with_capacity(blocks.len());
        for m in blocks {
            match merged.last_mut() {
                Some(last) if last.a_start + last.len == m.a_start && last.b_start + last.len == m.b_start => {
                    last.len += m.len;
                }
                _ => merged.push(m),
            }
        }
        merged
    }

    pub fn opcodes(&self) -> Vec<Opcode> {
        let mut ops = Vec::new();
        let (mut i, mut j) = (0, 0);
        let mut blocks = self.matching_blocks();
        blocks.push(Match {
            a_start: self.a.len(),
            b_start: self.b.len(),
            len: 0,
        });
        for m in blocks {
            let kind = match (i < m.a_start, j < m.b_start) {
                (true, true) => Some(OpKind::Replace),
                (true, false) => Some(OpKind::Delete),
                (false, true) => Some(OpKind::Insert),
                (false, false) => None,
            };
            if let Some(kind) = kind {
                ops.push(Opcode {
                    kind,
                    original_range: i..m.a_start,
                    corrupted_range: j..m.b_start,
                });
            }
            i = m.a_start + m.len;
            j = m.b_start + m.len;
            if m.len > 0 {
                ops.push(Opcode {
                    kind: OpKind::Equal,
                    original_range: m.a_start..i,
                    corrupted_range: m.b_start..j,
                });
            }
        }
        ops
    }

    /// `2M / (len(a) + len(b))`; 1.0 when both are empty.
    pub fn ratio(&self) -> f64 {
        let matches: usize = self.matching_blocks().iter().map(|m| m.len).sum();
        let total = self.a.len() + self.b.len();
        if total == 0 {
            1.0
        } else {
            2.0 * matches as f64 / total as f64
        }
    }
}

/// Character-level similarity ratio of two strings.
pub fn char_ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    SequenceMatcher::new(&a, &b).ratio()
}
