//! Bounded-degree proximity graph kept entirely in memory.

mod build;

pub use build::{build_vamana, greedy_search, medoid, robust_prune, BuildParams};

use std::collections::VecDeque;

use crate::bitset::BitSet;
use crate::error::{Error, Result};

/// Flat `n x R` adjacency table with a length byte per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    n: usize,
    max_degree: usize,
    ids: Vec<u32>,
    lens: Vec<u8>,
    entry: u32,
}

/// Largest degree a row length byte can describe.
pub const MAX_DEGREE_LIMIT: usize = u8::MAX as usize;

impl NeighborGraph {
    pub fn from_lists(lists: &[Vec<u32>], max_degree: usize, entry: u32) -> Result<Self> {
        let n = lists.len();
        if max_degree == 0 || max_degree > MAX_DEGREE_LIMIT {
            return Err(Error::param(format!("max degree {max_degree} outside 1..=255")));
        }
        let mut ids = vec![0u32; n * max_degree];
        let mut lens = vec![0u8; n];
        for (i, l) in lists.iter().enumerate() {
            if l.len() > max_degree {
                return Err(Error::format(format!("row {i} exceeds max degree")));
            }
            ids[i * max_degree..i * max_degree + l.len()].copy_from_slice(l);
            lens[i] = l.len() as u8;
        }
        let g = NeighborGraph {
            n,
            max_degree,
            ids,
            lens,
            entry,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_parts(max_degree: usize, ids: Vec<u32>, lens: Vec<u8>, entry: u32) -> Result<Self> {
        if max_degree == 0 || ids.len() != lens.len() * max_degree {
            return Err(Error::format("inconsistent adjacency table shape"));
        }
        let g = NeighborGraph {
            n: lens.len(),
            max_degree,
            ids,
            lens,
            entry,
        };
        g.validate()?;
        Ok(g)
    }

    /// Checks the degree cap, id range, self-loops, duplicates and entry.
    pub fn validate(&self) -> Result<()> {
        if self.n > 0 && self.entry as usize >= self.n {
            return Err(Error::InvalidId {
                id: self.entry,
                n: self.n,
            });
        }
        let mut seen = Vec::with_capacity(self.max_degree);
        for i in 0..self.n {
            if self.lens[i] as usize > self.max_degree {
                return Err(Error::format(format!("row {i} exceeds max degree")));
            }
            seen.clear();
            seen.extend_from_slice(self.neighbors(i));
            if let Some(&bad) = seen.iter().find(|&&v| v as usize >= self.n) {
                return Err(Error::InvalidId { id: bad, n: self.n });
            }
            if seen.contains(&(i as u32)) {
                return Err(Error::format(format!("self-loop at {i}")));
            }
            seen.sort_unstable();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::format(format!("duplicate neighbor in row {i}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        let s = i * self.max_degree;
        &self.ids[s..s + self.lens[i] as usize]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.lens[i] as usize
    }

    pub fn id_table(&self) -> &[u32] {
        &self.ids
    }

    pub fn lens(&self) -> &[u8] {
        &self.lens
    }

    pub fn edge_count(&self) -> usize {
        self.lens.iter().map(|&l| l as usize).sum()
    }

    /// `4 R n` bytes of ids plus one length byte per row.
    pub fn memory_bytes(&self) -> usize {
        4 * self.max_degree * self.n + self.n
    }

    /// Number of nodes reachable from the entry point.
    pub fn reachable_from_entry(&self) -> usize {
        if self.n == 0 {
            return 0;
        }
        let mut seen = BitSet::new(self.n);
        let mut queue = VecDeque::from([self.entry]);
        seen.set(self.entry as usize);
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &u in self.neighbors(v as usize) {
                if seen.insert(u as usize) {
                    count += 1;
                    queue.push_back(u);
                }
            }
        }
        count
    }
}

pub fn indegree_counts(graph: &NeighborGraph) -> Vec<u32> {
    let mut deg = vec![0u32; graph.len()];
    for i in 0..graph.len() {
        for &v in graph.neighbors(i) {
            deg[v as usize] += 1;
        }
    }
    deg
}
