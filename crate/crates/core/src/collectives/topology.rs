use std::fmt;

use super::CollectiveError;

/// Reduction topology of a simulated cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    Ring {
        nodes: usize,
    },
    /// Groups of `group_size` consecutive node ids; the lowest id in each
    /// group is its master.
    Hierarchical {
        nodes: usize,
        group_size: usize,
    },
}

impl Topology {
    pub fn ring(nodes: usize) -> Result<Self, CollectiveError> {
        if nodes == 0 {
            return Err(CollectiveError::Topology(
                "ring needs at least one node".into(),
            ));
        }
        Ok(Topology::Ring { nodes })
    }

    pub fn hierarchical(nodes: usize, group_size: usize) -> Result<Self, CollectiveError> {
        if nodes == 0 || group_size == 0 {
            return Err(CollectiveError::Topology(
                "node count and group size must be positive".into(),
            ));
        }
        if !nodes.is_multiple_of(group_size) {
            return Err(CollectiveError::Topology(format!(
                "group size {group_size} does not divide node count {nodes}"
            )));
        }
        Ok(Topology::Hierarchical { nodes, group_size })
    }

    pub fn nodes(self) -> usize {
        match self {
            Topology::Ring { nodes } | Topology::Hierarchical { nodes, .. } => nodes,
        }
    }

    /// Group size; a ring behaves like groups of one.
    pub fn group_size(self) -> usize {
        match self {
            Topology::Ring { .. } => 1,
            Topology::Hierarchical { group_size, .. } => group_size,
        }
    }

    pub fn step_count(self) -> usize {
        step_count(self)
    }

    /// Short label used in reports.
    pub fn kind(self) -> &'static str {
        match self {
            Topology::Ring { .. } => "ring",
            Topology::Hierarchical { .. } => "hierarchical",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Ring { nodes } => write!(f, "Ring({nodes})"),
            Topology::Hierarchical { nodes, group_size } => {
                write!(f, "Hierarchical({nodes},{group_size})")
            }
        }
    }
}

/// Communication steps of one all-reduce: `2(p-1)` for a ring and
/// `4(k-1) + 2(p/k - 1)` for hierarchical groups of `k`.
pub fn step_count(t: Topology) -> usize {
    match t {
        Topology::Ring { nodes } => 2 * (nodes - 1),
        Topology::Hierarchical { nodes, group_size } => {
            4 * (group_size - 1) + 2 * (nodes / group_size - 1)
        }
    }
}

/// Splits `len` into `parts` contiguous chunks; the first `len % parts` get one extra element.
pub(crate) fn chunk_bounds(len: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let base = len / parts;
    let extra = len % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let size = base + (i < extra) as usize;
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}
