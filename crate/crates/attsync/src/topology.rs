//! Undirected-tree interaction graph with a virtual orientation.
//!
//! Edge order comes verbatim from the configuration: the first element of
//! each pair is the head. Edge indices are 0-based internally and 1-based in
//! configs and reports.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::{lit, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("agent index {0} out of range 1..={1}")]
    IndexOutOfRange(usize, usize),
    #[error("edge {0} is a self-loop")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) appears more than once")]
    DuplicateEdge(usize, usize),
    #[error("edge list contains a cycle")]
    Cycle,
    #[error("graph is disconnected")]
    Disconnected,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// One end of an oriented edge as seen from an agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeEnd {
    pub edge: usize,
    pub neighbor: usize,
    /// True when the agent is the head of this edge.
    pub head: bool,
}

/// Undirected tree of `n` agents with an oriented edge list of length n - 1.
#[derive(Debug, Clone)]
pub struct OrientedTree {
    n: usize,
    edges: Vec<(usize, usize)>,
    heads: Vec<Vec<usize>>,
    tails: Vec<Vec<usize>>,
    incident: Vec<Vec<EdgeEnd>>,
}

impl OrientedTree {
    /// Builds and validates a tree from 1-based (head, tail) pairs.
    pub fn build(n: usize, edge_list: &[(usize, usize)]) -> Result<Self, TopologyError> {
        let mut edges = Vec::with_capacity(edge_list.len());
        let mut seen = std::collections::HashSet::new();
        for &(h, t) in edge_list {
            if h == 0 || h > n {
                return Err(TopologyError::IndexOutOfRange(h, n));
            }
            if t == 0 || t > n {
                return Err(TopologyError::IndexOutOfRange(t, n));
            }
            if h == t {
                return Err(TopologyError::SelfLoop(h));
            }
            let key = (h.min(t), h.max(t));
            if !seen.insert(key) {
                return Err(TopologyError::DuplicateEdge(h, t));
            }
            edges.push((h - 1, t - 1));
        }

        // Union-find: a repeated component merge is a cycle.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(h, t) in &edges {
            let (a, b) = (find(&mut parent, h), find(&mut parent, t));
            if a == b {
                return Err(TopologyError::Cycle);
            }
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        if (0..n).any(|i| find(&mut parent, i) != root) || edges.len() != n - 1 {
            return Err(TopologyError::Disconnected);
        }

        let mut heads = vec![Vec::new(); n];
        let mut tails = vec![Vec::new(); n];
        let mut incident = vec![Vec::new(); n];
        for (k, &(h, t)) in edges.iter().enumerate() {
            heads[h].push(k);
            tails[t].push(k);
            incident[h].push(EdgeEnd {
                edge: k,
                neighbor: t,
                head: true,
            });
            incident[t].push(EdgeEnd {
                edge: k,
                neighbor: h,
                head: false,
            });
        }
        Ok(OrientedTree {
            n,
            edges,
            heads,
            tails,
            incident,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// 0-based (head, tail) of edge `k`.
    pub fn edge(&self, k: usize) -> (usize, usize) {
        self.edges[k]
    }

    /// Edge indices where agent `i` (0-based) is the head.
    pub fn heads_of(&self, i: usize) -> &[usize] {
        &self.heads[i]
    }

    /// Edge indices where agent `i` is the tail.
    pub fn tails_of(&self, i: usize) -> &[usize] {
        &self.tails[i]
    }

    /// (edge, neighbor, side) triples for agent `i`.
    pub fn incident(&self, i: usize) -> &[EdgeEnd] {
        &self.incident[i]
    }

    /// Dense N x M incidence matrix with entries +1 / -1 / 0.
    pub fn incidence<S: Real>(&self) -> DMatrix<S> {
        let mut h = DMatrix::zeros(self.n, self.edges.len());
        for (k, &(head, tail)) in self.edges.iter().enumerate() {
            h[(head, k)] = S::one();
            h[(tail, k)] = -S::one();
        }
        h
    }

    /// Graph Laplacian L = H H'.
    pub fn laplacian<S: Real>(&self) -> DMatrix<S> {
        let h = self.incidence::<S>();
        &h * h.transpose()
    }

    /// Applies the rotation-weighted incidence transpose: per edge k with
    /// head i and tail j, returns `w_i - Rbar_k' w_j`.
    pub fn hbar_apply<S: Real>(
        &self,
        edge_rotations: &[Matrix3<S>],
        w: &[Vector3<S>],
    ) -> Result<Vec<Vector3<S>>, TopologyError> {
        if edge_rotations.len() != self.edges.len() {
            return Err(TopologyError::LengthMismatch {
                expected: self.edges.len(),
                got: edge_rotations.len(),
            });
        }
        if w.len() != self.n {
            return Err(TopologyError::LengthMismatch {
                expected: self.n,
                got: w.len(),
            });
        }
        Ok(self
            .edges
            .iter()
            .zip(edge_rotations)
            .map(|(&(head, tail), rbar)| w[head] - rbar.transpose() * w[tail])
            .collect())
    }

    /// Adjoint of [`Self::hbar_apply`]: agent i receives `+v_k` over head
    /// edges and `-Rbar_k v_k` over tail edges.
    pub fn hbar_premultiply<S: Real>(
        &self,
        edge_rotations: &[Matrix3<S>],
        v: &[Vector3<S>],
    ) -> Result<Vec<Vector3<S>>, TopologyError> {
        if edge_rotations.len() != self.edges.len() {
            return Err(TopologyError::LengthMismatch {
                expected: self.edges.len(),
                got: edge_rotations.len(),
            });
        }
        if v.len() != self.edges.len() {
            return Err(TopologyError::LengthMismatch {
                expected: self.edges.len(),
                got: v.len(),
            });
        }
        let mut out = vec![Vector3::zeros(); self.n];
        for (k, &(head, tail)) in self.edges.iter().enumerate() {
            out[head] += v[k];
            out[tail] -= edge_rotations[k] * v[k];
        }
        Ok(out)
    }

    /// Dense 3N x 3M form of the rotation-weighted incidence matrix.
    pub fn hbar_dense<S: Real>(&self, edge_rotations: &[Matrix3<S>]) -> DMatrix<S> {
        let mut m = DMatrix::zeros(3 * self.n, 3 * self.edges.len());
        for (k, &(head, tail)) in self.edges.iter().enumerate() {
            m.view_mut((3 * head, 3 * k), (3, 3))
                .copy_from(&Matrix3::identity());
            m.view_mut((3 * tail, 3 * k), (3, 3))
                .copy_from(&(-edge_rotations[k]));
        }
        m
    }
}

/// The 7-agent tree used by the bundled scenarios.
pub fn seven_agent_edges() -> Vec<(usize, usize)> {
    vec![(1, 2), (2, 3), (3, 4), (4, 5), (3, 6), (6, 7)]
}

#[allow(dead_code)]
fn _lit_keepalive() {
    let _: f64 = lit(0.0);
}
