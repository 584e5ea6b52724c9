//! Graphs on which actions, clique potentials and Markov checks are defined.
//!
//! Two families are supported: two-dimensional square lattices (periodic or
//! open boundaries) and complete bipartite visible/hidden graphs. Site `(x, y)`
//! of a square lattice has vertex index `y * width + x`. Edges are stored once
//! each, with the smaller vertex index first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Open,
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "open" => Ok(Boundary::Open),
            other => Err(Error::InvalidLattice(format!("unknown boundary `{other}`"))),
        }
    }
}

/// Serializable description from which a [`LatticeGraph`] is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GraphDescriptor {
    Square { width: usize, boundary: Boundary },
    Bipartite { visible: usize, hidden: usize },
}

/// An undirected edge `(i, j)` with `i < j`.
pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGraph {
    descriptor: GraphDescriptor,
    vertex_count: usize,
    nn_edges: Vec<Edge>,
    nnn_edges: Vec<Edge>,
    // per vertex: (edge index, other endpoint)
    nn_incident: Vec<Vec<(usize, usize)>>,
    nnn_incident: Vec<Vec<(usize, usize)>>,
}

impl LatticeGraph {
    /// Square lattice of `width x width` sites.
    ///
    /// Periodic lattices need `width >= 3`, otherwise wrap-around would
    /// duplicate edges.
    pub fn square(width: usize, boundary: Boundary) -> Result<Self> {
        if width < 2 {
            return Err(Error::InvalidLattice(format!(
                "square lattice width must be at least 2, got {width}"
            )));
        }
        if boundary == Boundary::Periodic && width < 3 {
            return Err(Error::InvalidLattice(
                "periodic square lattice needs width >= 3".into(),
            ));
        }
        let l = width;
        let idx = |x: usize, y: usize| y * l + x;
        // Offset a coordinate by -1, 0 or +1, honouring the boundary.
        let shift = |c: usize, d: isize| -> Option<usize> {
            let v = c as isize + d;
            match boundary {
                Boundary::Periodic => Some(v.rem_euclid(l as isize) as usize),
                Boundary::Open => (0..l as isize).contains(&v).then_some(v as usize),
            }
        };

        let mut nn = Vec::new();
        let mut nnn = Vec::new();
        for y in 0..l {
            for x in 0..l {
                let here = idx(x, y);
                for (dx, dy) in [(1, 0), (0, 1)] {
                    if let (Some(nx), Some(ny)) = (shift(x, dx), shift(y, dy)) {
                        nn.push(ordered(here, idx(nx, ny)));
                    }
                }
                for (dx, dy) in [(1, 1), (1, -1)] {
                    if let (Some(nx), Some(ny)) = (shift(x, dx), shift(y, dy)) {
                        nnn.push(ordered(here, idx(nx, ny)));
                    }
                }
            }
        }
        Ok(Self::from_parts(
            GraphDescriptor::Square { width, boundary },
            l * l,
            nn,
            nnn,
        ))
    }

    /// Complete bipartite graph; visibles are `0..visible`, hiddens follow.
    pub fn bipartite(visible: usize, hidden: usize) -> Result<Self> {
        if visible == 0 || hidden == 0 {
            return Err(Error::InvalidLattice(format!(
                "bipartite graph needs non-zero layer sizes, got ({visible}, {hidden})"
            )));
        }
        let mut nn = Vec::with_capacity(visible * hidden);
        for i in 0..visible {
            for j in 0..hidden {
                nn.push((i, visible + j));
            }
        }
        Ok(Self::from_parts(
            GraphDescriptor::Bipartite { visible, hidden },
            visible + hidden,
            nn,
            Vec::new(),
        ))
    }

    pub fn from_descriptor(descriptor: GraphDescriptor) -> Result<Self> {
        match descriptor {
            GraphDescriptor::Square { width, boundary } => Self::square(width, boundary),
            GraphDescriptor::Bipartite { visible, hidden } => Self::bipartite(visible, hidden),
        }
    }

    fn from_parts(
        descriptor: GraphDescriptor,
        vertex_count: usize,
        nn_edges: Vec<Edge>,
        nnn_edges: Vec<Edge>,
    ) -> Self {
        let incident = |edges: &[Edge]| {
            let mut inc = vec![Vec::new(); vertex_count];
            for (e, &(i, j)) in edges.iter().enumerate() {
                inc[i].push((e, j));
                inc[j].push((e, i));
            }
            inc
        };
        Self {
            descriptor,
            vertex_count,
            nn_incident: incident(&nn_edges),
            nnn_incident: incident(&nnn_edges),
            nn_edges,
            nnn_edges,
        }
    }

    pub fn descriptor(&self) -> GraphDescriptor {
        self.descriptor
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn is_square(&self) -> bool {
        matches!(self.descriptor, GraphDescriptor::Square { .. })
    }

    /// Lattice width for square graphs.
    pub fn width(&self) -> Option<usize> {
        match self.descriptor {
            GraphDescriptor::Square { width, .. } => Some(width),
            GraphDescriptor::Bipartite { .. } => None,
        }
    }

    pub fn nn_edges(&self) -> &[Edge] {
        &self.nn_edges
    }

    pub fn nnn_edges(&self) -> &[Edge] {
        &self.nnn_edges
    }

    /// `(edge index, neighbour)` pairs of the nearest-neighbour edges touching `i`.
    pub fn nn_incident(&self, i: usize) -> &[(usize, usize)] {
        &self.nn_incident[i]
    }

    pub fn nnn_incident(&self, i: usize) -> &[(usize, usize)] {
        &self.nnn_incident[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.nn_incident[i].len()
    }

    pub fn check_vertex(&self, i: usize) -> Result<()> {
        if i < self.vertex_count {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: i,
                count: self.vertex_count,
            })
        }
    }

    /// Sorted nearest-neighbour set of vertex `i`.
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>> {
        self.check_vertex(i)?;
        let mut out: Vec<usize> = self.nn_incident[i].iter().map(|&(_, j)| j).collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Maximal cliques of the nearest-neighbour graph (Bron–Kerbosch with pivoting).
    ///
    /// Each clique is sorted; cliques are ordered lexicographically. For
    /// triangle-free graphs this is exactly the edge set.
    pub fn maximal_cliques(&self) -> Vec<Vec<usize>> {
        let adj: Vec<Vec<usize>> = (0..self.vertex_count)
            .map(|i| self.neighbors(i).expect("in range"))
            .collect();
        let mut out = Vec::new();
        let mut r = Vec::new();
        let p: Vec<usize> = (0..self.vertex_count).collect();
        bron_kerbosch(&adj, &mut r, p, Vec::new(), &mut out);
        for c in &mut out {
            c.sort_unstable();
        }
        out.sort();
        out
    }

    /// True if some three vertices are pairwise nearest neighbours.
    pub fn has_triangle(&self) -> bool {
        self.nn_edges.iter().any(|&(i, j)| {
            let ni = self.neighbors(i).expect("in range");
            self.nn_incident[j].iter().any(|&(_, k)| ni.binary_search(&k).is_ok())
        })
    }
}

fn ordered(i: usize, j: usize) -> Edge {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

fn bron_kerbosch(
    adj: &[Vec<usize>],
    r: &mut Vec<usize>,
    p: Vec<usize>,
    x: Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if p.is_empty() {
        if x.is_empty() {
            out.push(r.clone());
        }
        return;
    }
    let contains = |v: usize, u: usize| adj[v].binary_search(&u).is_ok();
    let pivot = p
        .iter()
        .chain(x.iter())
        .copied()
        .max_by_key(|&u| p.iter().filter(|&&v| contains(u, v)).count())
        .expect("non-empty");
    let candidates: Vec<usize> = p.iter().copied().filter(|&v| !contains(pivot, v)).collect();
    let mut p = p;
    let mut x = x;
    for v in candidates {
        r.push(v);
        let np = p.iter().copied().filter(|&u| contains(v, u)).collect();
        let nx = x.iter().copied().filter(|&u| contains(v, u)).collect();
        bron_kerbosch(adj, r, np, nx, out);
        r.pop();
        p.retain(|&u| u != v);
        x.push(v);
    }
}
