//! Kinematic-tree representation and the derived artifacts that drive both
//! convolutions: the three directed subgraph adjacencies and the
//! (grandparent, parent, joint) chain table.

use crate::error::{Error, Result};
use crate::num::{lit, Scalar};
use std::path::Path;

/// Bundled 32-joint H3.6M skeleton description.
pub const H36M_SKELETON: &str = include_str!("../assets/h36m_skeleton.txt");

#[derive(Clone, Debug)]
pub struct Skeleton {
    joint_names: Vec<String>,
    parent: Vec<usize>,
    root: usize,
    left_right: Vec<usize>,
}

impl Skeleton {
    /// Validate and build. The root is the unique joint that is its own
    /// parent; every other joint must reach it, and the mirror map must be
    /// an involution.
    pub fn new(joint_names: Vec<String>, parent: Vec<usize>, left_right: Vec<usize>) -> Result<Self> {
        let n = joint_names.len();
        if parent.len() != n || left_right.len() != n || n == 0 {
            return Err(Error::Validation(
                "skeleton: joint, parent, and mirror lists must be non-empty and equal-length"
                    .into(),
            ));
        }
        for (j, &p) in parent.iter().enumerate() {
            if p >= n {
                return Err(Error::Validation(format!(
                    "skeleton: joint {j} has out-of-range parent {p}"
                )));
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&j| parent[j] == j).collect();
        if roots.len() != 1 {
            return Err(Error::Validation(format!(
                "skeleton: expected exactly one root (self-parent joint), found {:?}",
                roots
            )));
        }
        let root = roots[0];
        for j in 0..n {
            let mut cur = j;
            for _ in 0..n {
                if cur == root {
                    break;
                }
                cur = parent[cur];
            }
            if cur != root {
                return Err(Error::Validation(format!(
                    "skeleton: joint {j} does not reach the root (cycle in parent map)"
                )));
            }
        }
        for (j, &m) in left_right.iter().enumerate() {
            if m >= n {
                return Err(Error::Validation(format!(
                    "skeleton: joint {j} has out-of-range mirror {m}"
                )));
            }
            if left_right[m] != j {
                return Err(Error::Config(format!(
                    "skeleton: mirror map is not an involution at joint {j}"
                )));
            }
        }
        Ok(Skeleton {
            joint_names,
            parent,
            root,
            left_right,
        })
    }

    /// Parse the plain-text description: one joint per line,
    /// `index name parent_index mirror_index`, `#` comments.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut rows: Vec<(usize, String, usize, usize)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("expected 4 columns, got {}", parts.len()),
                });
            }
            let parse_idx = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::Parse {
                    path: origin.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("bad index '{s}'"),
                })
            };
            rows.push((
                parse_idx(parts[0])?,
                parts[1].to_string(),
                parse_idx(parts[2])?,
                parse_idx(parts[3])?,
            ));
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: 0,
                msg: "no joints".into(),
            });
        }
        let n = rows.len();
        let mut names = vec![String::new(); n];
        let mut parent = vec![usize::MAX; n];
        let mut mirror = vec![usize::MAX; n];
        for (idx, name, p, m) in rows {
            if idx >= n || parent[idx] != usize::MAX {
                return Err(Error::Validation(format!(
                    "skeleton: joint index {idx} out of range or duplicated"
                )));
            }
            names[idx] = name;
            parent[idx] = p;
            mirror[idx] = m;
        }
        Skeleton::new(names, parent, mirror)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Skeleton::parse(&text, path)
    }

    /// The bundled H3.6M 32-joint skeleton, rooted at the hip.
    pub fn h36m() -> Self {
        Skeleton::parse(H36M_SKELETON, Path::new("<bundled h36m>"))
            .expect("bundled skeleton is valid")
    }

    pub fn n_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, j: usize) -> usize {
        self.parent[j]
    }

    pub fn grandparent(&self, j: usize) -> usize {
        self.parent[self.parent[j]]
    }

    pub fn mirror(&self, j: usize) -> usize {
        self.left_right[j]
    }

    pub fn parents(&self) -> &[usize] {
        &self.parent
    }

    /// Per-joint spatial axis of the ST-Conv: `[grandparent, parent, j]`.
    /// The root self-pads, so chains are length 3 everywhere.
    pub fn chain_table(&self) -> Vec<[usize; 3]> {
        (0..self.n_joints())
            .map(|j| [self.grandparent(j), self.parent(j), j])
            .collect()
    }

    pub fn subgraphs(&self) -> SubgraphSet {
        SubgraphSet::build(self)
    }
}

/// The three directed subgraphs of the graph convolution.
///
/// `A_0` carries the edges linking a joint to its immediate children
/// (`A_0[j][u] = 1` iff `j = parent(u)`), `A_1` is its transpose, and
/// `A_2` is the identity (self-loops).
#[derive(Clone, Debug)]
pub struct SubgraphSet {
    n: usize,
    adjacency: [Vec<u8>; 3],
}

impl SubgraphSet {
    pub fn build(s: &Skeleton) -> Self {
        let n = s.n_joints();
        let mut a0 = vec![0u8; n * n];
        let mut a1 = vec![0u8; n * n];
        let mut a2 = vec![0u8; n * n];
        for u in 0..n {
            let p = s.parent(u);
            if p != u {
                a0[p * n + u] = 1;
                a1[u * n + p] = 1;
            }
            a2[u * n + u] = 1;
        }
        SubgraphSet {
            n,
            adjacency: [a0, a1, a2],
        }
    }

    pub fn n_joints(&self) -> usize {
        self.n
    }

    pub fn adjacency(&self, i: usize) -> &[u8] {
        &self.adjacency[i]
    }

    /// Row degree of subgraph `i` at joint `j`.
    pub fn degree(&self, i: usize, j: usize) -> usize {
        self.adjacency[i][j * self.n..(j + 1) * self.n]
            .iter()
            .map(|&v| v as usize)
            .sum()
    }

    /// Row-normalized aggregation matrix `D_i^{-1} A_i`, row-major.
    /// Zero-degree rows normalize to zero.
    pub fn normalized<T: Scalar>(&self, i: usize) -> Vec<T> {
        let n = self.n;
        let mut out = vec![T::zero(); n * n];
        for j in 0..n {
            let deg = self.degree(i, j);
            if deg == 0 {
                continue;
            }
            let inv = T::one() / lit::<T>(deg as f64);
            for u in 0..n {
                if self.adjacency[i][j * n + u] != 0 {
                    out[j * n + u] = inv;
                }
            }
        }
        out
    }

    /// Swap the roles of the two directed subgraphs (edge-orientation
    /// config flag); self-loops are unaffected.
    pub fn swapped(&self) -> Self {
        SubgraphSet {
            n: self.n,
            adjacency: [
                self.adjacency[1].clone(),
                self.adjacency[0].clone(),
                self.adjacency[2].clone(),
            ],
        }
    }

    pub fn edge_count(&self, i: usize) -> usize {
        self.adjacency[i].iter().map(|&v| v as usize).sum()
    }
}
