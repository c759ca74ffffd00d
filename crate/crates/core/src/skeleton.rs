//! The motion graph topology shared by the toy renderer and the graph convolution.

use apvg_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// BODY_25 limb pairs.
pub const BODY25_EDGES: [(usize, usize); 24] = [
    (1, 8),
    (1, 2),
    (1, 5),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (8, 9),
    (9, 10),
    (10, 11),
    (8, 12),
    (12, 13),
    (13, 14),
    (1, 0),
    (0, 15),
    (15, 17),
    (0, 16),
    (16, 18),
    (14, 19),
    (19, 20),
    (14, 21),
    (11, 22),
    (22, 23),
    (11, 24),
];

pub const BODY_POINTS: usize = 25;
pub const HAND_POINTS: usize = 21;
/// Body plus both hands.
pub const OPENPOSE_POINTS: usize = BODY_POINTS + 2 * HAND_POINTS;
pub const LEFT_HAND_OFFSET: usize = BODY_POINTS;
pub const RIGHT_HAND_OFFSET: usize = BODY_POINTS + HAND_POINTS;
/// Body index of each wrist.
pub const RIGHT_WRIST: usize = 4;
pub const LEFT_WRIST: usize = 7;

/// Hand edges: five four-joint fingers rooted at the wrist (index 0).
pub fn hand_edges() -> Vec<(usize, usize)> {
    let mut e = Vec::with_capacity(20);
    for finger in 0..5 {
        let base = 1 + finger * 4;
        e.push((0, base));
        for j in 0..3 {
            e.push((base + j, base + j + 1));
        }
    }
    e
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `D^{-1/2} (A + I) D^{-1/2}`
    Symmetric,
    /// `D^{-1} (A + I)`
    Row,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Topology {
    /// 25 body points followed by the left and right hand, hands attached at the wrists.
    OpenPose67,
    Body25,
    /// Path graph `0 - 1 - ... - (P-1)`.
    Chain,
    Explicit(Vec<(usize, usize)>),
}

impl Topology {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "openpose67" => Some(Self::OpenPose67),
            "body25" => Some(Self::Body25),
            "chain" => Some(Self::Chain),
            _ => None,
        }
    }

    fn edges(&self, p: usize) -> Vec<(usize, usize)> {
        match self {
            Topology::OpenPose67 => {
                let mut e = BODY25_EDGES.to_vec();
                for (offset, wrist) in [(LEFT_HAND_OFFSET, LEFT_WRIST), (RIGHT_HAND_OFFSET, RIGHT_WRIST)] {
                    e.push((wrist, offset));
                    e.extend(hand_edges().into_iter().map(|(a, b)| (a + offset, b + offset)));
                }
                e
            }
            Topology::Body25 => BODY25_EDGES.to_vec(),
            Topology::Chain => (1..p).map(|i| (i - 1, i)).collect(),
            Topology::Explicit(e) => e.clone(),
        }
    }
}

/// Undirected skeleton with its normalized, self-looped adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<f64>,
    pub normalization: Normalization,
}

impl SkeletonGraph {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Both directions of every undirected edge, without self-loops, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Row-major `P x P` normalized adjacency.
    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    pub fn adjacency_tensor<T: Scalar>(&self) -> Tensor<T> {
        let p = self.node_count;
        Tensor::from_vec(&[p, p], self.adjacency.iter().map(|&a| T::from_f64(a).unwrap()).collect())
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i, j)).is_ok()
    }
}

pub fn build_skeleton(topology: &Topology, p: usize, norm: Normalization) -> Result<SkeletonGraph> {
    let raw = topology.edges(p);
    for &(a, b) in &raw {
        if a >= p || b >= p {
            return Err(Error::EdgeOutOfRange(a, b, p));
        }
    }
    let mut edges: Vec<(usize, usize)> = raw
        .iter()
        .filter(|(a, b)| a != b)
        .flat_map(|&(a, b)| [(a, b), (b, a)])
        .collect();
    edges.sort_unstable();
    edges.dedup();

    let mut a = vec![0.0f64; p * p];
    for i in 0..p {
        a[i * p + i] = 1.0;
    }
    for &(i, j) in &edges {
        a[i * p + j] = 1.0;
    }
    let degree: Vec<f64> = a.chunks(p).map(|r| r.iter().sum()).collect();
    for i in 0..p {
        for j in 0..p {
            let v = &mut a[i * p + j];
            *v = match norm {
                Normalization::Symmetric => *v / (degree[i].sqrt() * degree[j].sqrt()),
                Normalization::Row => *v / degree[i],
            };
        }
    }
    Ok(SkeletonGraph {
        node_count: p,
        edges,
        adjacency: a,
        normalization: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nz(g: &SkeletonGraph) -> Vec<(usize, usize)> {
        let p = g.node_count();
        (0..p * p)
            .filter(|&k| g.adjacency()[k] != 0.0)
            .map(|k| (k / p, k % p))
            .collect()
    }

    #[test]
    fn three_node_path_has_symmetric_support_and_self_loops() {
        let g = build_skeleton(&Topology::Explicit(vec![(0, 1), (1, 2)]), 3, Normalization::Symmetric).unwrap();
        assert_eq!(
            nz(&g),
            vec![(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2)]
        );
    }

    #[test]
    fn isolated_nodes_give_identity() {
        for norm in [Normalization::Symmetric, Normalization::Row] {
            let g = build_skeleton(&Topology::Explicit(vec![]), 2, norm).unwrap();
            assert_eq!(g.adjacency(), &[1.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn five_chain_row_normalization() {
        let g = build_skeleton(&Topology::Chain, 5, Normalization::Row).unwrap();
        // degrees with self loop: 2, 3, 3, 3, 2
        #[rustfmt::skip]
        let want = [
            1.0 / 2.0, 1.0 / 2.0, 0.0, 0.0, 0.0,
            1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0,
            0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0,
            0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0,
            0.0, 0.0, 0.0, 1.0 / 2.0, 1.0 / 2.0,
        ];
        for (a, b) in g.adjacency().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        for row in g.adjacency().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_normalization_is_symmetric() {
        let g = build_skeleton(&Topology::OpenPose67, OPENPOSE_POINTS, Normalization::Symmetric).unwrap();
        let p = g.node_count();
        for i in 0..p {
            for j in 0..p {
                assert_eq!(g.adjacency()[i * p + j], g.adjacency()[j * p + i]);
            }
        }
        // body (24) + two hands (20 each) + two wrist links, both directions
        assert_eq!(g.edges().len(), 2 * (24 + 2 * 21));
    }

    #[test]
    fn out_of_range_edge_is_named() {
        let err = build_skeleton(&Topology::Explicit(vec![(0, 1), (1, 4)]), 3, Normalization::Row).unwrap_err();
        assert!(matches!(err, Error::EdgeOutOfRange(1, 4, 3)));
        assert!(err.to_string().contains("(1, 4)"));
    }

    #[test]
    fn deterministic() {
        let a = build_skeleton(&Topology::OpenPose67, 67, Normalization::Symmetric).unwrap();
        let b = build_skeleton(&Topology::OpenPose67, 67, Normalization::Symmetric).unwrap();
        let bits = |g: &SkeletonGraph| g.adjacency().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
