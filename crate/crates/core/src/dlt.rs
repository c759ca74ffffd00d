//! Differentiable landmark-to-heatmap transform.
//!
//! Every keypoint contributes a separable tent kernel
//! `alpha * max(0, 1 - |i - x|) * max(0, 1 - |j - y|)` to grid cell `(i, j)`,
//! where `i` runs over the width and `j` over the height. The map is
//! piecewise linear in the coordinates; at the kinks (`|i - x|` equal to 0
//! or 1) the derivative is taken as 0.

use apvg_tensor::{CustomOp, Graph, Scalar, Tensor, Var};

use crate::types::{Heatmap, KeypointSet};

/// Keypoints in grid units: `x` in `[0, W-1]`, `y` in `[0, H-1]` for in-frame points.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCoords<T> {
    pub points: Vec<[T; 2]>,
}

pub fn to_grid<T: Scalar>(k: &KeypointSet<T>, width: usize, height: usize) -> GridCoords<T> {
    assert!(width >= 2 && height >= 2, "grid must be at least 2x2");
    let sx = T::from_usize(width - 1).unwrap();
    let sy = T::from_usize(height - 1).unwrap();
    GridCoords {
        points: k.coords().iter().map(|c| [c[0] * sx, c[1] * sy]).collect(),
    }
}

#[inline]
fn tent<T: Scalar>(d: T) -> T {
    (T::one() - d.abs()).max(T::zero())
}

/// Derivative of `tent(i - x)` with respect to `x`.
#[inline]
fn tent_slope<T: Scalar>(i: T, x: T) -> T {
    let d = i - x;
    let a = d.abs();
    if a == T::zero() || a >= T::one() {
        T::zero()
    } else if d > T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

/// The (at most two) grid indices with non-zero tent weight around `x`.
#[inline]
fn support<T: Scalar>(x: T, n: usize) -> impl Iterator<Item = usize> {
    let base = x.floor().to_isize().unwrap_or(isize::MIN / 2);
    (base..=base + 1).filter(move |&i| i >= 0 && (i as usize) < n).map(|i| i as usize)
}

pub fn render_heatmap<T: Scalar>(g: &GridCoords<T>, width: usize, height: usize, alpha: T) -> Heatmap<T> {
    let mut grid = vec![T::zero(); width * height];
    for p in &g.points {
        let [x, y] = *p;
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        for i in support(x, width) {
            let wx = tent(T::from_usize(i).unwrap() - x);
            if wx == T::zero() {
                continue;
            }
            for j in support(y, height) {
                let wy = tent(T::from_usize(j).unwrap() - y);
                grid[i * height + j] += alpha * wx * wy;
            }
        }
    }
    Heatmap {
        width,
        height,
        alpha,
        grid,
    }
}

/// Gradient of `<upstream, render_heatmap(g)>` with respect to every grid coordinate.
///
/// `upstream` uses the heatmap layout (`[i * height + j]`).
pub fn render_heatmap_grad<T: Scalar>(
    g: &GridCoords<T>,
    width: usize,
    height: usize,
    alpha: T,
    upstream: &[T],
) -> Vec<[T; 2]> {
    assert_eq!(upstream.len(), width * height, "upstream must be W x H");
    g.points
        .iter()
        .map(|&[x, y]| {
            let mut gx = T::zero();
            let mut gy = T::zero();
            if !x.is_finite() || !y.is_finite() {
                return [gx, gy];
            }
            for i in support(x, width) {
                let fi = T::from_usize(i).unwrap();
                let (wx, sx) = (tent(fi - x), tent_slope(fi, x));
                for j in support(y, height) {
                    let fj = T::from_usize(j).unwrap();
                    let (wy, sy) = (tent(fj - y), tent_slope(fj, y));
                    let u = upstream[i * height + j] * alpha;
                    gx += u * sx * wy;
                    gy += u * wx * sy;
                }
            }
            [gx, gy]
        })
        .collect()
}

/// Tape op: normalized keypoints `[P, 2]` to a `[W, H]` heatmap grid.
pub struct HeatmapOp<T> {
    pub width: usize,
    pub height: usize,
    pub alpha: T,
}

impl<T: Scalar> HeatmapOp<T> {
    fn grid(&self, coords: &Tensor<T>) -> GridCoords<T> {
        let sx = T::from_usize(self.width - 1).unwrap();
        let sy = T::from_usize(self.height - 1).unwrap();
        GridCoords {
            points: coords.data().chunks(2).map(|c| [c[0] * sx, c[1] * sy]).collect(),
        }
    }
}

impl<T: Scalar> CustomOp<T> for HeatmapOp<T> {
    fn forward(&self, inputs: &[&Tensor<T>]) -> Tensor<T> {
        let h = render_heatmap(&self.grid(inputs[0]), self.width, self.height, self.alpha);
        Tensor::from_vec(&[self.width, self.height], h.grid)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let sx = T::from_usize(self.width - 1).unwrap();
        let sy = T::from_usize(self.height - 1).unwrap();
        let gg = render_heatmap_grad(&self.grid(inputs[0]), self.width, self.height, self.alpha, grad.data());
        let data = gg.into_iter().flat_map(|[a, b]| [a * sx, b * sy]).collect();
        vec![Some(Tensor::from_vec(inputs[0].shape(), data))]
    }
}

/// Renders normalized keypoints held in `coords` (`[P, 2]` or `[2P]`) on the tape.
pub fn heatmap_on_tape<T: Scalar>(g: &mut Graph<T>, coords: Var, width: usize, height: usize, alpha: T) -> Var {
    g.custom(Box::new(HeatmapOp { width, height, alpha }), &[coords])
}
