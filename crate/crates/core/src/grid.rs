//! Coordinate boxes and the rectilinear phase grid with multilinear
//! interpolation used by the fixed-point solver.

use serde::{Deserialize, Serialize};

/// Closed axis-aligned box in coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CoordBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        CoordBox { lo, hi }
    }

    /// Box centred at `c` with half-width `r` in every coordinate.
    pub fn cube_around(c: &[f64], r: f64) -> Self {
        CoordBox {
            lo: c.iter().map(|v| v - r).collect(),
            hi: c.iter().map(|v| v + r).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(self.hi.iter())
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo
            .iter()
            .zip(self.hi.iter())
            .map(|(a, b)| b - a)
            .product()
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &CoordBox) -> CoordBox {
        CoordBox {
            lo: self
                .lo
                .iter()
                .zip(other.lo.iter())
                .map(|(a, b)| a.min(*b))
                .collect(),
            hi: self
                .hi
                .iter()
                .zip(other.hi.iter())
                .map(|(a, b)| a.max(*b))
                .collect(),
        }
    }

    /// Intersection, or `None` when the boxes are disjoint.
    pub fn intersect(&self, other: &CoordBox) -> Option<CoordBox> {
        let lo: Vec<f64> = self
            .lo
            .iter()
            .zip(other.lo.iter())
            .map(|(a, b)| a.max(*b))
            .collect();
        let hi: Vec<f64> = self
            .hi
            .iter()
            .zip(other.hi.iter())
            .map(|(a, b)| a.min(*b))
            .collect();
        if lo.iter().zip(hi.iter()).all(|(a, b)| a <= b) {
            Some(CoordBox { lo, hi })
        } else {
            None
        }
    }

    pub fn pad(&self, margin: f64) -> CoordBox {
        CoordBox {
            lo: self.lo.iter().map(|v| v - margin).collect(),
            hi: self.hi.iter().map(|v| v + margin).collect(),
        }
    }
}

/// One grid axis: `count` nodes spanning [lo, hi] inclusive.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Self {
        assert!(count >= 2 && hi > lo);
        GridAxis { lo, hi, count }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + self.step() * i as f64
    }
}

/// Rectilinear grid over an arbitrary number of axes with values stored
/// row-major (last axis fastest). Immutable after construction; evaluation
/// outside the grid box is exactly zero.
#[derive(Clone, Debug)]
pub struct RectGrid {
    pub axes: Vec<GridAxis>,
    pub values: Vec<f64>,
    strides: Vec<usize>,
}

impl RectGrid {
    pub fn from_values(axes: Vec<GridAxis>, values: Vec<f64>) -> Self {
        let total: usize = axes.iter().map(|a| a.count).product();
        assert_eq!(values.len(), total);
        let strides = Self::strides_of(&axes);
        RectGrid {
            axes,
            values,
            strides,
        }
    }

    /// Fill the grid by evaluating `f` at every node, in index order.
    pub fn fill<F: Fn(&[f64]) -> f64 + Sync>(axes: Vec<GridAxis>, f: F) -> Self {
        use rayon::prelude::*;
        let total: usize = axes.iter().map(|a| a.count).product();
        let strides = Self::strides_of(&axes);
        let values: Vec<f64> = (0..total)
            .into_par_iter()
            .map(|flat| {
                let mut point = vec![0.0; axes.len()];
                let mut rem = flat;
                for (d, axis) in axes.iter().enumerate() {
                    let idx = rem / strides[d];
                    rem %= strides[d];
                    point[d] = axis.node(idx);
                }
                f(&point)
            })
            .collect();
        RectGrid {
            axes,
            values,
            strides,
        }
    }

    fn strides_of(axes: &[GridAxis]) -> Vec<usize> {
        let mut strides = vec![1usize; axes.len()];
        for d in (0..axes.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * axes[d + 1].count;
        }
        strides
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bounding_box(&self) -> CoordBox {
        CoordBox {
            lo: self.axes.iter().map(|a| a.lo).collect(),
            hi: self.axes.iter().map(|a| a.hi).collect(),
        }
    }

    pub fn node_coords(&self, flat: usize) -> Vec<f64> {
        let mut point = vec![0.0; self.axes.len()];
        let mut rem = flat;
        for (d, axis) in self.axes.iter().enumerate() {
            point[d] = axis.node(rem / self.strides[d]);
            rem %= self.strides[d];
        }
        point
    }

    /// Multilinear interpolation; exactly zero outside the grid box.
    pub fn interp(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.axes.len());
        let dims = self.axes.len();
        let mut base = vec![0usize; dims];
        let mut frac = vec![0.0; dims];
        for d in 0..dims {
            let axis = &self.axes[d];
            let v = point[d];
            if v < axis.lo || v > axis.hi {
                return 0.0;
            }
            let t = (v - axis.lo) / axis.step();
            let i = (t.floor() as usize).min(axis.count - 2);
            base[d] = i;
            frac[d] = t - i as f64;
        }
        let corners = 1usize << dims;
        let mut acc = 0.0;
        for c in 0..corners {
            let mut w = 1.0;
            let mut flat = 0usize;
            for d in 0..dims {
                let up = (c >> d) & 1 == 1;
                w *= if up { frac[d] } else { 1.0 - frac[d] };
                flat += (base[d] + up as usize) * self.strides[d];
            }
            if w != 0.0 {
                acc += w * self.values[flat];
            }
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interp_reproduces_linear_functions() {
        let axes = vec![GridAxis::new(0.0, 2.0, 5), GridAxis::new(-1.0, 1.0, 4)];
        let grid = RectGrid::fill(axes, |x| 3.0 * x[0] - 2.0 * x[1] + 0.5);
        for &(a, b) in &[(0.3, -0.7), (1.9, 0.99), (0.0, -1.0)] {
            let got = grid.interp(&[a, b]);
            let want = 3.0 * a - 2.0 * b + 0.5;
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn interp_is_zero_outside_the_box() {
        let axes = vec![GridAxis::new(0.0, 1.0, 3)];
        let grid = RectGrid::fill(axes, |_| 7.0);
        assert_eq!(grid.interp(&[1.0001]), 0.0);
        assert_eq!(grid.interp(&[-0.2]), 0.0);
        assert_eq!(grid.interp(&[0.5]), 7.0);
    }

    #[test]
    fn box_intersection_and_hull() {
        let a = CoordBox::new(vec![0.0, 0.0], vec![2.0, 2.0]);
        let b = CoordBox::new(vec![1.0, -1.0], vec![3.0, 1.0]);
        let i = a.intersect(&b).unwrap();
        assert_eq!(i.lo, vec![1.0, 0.0]);
        assert_eq!(i.hi, vec![2.0, 1.0]);
        let h = a.hull(&b);
        assert_eq!(h.lo, vec![0.0, -1.0]);
        assert_eq!(h.hi, vec![3.0, 2.0]);
        let far = CoordBox::new(vec![10.0, 10.0], vec![11.0, 11.0]);
        assert!(a.intersect(&far).is_none());
    }
}
