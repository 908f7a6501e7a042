//! Local slope tracking and the anytime lower-bound estimate.
//!
//! Slopes are measured in physical parameter units, so the estimate does not
//! depend on how the box was normalised.

use serde::{Deserialize, Serialize};

use crate::partition::{HyperRect, ParamSpace};

/// How `ℓ*_min` is formed from the optimal rect.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BoundMode {
    /// Largest observed slope times the Manhattan relaxation `½ Σ d_i`
    /// with `d_i` the centre-to-sample distance (a third of the side).
    Estimated,
    /// A supplied Lipschitz constant (w.r.t. any norm dominated by L1) times
    /// the L1 radius `½ Σ l_i (hi_i - lo_i)` that covers the whole rect.
    Certified { lipschitz: f64 },
}

/// Centre-to-sample distance `d_i = ⅓ · l_i · (hi_i - lo_i)` along dim `i`.
pub fn sample_distance(space: &ParamSpace, side: f64, dim: usize) -> f64 {
    side / 3.0 * space.width(dim)
}

/// `K̂_c = max |ℓ(c) - ℓ(s)| / d` over `(value, distance)` samples.
pub fn local_slope(center_value: f64, samples: &[(f64, f64)]) -> f64 {
    samples
        .iter()
        .map(|&(v, d)| (center_value - v).abs() / d)
        .fold(0.0, f64::max)
}

/// `σ̄_o = ½ Σ_i d_i^o`.
pub fn manhattan_radius(rect: &HyperRect, space: &ParamSpace) -> f64 {
    0.5 * (0..rect.dim())
        .map(|i| sample_distance(space, rect.side(i), i))
        .sum::<f64>()
}

/// L1 distance from the centre to the farthest corner, in physical units.
pub fn covering_radius(rect: &HyperRect, space: &ParamSpace) -> f64 {
    (0..rect.dim())
        .map(|i| 0.5 * rect.side(i) * space.width(i))
        .sum()
}

/// `ℓ*_min = ℓ(c_o) - K̂_max · σ̄_o`.
pub fn estimate_lower_bound(rect: &HyperRect, k_hat_max: f64, space: &ParamSpace) -> f64 {
    rect.value - k_hat_max * manhattan_radius(rect, space)
}

pub fn lower_bound(rect: &HyperRect, k_hat_max: f64, space: &ParamSpace, mode: BoundMode) -> f64 {
    match mode {
        BoundMode::Estimated => estimate_lower_bound(rect, k_hat_max, space),
        BoundMode::Certified { lipschitz } => rect.value - lipschitz * covering_radius(rect, space),
    }
}

/// Running maximum of local slopes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SlopeState {
    k_hat_max: f64,
}

impl SlopeState {
    pub fn observe(&mut self, slope: f64) {
        if slope > self.k_hat_max {
            self.k_hat_max = slope;
        }
    }

    pub fn k_hat_max(&self) -> f64 {
        self.k_hat_max
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(depths: Vec<u32>, value: f64) -> HyperRect {
        HyperRect {
            id: 0,
            cells: vec![0; depths.len()],
            depths,
            value,
            local_slope: 0.0,
            divided: false,
        }
    }

    #[test]
    fn constant_objective_has_zero_slope() {
        assert_eq!(local_slope(2.0, &[(2.0, 0.1), (2.0, 0.3)]), 0.0);
    }

    #[test]
    fn slope_picks_largest() {
        let space = ParamSpace::new(&[(0.0, 3.0)]).unwrap();
        let d = sample_distance(&space, 1.0, 0);
        assert_eq!(d, 1.0);
        assert_eq!(local_slope(1.0, &[(0.0, d), (3.0, d)]), 2.0);
    }

    #[test]
    fn affine_slope_is_exact() {
        let a = -2.5;
        let space = ParamSpace::new(&[(-4.0, 8.0)]).unwrap();
        let f = |t: f64| a * t;
        let (lo, mid, hi) = (space.to_physical(&[1.0 / 6.0])[0], 2.0, space.to_physical(&[5.0 / 6.0])[0]);
        let d = sample_distance(&space, 1.0, 0);
        let k = local_slope(f(mid), &[(f(lo), d), (f(hi), d)]);
        assert!((k - a.abs()).abs() < 1e-12);
    }

    #[test]
    fn zero_slope_bound_is_incumbent() {
        let space = ParamSpace::new(&[(0.0, 1.0)]).unwrap();
        assert_eq!(estimate_lower_bound(&rect(vec![1], 0.5), 0.0, &space), 0.5);
    }

    #[test]
    fn one_dimensional_bound() {
        let space = ParamSpace::new(&[(0.0, 1.0)]).unwrap();
        let r = rect(vec![1], 0.5);
        assert!((manhattan_radius(&r, &space) - 1.0 / 18.0).abs() < 1e-15);
        let b = estimate_lower_bound(&r, 2.0, &space);
        assert!((b - (0.5 - 2.0 / 18.0)).abs() < 1e-12);
        assert!((b - 0.3889).abs() < 1e-4);
    }

    #[test]
    fn manhattan_sum_over_dims() {
        let space = ParamSpace::new(&[(-20.0, 20.0), (0.9, 1.1)]).unwrap();
        let r = rect(vec![1, 1], 0.0);
        let expect = 0.5 * (40.0 / 9.0 + 0.2 / 9.0);
        assert!((manhattan_radius(&r, &space) - expect).abs() < 1e-12);
    }

    #[test]
    fn certified_radius_covers_rect() {
        let space = ParamSpace::new(&[(0.0, 1.0)]).unwrap();
        let r = rect(vec![1], 0.5);
        assert!((covering_radius(&r, &space) - 1.0 / 6.0).abs() < 1e-15);
        let b = lower_bound(&r, 0.0, &space, BoundMode::Certified { lipschitz: 3.0 });
        assert!((b - 0.0).abs() < 1e-12);
    }

    #[test]
    fn slope_state_is_monotone() {
        let mut s = SlopeState::default();
        s.observe(1.0);
        s.observe(0.5);
        assert_eq!(s.k_hat_max(), 1.0);
        s.observe(2.0);
        assert_eq!(s.k_hat_max(), 2.0);
    }
}
