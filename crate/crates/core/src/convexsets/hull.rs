//! Distance to the convex hull of a finite point set via Wolfe's
//! minimum-norm-point algorithm.

use nalgebra::{DMatrix, DVector};

use super::Point;
use crate::error::{Error, Result};

/// Euclidean distance from `x` to `co{generators}`.
pub fn hull_distance(generators: &[Point], x: &Point) -> Result<f64> {
    let first = generators
        .first()
        .ok_or_else(|| Error::Precondition("hull needs at least one generator".into()))?;
    let m = first.len();
    if x.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: x.len() });
    }
    if let Some(g) = generators.iter().find(|g| g.len() != m) {
        return Err(Error::DimensionMismatch { expected: m, got: g.len() });
    }
    let shifted: Vec<Point> = generators.iter().map(|g| g - x).collect();
    Ok(min_norm_point(&shifted).norm())
}

/// Minimum-norm point of the convex hull of `points` (nonempty, common
/// dimension).
pub fn min_norm_point(points: &[Point]) -> Point {
    const WEIGHT_EPS: f64 = 1e-14;
    let n = points.len();
    let max_sq = points.iter().map(|p| p.norm_squared()).fold(0.0, f64::max);
    if max_sq == 0.0 {
        return points[0].clone();
    }
    let gap_tol = 1e-15 * max_sq;

    let start = (0..n)
        .min_by(|&a, &b| points[a].norm_squared().total_cmp(&points[b].norm_squared()))
        .unwrap();
    let mut active = vec![start];
    let mut weights = vec![1.0];
    let mut w = points[start].clone();

    // Each major cycle strictly decreases |w|; the bound only guards against
    // numerical cycling.
    for _ in 0..(50 * n + 100) {
        let (j, wp) = (0..n)
            .map(|j| (j, w.dot(&points[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let wn = w.norm_squared();
        if wn - wp <= gap_tol || wn <= 1e-30 || active.contains(&j) {
            break;
        }
        active.push(j);
        weights.push(0.0);

        loop {
            let alpha = match affine_minimizer(points, &active) {
                Some(a) => a,
                None => {
                    // Affinely dependent set; drop the newest point.
                    active.pop();
                    weights.pop();
                    break;
                }
            };
            if alpha.iter().all(|&a| a > WEIGHT_EPS) {
                weights = alpha;
                break;
            }
            // Move from the current weights toward alpha until a weight hits
            // zero, then drop the points whose weight vanished.
            let theta = weights
                .iter()
                .zip(&alpha)
                .filter(|(_, &a)| a <= WEIGHT_EPS)
                .map(|(&l, &a)| if l - a > 0.0 { l / (l - a) } else { 0.0 })
                .fold(1.0, f64::min);
            for (l, a) in weights.iter_mut().zip(&alpha) {
                *l += theta * (a - *l);
            }
            let mut k = 0;
            while k < active.len() {
                if weights[k] <= WEIGHT_EPS {
                    active.remove(k);
                    weights.remove(k);
                } else {
                    k += 1;
                }
            }
            if active.is_empty() {
                // cannot happen for theta <= 1, but keep the state valid
                active.push(j);
                weights.push(1.0);
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|l| *l /= total);
            if active.len() == 1 {
                weights[0] = 1.0;
                break;
            }
        }
        w = combine(points, &active, &weights);
    }
    w
}

fn combine(points: &[Point], active: &[usize], weights: &[f64]) -> Point {
    let mut w = Point::zeros(points[0].len());
    for (&i, &l) in active.iter().zip(weights) {
        w.axpy(l, &points[i], 1.0);
    }
    w
}

/// Coefficients (summing to one) of the min-norm point of the affine hull of
/// the active points, from the bordered Gram system.
fn affine_minimizer(points: &[Point], active: &[usize]) -> Option<Vec<f64>> {
    let k = active.len();
    let mut sys = DMatrix::<f64>::zeros(k + 1, k + 1);
    for a in 0..k {
        for b in a..k {
            let g = points[active[a]].dot(&points[active[b]]);
            sys[(a, b)] = g;
            sys[(b, a)] = g;
        }
        sys[(a, k)] = 1.0;
        sys[(k, a)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = sys.clone().lu().solve(&rhs).filter(|s| s.iter().all(|v| v.is_finite()))?;
    // Reject near-singular solves: the residual must be small.
    let resid = (&sys * &sol - &rhs).amax();
    if resid > 1e-8 {
        return None;
    }
    Some(sol.iter().take(k).copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    #[test]
    fn segment() {
        let g = [p(&[0.0, 0.0]), p(&[1.0, 0.0])];
        assert!((hull_distance(&g, &p(&[0.5, 2.0])).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn generator_itself() {
        let g = [p(&[0.0, 0.0]), p(&[1.0, 0.0]), p(&[0.3, 0.9])];
        assert!(hull_distance(&g, &p(&[0.3, 0.9])).unwrap() < 1e-12);
    }

    #[test]
    fn triangle_hypotenuse() {
        let g = [p(&[0.0, 0.0]), p(&[1.0, 0.0]), p(&[0.0, 1.0])];
        let d = hull_distance(&g, &p(&[1.0, 1.0])).unwrap();
        assert!((d - 0.5f64.sqrt()).abs() < 1e-12, "{d}");
    }

    #[test]
    fn interior_point_is_zero() {
        let g = [p(&[0.0, 0.0]), p(&[1.0, 0.0]), p(&[0.0, 1.0])];
        assert!(hull_distance(&g, &p(&[0.2, 0.2])).unwrap() < 1e-12);
    }

    #[test]
    fn duplicates_and_collinear() {
        let g = [p(&[0.0, 0.0]), p(&[0.0, 0.0]), p(&[1.0, 1.0]), p(&[2.0, 2.0])];
        let d = hull_distance(&g, &p(&[2.0, 0.0])).unwrap();
        assert!((d - 2.0f64.sqrt()).abs() < 1e-12, "{d}");
    }

    #[test]
    fn errors() {
        assert!(hull_distance(&[], &p(&[0.0])).is_err());
        assert!(hull_distance(&[p(&[0.0, 1.0])], &p(&[0.0])).is_err());
    }
}
