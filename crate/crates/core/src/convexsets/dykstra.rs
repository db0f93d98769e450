//! Projection onto an intersection of convex sets.
//!
//! Dykstra's corrected cyclic projections converge to the projection onto
//! the intersection, but only sublinearly when members meet tangentially
//! (two balls touching at one point need ~n^{-1/3} cycles). After the cycles
//! stop, the oracle identifies the constraints that are nearly active at the
//! Dykstra iterate and projects exactly onto the manifold they cut out; the
//! closest feasible such candidate is the projection whenever the true
//! active set was captured.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ConvexSet, Point, MEMBERSHIP_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DykstraConfig {
    /// Stop when, over one cycle, no member iterate moves more than this
    /// and consecutive member iterates are this close.
    pub tolerance: f64,
    /// Cycle budget.
    pub max_iterations: usize,
}

impl Default for DykstraConfig {
    fn default() -> Self {
        DykstraConfig {
            tolerance: 1e-8,
            max_iterations: 100_000,
        }
    }
}

/// Primitive constraint used by the active-set refinement.
#[derive(Debug, Clone)]
pub(crate) enum Constraint {
    /// `<normal, x> <= offset`, unit normal
    Le { normal: Point, offset: f64 },
    /// `<normal, x> = offset`, unit normal
    Eq { normal: Point, offset: f64 },
    /// `|x - center| <= radius`
    Sphere { center: Point, radius: f64 },
}

impl Constraint {
    pub(crate) fn le(normal: &Point, offset: f64) -> Self {
        let n = normal.norm();
        Constraint::Le {
            normal: normal / n,
            offset: offset / n,
        }
    }

    pub(crate) fn eq(normal: &Point, offset: f64) -> Self {
        let n = normal.norm();
        Constraint::Eq {
            normal: normal / n,
            offset: offset / n,
        }
    }

    /// Signed distance to the boundary, positive when violated.
    fn gap(&self, y: &Point) -> f64 {
        match self {
            Constraint::Le { normal, offset } | Constraint::Eq { normal, offset } => normal.dot(y) - offset,
            Constraint::Sphere { center, radius } => (y - center).norm() - radius,
        }
    }

    fn violation(&self, y: &Point) -> f64 {
        match self {
            Constraint::Eq { .. } => self.gap(y).abs(),
            _ => self.gap(y).max(0.0),
        }
    }
}

/// Diagnostics of one oracle call.
#[derive(Debug, Clone)]
pub struct DykstraRun {
    pub point: Point,
    pub cycles: usize,
    /// The cycle displacement fell below tolerance.
    pub converged: bool,
    /// The returned point came from the exact active-set step.
    pub polished: bool,
    /// Last iterate produced by each member during the final cycle.
    pub member_points: Vec<Point>,
    /// Stopping statistic of the final cycle.
    pub last_change: f64,
    /// Largest member distance of the returned point when polished, else of
    /// the centroid of `member_points`. Stays near half the gap for disjoint
    /// members even after the cycles settle.
    pub residual: f64,
}

impl DykstraRun {
    /// Usable result: converged cycles or an accepted exact refinement, and
    /// a feasibility residual below `FEASIBILITY_TOL`.
    pub fn certified(&self) -> bool {
        (self.converged || self.polished) && self.residual <= FEASIBILITY_TOL * (1.0 + self.point.norm())
    }
}

/// Largest member distance accepted for a certified intersection point.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Projector onto `X0 = ∩ members`.
#[derive(Debug, Clone)]
pub struct IntersectionOracle {
    members: Vec<ConvexSet>,
    config: DykstraConfig,
    constraints: Vec<Constraint>,
    dim: usize,
    /// The whole intersection when two constraints touch in a single
    /// feasible point.
    singleton: Option<Point>,
}

impl IntersectionOracle {
    pub fn new(members: Vec<ConvexSet>, config: DykstraConfig) -> Result<Self> {
        let dim = members
            .first()
            .map(|s| s.dim())
            .ok_or_else(|| Error::InvalidSet("intersection needs at least one member".into()))?;
        if let Some(bad) = members.iter().find(|s| s.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        if !(config.tolerance > 0.0) || config.max_iterations == 0 {
            return Err(Error::InvalidSet("oracle needs positive tolerance and budget".into()));
        }
        let mut constraints = Vec::new();
        for s in &members {
            s.constraints(&mut constraints);
        }
        let mut oracle = IntersectionOracle {
            members,
            config,
            constraints,
            dim,
            singleton: None,
        };
        oracle.singleton = oracle.find_singleton();
        Ok(oracle)
    }

    pub fn from_specs(specs: &[super::ConvexSetSpec], config: DykstraConfig) -> Result<Self> {
        let members = specs
            .iter()
            .map(|s| ConvexSet::from_spec(s, config))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, config)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn members(&self) -> &[ConvexSet] {
        &self.members
    }

    pub fn config(&self) -> DykstraConfig {
        self.config
    }

    pub(crate) fn collect_constraints(&self, out: &mut Vec<Constraint>) {
        out.extend(self.constraints.iter().cloned());
    }

    /// Projection onto the intersection; fails when the cycle budget runs
    /// out without a certified answer.
    pub fn project(&self, x: &Point) -> Result<Point> {
        let run = self.run(x)?;
        if run.certified() {
            Ok(run.point)
        } else {
            Err(Error::OracleFailure {
                iterations: run.cycles,
                residual: run.residual,
            })
        }
    }

    pub fn distance(&self, x: &Point) -> Result<f64> {
        Ok((x - self.project(x)?).norm())
    }

    /// Runs the oracle and returns its diagnostics without turning budget
    /// exhaustion into an error.
    pub fn run(&self, x: &Point) -> Result<DykstraRun> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let k = self.members.len();
        if let Some(point) = &self.singleton {
            return Ok(DykstraRun {
                point: point.clone(),
                member_points: vec![point.clone(); k],
                cycles: 0,
                converged: false,
                polished: true,
                last_change: 0.0,
                residual: 0.0,
            });
        }
        if k == 1 {
            let point = self.members[0].project_unchecked(x)?;
            return Ok(DykstraRun {
                member_points: vec![point.clone()],
                point,
                cycles: 1,
                converged: true,
                polished: false,
                last_change: 0.0,
                residual: 0.0,
            });
        }

        let mut inside = true;
        for s in &self.members {
            if (x - s.project_unchecked(x)?).norm() > MEMBERSHIP_TOL {
                inside = false;
                break;
            }
        }
        if inside {
            return Ok(DykstraRun {
                point: x.clone(),
                cycles: 0,
                converged: true,
                polished: false,
                member_points: vec![x.clone(); k],
                last_change: 0.0,
                residual: 0.0,
            });
        }

        let mut y = x.clone();
        let mut increments = vec![Point::zeros(self.dim); k];
        let mut member_points = vec![x.clone(); k];
        let mut cycles = 0;
        let mut converged = false;
        let mut last_change = f64::INFINITY;
        while cycles < self.config.max_iterations {
            cycles += 1;
            let mut change: f64 = 0.0;
            for (i, set) in self.members.iter().enumerate() {
                let z = &y + &increments[i];
                let next = set.project_unchecked(&z)?;
                increments[i] = z - &next;
                change = change.max((&next - &member_points[i]).norm());
                member_points[i] = next.clone();
                y = next;
            }
            // The iterates can stall for many cycles while the increments
            // drift along normals, so also require the members to agree.
            for i in 0..k {
                change = change.max((&member_points[i] - &member_points[(i + 1) % k]).norm());
            }
            last_change = change;
            if change < self.config.tolerance {
                converged = true;
                break;
            }
        }

        let refined = self.refine(x, &y);
        let polished = refined.is_some();
        let probe = match &refined {
            Some(p) => p.clone(),
            None => member_points.iter().fold(Point::zeros(self.dim), |acc, p| acc + p) / k as f64,
        };
        let mut residual: f64 = 0.0;
        for s in &self.members {
            residual = residual.max((&probe - s.project_unchecked(&probe)?).norm());
        }
        Ok(DykstraRun {
            point: refined.unwrap_or(y),
            cycles,
            converged,
            polished,
            member_points,
            last_change,
            residual,
        })
    }

    /// Exact active-set step around the approximate projection `approx`.
    fn refine(&self, x: &Point, approx: &Point) -> Option<Point> {
        const MAX_NEAR_ACTIVE: usize = 10;
        let scale = 1.0 + approx.norm();
        let near = 1e-3 * scale;

        let equalities: Vec<usize> = self
            .constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| matches!(c, Constraint::Eq { .. }))
            .map(|(i, _)| i)
            .collect();
        let mut candidates: Vec<(f64, usize)> = self
            .constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| !matches!(c, Constraint::Eq { .. }))
            .map(|(i, c)| (c.gap(approx).abs(), i))
            .filter(|(g, _)| *g <= near)
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
        candidates.truncate(MAX_NEAR_ACTIVE);
        let active: Vec<usize> = candidates.into_iter().map(|(_, i)| i).collect();

        let max_size = active.len().min(self.dim + 1);
        let mut best: Option<(f64, Point)> = None;
        let mut chosen = Vec::with_capacity(equalities.len() + max_size);
        for mask in 0u32..(1u32 << active.len()) {
            if mask.count_ones() as usize > max_size {
                continue;
            }
            chosen.clear();
            chosen.extend_from_slice(&equalities);
            chosen.extend(
                active
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| mask & (1 << b) != 0)
                    .map(|(_, &i)| i),
            );
            let Some(cand) = self.manifold_projection(x, &chosen) else {
                continue;
            };
            if !self.feasible(&cand) {
                continue;
            }
            let d = (&cand - x).norm();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, cand));
            }
        }
        let (_, cand) = best?;
        let accept = 0.05 * (1.0 + (x - approx).norm());
        ((&cand - approx).norm() <= accept).then_some(cand)
    }

    /// Externally tangent spheres, or a sphere touching a halfspace from
    /// outside, meet in one point. If that point satisfies every other
    /// constraint it is the entire intersection. Dykstra converges only
    /// sublinearly on such sets.
    fn find_singleton(&self) -> Option<Point> {
        let touch = 1e-12;
        for (a, ca) in self.constraints.iter().enumerate() {
            let Constraint::Sphere { center, radius } = ca else {
                continue;
            };
            for (b, cb) in self.constraints.iter().enumerate() {
                if a == b {
                    continue;
                }
                let point = match cb {
                    Constraint::Sphere { center: c2, radius: r2 } if b > a => {
                        let d = (c2 - center).norm();
                        if d == 0.0 || (d - radius - r2).abs() > touch * (1.0 + d) {
                            continue;
                        }
                        center + (c2 - center) * (radius / d)
                    }
                    Constraint::Le { normal, offset } => {
                        if (normal.dot(center) - offset - radius).abs() > touch * (1.0 + radius) {
                            continue;
                        }
                        center - normal * *radius
                    }
                    _ => continue,
                };
                if self.feasible(&point) {
                    return Some(point);
                }
            }
        }
        None
    }

    fn feasible(&self, y: &Point) -> bool {
        let tol = MEMBERSHIP_TOL * (1.0 + y.norm());
        self.constraints.iter().all(|c| c.violation(y) <= tol)
    }

    /// Nearest point to `x` on the set where every chosen constraint holds
    /// with equality. Spheres reduce pairwise to hyperplanes, so the
    /// manifold is an affine subspace, possibly intersected with one sphere.
    fn manifold_projection(&self, x: &Point, chosen: &[usize]) -> Option<Point> {
        let m = self.dim;
        let mut rows: Vec<(Point, f64)> = Vec::new();
        let mut sphere: Option<(&Point, f64)> = None;
        for &i in chosen {
            match &self.constraints[i] {
                Constraint::Le { normal, offset } | Constraint::Eq { normal, offset } => {
                    rows.push((normal.clone(), *offset));
                }
                Constraint::Sphere { center, radius } => match sphere {
                    None => sphere = Some((center, *radius)),
                    Some((c0, r0)) => {
                        // |y-c0|^2 - r0^2 = |y-c|^2 - r^2
                        let a = (center - c0) * 2.0;
                        let b = r0 * r0 - radius * radius + center.norm_squared() - c0.norm_squared();
                        let n = a.norm();
                        if n <= 1e-14 {
                            // concentric spheres: equal radii or no common point
                            if (r0 - radius).abs() > 1e-12 * (1.0 + r0) {
                                return None;
                            }
                            continue;
                        }
                        rows.push((a / n, b / n));
                    }
                },
            }
        }

        let affine = AffineSolve::new(m, &rows)?;
        let y = affine.project(x)?;
        let Some((c0, r0)) = sphere else {
            return Some(y);
        };
        let c = affine.project(c0)?;
        let rho_sq = r0 * r0 - (c0 - &c).norm_squared();
        if rho_sq < -1e-10 * (1.0 + r0 * r0) {
            return None;
        }
        let rho = rho_sq.max(0.0).sqrt();
        let u = &y - &c;
        let un = u.norm();
        if un > 1e-14 * (1.0 + y.norm()) {
            Some(&c + u * (rho / un))
        } else if rho == 0.0 {
            Some(c)
        } else {
            // x projects onto the sphere's center; every point is nearest.
            affine.null_direction().map(|d| &c + d * rho)
        }
    }
}

/// Least-norm projection onto `{y : A y = b}` for a handful of rows.
struct AffineSolve {
    a: DMatrix<f64>,
    b: DVector<f64>,
    svd: Option<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    eps: f64,
}

impl AffineSolve {
    fn new(m: usize, rows: &[(Point, f64)]) -> Option<Self> {
        if rows.is_empty() {
            return Some(AffineSolve {
                a: DMatrix::zeros(0, m),
                b: DVector::zeros(0),
                svd: None,
                eps: 0.0,
            });
        }
        let r = rows.len();
        let n = r.max(m);
        let mut a = DMatrix::zeros(n, m);
        let mut b = DVector::zeros(n);
        for (k, (row, rhs)) in rows.iter().enumerate() {
            a.row_mut(k).copy_from(&row.transpose());
            b[k] = *rhs;
        }
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        Some(AffineSolve {
            a,
            b,
            svd: Some(svd),
            eps: 1e-10 * smax.max(1.0),
        })
    }

    fn project(&self, x: &Point) -> Option<Point> {
        let Some(svd) = &self.svd else {
            return Some(x.clone());
        };
        let resid = &self.a * x - &self.b;
        let step = svd.solve(&resid, self.eps).ok()?;
        let y = x - step;
        let check = &self.a * &y - &self.b;
        // inconsistent system: the chosen constraints have no common point
        (check.amax() <= 1e-8 * (1.0 + self.b.amax())).then_some(y)
    }

    fn null_direction(&self) -> Option<Point> {
        let Some(svd) = &self.svd else {
            let mut e = Point::zeros(self.a.ncols());
            e[0] = 1.0;
            return Some(e);
        };
        let vt = svd.v_t.as_ref()?;
        svd.singular_values
            .iter()
            .position(|&s| s <= self.eps)
            .map(|k| vt.row(k).transpose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convexsets::ConvexSetSpec;

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    fn oracle(specs: &[ConvexSetSpec]) -> IntersectionOracle {
        IntersectionOracle::from_specs(specs, DykstraConfig::default()).unwrap()
    }

    #[test]
    fn orthant() {
        let o = oracle(&[
            ConvexSetSpec::halfspace(&[-1.0, 0.0], 0.0),
            ConvexSetSpec::halfspace(&[0.0, -1.0], 0.0),
        ]);
        let y = o.project(&p(&[-1.0, -1.0])).unwrap();
        assert!((y - p(&[0.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn tangent_balls_singleton() {
        let o = oracle(&[
            ConvexSetSpec::ball(&[0.0, 0.0], 1.0),
            ConvexSetSpec::ball(&[2.0, 0.0], 1.0),
        ]);
        for x in [[1.0, 3.0], [-3.0, 0.5], [1.0, -0.2], [5.0, 5.0]] {
            let y = o.project(&p(&x)).unwrap();
            assert!((y - p(&[1.0, 0.0])).norm() < 1e-9, "from {x:?}");
        }
    }

    #[test]
    fn ball_touching_halfspace() {
        let o = oracle(&[
            ConvexSetSpec::ball(&[0.0, 0.0], 1.0),
            ConvexSetSpec::halfspace(&[-1.0, 0.0], -1.0),
        ]);
        let run = o.run(&p(&[4.0, -2.0])).unwrap();
        assert_eq!(run.cycles, 0);
        assert!((run.point - p(&[1.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn disjoint_balls_are_not_certified_feasible() {
        let o = oracle(&[
            ConvexSetSpec::ball(&[0.0, 0.0], 1.0),
            ConvexSetSpec::ball(&[3.0, 0.0], 1.0),
        ]);
        let run = o.run(&p(&[1.5, 2.0])).unwrap();
        assert!(!run.polished);
        assert!(!run.certified());
        assert!((run.residual - 0.5).abs() < 1e-3, "residual {}", run.residual);
        assert!(matches!(o.project(&p(&[1.5, 2.0])), Err(Error::OracleFailure { .. })));
    }

    #[test]
    fn interior_fast_path() {
        let o = oracle(&[ConvexSetSpec::ball(&[0.0, 0.0], 2.0), ConvexSetSpec::cube(&[-1.0, -1.0], &[1.0, 1.0])]);
        let run = o.run(&p(&[0.2, 0.3])).unwrap();
        assert_eq!(run.cycles, 0);
        assert_eq!(run.point, p(&[0.2, 0.3]));
    }

    #[test]
    fn exhausted_budget_reports_failure_with_residual() {
        let cfg = DykstraConfig {
            tolerance: 1e-14,
            max_iterations: 2,
        };
        // Disjoint members: no candidate is feasible, so nothing certifies.
        let o = IntersectionOracle::from_specs(
            &[
                ConvexSetSpec::ball(&[0.0, 0.0], 1.0),
                ConvexSetSpec::ball(&[3.0, 0.0], 1.0),
            ],
            cfg,
        )
        .unwrap();
        match o.project(&p(&[1.5, 2.0])) {
            Err(Error::OracleFailure { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected oracle failure, got {other:?}"),
        }
    }

    #[test]
    fn affine_member_uses_equalities() {
        let o = oracle(&[
            ConvexSetSpec::Affine {
                anchor: vec![0.0, 0.0, 0.0],
                basis: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            },
            ConvexSetSpec::ball(&[0.0, 0.0, 0.5], 1.0),
        ]);
        // plane z = 0 cuts the ball in a disc of radius sqrt(3)/2
        let y = o.project(&p(&[3.0, 0.0, 2.0])).unwrap();
        assert!((y - p(&[0.75f64.sqrt(), 0.0, 0.0])).norm() < 1e-10);
    }

    #[test]
    fn dimension_checked() {
        let o = oracle(&[ConvexSetSpec::ball(&[0.0, 0.0], 1.0)]);
        assert!(matches!(o.run(&p(&[0.0])), Err(Error::DimensionMismatch { .. })));
    }
}
