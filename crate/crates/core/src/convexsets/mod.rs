//! Closed convex sets, their projectors, and the machinery built on top of
//! them: the intersection oracle, convex-hull distance, and multi-projection
//! words.
//!
//! A set enters the crate as a [`ConvexSetSpec`] (the serializable,
//! parametric description used in scenario files) and is compiled into a
//! [`ConvexSet`] before use. Compilation validates the parameters once and
//! precomputes whatever the projector needs.

mod dykstra;
mod hull;
mod multiproj;

pub use dykstra::{DykstraConfig, DykstraRun, IntersectionOracle, FEASIBILITY_TOL};
pub use hull::{hull_distance, min_norm_point};
pub use multiproj::{apply_word, combine_delta_terms, flat_simplex_weights, sample_delta_point, MultiProjectionWord};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = DVector<f64>;

/// A point is treated as a member of a set when its distance is at most this.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Orthonormality tolerance for affine bases.
const ORTHONORMAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceSpec {
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// Parametric description of a closed convex set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexSetSpec {
    /// `{x : <normal, x> <= offset}`
    Halfspace { normal: Vec<f64>, offset: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `anchor + span(basis)`; basis rows must be orthonormal.
    Affine { anchor: Vec<f64>, basis: Vec<Vec<f64>> },
    Polyhedron { halfspaces: Vec<HalfspaceSpec> },
    /// Projected with the intersection oracle.
    Intersection { members: Vec<ConvexSetSpec> },
}

impl ConvexSetSpec {
    pub fn halfspace(normal: &[f64], offset: f64) -> Self {
        ConvexSetSpec::Halfspace {
            normal: normal.to_vec(),
            offset,
        }
    }

    pub fn ball(center: &[f64], radius: f64) -> Self {
        ConvexSetSpec::Ball {
            center: center.to_vec(),
            radius,
        }
    }

    pub fn cube(lo: &[f64], hi: &[f64]) -> Self {
        ConvexSetSpec::Box {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
        }
    }

    /// Ambient dimension, if it can be read off the parameters.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ConvexSetSpec::Halfspace { normal, .. } => Some(normal.len()),
            ConvexSetSpec::Ball { center, .. } => Some(center.len()),
            ConvexSetSpec::Box { lo, .. } => Some(lo.len()),
            ConvexSetSpec::Affine { anchor, .. } => Some(anchor.len()),
            ConvexSetSpec::Polyhedron { halfspaces } => halfspaces.first().map(|h| h.normal.len()),
            ConvexSetSpec::Intersection { members } => members.first().and_then(|s| s.dim()),
        }
    }

    /// True when the set is bounded by construction (contains a Ball or Box
    /// at some level of an intersection).
    pub fn structurally_bounded(&self) -> bool {
        match self {
            ConvexSetSpec::Ball { .. } | ConvexSetSpec::Box { .. } => true,
            ConvexSetSpec::Affine { basis, .. } => basis.is_empty(),
            ConvexSetSpec::Intersection { members } => members.iter().any(|s| s.structurally_bounded()),
            _ => false,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ConvexSetSpec::Halfspace { .. } => "halfspace",
            ConvexSetSpec::Ball { .. } => "ball",
            ConvexSetSpec::Box { .. } => "box",
            ConvexSetSpec::Affine { .. } => "affine",
            ConvexSetSpec::Polyhedron { .. } => "polyhedron",
            ConvexSetSpec::Intersection { .. } => "intersection",
        }
    }

    /// Checks every parameter invariant against ambient dimension `m`.
    pub fn check(&self, m: usize) -> Result<()> {
        let dim = |len: usize| {
            if len == m {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected: m, got: len })
            }
        };
        let finite = |v: &[f64], what: &str| {
            if v.iter().all(|c| c.is_finite()) {
                Ok(())
            } else {
                Err(Error::InvalidSet(format!("{what} has non-finite entries")))
            }
        };
        match self {
            ConvexSetSpec::Halfspace { normal, offset } => check_halfspace(normal, *offset, m),
            ConvexSetSpec::Ball { center, radius } => {
                dim(center.len())?;
                finite(center, "ball center")?;
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidSet(format!("ball radius must be positive, got {radius}")));
                }
                Ok(())
            }
            ConvexSetSpec::Box { lo, hi } => {
                dim(lo.len())?;
                dim(hi.len())?;
                finite(lo, "box lo")?;
                finite(hi, "box hi")?;
                if let Some(k) = (0..m).find(|&k| lo[k] > hi[k]) {
                    return Err(Error::InvalidSet(format!("box has lo > hi in coordinate {k}")));
                }
                Ok(())
            }
            ConvexSetSpec::Affine { anchor, basis } => {
                dim(anchor.len())?;
                finite(anchor, "affine anchor")?;
                if basis.len() > m {
                    return Err(Error::InvalidSet("affine basis has more vectors than dimensions".into()));
                }
                for (a, u) in basis.iter().enumerate() {
                    dim(u.len())?;
                    for (b, v) in basis.iter().enumerate().skip(a) {
                        let dot: f64 = u.iter().zip(v).map(|(p, q)| p * q).sum();
                        let want = if a == b { 1.0 } else { 0.0 };
                        if (dot - want).abs() > ORTHONORMAL_TOL {
                            return Err(Error::InvalidSet(format!(
                                "affine basis is not orthonormal (<u{a}, u{b}> = {dot})"
                            )));
                        }
                    }
                }
                Ok(())
            }
            ConvexSetSpec::Polyhedron { halfspaces } => {
                if halfspaces.is_empty() {
                    return Err(Error::InvalidSet("polyhedron needs at least one halfspace".into()));
                }
                halfspaces
                    .iter()
                    .try_for_each(|h| check_halfspace(&h.normal, h.offset, m))
            }
            ConvexSetSpec::Intersection { members } => {
                if members.is_empty() {
                    return Err(Error::InvalidSet("intersection needs at least one member".into()));
                }
                members.iter().try_for_each(|s| s.check(m))
            }
        }
    }

    pub fn compile(&self) -> Result<ConvexSet> {
        ConvexSet::from_spec(self, DykstraConfig::default())
    }
}

fn check_halfspace(normal: &[f64], offset: f64, m: usize) -> Result<()> {
    if normal.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: normal.len(),
        });
    }
    if !normal.iter().all(|c| c.is_finite()) || !offset.is_finite() {
        return Err(Error::InvalidSet("halfspace has non-finite parameters".into()));
    }
    if normal.iter().all(|&c| c == 0.0) {
        return Err(Error::InvalidSet("halfspace normal must be nonzero".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Halfspace {
    normal: Point,
    offset: f64,
    norm_sq: f64,
}

impl Halfspace {
    pub fn new(normal: Point, offset: f64) -> Self {
        let norm_sq = normal.norm_squared();
        Halfspace {
            normal,
            offset,
            norm_sq,
        }
    }

    pub fn normal(&self) -> &Point {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    fn excess(&self, x: &Point) -> f64 {
        self.normal.dot(x) - self.offset
    }

    fn project(&self, x: &Point) -> Point {
        let e = self.excess(x);
        if e <= 0.0 {
            x.clone()
        } else {
            x - &self.normal * (e / self.norm_sq)
        }
    }

    /// Normal-scaled slack tolerance used when testing candidate feasibility.
    fn satisfied_by(&self, x: &Point) -> bool {
        self.excess(x) <= 1e-12 * (1.0 + self.offset.abs()) * self.norm_sq.sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct Ball {
    center: Point,
    radius: f64,
}

impl Ball {
    pub fn center(&self) -> &Point {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn project(&self, x: &Point) -> Point {
        let d = x - &self.center;
        let n = d.norm();
        if n <= self.radius {
            x.clone()
        } else {
            &self.center + d * (self.radius / n)
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoxSet {
    lo: Point,
    hi: Point,
}

impl BoxSet {
    fn project(&self, x: &Point) -> Point {
        Point::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .map(|(&v, (&l, &h))| v.clamp(l, h)),
        )
    }
}

#[derive(Debug, Clone)]
pub struct AffineSet {
    anchor: Point,
    /// m x k, orthonormal columns
    basis: DMatrix<f64>,
    /// m x (m - k), orthonormal columns spanning the normal space
    complement: DMatrix<f64>,
}

impl AffineSet {
    fn new(anchor: Point, rows: &[Vec<f64>]) -> Self {
        let m = anchor.len();
        let k = rows.len();
        let basis = DMatrix::from_fn(m, k, |i, j| rows[j][i]);
        // Normal space: eigenvectors of I - U U^T with eigenvalue one.
        let proj = DMatrix::<f64>::identity(m, m) - &basis * basis.transpose();
        let eig = proj.symmetric_eigen();
        let cols: Vec<Point> = eig
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &lam)| lam > 0.5)
            .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
            .collect();
        let complement = if cols.is_empty() {
            DMatrix::zeros(m, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        AffineSet {
            anchor,
            basis,
            complement,
        }
    }

    fn project(&self, x: &Point) -> Point {
        let rel = x - &self.anchor;
        &self.anchor + &self.basis * (self.basis.transpose() * rel)
    }
}

/// A validated, compiled convex set with an exact or iterative projector.
#[derive(Debug, Clone)]
pub enum ConvexSet {
    Halfspace(Halfspace),
    Ball(Ball),
    Box(BoxSet),
    Affine(AffineSet),
    /// Polyhedron with at most two halfspaces, projected in closed form.
    Polyhedron(Vec<Halfspace>),
    Intersection(IntersectionOracle),
}

impl ConvexSet {
    /// Compiles a spec. Polyhedra with more than two halfspaces become
    /// intersections of halfspaces.
    pub fn from_spec(spec: &ConvexSetSpec, config: DykstraConfig) -> Result<Self> {
        let m = spec
            .dim()
            .ok_or_else(|| Error::InvalidSet(format!("cannot infer dimension of {}", spec.kind_name())))?;
        spec.check(m)?;
        let v = |s: &[f64]| Point::from_column_slice(s);
        Ok(match spec {
            ConvexSetSpec::Halfspace { normal, offset } => ConvexSet::Halfspace(Halfspace::new(v(normal), *offset)),
            ConvexSetSpec::Ball { center, radius } => ConvexSet::Ball(Ball {
                center: v(center),
                radius: *radius,
            }),
            ConvexSetSpec::Box { lo, hi } => ConvexSet::Box(BoxSet { lo: v(lo), hi: v(hi) }),
            ConvexSetSpec::Affine { anchor, basis } => ConvexSet::Affine(AffineSet::new(v(anchor), basis)),
            ConvexSetSpec::Polyhedron { halfspaces } if halfspaces.len() <= 2 => ConvexSet::Polyhedron(
                halfspaces
                    .iter()
                    .map(|h| Halfspace::new(v(&h.normal), h.offset))
                    .collect(),
            ),
            ConvexSetSpec::Polyhedron { halfspaces } => {
                let members = halfspaces
                    .iter()
                    .map(|h| ConvexSet::Halfspace(Halfspace::new(v(&h.normal), h.offset)))
                    .collect();
                ConvexSet::Intersection(IntersectionOracle::new(members, config)?)
            }
            ConvexSetSpec::Intersection { members } => {
                let members = members
                    .iter()
                    .map(|s| ConvexSet::from_spec(s, config))
                    .collect::<Result<Vec<_>>>()?;
                ConvexSet::Intersection(IntersectionOracle::new(members, config)?)
            }
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Halfspace(h) => h.normal.len(),
            ConvexSet::Ball(b) => b.center.len(),
            ConvexSet::Box(b) => b.lo.len(),
            ConvexSet::Affine(a) => a.anchor.len(),
            ConvexSet::Polyhedron(hs) => hs[0].normal.len(),
            ConvexSet::Intersection(o) => o.dim(),
        }
    }

    fn check_point(&self, x: &Point) -> Result<()> {
        let m = self.dim();
        if x.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: x.len() });
        }
        Ok(())
    }

    /// The nearest point of the set to `x`.
    pub fn project(&self, x: &Point) -> Result<Point> {
        self.check_point(x)?;
        self.project_unchecked(x)
    }

    pub(crate) fn project_unchecked(&self, x: &Point) -> Result<Point> {
        Ok(match self {
            ConvexSet::Halfspace(h) => h.project(x),
            ConvexSet::Ball(b) => b.project(x),
            ConvexSet::Box(b) => b.project(x),
            ConvexSet::Affine(a) => a.project(x),
            ConvexSet::Polyhedron(hs) => project_polyhedron(hs, x)?,
            ConvexSet::Intersection(o) => o.project(x)?,
        })
    }

    /// Euclidean distance from `x` to the set.
    pub fn distance(&self, x: &Point) -> Result<f64> {
        Ok((x - self.project(x)?).norm())
    }

    /// Gradient of the squared distance, `2 (x - P(x))`.
    pub fn sqdist_gradient(&self, x: &Point) -> Result<Point> {
        Ok((x - self.project(x)?) * 2.0)
    }

    pub fn contains(&self, x: &Point) -> Result<bool> {
        Ok(self.distance(x)? <= MEMBERSHIP_TOL)
    }

    /// Primitive constraints whose conjunction describes the set.
    pub(crate) fn constraints(&self, out: &mut Vec<dykstra::Constraint>) {
        use dykstra::Constraint;
        match self {
            ConvexSet::Halfspace(h) => out.push(Constraint::le(&h.normal, h.offset)),
            ConvexSet::Ball(b) => out.push(Constraint::Sphere {
                center: b.center.clone(),
                radius: b.radius,
            }),
            ConvexSet::Box(b) => {
                let m = b.lo.len();
                for k in 0..m {
                    let mut e = Point::zeros(m);
                    e[k] = 1.0;
                    out.push(Constraint::le(&e, b.hi[k]));
                    out.push(Constraint::le(&(-&e), -b.lo[k]));
                }
            }
            ConvexSet::Affine(a) => {
                for c in a.complement.column_iter() {
                    let c = c.into_owned();
                    let off = c.dot(&a.anchor);
                    out.push(Constraint::eq(&c, off));
                }
            }
            ConvexSet::Polyhedron(hs) => {
                for h in hs {
                    out.push(Constraint::le(&h.normal, h.offset));
                }
            }
            ConvexSet::Intersection(o) => o.collect_constraints(out),
        }
    }
}

/// Closed-form projection onto one or two halfspaces by active-set
/// enumeration.
fn project_polyhedron(hs: &[Halfspace], x: &Point) -> Result<Point> {
    match hs {
        [h] => Ok(h.project(x)),
        [h1, h2] => {
            if h1.excess(x) <= 0.0 && h2.excess(x) <= 0.0 {
                return Ok(x.clone());
            }
            let p1 = h1.project(x);
            if h2.satisfied_by(&p1) {
                return Ok(p1);
            }
            let p2 = h2.project(x);
            if h1.satisfied_by(&p2) {
                return Ok(p2);
            }
            // Both constraints active: project onto the intersection of the
            // two bounding hyperplanes.
            let g11 = h1.norm_sq;
            let g22 = h2.norm_sq;
            let g12 = h1.normal.dot(&h2.normal);
            let det = g11 * g22 - g12 * g12;
            if det.abs() <= 1e-14 * g11 * g22 {
                return Err(Error::InvalidSet("polyhedron with parallel halfspaces is empty".into()));
            }
            let r1 = h1.excess(x);
            let r2 = h2.excess(x);
            let l1 = (g22 * r1 - g12 * r2) / det;
            let l2 = (g11 * r2 - g12 * r1) / det;
            Ok(x - &h1.normal * l1 - &h2.normal * l2)
        }
        _ => unreachable!("closed-form polyhedron holds one or two halfspaces"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Point, b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    #[test]
    fn halfspace_projection() {
        let s = ConvexSetSpec::halfspace(&[1.0, 0.0], 1.0).compile().unwrap();
        assert!(close(&s.project(&p(&[3.0, 0.0])).unwrap(), &[1.0, 0.0], 1e-15));
    }

    #[test]
    fn ball_interior_is_fixed() {
        let s = ConvexSetSpec::ball(&[0.0, 0.0], 1.0).compile().unwrap();
        assert!(close(&s.project(&p(&[0.5, 0.0])).unwrap(), &[0.5, 0.0], 0.0));
    }

    #[test]
    fn box_clamps() {
        let s = ConvexSetSpec::cube(&[0.0, 0.0], &[1.0, 1.0]).compile().unwrap();
        assert!(close(&s.project(&p(&[2.0, -1.0])).unwrap(), &[1.0, 0.0], 0.0));
    }

    #[test]
    fn distances() {
        let ball = ConvexSetSpec::ball(&[0.0, 0.0], 1.0).compile().unwrap();
        assert_eq!(ball.distance(&p(&[2.0, 0.0])).unwrap(), 1.0);
        assert_eq!(ball.distance(&p(&[0.3, -0.2])).unwrap(), 0.0);
        let h = ConvexSetSpec::halfspace(&[0.0, 1.0], 0.0).compile().unwrap();
        assert_eq!(h.distance(&p(&[5.0, 3.0])).unwrap(), 3.0);
    }

    #[test]
    fn gradients() {
        let ball = ConvexSetSpec::ball(&[0.0, 0.0], 1.0).compile().unwrap();
        assert!(close(&ball.sqdist_gradient(&p(&[2.0, 0.0])).unwrap(), &[2.0, 0.0], 1e-15));
        assert!(close(&ball.sqdist_gradient(&p(&[0.1, 0.1])).unwrap(), &[0.0, 0.0], 0.0));
        let bx = ConvexSetSpec::cube(&[0.0, 0.0], &[1.0, 1.0]).compile().unwrap();
        assert!(close(&bx.sqdist_gradient(&p(&[2.0, -1.0])).unwrap(), &[2.0, -2.0], 0.0));
    }

    #[test]
    fn affine_projection_and_constraints() {
        let s = 0.5f64.sqrt();
        let spec = ConvexSetSpec::Affine {
            anchor: vec![0.0, 0.0, 1.0],
            basis: vec![vec![s, s, 0.0]],
        };
        let set = spec.compile().unwrap();
        let y = set.project(&p(&[1.0, 0.0, 0.0])).unwrap();
        assert!(close(&y, &[0.5, 0.5, 1.0], 1e-15));
        let mut cons = Vec::new();
        set.constraints(&mut cons);
        assert_eq!(cons.len(), 2);
    }

    #[test]
    fn two_halfspace_polyhedron_corner() {
        let spec = ConvexSetSpec::Polyhedron {
            halfspaces: vec![
                HalfspaceSpec { normal: vec![1.0, 0.0], offset: 0.0 },
                HalfspaceSpec { normal: vec![0.0, 1.0], offset: 0.0 },
            ],
        };
        let set = spec.compile().unwrap();
        assert!(close(&set.project(&p(&[2.0, 3.0])).unwrap(), &[0.0, 0.0], 1e-15));
        assert!(close(&set.project(&p(&[-2.0, 3.0])).unwrap(), &[-2.0, 0.0], 1e-15));
        // Oblique wedge: corner is the projection of points in the dual cone.
        let wedge = ConvexSetSpec::Polyhedron {
            halfspaces: vec![
                HalfspaceSpec { normal: vec![1.0, 1.0], offset: 1.0 },
                HalfspaceSpec { normal: vec![1.0, -1.0], offset: 1.0 },
            ],
        }
        .compile()
        .unwrap();
        assert!(close(&wedge.project(&p(&[5.0, 0.0])).unwrap(), &[1.0, 0.0], 1e-14));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ConvexSetSpec::halfspace(&[0.0, 0.0], 1.0).compile().is_err());
        assert!(ConvexSetSpec::ball(&[0.0], 0.0).compile().is_err());
        assert!(ConvexSetSpec::cube(&[1.0], &[0.0]).compile().is_err());
        let bad = ConvexSetSpec::Affine {
            anchor: vec![0.0, 0.0],
            basis: vec![vec![1.0, 1e-3]],
        };
        assert!(matches!(bad.compile(), Err(Error::InvalidSet(_))));
    }

    #[test]
    fn dimension_mismatch() {
        let ball = ConvexSetSpec::ball(&[0.0, 0.0], 1.0).compile().unwrap();
        assert_eq!(
            ball.project(&p(&[1.0])).unwrap_err(),
            Error::DimensionMismatch { expected: 2, got: 1 }
        );
    }

    #[test]
    fn structural_boundedness() {
        assert!(ConvexSetSpec::ball(&[0.0], 1.0).structurally_bounded());
        assert!(!ConvexSetSpec::halfspace(&[1.0], 1.0).structurally_bounded());
        let inter = ConvexSetSpec::Intersection {
            members: vec![ConvexSetSpec::halfspace(&[1.0], 1.0), ConvexSetSpec::cube(&[0.0], &[1.0])],
        };
        assert!(inter.structurally_bounded());
    }

    #[test]
    fn spec_toml_shape() {
        let text = r#"
kind = "intersection"
[[members]]
kind = "ball"
center = [0.0, 0.0]
radius = 1.0
[[members]]
kind = "halfspace"
normal = [1.0, 0.0]
offset = 0.5
"#;
        let spec: ConvexSetSpec = toml::from_str(text).unwrap();
        assert_eq!(spec.kind_name(), "intersection");
        let unknown = "kind = \"ball\"\ncenter = [0.0]\nradius = 1.0\ncolour = 3\n";
        assert!(toml::from_str::<ConvexSetSpec>(unknown).is_err());
    }
}
