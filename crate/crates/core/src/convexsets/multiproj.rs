//! Multi-projection words and sampling from the hull of their images.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ConvexSet, Point};
use crate::error::{Error, Result};

/// A finite sequence of set indices `(i_1, ..., i_k)`, applied left to right:
/// the image of `x` is `P_{i_k}(... P_{i_1}(x))`. Indices are zero-based.
/// The empty word is the identity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiProjectionWord(pub Vec<usize>);

impl MultiProjectionWord {
    pub fn identity() -> Self {
        MultiProjectionWord(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_sets: usize, max_depth: usize) -> Self {
        let depth = rng.random_range(0..=max_depth);
        MultiProjectionWord((0..depth).map(|_| rng.random_range(0..n_sets)).collect())
    }
}

pub fn apply_word(word: &MultiProjectionWord, sets: &[ConvexSet], x: &Point) -> Result<Point> {
    if let Some(&bad) = word.0.iter().find(|&&i| i >= sets.len()) {
        return Err(Error::Precondition(format!(
            "word index {bad} out of range for {} sets",
            sets.len()
        )));
    }
    word.0.iter().try_fold(x.clone(), |y, &i| sets[i].project(&y))
}

/// Uniform sample from the probability simplex with `n` vertices, via the
/// spacings of sorted uniforms.
pub fn flat_simplex_weights<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut cuts: Vec<f64> = (0..n - 1).map(|_| rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(n);
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(1.0 - prev);
    out
}

/// `Σ weights[k] · word_k(point_k)`.
pub fn combine_delta_terms(
    terms: &[(MultiProjectionWord, Point)],
    weights: &[f64],
    sets: &[ConvexSet],
) -> Result<Point> {
    if terms.is_empty() || terms.len() != weights.len() {
        return Err(Error::Precondition("need one weight per delta term".into()));
    }
    let mut y = Point::zeros(terms[0].1.len());
    for ((word, z), &l) in terms.iter().zip(weights) {
        y.axpy(l, &apply_word(word, sets, z)?, 1.0);
    }
    Ok(y)
}

/// Random element of the hull of multi-projection images of
/// `K = co{generators}`: `m + 1` (word, hull point) pairs combined with flat
/// simplex weights.
pub fn sample_delta_point<R: Rng + ?Sized>(
    generators: &[Point],
    sets: &[ConvexSet],
    max_depth: usize,
    rng: &mut R,
) -> Result<Point> {
    let first = generators
        .first()
        .ok_or_else(|| Error::Precondition("need at least one generator".into()))?;
    let m = first.len();
    let terms = (0..=m)
        .map(|_| {
            let word = if sets.is_empty() {
                MultiProjectionWord::identity()
            } else {
                MultiProjectionWord::random(rng, sets.len(), max_depth)
            };
            let lam = flat_simplex_weights(rng, generators.len());
            let mut z = Point::zeros(m);
            for (g, l) in generators.iter().zip(lam) {
                z.axpy(l, g, 1.0);
            }
            (word, z)
        })
        .collect::<Vec<_>>();
    let weights = flat_simplex_weights(rng, m + 1);
    combine_delta_terms(&terms, &weights, sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convexsets::ConvexSetSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(v: &[f64]) -> Point {
        Point::from_column_slice(v)
    }

    #[test]
    fn empty_word_is_identity() {
        let x = p(&[3.0, -1.0]);
        assert_eq!(apply_word(&MultiProjectionWord::identity(), &[], &x).unwrap(), x);
    }

    #[test]
    fn single_projection() {
        let sets = [ConvexSetSpec::ball(&[0.0, 0.0], 1.0).compile().unwrap()];
        let y = apply_word(&MultiProjectionWord(vec![0]), &sets, &p(&[2.0, 0.0])).unwrap();
        assert_eq!(y, p(&[1.0, 0.0]));
    }

    #[test]
    fn sequential_halfspaces() {
        let sets = [
            ConvexSetSpec::halfspace(&[1.0, 0.0], 0.0).compile().unwrap(),
            ConvexSetSpec::halfspace(&[0.0, 1.0], 0.0).compile().unwrap(),
        ];
        // (2, 1) in one-based notation
        let y = apply_word(&MultiProjectionWord(vec![1, 0]), &sets, &p(&[1.0, 1.0])).unwrap();
        assert_eq!(y, p(&[0.0, 0.0]));
    }

    #[test]
    fn bad_index() {
        assert!(apply_word(&MultiProjectionWord(vec![2]), &[], &p(&[0.0])).is_err());
    }

    #[test]
    fn depth_zero_single_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sets = [ConvexSetSpec::ball(&[5.0, 5.0], 1.0).compile().unwrap()];
        let g = p(&[0.25, -0.5]);
        let y = sample_delta_point(&[g.clone()], &sets, 0, &mut rng).unwrap();
        assert!((y - g).norm() < 1e-15);
    }

    #[test]
    fn unit_weight_selects_term() {
        let sets = [ConvexSetSpec::ball(&[0.0, 0.0], 1.0).compile().unwrap()];
        let terms = vec![
            (MultiProjectionWord::identity(), p(&[4.0, 4.0])),
            (MultiProjectionWord(vec![0]), p(&[9.0, 0.0])),
            (MultiProjectionWord(vec![0]), p(&[0.0, 9.0])),
        ];
        let y = combine_delta_terms(&terms, &[1.0, 0.0, 0.0], &sets).unwrap();
        assert_eq!(y, p(&[4.0, 4.0]));
    }

    #[test]
    fn simplex_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..8 {
            let w = flat_simplex_weights(&mut rng, n);
            assert_eq!(w.len(), n);
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
