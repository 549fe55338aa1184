//! Spatial permutations of flattened feature maps and executable
//! equivariance / invariance checks.
//!
//! A permutation `π` acts on `X: [s×c]` by `T_π(X) = P_π·X`, where row `i`
//! of `P_π` is the one-hot vector `e_{π(i)}`: row `i` of the result is row
//! `π(i)` of the input. Grids are flattened row-major, index `y*w + x`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationKind {
    /// Quarter turn counter-clockwise; square grids only.
    Rotation90,
    /// Mirror left-right.
    FlipH,
    /// Mirror top-bottom.
    FlipV,
    /// Content moves by `(dx, dy)` with wrap-around.
    CyclicShift { dx: isize, dy: isize },
    /// Seeded Fisher–Yates shuffle.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSpec {
    map: Vec<usize>,
    kind: Option<PermutationKind>,
    grid: Option<(usize, usize)>,
}

impl PermutationSpec {
    /// Wraps an explicit index map, checking that it is a bijection.
    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &j in &map {
            if j >= map.len() || std::mem::replace(&mut seen[j], true) {
                return Err(Error::usage(format!("{map:?} is not a permutation")));
            }
        }
        Ok(Self {
            map,
            kind: None,
            grid: None,
        })
    }

    pub fn identity(s: usize) -> Self {
        Self {
            map: (0..s).collect(),
            kind: None,
            grid: None,
        }
    }

    pub fn size(&self) -> usize {
        self.map.len()
    }

    /// `π` as a 0-based index map.
    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn kind(&self) -> Option<PermutationKind> {
        self.kind
    }

    /// `(w, h)` when built from a 2-D grid.
    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &j) in self.map.iter().enumerate() {
            inv[j] = i;
        }
        Self {
            map: inv,
            kind: None,
            grid: self.grid,
        }
    }

    /// The permutation that applies `self` first and then `next`.
    pub fn then(&self, next: &Self) -> Result<Self> {
        if self.size() != next.size() {
            return Err(Error::dim("composing permutations of different sizes"));
        }
        // T_next(T_self(X)) row i = T_self(X) row next(i) = X row self(next(i)).
        Ok(Self {
            map: next.map.iter().map(|&j| self.map[j]).collect(),
            kind: None,
            grid: self.grid,
        })
    }

    /// The block permutation `diag(I_r, P_π)` acting on `[R; X]`.
    pub fn with_fixed_prefix(&self, r: usize) -> Self {
        Self {
            map: (0..r).chain(self.map.iter().map(|&j| j + r)).collect(),
            kind: None,
            grid: None,
        }
    }

    /// Dense `P_π` with row `i` equal to `e_{π(i)}`.
    pub fn matrix<T: Element>(&self) -> Tensor<T> {
        let s = self.size();
        let mut p = Tensor::zeros(&[s, s]);
        for (i, &j) in self.map.iter().enumerate() {
            p.data_mut()[i * s + j] = T::one();
        }
        p
    }
}

fn grid_map(w: usize, h: usize, f: impl Fn(usize, usize) -> (usize, usize)) -> Vec<usize> {
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| {
            let (sy, sx) = f(y, x);
            sy * w + sx
        })
        .collect()
}

/// Builds the index map realizing `kind` on a row-major `w×h` grid.
pub fn make_permutation(kind: PermutationKind, w: usize, h: usize) -> Result<PermutationSpec> {
    if w == 0 || h == 0 {
        return Err(Error::config("permutation grid must be non-empty"));
    }
    let map = match kind {
        PermutationKind::Rotation90 => {
            if w != h {
                return Err(Error::config(format!(
                    "rotation90 needs a square grid, got {w}×{h}"
                )));
            }
            grid_map(w, h, |y, x| (x, w - 1 - y))
        }
        PermutationKind::FlipH => grid_map(w, h, |y, x| (y, w - 1 - x)),
        PermutationKind::FlipV => grid_map(w, h, |y, x| (h - 1 - y, x)),
        PermutationKind::CyclicShift { dx, dy } => grid_map(w, h, |y, x| {
            (
                (y as isize - dy).rem_euclid(h as isize) as usize,
                (x as isize - dx).rem_euclid(w as isize) as usize,
            )
        }),
        PermutationKind::Random { seed } => {
            let mut map: Vec<usize> = (0..w * h).collect();
            map.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            map
        }
    };
    Ok(PermutationSpec {
        map,
        kind: Some(kind),
        grid: Some((w, h)),
    })
}

/// `T_π(x)`: row `i` of the output is row `π(i)` of `x`.
pub fn apply_permutation<T: Element>(spec: &PermutationSpec, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (s, c) = x.dims2()?;
    if s != spec.size() {
        return Err(Error::dim(format!(
            "permutation of size {} applied to {s} rows",
            spec.size()
        )));
    }
    let src = x.data();
    let data = spec
        .map
        .iter()
        .flat_map(|&j| src[j * c..(j + 1) * c].iter().copied())
        .collect();
    Tensor::new(&[s, c], data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertyReport {
    pub max_abs_err: f64,
    pub tol: f64,
    pub passed: bool,
}

impl PropertyReport {
    fn new(max_abs_err: f64, tol: f64) -> Self {
        Self {
            max_abs_err,
            tol,
            passed: max_abs_err <= tol,
        }
    }
}

/// `‖op(T_π(x)) − T_π(op(x))‖∞ ≤ tol`.
pub fn check_equivariance<T: Element, F>(
    op: F,
    x: &Tensor<T>,
    spec: &PermutationSpec,
    tol: f64,
) -> Result<PropertyReport>
where
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    let (s, _) = x.dims2()?;
    let y = op(x)?;
    let (ys, _) = y.dims2()?;
    if ys != s {
        return Err(Error::usage(format!(
            "equivariance is undefined for an operator mapping {s} positions to {ys}"
        )));
    }
    let lhs = op(&apply_permutation(spec, x)?)?;
    let rhs = apply_permutation(spec, &y)?;
    Ok(PropertyReport::new(lhs.max_abs_diff(&rhs)?, tol))
}

/// `‖op(T_π(x)) − op(x)‖∞ ≤ tol`.
pub fn check_invariance<T: Element, F>(
    op: F,
    x: &Tensor<T>,
    spec: &PermutationSpec,
    tol: f64,
) -> Result<PropertyReport>
where
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    let y = op(x)?;
    let yp = op(&apply_permutation(spec, x)?)?;
    if y.shape() != yp.shape() {
        return Err(Error::usage(format!(
            "operator output shape changed under permutation: {:?} vs {:?}",
            y.shape(),
            yp.shape()
        )));
    }
    Ok(PropertyReport::new(yp.max_abs_diff(&y)?, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{
        learned_query_attention, self_attention, shared_reference_attention, AttentionParams,
        LearnedQuery, NormMode,
    };
    use crate::tensor::matmul;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    const ALL_KINDS: [PermutationKind; 5] = [
        PermutationKind::Rotation90,
        PermutationKind::FlipH,
        PermutationKind::FlipV,
        PermutationKind::CyclicShift { dx: 1, dy: -2 },
        PermutationKind::Random { seed: 17 },
    ];

    #[test]
    fn flip_h_on_two_pixels() {
        let p = make_permutation(PermutationKind::FlipH, 2, 1).unwrap();
        assert_eq!(p.map(), &[1, 0]);
    }

    #[test]
    fn rotation_has_order_four() {
        let r = make_permutation(PermutationKind::Rotation90, 5, 5).unwrap();
        let r4 = r.then(&r).unwrap().then(&r).unwrap().then(&r).unwrap();
        assert!(r4.is_identity());
        assert!(!r.then(&r).unwrap().is_identity());
    }

    #[test]
    fn rotation_needs_square_grid() {
        assert!(matches!(
            make_permutation(PermutationKind::Rotation90, 4, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn random_is_bijection() {
        let p = make_permutation(PermutationKind::Random { seed: 3 }, 4, 4).unwrap();
        assert!(PermutationSpec::from_map(p.map().to_vec()).is_ok());
        assert!(PermutationSpec::from_map(vec![0, 0, 1]).is_err());
    }

    #[test]
    fn cyclic_shift_moves_content() {
        let p = make_permutation(PermutationKind::CyclicShift { dx: 1, dy: 0 }, 3, 1).unwrap();
        // Content moves right by one: out[1] = in[0].
        assert_eq!(p.map(), &[2, 0, 1]);
    }

    #[test]
    fn matrix_is_orthogonal_and_matches_apply() {
        let mut r = rng(1);
        for kind in ALL_KINDS {
            let p = make_permutation(kind, 4, 4).unwrap();
            let m = p.matrix::<f64>();
            let ptp = matmul(&m.transpose2().unwrap(), &m).unwrap();
            assert_eq!(ptp, Tensor::eye(16), "{kind:?}");
            let x = Tensor::<f64>::randn(&[16, 3], 1.0, &mut r);
            assert_eq!(apply_permutation(&p, &x).unwrap(), matmul(&m, &x).unwrap());
        }
    }

    #[test]
    fn swap_rows_and_inverse_round_trip() {
        let p = PermutationSpec::from_map(vec![0, 2, 1]).unwrap();
        let x = Tensor::<f64>::from_f64(&[3, 2], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let y = apply_permutation(&p, &x).unwrap();
        assert_eq!(y.data(), &[1., 2., 5., 6., 3., 4.]);
        assert_eq!(y, matmul(&p.matrix(), &x).unwrap());
        let id = PermutationSpec::identity(3);
        assert_eq!(apply_permutation(&id, &x).unwrap(), x);

        let q = make_permutation(PermutationKind::Random { seed: 9 }, 6, 1).unwrap();
        let z = Tensor::<f64>::randn(&[6, 2], 1.0, &mut rng(2));
        let back = apply_permutation(&q.inverse(), &apply_permutation(&q, &z).unwrap()).unwrap();
        assert_eq!(back, z);
    }

    #[test]
    fn size_mismatch_is_dimension_error() {
        let p = PermutationSpec::identity(3);
        assert!(matches!(
            apply_permutation(&p, &Tensor::<f64>::zeros(&[4, 1])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn block_matrix_keeps_references_fixed() {
        let mut r = rng(3);
        let refs = Tensor::<f64>::randn(&[3, 2], 1.0, &mut r);
        let x = Tensor::<f64>::randn(&[9, 2], 1.0, &mut r);
        let p = make_permutation(PermutationKind::Rotation90, 3, 3).unwrap();
        let stacked = Tensor::vstack(&[&refs, &x]).unwrap();
        let block = p.with_fixed_prefix(3).matrix::<f64>();
        let lhs = matmul(&block, &stacked).unwrap();
        let px = apply_permutation(&p, &x).unwrap();
        let rhs = Tensor::vstack(&[&refs, &px]).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn pointwise_ops_are_exactly_equivariant() {
        let x = Tensor::<f64>::randn(&[12, 2], 1.0, &mut rng(4));
        let p = make_permutation(PermutationKind::FlipV, 4, 3).unwrap();
        let rep = check_equivariance(|t| Ok(t.scale(2.0)), &x, &p, 0.0).unwrap();
        assert_eq!(rep.max_abs_err, 0.0);
        assert!(rep.passed);
    }

    #[test]
    fn column_mean_is_invariant() {
        let x = Tensor::<f64>::randn(&[16, 3], 1.0, &mut rng(5));
        let p = make_permutation(PermutationKind::Random { seed: 1 }, 4, 4).unwrap();
        let mean = |t: &Tensor<f64>| {
            let (s, c) = t.dims2()?;
            let sums = (0..c).map(|j| (0..s).map(|i| t.at2(i, j)).sum::<f64>() / s as f64);
            Tensor::new(&[1, c], sums.collect())
        };
        assert!(check_invariance(mean, &x, &p, 1e-12).unwrap().passed);
        // Changes the spatial size, so equivariance is undefined.
        assert!(matches!(check_equivariance(mean, &x, &p, 1e-12), Err(Error::Usage(_))));
    }

    #[test]
    fn attention_theorem_pairs() {
        let mut r = rng(6);
        let params = AttentionParams::<f64>::init(4, 0, NormMode::Division, &mut r);
        let x = Tensor::<f64>::randn(&[16, 4], 1.0, &mut r);
        let p = make_permutation(PermutationKind::Random { seed: 2 }, 4, 4).unwrap();

        let sa = |t: &Tensor<f64>| self_attention(t, &params);
        assert!(check_equivariance(sa, &x, &p, 1e-10).unwrap().passed);
        assert!(!check_invariance(sa, &x, &p, 1e-10).unwrap().passed);

        let lq = LearnedQuery::random(16, 2, 1.0, &mut r);
        let la = |t: &Tensor<f64>| learned_query_attention(t, &params, &lq);
        assert!(check_invariance(la, &x, &p, 1e-10).unwrap().passed);
        assert!(!check_equivariance(la, &x, &p, 1e-10).unwrap().passed);

        let with_refs = params.clone().with_refs(Tensor::randn(&[5, 4], 1.0, &mut r));
        let ar = |t: &Tensor<f64>| shared_reference_attention(t, &with_refs);
        assert!(check_equivariance(ar, &x, &p, 1e-10).unwrap().passed);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn every_kind_is_a_bijection(w in 1usize..9, h in 1usize..9, dx in -9isize..9, dy in -9isize..9, seed: u64) {
            let mut kinds = vec![
                PermutationKind::FlipH,
                PermutationKind::FlipV,
                PermutationKind::CyclicShift { dx, dy },
                PermutationKind::Random { seed },
            ];
            if w == h {
                kinds.push(PermutationKind::Rotation90);
            }
            for kind in kinds {
                let p = make_permutation(kind, w, h).unwrap();
                prop_assert!(PermutationSpec::from_map(p.map().to_vec()).is_ok());
                prop_assert!(p.then(&p.inverse()).unwrap().is_identity());
            }
        }

        #[test]
        fn shared_references_equivariant_softmax(seed: u64, s in 2usize..20, c in 1usize..6, r in 0usize..6) {
            let mut g = rng(seed);
            let mut params = AttentionParams::<f64>::init(c, r, NormMode::Softmax, &mut g);
            params.q = crate::attention::Projection::random(c, params.q.out_features(), 1.0, &mut g);
            let x = Tensor::<f64>::randn(&[s, c], 1.0, &mut g);
            let p = make_permutation(PermutationKind::Random { seed }, s, 1).unwrap();
            let rep = check_equivariance(|t| shared_reference_attention(t, &params), &x, &p, 1e-10).unwrap();
            prop_assert!(rep.passed, "{:?}", rep);
        }
    }
}
