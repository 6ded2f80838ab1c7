//! Vertex enumeration and linear feasibility for equality-restricted
//! probability simplices.
//!
//! The feasible sets here are `{p ∈ Δ : A p = b}` with 0/1 coefficient rows.
//! Vertices come from the double-description method: start from the standard
//! simplex and cut one equality hyperplane at a time, keeping on-plane
//! vertices and crossing-edge intersections. Arithmetic is generic so golden
//! tests can run exactly over rationals while large float systems use a
//! 1e-9 tolerance. Feasibility alone goes through a phase-1 simplex method
//! instead, since high-dimensional credal sets have far too many vertices to
//! enumerate.

use num::{BigRational, FromPrimitive, Signed, Zero};
use thiserror::Error;

pub const FLOAT_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PolytopeError {
    #[error("constraint system is infeasible")]
    Infeasible,
    #[error("vertex budget {0} exceeded")]
    VertexBudgetExceeded(usize),
}

/// Field operations the double-description sweep needs.
pub trait Scalar: Clone + PartialOrd {
    fn zero() -> Self;
    fn from_f64(v: f64) -> Self;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn div(&self, other: &Self) -> Self;
    /// Sign with tolerance: -1, 0, +1.
    fn sign(&self) -> i8;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn div(&self, other: &Self) -> Self {
        self / other
    }
    fn sign(&self) -> i8 {
        if self.abs() <= FLOAT_TOL {
            0
        } else if *self > 0.0 {
            1
        } else {
            -1
        }
    }
}

impl Scalar for BigRational {
    fn zero() -> Self {
        num::Zero::zero()
    }
    fn from_f64(v: f64) -> Self {
        <BigRational as FromPrimitive>::from_f64(v).expect("non-finite float")
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn div(&self, other: &Self) -> Self {
        self / other
    }
    fn sign(&self) -> i8 {
        if self.is_zero() {
            0
        } else if self.is_positive() {
            1
        } else {
            -1
        }
    }
}

/// One equality `Σ_{i ∈ support} p_i = rhs`.
#[derive(Debug, Clone)]
pub struct Equality<T> {
    pub support: Vec<usize>,
    pub rhs: T,
}

#[derive(Clone)]
struct Vertex<T> {
    coords: Vec<T>,
    /// Bitset over coordinates: which nonnegativity constraints are tight.
    zeros: Vec<u64>,
}

fn bitset_len(dim: usize) -> usize {
    dim.div_ceil(64)
}

fn bit_set(bits: &mut [u64], i: usize) {
    bits[i / 64] |= 1 << (i % 64);
}

fn bits_and(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x & y).collect()
}

fn bits_subset(sub: &[u64], sup: &[u64]) -> bool {
    sub.iter().zip(sup).all(|(s, p)| s & !p == 0)
}

/// Enumerate all vertices of `{p ∈ Δ_{dim-1} : equalities}` by cutting the
/// standard simplex with one hyperplane at a time.
pub fn enumerate_vertices<T: Scalar>(
    dim: usize,
    equalities: &[Equality<T>],
    budget: usize,
) -> Result<Vec<Vec<T>>, PolytopeError> {
    let words = bitset_len(dim);
    let mut vertices: Vec<Vertex<T>> = (0..dim)
        .map(|i| {
            let mut coords = vec![T::zero(); dim];
            coords[i] = T::from_f64(1.0);
            let mut zeros = vec![0u64; words];
            for j in 0..dim {
                if j != i {
                    bit_set(&mut zeros, j);
                }
            }
            Vertex { coords, zeros }
        })
        .collect();

    for eq in equalities {
        let residual = |v: &Vertex<T>| -> T {
            let mut s = T::zero();
            for &i in &eq.support {
                s = s.add(&v.coords[i]);
            }
            s.sub(&eq.rhs)
        };
        let signs: Vec<i8> = vertices.iter().map(|v| residual(v).sign()).collect();
        let mut kept: Vec<Vertex<T>> = Vec::new();
        let mut pos: Vec<usize> = Vec::new();
        let mut neg: Vec<usize> = Vec::new();
        for (i, &s) in signs.iter().enumerate() {
            match s {
                0 => kept.push(vertices[i].clone()),
                1 => pos.push(i),
                _ => neg.push(i),
            }
        }
        for &ip in &pos {
            for &in_ in &neg {
                if !adjacent(&vertices, ip, in_) {
                    continue;
                }
                let u = &vertices[ip];
                let w = &vertices[in_];
                let su = residual(u);
                let sw = residual(w);
                // x = λu + (1-λ)w with λ = s_w / (s_w - s_u), λ ∈ (0,1)
                let lambda = sw.div(&sw.sub(&su));
                let one = T::from_f64(1.0);
                let mu = one.sub(&lambda);
                let coords: Vec<T> = u
                    .coords
                    .iter()
                    .zip(&w.coords)
                    .map(|(a, b)| lambda.mul(a).add(&mu.mul(b)))
                    .collect();
                let zeros = bits_and(&u.zeros, &w.zeros);
                kept.push(Vertex { coords, zeros });
                if kept.len() > budget {
                    return Err(PolytopeError::VertexBudgetExceeded(budget));
                }
            }
        }
        vertices = dedup_vertices(kept);
        if vertices.is_empty() {
            return Err(PolytopeError::Infeasible);
        }
        if vertices.len() > budget {
            return Err(PolytopeError::VertexBudgetExceeded(budget));
        }
    }
    Ok(vertices.into_iter().map(|v| v.coords).collect())
}

/// Combinatorial adjacency: u,w are adjacent iff no third vertex is tight on
/// every constraint tight at both.
fn adjacent<T: Scalar>(vertices: &[Vertex<T>], a: usize, b: usize) -> bool {
    let common = bits_and(&vertices[a].zeros, &vertices[b].zeros);
    for (i, v) in vertices.iter().enumerate() {
        if i != a && i != b && bits_subset(&common, &v.zeros) {
            return false;
        }
    }
    true
}

fn dedup_vertices<T: Scalar>(vertices: Vec<Vertex<T>>) -> Vec<Vertex<T>> {
    let mut out: Vec<Vertex<T>> = Vec::with_capacity(vertices.len());
    'outer: for v in vertices {
        for seen in &out {
            let same = v
                .coords
                .iter()
                .zip(&seen.coords)
                .all(|(a, b)| a.sub(b).sign() == 0);
            if same {
                continue 'outer;
            }
        }
        out.push(v);
    }
    out
}

/// Phase-1 simplex feasibility of `{p ≥ 0, Σp = 1, A p = b}`.
///
/// Minimizes the sum of artificial variables with Bland's rule; feasible iff
/// the optimum is ≤ tolerance.
pub fn feasible(dim: usize, equalities: &[Equality<f64>], tol: f64) -> bool {
    // rows: the equalities plus the normalization row
    let m = equalities.len() + 1;
    let n = dim + m; // original + one artificial per row
    let mut tab = vec![vec![0.0f64; n + 1]; m + 1];
    for (r, eq) in equalities.iter().enumerate() {
        let flip = eq.rhs < 0.0;
        for &i in &eq.support {
            tab[r][i] = if flip { -1.0 } else { 1.0 };
        }
        tab[r][n] = eq.rhs.abs();
        tab[r][dim + r] = 1.0;
    }
    let last = m - 1;
    for i in 0..dim {
        tab[last][i] = 1.0;
    }
    tab[last][dim + last] = 1.0;
    tab[last][n] = 1.0;

    // objective: minimize sum of artificials, reduced against the basis
    for r in 0..m {
        tab[m][dim + r] = 1.0;
    }
    for r in 0..m {
        for c in 0..=n {
            tab[m][c] -= tab[r][c];
        }
    }
    let mut basis: Vec<usize> = (0..m).map(|r| dim + r).collect();

    let max_iters = 50 * (n + m);
    for _ in 0..max_iters {
        // Bland: entering = lowest-index column with negative reduced cost
        let Some(enter) = (0..n).find(|&c| tab[m][c] < -1e-12) else {
            break;
        };
        // ratio test, Bland ties by row basis index
        let mut best: Option<(f64, usize, usize)> = None;
        for r in 0..m {
            if tab[r][enter] > 1e-12 {
                let ratio = tab[r][n] / tab[r][enter];
                let key = (ratio, basis[r]);
                if best
                    .map(|(br, bb, _)| (key.0, key.1) < (br, bb))
                    .unwrap_or(true)
                {
                    best = Some((ratio, basis[r], r));
                }
            }
        }
        let Some((_, _, row)) = best else {
            break; // unbounded cannot happen here, defensive exit
        };
        let pivot = tab[row][enter];
        for c in 0..=n {
            tab[row][c] /= pivot;
        }
        for r in 0..=m {
            if r != row {
                let f = tab[r][enter];
                if f != 0.0 {
                    for c in 0..=n {
                        tab[r][c] -= f * tab[row][c];
                    }
                }
            }
        }
        basis[row] = enter;
    }
    let objective = -tab[m][n];
    objective.abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn eq(support: Vec<usize>, rhs: f64) -> Equality<f64> {
        Equality { support, rhs }
    }

    #[test]
    fn unconstrained_simplex_has_unit_vertices() {
        let vs = enumerate_vertices::<f64>(3, &[], 100).unwrap();
        assert_eq!(vs.len(), 3);
    }

    #[test]
    fn single_equality_interval() {
        // p0 = 0.3 on the 3-simplex: vertices (0.3, 0.7, 0) and (0.3, 0, 0.7)
        let vs = enumerate_vertices(3, &[eq(vec![0], 0.3)], 100).unwrap();
        assert_eq!(vs.len(), 2);
        for v in &vs {
            assert_abs_diff_eq!(v[0], 0.3, epsilon = 1e-12);
            assert_abs_diff_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn infeasible_system_detected() {
        let eqs = vec![eq(vec![0], 0.9), eq(vec![0, 1], 0.5)];
        assert_eq!(
            enumerate_vertices(3, &eqs, 100).unwrap_err(),
            PolytopeError::Infeasible
        );
        assert!(!feasible(3, &eqs, FLOAT_TOL));
    }

    #[test]
    fn feasibility_agrees_with_enumeration() {
        let eqs = vec![eq(vec![0, 1], 0.4), eq(vec![1, 2], 0.8)];
        assert!(feasible(3, &eqs, FLOAT_TOL));
        let vs = enumerate_vertices(3, &eqs, 100).unwrap();
        assert!(!vs.is_empty());
        for v in &vs {
            assert_abs_diff_eq!(v[0] + v[1], 0.4, epsilon = 1e-9);
            assert_abs_diff_eq!(v[1] + v[2], 0.8, epsilon = 1e-9);
        }
    }

    #[test]
    fn rational_mode_is_exact() {
        let third = BigRational::new(1.into(), 3.into());
        let eqs = vec![Equality {
            support: vec![0, 1],
            rhs: third.clone(),
        }];
        let vs = enumerate_vertices(4, &eqs, 100).unwrap();
        // p0+p1 = 1/3 over the 4-simplex: vertices combine {p0,p1} at 1/3
        // with {p2,p3} at 2/3.
        assert_eq!(vs.len(), 4);
        for v in &vs {
            let s = v[0].clone() + v[1].clone();
            assert_eq!(s, third);
        }
    }

    #[test]
    fn degenerate_point_polytope() {
        let eqs = vec![eq(vec![0], 1.0)];
        let vs = enumerate_vertices(3, &eqs, 100).unwrap();
        assert_eq!(vs.len(), 1);
        assert_abs_diff_eq!(vs[0][0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn budget_is_enforced() {
        // A generic cut of the 30-simplex produces many vertices.
        let support: Vec<usize> = (0..15).collect();
        let eqs = vec![eq(support, 0.5)];
        match enumerate_vertices(30, &eqs, 10) {
            Err(PolytopeError::VertexBudgetExceeded(10)) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
    }
}
