//! Eigenvalues and eigenvectors of dense complex non-normal matrices.
//!
//! [`eig`] balances the matrix, reduces it to Hessenberg form with Householder
//! reflections and runs single-shift complex QR with deflation to a Schur form
//! `A = Z T Z^H`. Eigenvectors come from back substitution on `T`. Every pair
//! carries its residual against the original matrix.
//!
//! [`eig_subset_near`] finds a few eigenpairs close to a shift by block inverse
//! iteration on any operator that can solve shifted systems.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

type C64 = Complex64;

const EPS: f64 = f64::EPSILON;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("QR iteration did not converge for eigenvalue indices {failed:?}")]
    NoConvergence { failed: Vec<usize> },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("empty matrix")]
    Empty,
    #[error("shifted system is singular at {0}")]
    Singular(C64),
    #[error("inverse iteration near {shift} did not converge; best residual {residual:e}")]
    SubsetNoConvergence { shift: C64, residual: f64 },
    #[error("requested {count} eigenpairs of a dimension-{dim} operator")]
    BadCount { count: usize, dim: usize },
}

/// Square complex matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![C64::new(0.0, 0.0); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Rows given as slices; panics if the rows are not square.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        Self::from_fn(n, |i, j| rows[i][j])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn norm_max(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn norm_frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn conj(&self) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                row.iter().zip(v).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `P A P^T` for the permutation sending index `i` to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut m = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(perm[i], perm[j])] = self[(i, j)];
            }
        }
        m
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: C64,
    /// Unit 2-norm.
    pub vector: Vec<C64>,
    /// `||A v - lambda v||_2` for the unit vector.
    pub residual: f64,
}

/// Anything that can apply itself and solve shifted linear systems.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64]) -> Vec<C64>;
    fn factor_shifted(&self, shift: C64) -> Result<Box<dyn ShiftedSolver + '_>, EigenError>;
    /// Infinity norm of the operator; sets the roundoff floor of residuals.
    fn norm_inf(&self) -> f64;
    /// Eigenvalue estimate for an approximate eigenvector that is more
    /// accurate than the Rayleigh quotient, when the operator has one.
    fn stationary_value(&self, _v: &[C64]) -> Option<C64> {
        None
    }
}

pub trait ShiftedSolver {
    /// Solves `(A - shift) x = b` in place.
    fn solve(&self, b: &mut [C64]);
}

pub fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `|<a, b>| / (|a| |b|)`.
pub fn overlap(a: &[C64], b: &[C64]) -> f64 {
    let d = norm2(a) * norm2(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b).norm() / d
    }
}

pub fn residual<A: LinearOperator + ?Sized>(a: &A, value: C64, v: &[C64]) -> f64 {
    let av = a.apply(v);
    let r: Vec<C64> = av.iter().zip(v).map(|(x, y)| x - value * y).collect();
    norm2(&r) / norm2(v)
}

/// All eigenpairs of `a`, in the order the QR iteration deflates them.
pub fn eig(a: &CMatrix) -> Result<Vec<EigenPair>, EigenError> {
    let n = a.dim();
    if n == 0 {
        return Err(EigenError::Empty);
    }
    if !a.is_finite() {
        return Err(EigenError::NonFinite);
    }
    let mut t = a.clone();
    let scale = balance(&mut t);
    let mut z = hessenberg(&mut t);
    schur(&mut t, &mut z)?;
    let mut pairs = Vec::with_capacity(n);
    for k in 0..n {
        let x = triangular_eigenvector(&t, k);
        let mut v = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for (j, xj) in x.iter().enumerate() {
                s += z[(i, j)] * xj;
            }
            v[i] = s * scale[i];
        }
        let nv = norm2(&v);
        v.iter_mut().for_each(|c| *c /= nv);
        let value = t[(k, k)];
        let res = residual(a, value, &v);
        pairs.push(EigenPair {
            value,
            vector: v,
            residual: res,
        });
    }
    Ok(pairs)
}

/// Eigenvalues only; same iteration as [`eig`] without the vector work.
pub fn eigenvalues(a: &CMatrix) -> Result<Vec<C64>, EigenError> {
    Ok(eig(a)?.into_iter().map(|p| p.value).collect())
}

/// Diagonal scaling by powers of two that equalises row and column norms.
fn balance(a: &mut CMatrix) -> Vec<f64> {
    let n = a.dim();
    let mut d = vec![1.0; n];
    let radix = 2.0_f64;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let (mut c, mut r) = (0.0, 0.0);
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].l1_norm();
                    r += a[(i, j)].l1_norm();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let (mut cc, mut rr) = (c, r);
            while cc < rr / radix {
                f *= radix;
                cc *= radix;
                rr /= radix;
            }
            while cc >= rr * radix {
                f /= radix;
                cc /= radix;
                rr *= radix;
            }
            if (cc + rr) < 0.95 * s {
                done = false;
                d[i] *= f;
                for j in 0..n {
                    a[(i, j)] /= f;
                    a[(j, i)] *= f;
                }
            }
        }
    }
    d
}

/// In-place Householder reduction; returns the accumulated unitary factor.
fn hessenberg(a: &mut CMatrix) -> CMatrix {
    let n = a.dim();
    let mut q = CMatrix::identity(n);
    if n < 3 {
        return q;
    }
    let mut v = vec![C64::new(0.0, 0.0); n];
    for k in 0..n - 2 {
        let alpha_norm: f64 = (k + 1..n).map(|i| a[(i, k)].norm_sqr()).sum::<f64>().sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let x0 = a[(k + 1, k)];
        let phase = if x0.norm() == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            x0 / x0.norm()
        };
        // v = x + phase |x| e1, H = I - 2 v v^H / (v^H v)
        for i in 0..n {
            v[i] = if i > k { a[(i, k)] } else { C64::new(0.0, 0.0) };
        }
        v[k + 1] += phase * alpha_norm;
        let vnorm2: f64 = (k + 1..n).map(|i| v[i].norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // A <- H A
        for j in k..n {
            let s: C64 = (k + 1..n).map(|i| v[i].conj() * a[(i, j)]).sum();
            let s = s * beta;
            for i in k + 1..n {
                a[(i, j)] -= v[i] * s;
            }
        }
        // A <- A H, Q <- Q H
        for m in [&mut *a, &mut q] {
            for i in 0..n {
                let s: C64 = (k + 1..n).map(|j| m[(i, j)] * v[j]).sum();
                let s = s * beta;
                for j in k + 1..n {
                    m[(i, j)] -= s * v[j].conj();
                }
            }
        }
        for i in k + 2..n {
            a[(i, k)] = C64::new(0.0, 0.0);
        }
    }
    q
}

/// Rotation `[c s; -conj(s) c]` mapping `(x, y)` to `(r, 0)`.
fn givens(x: C64, y: C64) -> (f64, C64) {
    let ax = x.norm();
    if y.norm() == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    if ax == 0.0 {
        return (0.0, C64::new(1.0, 0.0));
    }
    let r = ax.hypot(y.norm());
    (ax / r, x * y.conj() / (ax * r))
}

fn wilkinson_shift(a: C64, b: C64, c: C64, d: C64) -> C64 {
    // Eigenvalue of [[a, b], [c, d]] closer to d.
    let tr = a + d;
    let det = a * d - b * c;
    let disc = (tr * tr * 0.25 - det).sqrt();
    let l1 = tr * 0.5 + disc;
    let l2 = tr * 0.5 - disc;
    if (l1 - d).norm() < (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Complex Schur form of a Hessenberg matrix, accumulating into `z`.
fn schur(h: &mut CMatrix, z: &mut CMatrix) -> Result<(), EigenError> {
    let n = h.dim();
    if n == 1 {
        return Ok(());
    }
    let max_iter = 30 * n.max(10);
    let mut total = 0usize;
    let mut hi = n - 1;
    let mut its = 0usize;
    loop {
        if hi == 0 {
            break;
        }
        // Locate the top of the active unreduced block.
        let mut lo = hi;
        while lo > 0 {
            let s = h[(lo - 1, lo - 1)].l1_norm() + h[(lo, lo)].l1_norm();
            let s = if s == 0.0 { h.norm_max() } else { s };
            if h[(lo, lo - 1)].l1_norm() <= EPS * s {
                h[(lo, lo - 1)] = C64::new(0.0, 0.0);
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            hi -= 1;
            its = 0;
            continue;
        }
        its += 1;
        total += 1;
        if total > max_iter {
            return Err(EigenError::NoConvergence {
                failed: (0..=hi).collect(),
            });
        }
        let mu = if its % 11 == 0 {
            // Exceptional shift to break cycles.
            h[(hi, hi)] + C64::new(0.75 * h[(hi, hi - 1)].norm(), 0.0)
        } else {
            wilkinson_shift(
                h[(hi - 1, hi - 1)],
                h[(hi - 1, hi)],
                h[(hi, hi - 1)],
                h[(hi, hi)],
            )
        };
        let mut x = h[(lo, lo)] - mu;
        let mut y = h[(lo + 1, lo)];
        for k in lo..hi {
            if k > lo {
                x = h[(k, k - 1)];
                y = h[(k + 1, k - 1)];
            }
            let (c, s) = givens(x, y);
            let start = if k > lo { k - 1 } else { k };
            for j in start..n {
                let a = h[(k, j)];
                let b = h[(k + 1, j)];
                h[(k, j)] = a * c + s * b;
                h[(k + 1, j)] = b * c - s.conj() * a;
            }
            let stop = (k + 2).min(hi);
            for i in 0..=stop {
                let a = h[(i, k)];
                let b = h[(i, k + 1)];
                h[(i, k)] = a * c + s.conj() * b;
                h[(i, k + 1)] = b * c - s * a;
            }
            for i in 0..n {
                let a = z[(i, k)];
                let b = z[(i, k + 1)];
                z[(i, k)] = a * c + s.conj() * b;
                z[(i, k + 1)] = b * c - s * a;
            }
            if k > lo {
                h[(k + 1, k - 1)] = C64::new(0.0, 0.0);
            }
        }
    }
    Ok(())
}

/// Solves `(T - t_kk) x = 0` with `x_k = 1` by back substitution.
fn triangular_eigenvector(t: &CMatrix, k: usize) -> Vec<C64> {
    let lambda = t[(k, k)];
    let tnorm = t.norm_max().max(f64::MIN_POSITIVE);
    let smin = (EPS * lambda.norm()).max(EPS * tnorm).max(f64::MIN_POSITIVE * 1e10);
    let mut x = vec![C64::new(0.0, 0.0); k + 1];
    x[k] = C64::new(1.0, 0.0);
    for j in (0..k).rev() {
        let mut s = C64::new(0.0, 0.0);
        for m in j + 1..=k {
            s += t[(j, m)] * x[m];
        }
        let mut den = t[(j, j)] - lambda;
        if den.norm() < smin {
            den = C64::new(smin, 0.0);
        }
        x[j] = -s / den;
        let big = x[j].norm();
        if big > 1e100 {
            x.iter_mut().for_each(|c| *c /= big);
        }
    }
    x
}

impl LinearOperator for CMatrix {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.mul_vec(x)
    }
    fn factor_shifted(&self, shift: C64) -> Result<Box<dyn ShiftedSolver + '_>, EigenError> {
        Ok(Box::new(DenseLu::factor(self, shift)?))
    }
    fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// LU with partial pivoting of `A - shift`.
pub struct DenseLu {
    lu: CMatrix,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(a: &CMatrix, shift: C64) -> Result<Self, EigenError> {
        let n = a.dim();
        let mut lu = a.clone();
        for i in 0..n {
            lu[(i, i)] -= shift;
        }
        let scale = lu.norm_max().max(f64::MIN_POSITIVE);
        let mut piv = (0..n).collect::<Vec<_>>();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[(i, k)].norm().total_cmp(&lu[(j, k)].norm()))
                .unwrap();
            if lu[(p, k)].norm() == 0.0 {
                // Perturb exact singularity so inverse iteration still works.
                lu[(p, k)] = C64::new(EPS * scale, 0.0);
            }
            if p != k {
                piv.swap(p, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f.norm() != 0.0 {
                    for j in k + 1..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= f * u;
                    }
                }
            }
        }
        Ok(Self { lu, piv })
    }
}

impl ShiftedSolver for DenseLu {
    fn solve(&self, b: &mut [C64]) {
        let n = self.lu.dim();
        let mut y: Vec<C64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let l = self.lu[(i, j)];
                let yj = y[j];
                y[i] -= l * yj;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = self.lu[(i, j)];
                let yj = y[j];
                y[i] -= u * yj;
            }
            y[i] /= self.lu[(i, i)];
        }
        b.copy_from_slice(&y);
    }
}

/// Options for [`eig_subset_near`].
#[derive(Debug, Clone)]
pub struct SubsetOptions {
    /// Extra block columns beyond `count`.
    pub guard: usize,
    pub max_iter: usize,
    /// Convergence threshold on `residual / max(1, |lambda|)`, counted above
    /// the roundoff floor `16 eps |A|`.
    pub tol: f64,
    /// Looser threshold accepted once the Ritz values stop moving.
    pub stall_tol: f64,
    pub seed: u64,
}

impl Default for SubsetOptions {
    fn default() -> Self {
        Self {
            guard: 4,
            max_iter: 200,
            tol: 1e-12,
            stall_tol: 1e-8,
            seed: 0x5eed,
        }
    }
}

/// The `count` eigenpairs nearest `shift`, sorted by distance.
///
/// `start` optionally seeds the block with vectors from a nearby problem.
pub fn eig_subset_near<A: LinearOperator + ?Sized>(
    a: &A,
    shift: C64,
    count: usize,
    start: &[Vec<C64>],
    opts: &SubsetOptions,
) -> Result<Vec<EigenPair>, EigenError> {
    let n = a.dim();
    if count == 0 || count > n {
        return Err(EigenError::BadCount { count, dim: n });
    }
    let b = (count + opts.guard).min(n);
    block_iteration(a, shift, b, start, opts, |pairs| {
        let mut sel = pairs.to_vec();
        sel.truncate(count);
        Some(sel)
    })
}

/// All eigenpairs with `|lambda - center| <= radius`, sorted by distance.
/// The block grows until the disc is not saturated.
pub fn eig_in_disc<A: LinearOperator + ?Sized>(
    a: &A,
    center: C64,
    radius: f64,
    opts: &SubsetOptions,
) -> Result<Vec<EigenPair>, EigenError> {
    let n = a.dim();
    let mut b = (8 + opts.guard).min(n);
    loop {
        // Converge everything inside a 1.5x margin so no eigenvalue near the
        // rim is missed; demand spare block columns beyond that ring.
        let got = block_iteration(a, center, b, &[], opts, |pairs| {
            let ring = pairs
                .iter()
                .filter(|p| (p.value - center).norm() <= 1.5 * radius)
                .count();
            if ring + opts.guard > b && b < n {
                return None;
            }
            Some(pairs[..ring].to_vec())
        });
        match got {
            Ok(ring) => {
                return Ok(ring
                    .into_iter()
                    .filter(|p| (p.value - center).norm() <= radius)
                    .collect())
            }
            Err(EigenError::BadCount { .. }) if b < n => b = (2 * b).min(n),
            Err(e) => return Err(e),
        }
    }
}

/// Block inverse iteration with Rayleigh–Ritz. `select` picks, from the Ritz
/// pairs sorted by distance to `shift`, those that must converge; `None` means
/// the block is too small.
fn block_iteration<A: LinearOperator + ?Sized>(
    a: &A,
    shift: C64,
    b: usize,
    start: &[Vec<C64>],
    opts: &SubsetOptions,
    select: impl Fn(&[EigenPair]) -> Option<Vec<EigenPair>>,
) -> Result<Vec<EigenPair>, EigenError> {
    let n = a.dim();
    let solver = a.factor_shifted(shift)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis: Vec<Vec<C64>> = start
        .iter()
        .filter(|v| v.len() == n)
        .take(b)
        .cloned()
        .collect();
    while basis.len() < b {
        basis.push(
            (0..n)
                .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect(),
        );
    }
    orthonormalize(&mut basis, &mut rng);
    let mut best = f64::INFINITY;
    let mut prev: Vec<C64> = Vec::new();
    let mut last_good = None;
    let floor = 16.0 * f64::EPSILON * a.norm_inf();
    for it in 0..opts.max_iter {
        for v in basis.iter_mut() {
            solver.solve(v);
        }
        orthonormalize(&mut basis, &mut rng);
        let mut pairs = rayleigh_ritz(a, &basis)?;
        pairs.sort_by(|p, q| (p.value - shift).norm().total_cmp(&(q.value - shift).norm()));
        if it < 2 {
            continue;
        }
        let Some(sel) = select(&pairs) else {
            return Err(EigenError::BadCount { count: b, dim: n });
        };
        let worst = sel
            .iter()
            .map(|p| (p.residual - floor).max(0.0) / p.value.norm().max(1.0))
            .fold(0.0, f64::max);
        best = best.min(worst);
        let stalled = prev.len() == sel.len()
            && sel
                .iter()
                .zip(&prev)
                .all(|(p, q)| (p.value - q).norm() <= 1e-10 * p.value.norm().max(1.0));
        if worst < opts.tol || (stalled && worst < opts.stall_tol) {
            return Ok(polish(a, sel));
        }
        prev = sel.iter().map(|p| p.value).collect();
        if worst < opts.stall_tol {
            last_good = Some(sel);
        }
    }
    if let Some(sel) = last_good {
        return Ok(polish(a, sel));
    }
    Err(EigenError::SubsetNoConvergence {
        shift,
        residual: best,
    })
}

/// Replaces Ritz values by stationary values where the operator offers them
/// and they stay close to the Ritz value.
fn polish<A: LinearOperator + ?Sized>(a: &A, mut pairs: Vec<EigenPair>) -> Vec<EigenPair> {
    for p in &mut pairs {
        if let Some(e) = a.stationary_value(&p.vector) {
            if e.is_finite() && (e - p.value).norm() <= 1e-4 * p.value.norm().max(1.0) {
                p.residual = residual(a, e, &p.vector);
                p.value = e;
            }
        }
    }
    pairs
}

fn orthonormalize(basis: &mut [Vec<C64>], rng: &mut ChaCha8Rng) {
    let n = basis.first().map_or(0, |v| v.len());
    for i in 0..basis.len() {
        for _pass in 0..2 {
            for j in 0..i {
                let (head, tail) = basis.split_at_mut(i);
                let c = dot(&head[j], &tail[0]);
                for (t, h) in tail[0].iter_mut().zip(&head[j]) {
                    *t -= c * h;
                }
            }
        }
        let mut nv = norm2(&basis[i]);
        if nv < 1e-300 || !nv.is_finite() {
            basis[i] = (0..n)
                .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            for j in 0..i {
                let (head, tail) = basis.split_at_mut(i);
                let c = dot(&head[j], &tail[0]);
                for (t, h) in tail[0].iter_mut().zip(&head[j]) {
                    *t -= c * h;
                }
            }
            nv = norm2(&basis[i]);
        }
        basis[i].iter_mut().for_each(|c| *c /= nv);
    }
}

fn rayleigh_ritz<A: LinearOperator + ?Sized>(
    a: &A,
    basis: &[Vec<C64>],
) -> Result<Vec<EigenPair>, EigenError> {
    let m = basis.len();
    let av: Vec<Vec<C64>> = basis.iter().map(|v| a.apply(v)).collect();
    let small = CMatrix::from_fn(m, |i, j| dot(&basis[i], &av[j]));
    let inner = eig(&small)?;
    let n = a.dim();
    Ok(inner
        .into_iter()
        .map(|p| {
            let mut v = vec![C64::new(0.0, 0.0); n];
            let mut w = vec![C64::new(0.0, 0.0); n];
            for (j, yj) in p.vector.iter().enumerate() {
                for i in 0..n {
                    v[i] += basis[j][i] * yj;
                    w[i] += av[j][i] * yj;
                }
            }
            let nv = norm2(&v);
            v.iter_mut().for_each(|c| *c /= nv);
            w.iter_mut().for_each(|c| *c /= nv);
            let r: Vec<C64> = w.iter().zip(&v).map(|(x, y)| x - p.value * y).collect();
            EigenPair {
                value: p.value,
                vector: v,
                residual: norm2(&r),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(n: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(n, |_, _| {
            C64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
        })
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let pairs = eig(&CMatrix::identity(5)).unwrap();
        assert_eq!(pairs.len(), 5);
        for p in pairs {
            assert!((p.value - 1.0).norm() < 1e-15);
            assert!(p.residual < 1e-15);
        }
    }

    #[test]
    fn jordan_block_is_accepted() {
        let z = C64::new(0.0, 0.0);
        let o = C64::new(1.0, 0.0);
        let pairs = eig(&CMatrix::from_rows(&[vec![z, o], vec![z, z]])).unwrap();
        assert_eq!(pairs.len(), 2);
        for p in &pairs {
            assert!(p.value.norm() < 1e-12);
        }
        assert!(pairs.iter().any(|p| p.residual < 1e-12));
    }

    #[test]
    fn residuals_and_trace_on_larger_matrix() {
        let a = random_matrix(60, 11);
        let pairs = eig(&a).unwrap();
        let tr: C64 = pairs.iter().map(|p| p.value).sum();
        assert!((tr - a.trace()).norm() < 1e-10 * a.norm_frobenius());
        for p in &pairs {
            assert!(p.residual < 1e-10, "residual {}", p.residual);
        }
    }

    #[test]
    fn subset_matches_full_decomposition() {
        let a = random_matrix(10, 3);
        let full = eigenvalues(&a).unwrap();
        let target = full[4];
        let got = eig_subset_near(&a, target + 1e-3, 1, &[], &SubsetOptions::default()).unwrap();
        assert!((got[0].value - target).norm() < 1e-10);
        assert!(got[0].residual < 1e-10, "residual {}", got[0].residual);

        let mid = (full[0] + full[1]) * 0.5;
        let two = eig_subset_near(&a, mid, 2, &[], &SubsetOptions::default()).unwrap();
        let mut by_dist = full.clone();
        by_dist.sort_by(|p, q| (p - mid).norm().total_cmp(&(q - mid).norm()));
        for (g, e) in two.iter().zip(&by_dist) {
            assert!((g.value - e).norm() < 1e-8);
        }

        let all = eig_subset_near(&a, C64::new(0.1, 0.0), 10, &[], &SubsetOptions::default())
            .unwrap();
        for e in &full {
            assert!(all.iter().any(|p| (p.value - e).norm() < 1e-8));
        }
    }
}
