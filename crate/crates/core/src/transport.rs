//! Wasserstein-2 distances and the Gaussian stationary-law oracle.
//!
//! Between two equal-size, equal-weight point clouds the optimal coupling is
//! a permutation, so `W2` is solved exactly as a linear assignment problem on
//! squared Euclidean costs. Gaussians use the Bures–Wasserstein closed form.

use nalgebra::{DMatrix, DVector};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::{check_psd, psd_sqrt, sym_part};
use crate::scalar::Real;

/// Equal-weight point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure<T: Real> {
    points: Vec<DVector<T>>,
}

impl<T: Real> EmpiricalMeasure<T> {
    pub fn new(points: Vec<DVector<T>>) -> Result<Self> {
        let first = points.first().ok_or_else(|| arg_err("empirical measure needs at least one point"))?;
        let d = first.len();
        if points.iter().any(|p| p.len() != d) {
            return Err(dim_err("points of an empirical measure must share one dimension"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[DVector<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// The first `n` points (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Self {
        Self {
            points: self.points[..n.min(self.points.len())].to_vec(),
        }
    }

    /// Points `[from, from + n)`.
    pub fn slice(&self, from: usize, n: usize) -> Result<Self> {
        if from + n > self.points.len() || n == 0 {
            return Err(arg_err(format!(
                "slice [{from}, {}) out of range for {} points",
                from + n,
                self.points.len()
            )));
        }
        Ok(Self {
            points: self.points[from..from + n].to_vec(),
        })
    }

    /// Push-forward under `f`.
    pub fn map(&self, f: impl Fn(&DVector<T>) -> DVector<T>) -> Result<Self> {
        Self::new(self.points.iter().map(f).collect())
    }
}

/// Optimal pairing `i -> permutation[i]` between two equal-size clouds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingPlan {
    pub permutation: Vec<usize>,
}

impl CouplingPlan {
    pub fn is_bijection(&self) -> bool {
        let n = self.permutation.len();
        let mut seen = vec![false; n];
        for &j in &self.permutation {
            if j >= n || seen[j] {
                return false;
            }
            seen[j] = true;
        }
        true
    }

    /// `(1/N) Σ |p_i - q_{π(i)}|^2`.
    pub fn cost<T: Real>(&self, p: &EmpiricalMeasure<T>, q: &EmpiricalMeasure<T>) -> T {
        let n = T::from_usize(p.len()).expect("count fits");
        self.permutation
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &j)| acc + (&p.points[i] - &q.points[j]).norm_squared())
            / n
    }
}

fn check_pair<T: Real>(p: &EmpiricalMeasure<T>, q: &EmpiricalMeasure<T>) -> Result<()> {
    if p.len() != q.len() {
        return Err(dim_err(format!("sample counts differ: {} vs {}", p.len(), q.len())));
    }
    if p.dim() != q.dim() {
        return Err(dim_err(format!("dimensions differ: {} vs {}", p.dim(), q.dim())));
    }
    Ok(())
}

/// Minimum-cost perfect matching on a dense `n x n` cost matrix (row-major).
///
/// Shortest augmenting paths with dual potentials, `O(n^3)`.
pub fn solve_assignment<T: Real>(cost: &[T], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    let inf = T::max_value().expect("real scalar has a maximum");
    // 1-based columns; column 0 is the virtual source.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|f| *f = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let base = (i0 - 1) * n;
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[base + j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    perm
}

fn cost_matrix<T: Real>(p: &EmpiricalMeasure<T>, q: &EmpiricalMeasure<T>) -> Vec<T> {
    let n = p.len();
    let mut c = Vec::with_capacity(n * n);
    for a in &p.points {
        for b in &q.points {
            c.push((a - b).norm_squared());
        }
    }
    c
}

/// Exact empirical `W2` and an optimal plan.
pub fn w2_empirical_exact<T: Real>(p: &EmpiricalMeasure<T>, q: &EmpiricalMeasure<T>) -> Result<(T, CouplingPlan)> {
    check_pair(p, q)?;
    let n = p.len();
    let permutation = if p.dim() == 1 {
        // On the line the monotone rearrangement is optimal.
        let order = |m: &EmpiricalMeasure<T>| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| m.points[a][0].partial_cmp(&m.points[b][0]).unwrap_or(std::cmp::Ordering::Equal));
            idx
        };
        let (op, oq) = (order(p), order(q));
        let mut perm = vec![0; n];
        for (a, b) in op.into_iter().zip(oq) {
            perm[a] = b;
        }
        perm
    } else {
        solve_assignment(&cost_matrix(p, q), n)
    };
    let plan = CouplingPlan { permutation };
    let c = plan.cost(p, q);
    Ok((c.max(T::zero()).sqrt(), plan))
}

/// Largest instance accepted by the brute-force solver.
pub const BRUTE_FORCE_MAX: usize = 8;

/// `W2` by enumerating all `N!` bijections (`N <= 8`).
pub fn w2_empirical_bruteforce<T: Real>(p: &EmpiricalMeasure<T>, q: &EmpiricalMeasure<T>) -> Result<T> {
    check_pair(p, q)?;
    let n = p.len();
    if n > BRUTE_FORCE_MAX {
        return Err(arg_err(format!("brute force refuses N = {n} > {BRUTE_FORCE_MAX}")));
    }
    let cost = cost_matrix(p, q);
    let eval = |perm: &[usize]| {
        perm.iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &j)| acc + cost[i * n + j])
    };
    // Heap's algorithm
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let v = eval(&perm);
            if v < best {
                best = v;
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((best / T::from_usize(n).expect("count fits")).max(T::zero()).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure<T: Real> {
    mean: DVector<T>,
    covariance: DMatrix<T>,
}

impl<T: Real> GaussianMeasure<T> {
    pub fn new(mean: DVector<T>, covariance: DMatrix<T>) -> Result<Self> {
        if covariance.shape() != (mean.len(), mean.len()) {
            return Err(dim_err("covariance must be square with the mean's dimension"));
        }
        check_psd(&covariance)?;
        Ok(Self { mean, covariance })
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.covariance
    }
}

/// `tr(Σ1 + Σ2 - 2 (Σ2^{1/2} Σ1 Σ2^{1/2})^{1/2})`, one ordering.
fn bures_sq<T: Real>(s1: &DMatrix<T>, s2: &DMatrix<T>) -> Result<T> {
    let r2 = psd_sqrt(s2)?;
    let inner = sym_part(&(&r2 * s1 * &r2));
    let cross = psd_sqrt(&inner)?;
    Ok(s1.trace() + s2.trace() - cross.trace() * T::lit(2.0))
}

/// Closed-form `W2` between Gaussians, symmetrised over argument order.
pub fn w2_gaussian<T: Real>(g1: &GaussianMeasure<T>, g2: &GaussianMeasure<T>) -> Result<T> {
    if g1.mean.len() != g2.mean.len() {
        return Err(dim_err("Gaussian dimensions differ"));
    }
    let shift = (&g1.mean - &g2.mean).norm_squared();
    let b = (bures_sq(&g1.covariance, &g2.covariance)? + bures_sq(&g2.covariance, &g1.covariance)?) * T::lit(0.5);
    Ok((shift + b.max(T::zero())).sqrt())
}

/// Sample mean and unbiased sample covariance.
pub fn fit_gaussian<T: Real>(p: &EmpiricalMeasure<T>) -> Result<GaussianMeasure<T>> {
    let n = p.len();
    if n < 2 {
        return Err(arg_err("fitting a Gaussian needs at least 2 points"));
    }
    let k = T::from_usize(n).expect("count fits");
    let d = p.dim();
    let mean = p.points.iter().fold(DVector::zeros(d), |acc, x| acc + x) / k;
    let mut cov = DMatrix::<T>::zeros(d, d);
    for x in &p.points {
        let c = x - &mean;
        cov += &c * c.transpose();
    }
    cov /= k - T::one();
    let cov = sym_part(&cov);
    Ok(GaussianMeasure { mean, covariance: cov })
}

/// Largest real part over the spectrum of `a`.
pub fn spectral_abscissa<T: Real>(a: &DMatrix<T>) -> T {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(T::lit(f64::NEG_INFINITY), |m, r| if r > m { r } else { m })
}

/// `|A Σ + Σ A^T + B B^T|_max`.
pub fn lyapunov_residual<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, sigma: &DMatrix<T>) -> T {
    (a * sigma + sigma * a.transpose() + b * b.transpose()).amax()
}

/// Stationary covariance of `dX = A X dt + B dW`: the solution of
/// `A Σ + Σ A^T + B B^T = 0`, found by vectorising
/// `(I ⊗ A + A ⊗ I) vec Σ = -vec(B B^T)`.
pub fn lyapunov_stationary<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return Err(dim_err("A must be n x n and B must have n rows"));
    }
    let abscissa = spectral_abscissa(a);
    if !(abscissa < T::zero()) {
        return Err(Error::NotHurwitz(abscissa.to_f64_lossy()));
    }
    let id = DMatrix::<T>::identity(n, n);
    let lhs = id.kronecker(a) + a.kronecker(&id);
    let rhs = -DVector::from_column_slice((b * b.transpose()).as_slice());
    let vec_sigma = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotHurwitz(abscissa.to_f64_lossy()))?;
    Ok(sym_part(&DMatrix::from_column_slice(n, n, vec_sigma.as_slice())))
}
