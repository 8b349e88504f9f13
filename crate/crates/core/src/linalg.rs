//! Dense complex matrix helpers built on nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues in ascending order.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Columns are the normalized eigenvectors.
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn new(h: &CMat) -> Self {
        let eig = h.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let dim = h.nrows();
        let mut vectors = CMat::zeros(dim, dim);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        HermitianEigen { values, vectors }
    }

    /// exp(-i H t) assembled from the stored decomposition.
    pub fn propagator(&self, t: f64) -> CMat {
        let phases: Vec<Complex64> = self
            .values
            .iter()
            .map(|&e| Complex64::from_polar(1.0, -e * t))
            .collect();
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= phases[j];
        }
        scaled * self.vectors.adjoint()
    }

    /// Express an operator in the eigenbasis: V† A V.
    pub fn to_eigenbasis(&self, a: &CMat) -> CMat {
        self.vectors.adjoint() * a * &self.vectors
    }
}

/// exp(-i H t) for Hermitian H.
pub fn propagator(h: &CMat, t: f64) -> CMat {
    if t == 0.0 {
        return identity(h.nrows());
    }
    HermitianEigen::new(h).propagator(t)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// Largest entry modulus.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn hermiticity_deviation(a: &CMat) -> f64 {
    max_abs(&(a - a.adjoint()))
}

pub fn unitarity_deviation(u: &CMat) -> f64 {
    max_abs(&(u.adjoint() * u - identity(u.nrows())))
}

pub fn trace(a: &CMat) -> Complex64 {
    a.diagonal().iter().sum()
}

/// Tr(A B) without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// U ρ U†.
pub fn conjugate(u: &CMat, rho: &CMat) -> CMat {
    u * rho * u.adjoint()
}

/// Euclidean cross product.
pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
