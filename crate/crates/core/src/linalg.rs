//! Tiny dense matrices (at most 4x4) used pointwise: Jacobians, symbols,
//! constant forms. Row-major `Vec`-free storage sized at runtime.

use crate::scalar::Real;

/// Square matrix of side 2 or 4, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallMat<T: Real> {
    n: usize,
    a: [T; 16],
}

impl<T: Real> SmallMat<T> {
    pub fn zeros(n: usize) -> Self {
        assert!(n <= 4);
        Self {
            n,
            a: [T::zero(); 16],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.a[i * 4 + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.a[i * 4 + j] = v;
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::from_fn(self.n, |i, j| {
            (0..self.n).fold(T::zero(), |s, k| s + self.get(i, k) * other.get(k, j))
        })
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| (0..self.n).fold(T::zero(), |s, k| s + self.get(i, k) * v[k]))
            .collect()
    }

    pub fn scale(&self, c: T) -> Self {
        Self::from_fn(self.n, |i, j| self.get(i, j) * c)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(i, j) + other.get(i, j))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut m = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                m = m.max((self.get(i, j) - other.get(i, j)).mag());
            }
        }
        m
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn det(&self) -> T {
        match self.n {
            1 => self.get(0, 0),
            2 => self.get(0, 0) * self.get(1, 1) - self.get(0, 1) * self.get(1, 0),
            _ => {
                let mut m = self.clone();
                let mut det = T::one();
                for c in 0..m.n {
                    let p = (c..m.n)
                        .max_by(|&x, &y| m.get(x, c).mag().partial_cmp(&m.get(y, c).mag()).unwrap())
                        .unwrap();
                    if m.get(p, c) == T::zero() {
                        return T::zero();
                    }
                    if p != c {
                        for j in 0..m.n {
                            let t = m.get(c, j);
                            m.set(c, j, m.get(p, j));
                            m.set(p, j, t);
                        }
                        det = -det;
                    }
                    let piv = m.get(c, c);
                    det = det * piv;
                    for r in c + 1..m.n {
                        let f = m.get(r, c) / piv;
                        for j in c..m.n {
                            let v = m.get(r, j) - f * m.get(c, j);
                            m.set(r, j, v);
                        }
                    }
                }
                det
            }
        }
    }

    /// Inverse by Gauss-Jordan; `None` when singular.
    pub fn inverse(&self) -> Option<Self> {
        let n = self.n;
        if n == 2 {
            let d = self.det();
            if d == T::zero() {
                return None;
            }
            let mut m = Self::zeros(2);
            m.set(0, 0, self.get(1, 1) / d);
            m.set(0, 1, -self.get(0, 1) / d);
            m.set(1, 0, -self.get(1, 0) / d);
            m.set(1, 1, self.get(0, 0) / d);
            return Some(m);
        }
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| a.get(x, c).mag().partial_cmp(&a.get(y, c).mag()).unwrap())
                .unwrap();
            if a.get(p, c) == T::zero() {
                return None;
            }
            for j in 0..n {
                let (t, u) = (a.get(c, j), inv.get(c, j));
                a.set(c, j, a.get(p, j));
                inv.set(c, j, inv.get(p, j));
                a.set(p, j, t);
                inv.set(p, j, u);
            }
            let piv = a.get(c, c);
            for j in 0..n {
                a.set(c, j, a.get(c, j) / piv);
                inv.set(c, j, inv.get(c, j) / piv);
            }
            for r in 0..n {
                if r != c {
                    let f = a.get(r, c);
                    if f != T::zero() {
                        for j in 0..n {
                            a.set(r, j, a.get(r, j) - f * a.get(c, j));
                            inv.set(r, j, inv.get(r, j) - f * inv.get(c, j));
                        }
                    }
                }
            }
        }
        Some(inv)
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).mag() <= tol))
    }

    /// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<T> {
        let n = self.n;
        let mut a = self.clone();
        for _sweep in 0..64 {
            let mut off = T::zero();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off = off + a.get(i, j) * a.get(i, j);
                    }
                }
            }
            let scale = (0..n).fold(T::zero(), |s, i| s + a.get(i, i) * a.get(i, i));
            if off <= T::eps() * T::eps() * scale || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a.get(p, q);
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a.get(q, q) - a.get(p, p)) / (T::lit(2.0) * apq);
                    let sign = if theta >= T::zero() {
                        T::one()
                    } else {
                        -T::one()
                    };
                    let t = sign / (theta.mag() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..n {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                }
            }
        }
        let mut ev: Vec<T> = (0..n).map(|i| a.get(i, i)).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev
    }
}
