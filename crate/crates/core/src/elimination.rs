//! Subtraction-free Gaussian elimination for generator-type matrices.
//!
//! Both routines work on the off-diagonal rates only. Diagonals are rebuilt
//! as sums of nonnegative quantities at every pivot, so no step subtracts two
//! positive numbers and every computed entry keeps its relative accuracy even
//! when the chain's rates or stationary masses span hundreds of orders of
//! magnitude. The stationary routine is the Grassmann–Taksar–Heyman scheme;
//! the linear solver applies the same idea to the nonsingular M-matrices that
//! arise when a target state is removed.

/// Dense row-major square buffer of nonnegative off-diagonal rates.
#[derive(Debug, Clone)]
pub(crate) struct OffDiagonal {
    n: usize,
    data: Vec<f64>,
}

impl OffDiagonal {
    pub(crate) fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub(crate) fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.n + k]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, k: usize, v: f64) {
        self.data[i * self.n + k] = v;
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }
}

/// Unnormalised stationary vector by GTH elimination.
///
/// Returns `None` if some pivot vanishes, which only happens for reducible
/// input.
pub(crate) fn gth_stationary(off: &OffDiagonal) -> Option<Vec<f64>> {
    let n = off.len();
    if n == 1 {
        return Some(vec![1.0]);
    }
    let mut a = off.clone();
    let mut pivots = vec![0.0; n];
    for p in (1..n).rev() {
        let d: f64 = (0..p).map(|k| a.get(p, k)).sum();
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        pivots[p] = d;
        for i in 0..p {
            let a_ip = a.get(i, p);
            if a_ip == 0.0 {
                continue;
            }
            let l = a_ip / d;
            for k in 0..p {
                if k != i {
                    let v = a.get(i, k) + l * a.get(p, k);
                    a.set(i, k, v);
                }
            }
        }
    }

    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for p in 1..n {
        let mass: f64 = (0..p).map(|i| pi[i] * a.get(i, p)).sum();
        pi[p] = mass / pivots[p];
        if pi[p] > 1e200 {
            // keep the running vector inside the exponent range
            for v in pi.iter_mut().take(p + 1) {
                *v *= 1e-200;
            }
        }
    }
    Some(pi)
}

/// Solves `M x = b` where `M` is the generator restricted to `states`,
/// negated, i.e. an M-matrix with off-diagonal entries `-off(i, k)` and row
/// sums `leak[i] >= 0`. The right-hand side must be nonnegative.
///
/// Returns `None` when a pivot vanishes (no leak reachable from some state).
pub(crate) fn solve_m_matrix(off: &OffDiagonal, leak: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = off.len();
    debug_assert_eq!(leak.len(), n);
    debug_assert_eq!(rhs.len(), n);
    let mut a = off.clone();
    let mut leak = leak.to_vec();
    let mut rhs = rhs.to_vec();
    let mut pivots = vec![0.0; n];

    for p in 0..n {
        let d = leak[p] + (p + 1..n).map(|k| a.get(p, k)).sum::<f64>();
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        pivots[p] = d;
        for i in p + 1..n {
            let a_ip = a.get(i, p);
            if a_ip == 0.0 {
                continue;
            }
            let l = a_ip / d;
            for k in p + 1..n {
                if k != i {
                    let v = a.get(i, k) + l * a.get(p, k);
                    a.set(i, k, v);
                }
            }
            leak[i] += l * leak[p];
            rhs[i] += l * rhs[p];
        }
    }

    let mut x = vec![0.0; n];
    for p in (0..n).rev() {
        let coupled: f64 = (p + 1..n).map(|k| a.get(p, k) * x[k]).sum();
        x[p] = (rhs[p] + coupled) / pivots[p];
    }
    Some(x)
}
