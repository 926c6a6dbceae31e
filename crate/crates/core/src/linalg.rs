//! Small dense helpers that nalgebra does not provide directly.

use nalgebra::{DMatrix, DVector};

/// Householder QR with column pivoting on the remaining column norms
/// (Businger–Golub), so |R_kk| is non-increasing and the numerical rank can
/// be read off the diagonal.
#[derive(Debug, Clone)]
pub(crate) struct PivotedQr {
    /// Householder vectors below the diagonal (implicit unit head), R on and above.
    packed: DMatrix<f64>,
    tau: Vec<f64>,
    rdiag: Vec<f64>,
}

impl PivotedQr {
    pub(crate) fn new(a: &DMatrix<f64>) -> Self {
        let (n, m) = a.shape();
        let kmax = n.min(m);
        let mut packed = a.clone();
        let mut tau = Vec::with_capacity(kmax);
        let mut rdiag = Vec::with_capacity(kmax);
        for k in 0..kmax {
            let mut best = k;
            let mut best_norm = -1.0;
            for j in k..m {
                let nrm: f64 = packed.view((k, j), (n - k, 1)).norm_squared();
                if nrm > best_norm {
                    best_norm = nrm;
                    best = j;
                }
            }
            packed.swap_columns(k, best);

            let alpha = packed[(k, k)];
            let norm = best_norm.sqrt();
            if norm == 0.0 {
                tau.push(0.0);
                rdiag.push(0.0);
                continue;
            }
            let beta = if alpha >= 0.0 { -norm } else { norm };
            let scale = 1.0 / (alpha - beta);
            for i in k + 1..n {
                packed[(i, k)] *= scale;
            }
            let t = (beta - alpha) / beta;
            packed[(k, k)] = beta;
            for j in k + 1..m {
                let mut w = packed[(k, j)];
                for i in k + 1..n {
                    w += packed[(i, k)] * packed[(i, j)];
                }
                w *= t;
                packed[(k, j)] -= w;
                for i in k + 1..n {
                    let vi = packed[(i, k)];
                    packed[(i, j)] -= w * vi;
                }
            }
            tau.push(t);
            rdiag.push(beta);
        }
        PivotedQr { packed, tau, rdiag }
    }

    /// Number of leading diagonal entries with |R_kk| > rel_tol · |R_00|.
    pub(crate) fn rank(&self, rel_tol: f64) -> usize {
        let Some(first) = self.rdiag.first() else {
            return 0;
        };
        let cutoff = rel_tol * first.abs();
        if first.abs() == 0.0 {
            return 0;
        }
        self.rdiag.iter().take_while(|r| r.abs() > cutoff).count()
    }

    fn apply_reflector(&self, k: usize, v: &mut DVector<f64>) {
        let n = self.packed.nrows();
        let mut w = v[k];
        for i in k + 1..n {
            w += self.packed[(i, k)] * v[i];
        }
        w *= self.tau[k];
        v[k] -= w;
        for i in k + 1..n {
            v[i] -= w * self.packed[(i, k)];
        }
    }

    /// y minus its projection onto the span of the first `rank` pivoted columns.
    pub(crate) fn residual(&self, y: &DVector<f64>, rank: usize) -> DVector<f64> {
        let mut v = y.clone();
        for k in 0..rank {
            self.apply_reflector(k, &mut v);
        }
        for k in 0..rank {
            v[k] = 0.0;
        }
        for k in (0..rank).rev() {
            self.apply_reflector(k, &mut v);
        }
        v
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
/// Returns (eigenvalues, eigenvectors as columns).
pub(crate) fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Cholesky of a symmetric positive-definite matrix with one jittered retry.
pub(crate) fn cholesky_with_jitter(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch);
    }
    let n = m.nrows().max(1);
    let jitter = 1e-12 * m.trace() / n as f64;
    if !(jitter.is_finite() && jitter > 0.0) {
        return None;
    }
    let mut bumped = m.clone();
    for i in 0..m.nrows() {
        bumped[(i, i)] += jitter;
    }
    bumped.cholesky()
}
