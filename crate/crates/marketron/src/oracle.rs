//! Reference computations used to check the closed forms and the pricers.
//!
//! Nothing here calls into the kernel or pricer code: Black-Scholes, adaptive
//! Gauss-Kronrod and Gauss-Hermite quadrature, a pivoted dense solver and a
//! Crank-Nicolson finite-difference march.

use std::collections::BinaryHeap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::model::OptionKind;
use crate::{Error, Result};

fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn black_scholes(spot: f64, strike: f64, t: f64, r: f64, q: f64, sigma: f64, kind: OptionKind) -> f64 {
    let sd = sigma * t.sqrt();
    let d1 = ((spot / strike).ln() + (r - q + 0.5 * sigma * sigma) * t) / sd;
    let d2 = d1 - sd;
    let fs = spot * (-q * t).exp();
    let fk = strike * (-r * t).exp();
    match kind {
        OptionKind::Call => fs * phi(d1) - fk * phi(d2),
        OptionKind::Put => fk * phi(-d2) - fs * phi(-d1),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    pub nodes_per_axis: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { rel_tol: 1e-11, abs_tol: 1e-14, max_subdivisions: 4000, nodes_per_axis: 32 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Segment {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&o.error)
    }
}

/// Globally adaptive Gauss-Kronrod (7/15) quadrature on `[a, b]`.
pub fn quad1d(f: impl Fn(f64) -> f64, a: f64, b: f64, spec: &QuadratureSpec) -> Result<QuadResult> {
    let f: &dyn Fn(f64) -> f64 = &f;
    let (v, e) = gk15(f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value: v, error: e });
    let mut total = v;
    let mut err = e;
    let mut splits = 0;
    loop {
        if !total.is_finite() {
            return Err(Error::Tolerance { estimate: total, bound: f64::INFINITY });
        }
        if err <= spec.abs_tol.max(spec.rel_tol * total.abs()) {
            return Ok(QuadResult { value: total, error: err });
        }
        if splits >= spec.max_subdivisions {
            return Err(Error::Tolerance { estimate: total, bound: err });
        }
        let seg = heap.pop().expect("non-empty segment heap");
        let m = 0.5 * (seg.a + seg.b);
        let (v1, e1) = gk15(f, seg.a, m);
        let (v2, e2) = gk15(f, m, seg.b);
        total += v1 + v2 - seg.value;
        err += e1 + e2 - seg.error;
        heap.push(Segment { a: seg.a, b: m, value: v1, error: e1 });
        heap.push(Segment { a: m, b: seg.b, value: v2, error: e2 });
        splits += 1;
        // Re-sum occasionally so cancellation in the running totals cannot drift.
        if splits % 64 == 0 {
            total = heap.iter().map(|s| s.value).sum();
            err = heap.iter().map(|s| s.error).sum();
        }
    }
}

/// Integral over the real line truncated at `center ± 12 scale`.
pub fn quad1d_gaussian_support(f: impl Fn(f64) -> f64, center: f64, scale: f64, spec: &QuadratureSpec) -> Result<QuadResult> {
    quad1d(f, center - 12.0 * scale, center + 12.0 * scale, spec)
}

/// Nodes and weights of the `n`-point Gauss-Hermite rule for the standard
/// normal measure (weights sum to one), via Golub-Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E[f(X)]` for `X ~ N(centers, diag(scales²))` by a tensor Gauss-Hermite rule.
pub fn quad3d_gh(f: impl Fn(f64, f64, f64) -> f64, centers: [f64; 3], scales: [f64; 3], spec: &QuadratureSpec) -> f64 {
    let (z, w) = gauss_hermite(spec.nodes_per_axis);
    let mut acc = 0.0;
    for (zi, wi) in z.iter().zip(&w) {
        let x = centers[0] + scales[0] * zi;
        for (zj, wj) in z.iter().zip(&w) {
            let y = centers[1] + scales[1] * zj;
            let mut inner = 0.0;
            for (zk, wk) in z.iter().zip(&w) {
                inner += wk * f(x, y, centers[2] + scales[2] * zk);
            }
            acc += wi * wj * inner;
        }
    }
    acc
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(matrix: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = matrix.nrows();
    if matrix.ncols() != n || rhs.len() != n {
        return Err(Error::Domain("dense_solve needs a square system".into()));
    }
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| matrix[(i, j)]).collect()).collect();
    let mut b = rhs.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[piv][col] == 0.0 {
            return Err(Error::Degenerate("singular matrix in dense_solve".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let m = a[row][col] / a[col][col];
            if m != 0.0 {
                for k in col..n {
                    a[row][k] -= m * a[col][k];
                }
                b[row] -= m * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Ok(x)
}

/// One-dimensional sub-problem
/// `u_τ = D u_zz + b(z) u_z + ρ u + s(z) + κ u_z²` on `[lo, hi]`.
pub struct SubPdeSpec<'a> {
    pub lo: f64,
    pub hi: f64,
    pub n_nodes: usize,
    pub n_steps: usize,
    pub diffusion: f64,
    pub drift: &'a dyn Fn(f64) -> f64,
    pub reaction: f64,
    pub source: &'a dyn Fn(f64) -> f64,
    pub quad: f64,
}

#[derive(Clone, Debug)]
pub struct FdField {
    pub z: Vec<f64>,
    pub u: Vec<f64>,
}

impl FdField {
    /// Four-point Lagrange interpolation.
    pub fn at(&self, z: f64) -> f64 {
        let n = self.z.len();
        let h = self.z[1] - self.z[0];
        let i = (((z - self.z[0]) / h).floor() as isize).clamp(1, n as isize - 3) as usize;
        let idx = [i - 1, i, i + 1, i + 2];
        let mut acc = 0.0;
        for &a in &idx {
            let mut l = 1.0;
            for &b in &idx {
                if a != b {
                    l *= (z - self.z[b]) / (self.z[a] - self.z[b]);
                }
            }
            acc += l * self.u[a];
        }
        acc
    }
}

/// Crank-Nicolson for the linear part, second-order Adams-Bashforth for the
/// gradient-squared term; boundary nodes follow `u_τ = ρ u + s`.
pub fn fd_reference_1d(spec: &SubPdeSpec, initial: &dyn Fn(f64) -> f64, dt: f64) -> Result<FdField> {
    let n = spec.n_nodes;
    if n < 400 {
        return Err(Error::Domain("finite-difference reference needs at least 400 nodes".into()));
    }
    let h = (spec.hi - spec.lo) / (n - 1) as f64;
    let z: Vec<f64> = (0..n).map(|i| spec.lo + h * i as f64).collect();
    let mut u: Vec<f64> = z.iter().map(|&zi| initial(zi)).collect();
    let k = dt / spec.n_steps as f64;
    let b: Vec<f64> = z.iter().map(|&zi| (spec.drift)(zi)).collect();
    let s: Vec<f64> = z.iter().map(|&zi| (spec.source)(zi)).collect();
    // Interior operator coefficients: lower, diag, upper.
    let lo_c: Vec<f64> = b.iter().map(|bi| spec.diffusion / (h * h) - bi / (2.0 * h)).collect();
    let up_c: Vec<f64> = b.iter().map(|bi| spec.diffusion / (h * h) + bi / (2.0 * h)).collect();
    let di_c = -2.0 * spec.diffusion / (h * h) + spec.reaction;
    let grad_sq = |u: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; n];
        for i in 1..n - 1 {
            let d = (u[i + 1] - u[i - 1]) / (2.0 * h);
            g[i] = spec.quad * d * d;
        }
        g
    };
    let mut prev_nl: Option<Vec<f64>> = None;
    for _ in 0..spec.n_steps {
        let nl = grad_sq(&u);
        let nl_ext: Vec<f64> = match &prev_nl {
            Some(p) => nl.iter().zip(p).map(|(a, b)| 1.5 * a - 0.5 * b).collect(),
            None => nl.clone(),
        };
        let mut sub = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let bf = 1.0 + 0.5 * k * spec.reaction;
        let bb = 1.0 - 0.5 * k * spec.reaction;
        rhs[0] = (u[0] * bf + k * s[0]) / bb;
        rhs[n - 1] = (u[n - 1] * bf + k * s[n - 1]) / bb;
        for i in 1..n - 1 {
            let lu = lo_c[i] * u[i - 1] + di_c * u[i] + up_c[i] * u[i + 1];
            rhs[i] = u[i] + 0.5 * k * lu + k * (s[i] + nl_ext[i]);
            sub[i] = -0.5 * k * lo_c[i];
            diag[i] = 1.0 - 0.5 * k * di_c;
            sup[i] = -0.5 * k * up_c[i];
        }
        u = thomas(&sub, &diag, &sup, &rhs);
        prev_nl = Some(nl);
    }
    Ok(FdField { z, u })
}

fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}
