//! Special functions and closed-form Gaussian expectations.

use std::f64::consts::{PI, SQRT_2};

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

pub fn erf_inv(x: f64) -> f64 {
    statrs::function::erf::erf_inv(x)
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `P(X < h, Y < k)` for standard normals with correlation `rho`.
pub fn bvn_cdf(h: f64, k: f64, rho: f64) -> f64 {
    bvn_upper(-h, -k, rho)
}

// Genz's BVNU: P(X > dh, Y > dk). Drezner-Wesolowsky with Gauss-Legendre
// nodes, plus the asymptotic expansion for |rho| close to one.
fn bvn_upper(dh: f64, dk: f64, r: f64) -> f64 {
    if dh == f64::INFINITY || dk == f64::INFINITY {
        return 0.0;
    }
    if dh == f64::NEG_INFINITY {
        return if dk == f64::NEG_INFINITY { 1.0 } else { norm_cdf(-dk) };
    }
    if dk == f64::NEG_INFINITY {
        return norm_cdf(-dh);
    }
    if r == 0.0 {
        return norm_cdf(-dh) * norm_cdf(-dk);
    }
    const W6: [f64; 3] = [0.1713244923791705, 0.3607615730481384, 0.4679139345726904];
    const X6: [f64; 3] = [0.9324695142031522, 0.6612093864662647, 0.2386191860831970];
    const W12: [f64; 6] = [
        0.04717533638651177,
        0.1069393259953183,
        0.1600783285433464,
        0.2031674267230659,
        0.2334925365383547,
        0.2491470458134029,
    ];
    const X12: [f64; 6] = [
        0.9815606342467191,
        0.9041172563704750,
        0.7699026741943050,
        0.5873179542866171,
        0.3678314989981802,
        0.1252334085114692,
    ];
    const W20: [f64; 10] = [
        0.01761400713915212,
        0.04060142980038694,
        0.06267204833410906,
        0.08327674157670475,
        0.1019301198172404,
        0.1181945319615184,
        0.1316886384491766,
        0.1420961093183821,
        0.1491729864726037,
        0.1527533871307259,
    ];
    const X20: [f64; 10] = [
        0.9931285991850949,
        0.9639719272779138,
        0.9122344282513259,
        0.8391169718222188,
        0.7463319064601508,
        0.6360536807265150,
        0.5108670019508271,
        0.3737060887154196,
        0.2277858511416451,
        0.07652652113349733,
    ];
    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&W6, &X6)
    } else if r.abs() < 0.75 {
        (&W12, &X12)
    } else {
        (&W20, &X20)
    };
    // Nodes on [0, 2]: 1 - x and 1 + x with shared weights.
    let nodes: Vec<(f64, f64)> = w
        .iter()
        .zip(x)
        .flat_map(|(&wi, &xi)| [(wi, 1.0 - xi), (wi, 1.0 + xi)])
        .collect();
    let tp = 2.0 * PI;
    let h = dh;
    let mut k = dk;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin() / 2.0;
        for &(wi, xi) in &nodes {
            let sn = (asr * xi).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        bvn = bvn * asr / tp + norm_cdf(-h) * norm_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = 1.0 - r * r;
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            let asr = -(bs / as_ + hk) / 2.0;
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = tp.sqrt() * norm_cdf(-b / a);
                bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            a /= 2.0;
            let mut acc = 0.0;
            for &(wi, xi) in &nodes {
                let xs = (a * xi) * (a * xi);
                let asr = -(bs / xs + hk) / 2.0;
                if asr > -100.0 {
                    let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                    let rs = (1.0 - xs).sqrt();
                    let ep = (-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                    acc += wi * asr.exp() * (sp - ep);
                }
            }
            bvn = (a * acc - bvn) / tp;
        }
        if r > 0.0 {
            bvn += norm_cdf(-h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 {
                norm_cdf(k) - norm_cdf(h)
            } else {
                norm_cdf(-h) - norm_cdf(-k)
            };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Unnormalized Gaussian weight `exp(log_scale - prec·(ξ - mean)²/2)`.
///
/// Products of heat kernels, Gaussian RBFs and exponential tilts stay in this
/// family, so every convolution in the pricers reduces to a mass times an
/// expectation under `N(mean, 1/prec)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussWeight {
    pub prec: f64,
    pub mean: f64,
    pub log_scale: f64,
}

impl GaussWeight {
    /// Normal density with the given center and variance.
    pub fn heat(center: f64, var: f64) -> Self {
        Self { prec: 1.0 / var, mean: center, log_scale: -0.5 * (2.0 * PI * var).ln() }
    }

    /// `exp(-eps (ξ - center)²)`.
    pub fn rbf(center: f64, eps: f64) -> Self {
        Self { prec: 2.0 * eps, mean: center, log_scale: 0.0 }
    }

    pub fn times(self, o: Self) -> Self {
        let prec = self.prec + o.prec;
        let mean = (self.prec * self.mean + o.prec * o.mean) / prec;
        let d = self.mean - o.mean;
        let log_scale = self.log_scale + o.log_scale - 0.5 * self.prec * o.prec / prec * d * d;
        Self { prec, mean, log_scale }
    }

    /// Multiply by `exp(lambda ξ)`.
    pub fn tilt(self, lambda: f64) -> Self {
        Self {
            prec: self.prec,
            mean: self.mean + lambda / self.prec,
            log_scale: self.log_scale + lambda * self.mean + lambda * lambda / (2.0 * self.prec),
        }
    }

    pub fn var(&self) -> f64 {
        1.0 / self.prec
    }

    pub fn mass(&self) -> f64 {
        (self.log_scale + 0.5 * (2.0 * PI / self.prec).ln()).exp()
    }

    /// E[erf(pξ + q)] under the normalized weight.
    pub fn mean_erf(&self, p: f64, q: f64) -> f64 {
        erf((p * self.mean + q) / (1.0 + 2.0 * p * p * self.var()).sqrt())
    }

    /// E[erf(pξ + q)²] under the normalized weight.
    pub fn mean_erf_sq(&self, p: f64, q: f64) -> f64 {
        let mu = p * self.mean + q;
        let s2 = p * p * self.var();
        if s2 == 0.0 {
            let e = erf(mu);
            return e * e;
        }
        // erf(u) = 2Φ(√2 u) - 1 and E[Φ(Z)²] is a bivariate normal orthant.
        let den = (1.0 + 2.0 * s2).sqrt();
        let h = -(SQRT_2 * mu).abs() / den;
        let rho = 2.0 * s2 / (1.0 + 2.0 * s2);
        (4.0 * bvn_cdf(h, h, rho) - 4.0 * norm_cdf(h) + 1.0).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_values() {
        assert!((erf(0.5) - 0.5204998778130465).abs() < 1e-14, "{}", erf(0.5) - 0.5204998778130465);
        assert!((erfc(3.0) - 2.209049699858544e-5).abs() < 1e-18);
        assert!((erf(erf_inv(0.3)) - 0.3).abs() < 1e-14);
        assert!((norm_cdf(1.0) - 0.8413447460685429).abs() < 1e-15);
    }

    #[test]
    fn bvn_special_cases() {
        // Orthant probability 1/4 + asin(rho)/(2π).
        for &rho in &[-0.95, -0.5, 0.0, 0.2, 0.6, 0.9, 0.99] {
            let exact = 0.25 + f64::asin(rho) / (2.0 * PI);
            assert!((bvn_cdf(0.0, 0.0, rho) - exact).abs() < 1e-14, "rho {rho}");
        }
        assert!((bvn_cdf(0.3, -0.2, 0.0) - norm_cdf(0.3) * norm_cdf(-0.2)).abs() < 1e-15);
    }

    #[test]
    fn bvn_against_integral() {
        // P(X<h, Y<k) = ∫_{-∞}^{h} φ(x) Φ((k - ρx)/√(1-ρ²)) dx, crude midpoint sum.
        for &(h, k, rho) in &[(0.4, -1.1, 0.35), (-0.7, 0.9, -0.8), (1.3, 1.0, 0.97), (-2.0, -1.5, 0.5)] {
            let n = 200_000;
            let lo = -12.0;
            let dx = (h - lo) / n as f64;
            let s = (1.0f64 - rho * rho).sqrt();
            let mut acc = 0.0;
            for i in 0..n {
                let x = lo + (i as f64 + 0.5) * dx;
                acc += norm_pdf(x) * norm_cdf((k - rho * x) / s);
            }
            acc *= dx;
            assert!((bvn_cdf(h, k, rho) - acc).abs() < 1e-9, "{h} {k} {rho}");
        }
    }

    #[test]
    fn gauss_weight_algebra() {
        let g = GaussWeight::heat(0.3, 0.04).times(GaussWeight::rbf(-0.1, 3.0));
        // ∫ N(ξ; x, s²) exp(-ε(ξ-c)²) dξ = exp(-ε(x-c)²/a²)/a, a² = 1 + 2εs².
        let a2: f64 = 1.0 + 2.0 * 3.0 * 0.04;
        let exact = (-3.0 * 0.16 / a2).exp() / a2.sqrt();
        assert!((g.mass() - exact).abs() < 1e-15);
        let t = GaussWeight::heat(0.0, 1.0).tilt(1.0);
        assert!((t.mass() - 0.5f64.exp()).abs() < 1e-14);
        assert!((t.mean - 1.0).abs() < 1e-15);
    }
}
