//! Univariate polynomials on the reference interval.

/// Polynomial in monomial form, `coeffs[i]` multiplies `t^i`.
///
/// Only low degrees (≤ 5) are used, where the monomial basis on `[0, 1]` is
/// perfectly adequate.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly1 {
    coeffs: Vec<f64>,
}

impl Poly1 {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|&c| c != 0.0)
            .unwrap_or(0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    /// Value of the `order`-th derivative at `t`.
    pub fn eval_derivative(&self, t: f64, order: usize) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(order)
            .rev()
            .fold(0.0, |acc, (i, &c)| {
                let falling: f64 = ((i - order + 1)..=i).map(|m| m as f64).product();
                acc * t + c * falling
            })
    }

    pub fn derivative(&self) -> Poly1 {
        if self.coeffs.len() <= 1 {
            return Poly1::zero();
        }
        Poly1::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| i as f64 * c)
                .collect(),
        )
    }

    fn scaled(&self, s: f64) -> Poly1 {
        Poly1::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    fn add(&self, other: &Poly1) -> Poly1 {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut c = vec![0.0; n];
        for (i, v) in self.coeffs.iter().enumerate() {
            c[i] += v;
        }
        for (i, v) in other.coeffs.iter().enumerate() {
            c[i] += v;
        }
        Poly1::new(c)
    }

    fn times_affine(&self, a: f64, b: f64) -> Poly1 {
        // (a + b t) * self
        let mut c = vec![0.0; self.coeffs.len() + 1];
        for (i, v) in self.coeffs.iter().enumerate() {
            c[i] += a * v;
            c[i + 1] += b * v;
        }
        Poly1::new(c)
    }

    /// Linear combination `Σ weights[i] * polys[i]`.
    pub fn combination(polys: &[Poly1], weights: &[f64]) -> Poly1 {
        polys
            .iter()
            .zip(weights)
            .fold(Poly1::zero(), |acc, (p, &w)| acc.add(&p.scaled(w)))
    }
}

/// Shifted Legendre polynomials on `[0, 1]`, normalized so that
/// `∫₀¹ ℓ_i ℓ_j = δ_ij`, for degrees `0..=max_degree`.
pub fn orthonormal_legendre(max_degree: usize) -> Vec<Poly1> {
    // Bonnet recursion in s = 2t - 1.
    let mut raw: Vec<Poly1> = Vec::with_capacity(max_degree + 1);
    raw.push(Poly1::new(vec![1.0]));
    if max_degree >= 1 {
        raw.push(Poly1::new(vec![-1.0, 2.0]));
    }
    for n in 1..max_degree {
        let nf = n as f64;
        let a = raw[n].times_affine(-1.0, 2.0).scaled((2.0 * nf + 1.0) / (nf + 1.0));
        let b = raw[n - 1].scaled(-nf / (nf + 1.0));
        raw.push(a.add(&b));
    }
    raw.into_iter()
        .enumerate()
        .map(|(n, p)| p.scaled((2.0 * n as f64 + 1.0).sqrt()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussRule;

    #[test]
    fn legendre_is_orthonormal() {
        let l = orthonormal_legendre(5);
        let rule = GaussRule::new(8);
        for i in 0..=5 {
            for j in 0..=5 {
                let v: f64 = rule.iter().map(|(t, w)| w * l[i].eval(t) * l[j].eval(t)).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12, "{i},{j}: {v}");
            }
        }
    }

    #[test]
    fn derivatives_match_symbolic() {
        // p = 1 + 2t + 3t^2 + 4t^3
        let p = Poly1::new(vec![1.0, 2.0, 3.0, 4.0]);
        let t = 0.3;
        assert!((p.eval_derivative(t, 1) - (2.0 + 6.0 * t + 12.0 * t * t)).abs() < 1e-14);
        assert!((p.eval_derivative(t, 2) - (6.0 + 24.0 * t)).abs() < 1e-14);
        assert!((p.eval_derivative(t, 3) - 24.0).abs() < 1e-14);
        assert_eq!(p.eval_derivative(t, 4), 0.0);
        assert!((p.derivative().eval(t) - p.eval_derivative(t, 1)).abs() < 1e-14);
        assert_eq!(p.degree(), 3);
    }
}
