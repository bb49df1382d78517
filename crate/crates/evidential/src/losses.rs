//! Training losses with exact analytic gradients.
//!
//! Four negative log-likelihoods plus the evidence regularizer:
//!
//! - [`gaussian_nll`]: the plain heteroscedastic Gaussian baseline.
//! - [`nig_nll`]: the univariate evidential loss, a scaled Student-t with 2α
//!   degrees of freedom. Degenerate on its own: it depends on `β` and `κ`
//!   only through the product `β(1+κ)/κ`.
//! - [`evidence_regularizer`]: `|y−μ₀|·Φ` with either definition of the
//!   total evidence Φ. Breaks the degeneration but drives `κ → 0`.
//! - [`niw_nll`]: the multivariate evidential loss over the full
//!   `(μ₀, Ψ, κ, ν)` parameter set; same degeneration in `(κ, Ψ)`.
//! - [`coupled_niw_nll`]: the resolution. `κ` is tied to `ν` through a global
//!   hyperparameter `r` (`ν = rκ`), `Ψ = ν·LLᵀ` is parametrized by a
//!   Cholesky factor with exp-positive diagonal, and the loss loses its flat
//!   direction. This is the loss the network trains on.
//!
//! Gradients are hand-derived closed forms (digamma terms and the Cholesky
//! chain rule through the rank-1 log-determinant), so no tape is needed to
//! train against these losses. Each function documents its gradient layout.

use statrs::function::gamma::{digamma, ln_gamma};

use crate::distributions::{model_evidence_logpdf, EvidentialParams, NigParams};
use crate::error::{Error, Result};
use crate::linalg::{lower_tri_len, CholeskyFactor, SymMatrix};

const LN_PI: f64 = 1.144_729_885_849_400_2;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A loss evaluation: the scalar value and its gradient, flattened in the
/// parameter order documented by the producing function.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub gradients: Vec<f64>,
}

/// Which definition of the total evidence Φ the regularizer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvidenceKind {
    /// `Φ = 2κ + α`, the definition of the prior art.
    Legacy,
    /// `Φ' = κ + 2α`, the sum of virtual-measurement counts.
    VirtualCount,
    /// Regularizer disabled.
    Disabled,
}

/// Evidence-regularizer configuration: coupling `λ ≥ 0` and the Φ variant.
#[derive(Debug, Clone, Copy)]
pub struct RegularizerConfig {
    pub lambda: f64,
    pub evidence_kind: EvidenceKind,
}

impl RegularizerConfig {
    pub fn new(lambda: f64, evidence_kind: EvidenceKind) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::domain("lambda must be nonnegative and finite"));
        }
        Ok(RegularizerConfig {
            lambda,
            evidence_kind,
        })
    }
}

/// Parameters of the coupled evidential head: prediction `μ₀`, the flat
/// Cholesky parametrization `ℓ` of the scale (row-major lower triangle,
/// diagonal entries are logs), the gate `ν`, and the global coupling `r`.
/// `κ = ν/r` is derived, never stored.
#[derive(Debug, Clone)]
pub struct CoupledHeadParams {
    pub mu0: Vec<f64>,
    pub ell: Vec<f64>,
    pub nu: f64,
    pub r: f64,
}

impl CoupledHeadParams {
    pub fn new(mu0: Vec<f64>, ell: Vec<f64>, nu: f64, r: f64) -> Result<Self> {
        let n = mu0.len();
        if ell.len() != lower_tri_len(n) {
            return Err(Error::DimensionMismatch {
                expected: lower_tri_len(n),
                actual: ell.len(),
            });
        }
        if !(nu > n as f64 + 1.0) {
            return Err(Error::domain(format!(
                "coupled head requires nu > n + 1 = {}",
                n as f64 + 1.0
            )));
        }
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::domain("coupling r must be positive and finite"));
        }
        if mu0.iter().chain(ell.iter()).any(|x| !x.is_finite()) {
            return Err(Error::domain("head parameters must be finite"));
        }
        Ok(CoupledHeadParams { mu0, ell, nu, r })
    }

    pub fn n(&self) -> usize {
        self.mu0.len()
    }

    /// Derived virtual mean-observation count `κ = ν/r`.
    pub fn kappa(&self) -> f64 {
        self.nu / self.r
    }

    /// The lower-triangular factor `L` with `L_jj = exp(ℓ_j)`.
    pub fn lower_factor(&self) -> CholeskyFactor {
        let n = self.n();
        let mut entries = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in 0..=i {
                entries[i * n + j] = if i == j { self.ell[k].exp() } else { self.ell[k] };
                k += 1;
            }
        }
        CholeskyFactor::from_lower(n, &entries)
            .expect("exp-parametrized diagonal is strictly positive")
    }

    /// Number of free parameters: `n + n(n+1)/2 + 1`.
    pub fn param_count(&self) -> usize {
        self.n() + self.ell.len() + 1
    }
}

/// Prediction with both uncertainty covariances and the raw gate value.
#[derive(Debug, Clone)]
pub struct UncertaintyReport {
    pub prediction: Vec<f64>,
    pub aleatoric: SymMatrix,
    pub epistemic: SymMatrix,
    pub nu: f64,
}

/// Gaussian negative log-likelihood `½ log(2πσ²) + (y−μ)²/(2σ²)`.
///
/// Gradient layout: `[∂μ, ∂σ²]`.
pub fn gaussian_nll(y: f64, mu: f64, sigma2: f64) -> Result<LossValue> {
    if !(sigma2 > 0.0) {
        return Err(Error::domain("gaussian_nll requires sigma2 > 0"));
    }
    let d = y - mu;
    let value = 0.5 * (LN_2PI + sigma2.ln()) + d * d / (2.0 * sigma2);
    let grad_mu = -d / sigma2;
    let grad_sigma2 = 0.5 / sigma2 - d * d / (2.0 * sigma2 * sigma2);
    Ok(LossValue {
        value,
        gradients: vec![grad_mu, grad_sigma2],
    })
}

/// Univariate evidential negative log-likelihood,
/// `−log St_{2α}(y | μ₀, β(1+κ)/(κα))`.
///
/// Gradient layout: `[∂μ₀, ∂κ, ∂α, ∂β]`.
pub fn nig_nll(y: f64, p: &NigParams) -> Result<LossValue> {
    if !(p.alpha > 0.0) || !(p.beta > 0.0) || !(p.kappa > 0.0) {
        return Err(Error::domain("nig_nll requires alpha, beta, kappa > 0"));
    }
    let d = y - p.mu0;
    let b = 2.0 * p.beta * (1.0 + p.kappa);
    let g = b + p.kappa * d * d;
    let value = ln_gamma(p.alpha) - ln_gamma(p.alpha + 0.5) + 0.5 * LN_PI - 0.5 * p.kappa.ln()
        - p.alpha * b.ln()
        + (p.alpha + 0.5) * g.ln();
    let grad_mu0 = -(p.alpha + 0.5) * 2.0 * p.kappa * d / g;
    let grad_kappa = -0.5 / p.kappa - p.alpha * 2.0 * p.beta / b
        + (p.alpha + 0.5) * (2.0 * p.beta + d * d) / g;
    let grad_alpha = digamma(p.alpha) - digamma(p.alpha + 0.5) - b.ln() + g.ln();
    let grad_beta = (1.0 + p.kappa) * (-p.alpha * 2.0 / b + (p.alpha + 0.5) * 2.0 / g);
    Ok(LossValue {
        value,
        gradients: vec![grad_mu0, grad_kappa, grad_alpha, grad_beta],
    })
}

/// Evidence regularizer `|y − μ₀| · Φ`. The subgradient of `|y − μ₀|` at
/// `y = μ₀` is taken as 0.
///
/// Gradient layout: `[∂μ₀, ∂κ, ∂α, ∂β]` (the β entry is always 0).
pub fn evidence_regularizer(y: f64, p: &NigParams, cfg: &RegularizerConfig) -> LossValue {
    let (phi, dphi_dkappa, dphi_dalpha) = match cfg.evidence_kind {
        EvidenceKind::Legacy => (2.0 * p.kappa + p.alpha, 2.0, 1.0),
        EvidenceKind::VirtualCount => (p.kappa + 2.0 * p.alpha, 1.0, 2.0),
        EvidenceKind::Disabled => panic!("evidence_regularizer called with Disabled kind"),
    };
    let d = y - p.mu0;
    let abs_d = d.abs();
    let sign = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    LossValue {
        value: abs_d * phi,
        gradients: vec![-sign * phi, abs_d * dphi_dkappa, abs_d * dphi_dalpha, 0.0],
    }
}

/// Multivariate evidential negative log-likelihood,
/// `−log t_{ν−n+1}(y | μ₀, (1+κ)/(κ(ν−n+1))·Ψ)`.
///
/// Gradient layout: `[∂μ₀ (n), ∂L_Ψ (row-major lower triangle, n(n+1)/2),
/// ∂κ, ∂ν]` where `L_Ψ` is the Cholesky factor of `Ψ`.
pub fn niw_nll(y: &[f64], m: &EvidentialParams) -> Result<LossValue> {
    let n = m.n();
    let nf = n as f64;
    let value = -model_evidence_logpdf(y, m)?;
    let nu = m.nu();
    let kappa = m.kappa();
    let l = m.psi_chol();

    let d: Vec<f64> = y.iter().zip(m.mu0()).map(|(a, b)| a - b).collect();
    let w = l.solve(&d)?;
    let u: f64 = d.iter().zip(&w).map(|(a, b)| a * b).sum();
    let c = kappa / (1.0 + kappa);
    let s = 1.0 + c * u;

    let mut gradients = Vec::with_capacity(n + lower_tri_len(n) + 2);
    // ∂/∂μ₀ of ((ν+1)/2)·ln(1 + c·u): ∂u/∂μ₀ = −2w with w = Ψ⁻¹(y−μ₀).
    let coef = (nu + 1.0) * c / s;
    for i in 0..n {
        gradients.push(-coef * w[i]);
    }
    // ∂/∂L: ½ln|Ψ| contributes 1/L_jj on the diagonal; the rank-1 term
    // contributes −coef·(w wᵀ L)_{jk} via ∂u/∂Ψ = −w wᵀ.
    let v: Vec<f64> = (0..n)
        .map(|k| (k..n).map(|row| w[row] * l.get(row, k)).sum())
        .collect();
    for i in 0..n {
        for j in 0..=i {
            let mut grad = -coef * w[i] * v[j];
            if i == j {
                grad += 1.0 / l.get(i, i);
            }
            gradients.push(grad);
        }
    }
    // ∂/∂κ: the (n/2)·log((1+κ)/κ) term plus the rank-1 term through
    // c = κ/(1+κ), dc/dκ = 1/(1+κ)².
    gradients.push(
        0.5 * nf * (1.0 / (1.0 + kappa) - 1.0 / kappa)
            + 0.5 * (nu + 1.0) * u / (s * (1.0 + kappa) * (1.0 + kappa)),
    );
    // ∂/∂ν: the log-gamma prefactors plus the determinant coefficients
    // −ν/2 and (ν+1)/2, which combine to ½·ln(1 + c·u).
    gradients.push(
        0.5 * digamma(0.5 * (nu - nf + 1.0)) - 0.5 * digamma(0.5 * (nu + 1.0)) + 0.5 * s.ln(),
    );

    Ok(LossValue { value, gradients })
}

/// The coupled multivariate loss: [`niw_nll`] under the substitution
/// `κ = ν/r`, `Ψ = ν·LLᵀ` with `L` exp-parametrized, dropping the constant
/// `(n/2)·log π` which is independent of all trainable parameters.
///
/// The rank-1 determinant folds through the Sylvester identity, giving
/// `logΓ((ν−n+1)/2) − logΓ((ν+1)/2) + (n/2)log(r+ν) + Σ_j ℓ_j
///  + ((ν+1)/2)·log(1 + dᵀ(LLᵀ)⁻¹d/(r+ν))` with `d = y − μ₀`.
///
/// Gradient layout: `[∂μ₀ (n), ∂ℓ (n(n+1)/2), ∂ν]`.
pub fn coupled_niw_nll(y: &[f64], h: &CoupledHeadParams) -> Result<LossValue> {
    let n = h.n();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    let nf = n as f64;
    let nu = h.nu;
    let r = h.r;
    if !(nu > nf + 1.0) {
        return Err(Error::domain(format!(
            "coupled loss requires nu > n + 1 = {}",
            nf + 1.0
        )));
    }
    let l = h.lower_factor();
    let d: Vec<f64> = y.iter().zip(&h.mu0).map(|(a, b)| a - b).collect();
    let w = l.solve(&d)?;
    let u: f64 = d.iter().zip(&w).map(|(a, b)| a * b).sum();
    let s = 1.0 + u / (r + nu);

    let mut sum_ell = 0.0;
    {
        let mut k = 0;
        for i in 0..n {
            for j in 0..=i {
                if i == j {
                    sum_ell += h.ell[k];
                }
                k += 1;
            }
        }
    }

    let value = ln_gamma(0.5 * (nu - nf + 1.0)) - ln_gamma(0.5 * (nu + 1.0))
        + 0.5 * nf * (r + nu).ln()
        + sum_ell
        + 0.5 * (nu + 1.0) * s.ln();

    let coef = (nu + 1.0) / (s * (r + nu));
    let mut gradients = Vec::with_capacity(h.param_count());
    for i in 0..n {
        gradients.push(-coef * w[i]);
    }
    let v: Vec<f64> = (0..n)
        .map(|k| (k..n).map(|row| w[row] * l.get(row, k)).sum())
        .collect();
    for i in 0..n {
        for j in 0..=i {
            let mut grad = -coef * w[i] * v[j];
            if i == j {
                // chain through L_jj = exp(ℓ_j), plus the Σℓ term
                grad = grad * l.get(i, i) + 1.0;
            }
            gradients.push(grad);
        }
    }
    gradients.push(
        0.5 * digamma(0.5 * (nu - nf + 1.0)) - 0.5 * digamma(0.5 * (nu + 1.0))
            + 0.5 * nf / (r + nu)
            + 0.5 * s.ln()
            - 0.5 * (nu + 1.0) * u / ((r + nu) * (r + nu) * s),
    );

    Ok(LossValue { value, gradients })
}

/// Uncertainty moments of the coupled head: prediction `μ₀`, aleatoric
/// `ν/(ν−n−1)·LLᵀ`, epistemic `aleatoric/ν`, plus the raw gate value `ν`.
///
/// The coupling folds one degree of freedom away, so these are identified
/// only up to a global scale; the proportionality constant is fixed to 1
/// here and `r` stays on the head for downstream rescaling.
pub fn uncertainty_from_head(h: &CoupledHeadParams) -> Result<UncertaintyReport> {
    let nf = h.n() as f64;
    if !(h.nu > nf + 1.0) {
        return Err(Error::domain(format!(
            "uncertainty moments require nu > n + 1 = {}",
            nf + 1.0
        )));
    }
    let scale = h.lower_factor().reconstruct();
    let aleatoric = scale.scaled(h.nu / (h.nu - nf - 1.0));
    let epistemic = aleatoric.scaled(1.0 / h.nu);
    Ok(UncertaintyReport {
        prediction: h.mu0.clone(),
        aleatoric,
        epistemic,
        nu: h.nu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::test_util::{assert_grad_close, finite_difference_grad};
    use proptest::prelude::*;

    #[test]
    fn gaussian_nll_at_mode() {
        let lv = gaussian_nll(1.0, 1.0, 1.0).unwrap();
        assert!((lv.value - 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn gaussian_nll_mu_gradient() {
        let lv = gaussian_nll(1.0, 0.0, 1.0).unwrap();
        assert!((lv.gradients[0] - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_nll_matches_finite_differences() {
        let mut rng = RngStream::new(3);
        for _ in 0..20 {
            let y = rng.uniform_in(-2.0, 2.0);
            let mu = rng.uniform_in(-2.0, 2.0);
            let sigma2 = rng.uniform_in(0.2, 3.0);
            let lv = gaussian_nll(y, mu, sigma2).unwrap();
            let fd = finite_difference_grad(
                |p| gaussian_nll(y, p[0], p[1]).unwrap().value,
                &[mu, sigma2],
                1e-5,
            );
            assert_grad_close(&lv.gradients, &fd, 1e-6, 1e-8);
        }
    }

    /// The expanded univariate NLL written out directly from the closed-form
    /// non-standardized Student-t with ν = 2α, νσ₀² = 2β.
    fn nig_nll_expanded_oracle(y: f64, p: &NigParams) -> f64 {
        let nu = 2.0 * p.alpha;
        let nu_sigma0 = 2.0 * p.beta;
        let d = y - p.mu0;
        ln_gamma(0.5 * nu) - ln_gamma(0.5 * (nu + 1.0))
            + 0.5 * (std::f64::consts::PI / p.kappa).ln()
            - 0.5 * nu * (nu_sigma0 * (1.0 + p.kappa)).ln()
            + 0.5 * (nu + 1.0) * (nu_sigma0 * (1.0 + p.kappa) + p.kappa * d * d).ln()
    }

    #[test]
    fn nig_nll_matches_expanded_form() {
        let mut rng = RngStream::new(4);
        for _ in 0..50 {
            let p = NigParams::new(
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(0.3, 4.0),
                rng.uniform_in(0.5, 5.0),
                rng.uniform_in(0.3, 3.0),
            )
            .unwrap();
            let y = rng.uniform_in(-3.0, 3.0);
            let got = nig_nll(y, &p).unwrap().value;
            let expect = nig_nll_expanded_oracle(y, &p);
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn nig_nll_degeneration_pair() {
        // Both configurations have β(1+κ)/κ = 2 and must give the same loss.
        let a = NigParams::new(0.0, 1.0, 2.0, 1.0).unwrap();
        let b = NigParams::new(0.0, 0.5, 2.0, 2.0 / 3.0).unwrap();
        let la = nig_nll(0.0, &a).unwrap().value;
        let lb = nig_nll(0.0, &b).unwrap().value;
        assert!((la - lb).abs() < 1e-12, "{la} vs {lb}");
    }

    #[test]
    fn nig_nll_matches_finite_differences() {
        let mut rng = RngStream::new(5);
        for _ in 0..20 {
            let p = NigParams::new(
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(0.4, 3.0),
                rng.uniform_in(0.8, 4.0),
                rng.uniform_in(0.4, 3.0),
            )
            .unwrap();
            let y = rng.uniform_in(-2.0, 2.0);
            let lv = nig_nll(y, &p).unwrap();
            let fd = finite_difference_grad(
                |q| {
                    nig_nll(y, &NigParams::new(q[0], q[1], q[2], q[3]).unwrap())
                        .unwrap()
                        .value
                },
                &[p.mu0, p.kappa, p.alpha, p.beta],
                1e-5,
            );
            assert_grad_close(&lv.gradients, &fd, 1e-6, 1e-8);
        }
    }

    #[test]
    fn regularizer_zero_at_center() {
        let p = NigParams::new(0.5, 2.0, 3.0, 1.0).unwrap();
        for kind in [EvidenceKind::Legacy, EvidenceKind::VirtualCount] {
            let cfg = RegularizerConfig::new(1.0, kind).unwrap();
            assert_eq!(evidence_regularizer(0.5, &p, &cfg).value, 0.0);
        }
    }

    #[test]
    fn regularizer_phi_values() {
        let p = NigParams::new(0.0, 2.0, 3.0, 1.0).unwrap();
        let legacy = RegularizerConfig::new(1.0, EvidenceKind::Legacy).unwrap();
        let virt = RegularizerConfig::new(1.0, EvidenceKind::VirtualCount).unwrap();
        assert_eq!(evidence_regularizer(1.0, &p, &legacy).value, 7.0);
        assert_eq!(evidence_regularizer(1.0, &p, &virt).value, 8.0);
    }

    fn random_evidential(n: usize, seed: u64) -> EvidentialParams {
        let psi = crate::test_util::random_spd(n, seed);
        let mut rng = RngStream::new(seed ^ 0xbeef);
        let mu0: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        EvidentialParams::new(
            mu0,
            &psi,
            rng.uniform_in(0.5, 4.0),
            n as f64 + 1.0 + rng.uniform_in(1.0, 5.0),
        )
        .unwrap()
    }

    #[test]
    fn niw_nll_is_negative_model_evidence() {
        for seed in 0..20 {
            let m = random_evidential(2, 100 + seed);
            let mut rng = RngStream::new(200 + seed);
            let y = vec![rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            let lv = niw_nll(&y, &m).unwrap();
            let ev = model_evidence_logpdf(&y, &m).unwrap();
            assert!((lv.value + ev).abs() < 1e-12);
        }
    }

    #[test]
    fn niw_nll_univariate_reduction_to_nig() {
        let mut rng = RngStream::new(6);
        for _ in 0..50 {
            let p = NigParams::new(
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(0.4, 4.0),
                rng.uniform_in(1.2, 4.0),
                rng.uniform_in(0.4, 3.0),
            )
            .unwrap();
            let y = rng.uniform_in(-3.0, 3.0);
            let mv = niw_nll(&[y], &p.to_evidential()).unwrap().value;
            let uv = nig_nll(y, &p).unwrap().value;
            assert!((mv - uv).abs() < 1e-12, "{mv} vs {uv}");
        }
    }

    /// Flatten (μ₀, L_Ψ, κ, ν) for finite differences against `niw_nll`.
    fn niw_params_to_vec(m: &EvidentialParams) -> Vec<f64> {
        let n = m.n();
        let mut v = m.mu0().to_vec();
        for i in 0..n {
            for j in 0..=i {
                v.push(m.psi_chol().get(i, j));
            }
        }
        v.push(m.kappa());
        v.push(m.nu());
        v
    }

    fn niw_params_from_vec(n: usize, v: &[f64]) -> EvidentialParams {
        let mu0 = v[..n].to_vec();
        let mut entries = vec![0.0; n * n];
        let mut k = n;
        for i in 0..n {
            for j in 0..=i {
                entries[i * n + j] = v[k];
                k += 1;
            }
        }
        let chol = CholeskyFactor::from_lower(n, &entries).unwrap();
        EvidentialParams::from_chol(mu0, chol, v[k], v[k + 1]).unwrap()
    }

    #[test]
    fn niw_nll_matches_finite_differences() {
        for seed in 0..10 {
            let m = random_evidential(2, 300 + seed);
            let mut rng = RngStream::new(400 + seed);
            let y = vec![rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            let lv = niw_nll(&y, &m).unwrap();
            let x = niw_params_to_vec(&m);
            let fd = finite_difference_grad(
                |p| niw_nll(&y, &niw_params_from_vec(2, p)).unwrap().value,
                &x,
                1e-6,
            );
            assert_grad_close(&lv.gradients, &fd, 1e-5, 1e-8);
        }
    }

    fn random_head(n: usize, seed: u64) -> CoupledHeadParams {
        let mut rng = RngStream::new(seed);
        let mu0: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let ell: Vec<f64> = (0..lower_tri_len(n))
            .map(|_| rng.uniform_in(-0.5, 0.5))
            .collect();
        let nu = n as f64 + 1.0 + rng.uniform_in(1.0, 6.0);
        CoupledHeadParams::new(mu0, ell, nu, rng.uniform_in(0.5, 2.0)).unwrap()
    }

    #[test]
    fn coupled_equals_substituted_niw_up_to_constant() {
        // coupled(y; μ₀, ℓ, ν) must equal niw_nll with κ = ν/r, Ψ = ν·LLᵀ
        // minus a constant that does not depend on (μ₀, ℓ, ν).
        let y = vec![0.7, -0.4];
        let mut reference: Option<f64> = None;
        for seed in 0..20 {
            let h = random_head(2, 500 + seed);
            let psi = h.lower_factor().reconstruct().scaled(h.nu);
            let m = EvidentialParams::new(h.mu0.clone(), &psi, h.kappa(), h.nu).unwrap();
            let diff = niw_nll(&y, &m).unwrap().value - coupled_niw_nll(&y, &h).unwrap().value;
            match reference {
                None => reference = Some(diff),
                Some(r0) => assert!((diff - r0).abs() < 1e-10, "{diff} vs {r0}"),
            }
        }
        // The dropped constant is (n/2)·log π with n = 2.
        assert!((reference.unwrap() - LN_PI).abs() < 1e-10);
    }

    #[test]
    fn coupled_univariate_mode_gradient() {
        let h = CoupledHeadParams::new(vec![0.3], vec![0.0], 4.0, 1.0).unwrap();
        let lv = coupled_niw_nll(&[0.3], &h).unwrap();
        assert!(lv.value.is_finite());
        assert_eq!(lv.gradients[0], 0.0);
    }

    #[test]
    fn coupled_matches_finite_differences() {
        for seed in 0..10 {
            let h = random_head(2, 700 + seed);
            let mut rng = RngStream::new(800 + seed);
            let y = vec![rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            let lv = coupled_niw_nll(&y, &h).unwrap();
            let mut x = h.mu0.clone();
            x.extend_from_slice(&h.ell);
            x.push(h.nu);
            let r = h.r;
            let fd = finite_difference_grad(
                |p| {
                    let h2 =
                        CoupledHeadParams::new(p[..2].to_vec(), p[2..5].to_vec(), p[5], r).unwrap();
                    coupled_niw_nll(&y, &h2).unwrap().value
                },
                &x,
                1e-6,
            );
            assert_grad_close(&lv.gradients, &fd, 1e-5, 1e-8);
        }
    }

    #[test]
    fn head_uncertainty_identity_scale() {
        let h = CoupledHeadParams::new(vec![0.0, 0.0], vec![0.0, 0.0, 0.0], 5.0, 1.0).unwrap();
        let rep = uncertainty_from_head(&h).unwrap();
        for i in 0..2 {
            assert!((rep.aleatoric.get(i, i) - 2.5).abs() < 1e-12);
            assert!((rep.epistemic.get(i, i) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn head_uncertainty_ratio_is_inverse_nu() {
        for seed in 0..10 {
            let h = random_head(2, 900 + seed);
            let rep = uncertainty_from_head(&h).unwrap();
            for i in 0..2 {
                for j in 0..=i {
                    if rep.aleatoric.get(i, j).abs() > 1e-12 {
                        let ratio = rep.epistemic.get(i, j) / rep.aleatoric.get(i, j);
                        assert!((ratio - 1.0 / h.nu).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn head_uncertainty_large_nu_limit() {
        let h = CoupledHeadParams::new(vec![0.0, 0.0], vec![0.2, 0.4, -0.1], 1e9, 1.0).unwrap();
        let rep = uncertainty_from_head(&h).unwrap();
        let scale = h.lower_factor().reconstruct();
        assert!(rep.aleatoric.max_abs_diff(&scale) < 1e-8);
        assert!(rep.epistemic.max_abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn prop_univariate_degeneration(seed in 0u64..2000) {
            // All (β, κ) with β(1+κ)/κ fixed give the same nig_nll.
            let mut rng = RngStream::new(seed);
            let alpha = rng.uniform_in(0.8, 5.0);
            let product = rng.uniform_in(0.5, 4.0);
            let y = rng.uniform_in(-2.0, 2.0);
            let kappa1 = rng.uniform_in(1e-3, 1e3);
            let kappa2 = rng.uniform_in(1e-3, 1e3);
            let beta1 = product * kappa1 / (1.0 + kappa1);
            let beta2 = product * kappa2 / (1.0 + kappa2);
            let l1 = nig_nll(y, &NigParams::new(0.0, kappa1, alpha, beta1).unwrap()).unwrap().value;
            let l2 = nig_nll(y, &NigParams::new(0.0, kappa2, alpha, beta2).unwrap()).unwrap().value;
            prop_assert!((l1 - l2).abs() < 1e-12);
        }

        #[test]
        fn prop_multivariate_degeneration(seed in 0u64..2000) {
            // niw_nll is invariant under (κ, Ψ) → (κ̃, Ψ̃) when (1+κ)/κ·Ψ
            // is held fixed.
            let psi = crate::test_util::random_spd(2, seed);
            let mut rng = RngStream::new(seed ^ 0xfeed);
            let kappa = rng.uniform_in(0.1, 10.0);
            let kappa2 = rng.uniform_in(0.1, 10.0);
            let nu = 4.0 + rng.uniform_in(0.0, 4.0);
            let mu0 = vec![0.1, -0.3];
            let y = vec![rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)];
            let ratio = ((1.0 + kappa) / kappa) / ((1.0 + kappa2) / kappa2);
            let psi2 = psi.scaled(ratio);
            let m1 = EvidentialParams::new(mu0.clone(), &psi, kappa, nu).unwrap();
            let m2 = EvidentialParams::new(mu0, &psi2, kappa2, nu).unwrap();
            let l1 = niw_nll(&y, &m1).unwrap().value;
            let l2 = niw_nll(&y, &m2).unwrap().value;
            prop_assert!((l1 - l2).abs() < 1e-10);
        }

        #[test]
        fn prop_legacy_regularized_loss_decreases_toward_kappa_zero(seed in 0u64..500) {
            // Along the degeneration manifold the regularized total loss is
            // strictly decreasing as κ → 0, the failure mode the coupling
            // removes.
            let mut rng = RngStream::new(seed);
            let alpha = rng.uniform_in(1.0, 4.0);
            let product = rng.uniform_in(0.5, 3.0);
            let y = rng.uniform_in(0.5, 2.5); // y ≠ μ₀ = 0
            let cfg = RegularizerConfig::new(1.0, EvidenceKind::Legacy).unwrap();
            let total = |kappa: f64| {
                let beta = product * kappa / (1.0 + kappa);
                let p = NigParams::new(0.0, kappa, alpha, beta).unwrap();
                nig_nll(y, &p).unwrap().value
                    + cfg.lambda * evidence_regularizer(y, &p, &cfg).value
            };
            let kappas = [1e3, 1e2, 1e1, 1.0, 1e-1, 1e-2, 1e-3];
            for pair in kappas.windows(2) {
                prop_assert!(total(pair[0]) > total(pair[1]));
            }
        }

        #[test]
        fn prop_coupled_has_no_flat_direction(seed in 0u64..500) {
            // For generic y the (ℓ, ν) gradient block never vanishes.
            let h = random_head(2, seed);
            let mut rng = RngStream::new(seed ^ 0x1234);
            let y = vec![
                h.mu0[0] + rng.uniform_in(0.2, 2.0),
                h.mu0[1] - rng.uniform_in(0.2, 2.0),
            ];
            let lv = coupled_niw_nll(&y, &h).unwrap();
            let block = &lv.gradients[2..];
            let norm: f64 = block.iter().map(|g| g * g).sum::<f64>().sqrt();
            prop_assert!(norm > 1e-8, "flat direction at {h:?}");
        }
    }
}
