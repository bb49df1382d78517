//! The Gaussian / Inverse-Gamma / Inverse-Wishart / NIG / NIW / Student-t
//! family: log-densities, sampling, moments, conjugate updates, and the model
//! evidence in closed form and as a Monte Carlo estimate.
//!
//! The evidential prior over the parameters `(μ, Σ)` of a multivariate
//! Gaussian likelihood is a Normal-Inverse-Wishart distribution
//!
//! ```text
//!   Σ ~ W⁻¹(Ψ, ν)        μ | Σ ~ N(μ₀, Σ/κ)
//! ```
//!
//! with hyperparameters `(μ₀, Ψ, κ, ν)`. Marginalizing `(μ, Σ)` out of the
//! likelihood of one observation gives a multivariate Student-t with
//! `ν − n + 1` degrees of freedom; [`model_evidence_logpdf`] evaluates it in
//! closed form and [`model_evidence_mc`] estimates the same integral by
//! sampling, which serves as the verification oracle.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{CholeskyFactor, SymMatrix};
use crate::rng::RngStream;

const LN_PI: f64 = 1.144_729_885_849_400_2;
const LN_2PI: f64 = 1.837_877_066_409_345_3;
const LN_2: f64 = std::f64::consts::LN_2;

/// Log of the multivariate gamma function, `Γ_n(a)`, via the product
/// identity `Γ_n(a) = π^{n(n−1)/4} Π_{j=1..n} Γ(a + (1−j)/2)`.
pub fn ln_mv_gamma(n: usize, a: f64) -> f64 {
    let base = (n * (n - 1)) as f64 / 4.0 * LN_PI;
    base + (0..n).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

/// Hyperparameters `(μ₀, Ψ, κ, ν)` of a Normal-Inverse-Wishart evidential
/// distribution over dimension `n`. `Ψ` is held as its Cholesky factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidentialParams {
    mu0: Vec<f64>,
    psi_chol: CholeskyFactor,
    kappa: f64,
    nu: f64,
}

impl EvidentialParams {
    /// Build from `Ψ` given as a symmetric matrix; factors it once.
    pub fn new(mu0: Vec<f64>, psi: &SymMatrix, kappa: f64, nu: f64) -> Result<Self> {
        let psi_chol = psi.cholesky()?;
        Self::from_chol(mu0, psi_chol, kappa, nu)
    }

    /// Build from a pre-factored `Ψ`.
    pub fn from_chol(mu0: Vec<f64>, psi_chol: CholeskyFactor, kappa: f64, nu: f64) -> Result<Self> {
        if mu0.len() != psi_chol.n() {
            return Err(Error::DimensionMismatch {
                expected: psi_chol.n(),
                actual: mu0.len(),
            });
        }
        if mu0.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("prior mean must be finite"));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::domain("kappa must be positive and finite"));
        }
        if !nu.is_finite() {
            return Err(Error::domain("nu must be finite"));
        }
        Ok(EvidentialParams {
            mu0,
            psi_chol,
            kappa,
            nu,
        })
    }

    pub fn n(&self) -> usize {
        self.mu0.len()
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn psi_chol(&self) -> &CholeskyFactor {
        &self.psi_chol
    }

    /// `Ψ` reconstructed as a dense symmetric matrix.
    pub fn psi(&self) -> SymMatrix {
        self.psi_chol.reconstruct()
    }

    /// The scale view `Σ₀ = Ψ/ν`, the average squared deviation encoded by
    /// the ν virtual variance-observations.
    pub fn sigma0(&self) -> SymMatrix {
        self.psi().scaled(1.0 / self.nu)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
}

/// Hyperparameters of the univariate Normal-Inverse-Gamma special case.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NigParams {
    pub mu0: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NigParams {
    pub fn new(mu0: f64, kappa: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !mu0.is_finite() {
            return Err(Error::domain("mu0 must be finite"));
        }
        if !(kappa > 0.0) || !(alpha > 0.0) || !(beta > 0.0) {
            return Err(Error::domain("kappa, alpha, beta must be positive"));
        }
        if !kappa.is_finite() || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::domain("parameters must be finite"));
        }
        Ok(NigParams {
            mu0,
            kappa,
            alpha,
            beta,
        })
    }

    /// The NIW parameters this NIG corresponds to under `ν = 2α`, `Ψ = 2β`.
    pub fn to_evidential(&self) -> EvidentialParams {
        let psi = SymMatrix::from_fn(1, |_, _| 2.0 * self.beta);
        EvidentialParams::new(vec![self.mu0], &psi, self.kappa, 2.0 * self.alpha)
            .expect("valid NIG parameters map to valid NIW parameters")
    }
}

/// First-order moments of an evidential distribution: the prediction and the
/// two uncertainty covariances. `epistemic = aleatoric / κ` by construction.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub aleatoric: SymMatrix,
    pub epistemic: SymMatrix,
}

/// Result of a Monte Carlo integration: the estimate and the standard error
/// of the mean.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Multivariate normal log-density `log N(x | μ, Σ)` with `Σ` pre-factored.
pub fn mvn_logpdf(x: &[f64], mu: &[f64], sigma_chol: &CholeskyFactor) -> Result<f64> {
    let n = sigma_chol.n();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x.len(),
        });
    }
    if mu.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: mu.len(),
        });
    }
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let quad = sigma_chol.inv_quad_form(&diff)?;
    Ok(-0.5 * (n as f64 * LN_2PI + sigma_chol.logdet() + quad))
}

/// Inverse-gamma log-density `log Γ⁻¹(x | α, β)`.
pub fn inv_gamma_logpdf(x: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain("inverse-gamma support is x > 0"));
    }
    if !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::domain("inverse-gamma requires alpha > 0, beta > 0"));
    }
    Ok(alpha * beta.ln() - ln_gamma(alpha) - (alpha + 1.0) * x.ln() - beta / x)
}

/// Inverse-Wishart log-density `log W⁻¹(Σ | Ψ, ν)`; requires `ν > n − 1`.
pub fn inv_wishart_logpdf(sigma: &SymMatrix, psi_chol: &CholeskyFactor, nu: f64) -> Result<f64> {
    let n = psi_chol.n();
    if sigma.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: sigma.n(),
        });
    }
    if !(nu > n as f64 - 1.0) {
        return Err(Error::domain(format!(
            "inverse-Wishart requires nu > n - 1 = {}",
            n as f64 - 1.0
        )));
    }
    let sigma_chol = sigma.cholesky()?;
    // tr(Ψ Σ⁻¹) column by column.
    let psi = psi_chol.reconstruct();
    let mut trace = 0.0;
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = sigma_chol.solve(&e)?;
        trace += (0..n).map(|i| psi.get(j, i) * col[i]).sum::<f64>();
        e[j] = 0.0;
    }
    let nf = n as f64;
    Ok(0.5 * nu * psi_chol.logdet()
        - 0.5 * nu * nf * LN_2
        - ln_mv_gamma(n, 0.5 * nu)
        - 0.5 * (nu + nf + 1.0) * sigma_chol.logdet()
        - 0.5 * trace)
}

/// Joint NIW log-density, the product of its Gaussian and inverse-Wishart
/// factors: `log N(μ | μ₀, Σ/κ) + log W⁻¹(Σ | Ψ, ν)`.
pub fn niw_logpdf(mu: &[f64], sigma: &SymMatrix, m: &EvidentialParams) -> Result<f64> {
    let sigma_k_chol = sigma.scaled(1.0 / m.kappa()).cholesky()?;
    let gauss = mvn_logpdf(mu, m.mu0(), &sigma_k_chol)?;
    let wishart = inv_wishart_logpdf(sigma, m.psi_chol(), m.nu())?;
    Ok(gauss + wishart)
}

/// Precomputed state for drawing `(μ, Σ)` pairs from a NIW distribution via
/// the Bartlett decomposition.
///
/// Internally draws a lower-triangular `T` with `Σ⁻¹ = T Tᵀ`, so both the
/// density of a subsequent Gaussian evaluation and the conditional mean draw
/// need only triangular products and solves.
pub struct NiwSampler {
    mu0: Vec<f64>,
    kappa: f64,
    nu: f64,
    /// Cholesky factor of `Ψ⁻¹`.
    psi_inv_chol: CholeskyFactor,
}

impl NiwSampler {
    pub fn new(m: &EvidentialParams) -> Result<Self> {
        let n = m.n();
        if !(m.nu() > n as f64 - 1.0) {
            return Err(Error::domain(format!(
                "NIW sampling requires nu > n - 1 = {}",
                n as f64 - 1.0
            )));
        }
        // Ψ⁻¹ column by column, then factored.
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = m.psi_chol().solve(&e)?;
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
            e[j] = 0.0;
        }
        let psi_inv = SymMatrix::new(n, inv)?;
        Ok(NiwSampler {
            mu0: m.mu0().to_vec(),
            kappa: m.kappa(),
            nu: m.nu(),
            psi_inv_chol: psi_inv.cholesky()?,
        })
    }

    fn n(&self) -> usize {
        self.mu0.len()
    }

    /// Draw `(μ, T)` with `Σ⁻¹ = T Tᵀ`, `T` lower triangular (row-major).
    fn sample_precision_factor(&self, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        // Bartlett factor A of W(I, ν): diag √χ²(ν−i), strict lower N(0,1).
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = rng.chi_squared(self.nu - i as f64).sqrt();
            for j in 0..i {
                a[i * n + j] = rng.normal();
            }
        }
        // T = B·A with B = chol(Ψ⁻¹): then Σ⁻¹ = W = T Tᵀ ~ W(Ψ⁻¹, ν).
        let mut t = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = 0.0;
                for k in j..=i {
                    sum += self.psi_inv_chol.get(i, k) * a[k * n + j];
                }
                t[i * n + j] = sum;
            }
        }
        // μ | Σ ~ N(μ₀, Σ/κ): μ = μ₀ + Tᵀ⁻¹ z / √κ.
        let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mut w = z;
        for i in (0..n).rev() {
            let mut sum = w[i];
            for k in (i + 1)..n {
                sum -= t[k * n + i] * w[k];
            }
            w[i] = sum / t[i * n + i];
        }
        let sqrt_kappa = self.kappa.sqrt();
        let mu: Vec<f64> = (0..n).map(|i| self.mu0[i] + w[i] / sqrt_kappa).collect();
        (mu, t)
    }

    /// Log-density of `N(y | μ, Σ)` for a draw made by
    /// [`Self::sample_precision_factor`].
    fn gaussian_logpdf_at(&self, y: &[f64], mu: &[f64], t: &[f64]) -> f64 {
        let n = self.n();
        let mut quad = 0.0;
        let mut log_det_sigma = 0.0;
        for j in 0..n {
            // (Tᵀ d)_j accumulated column-wise.
            let mut s = 0.0;
            for i in j..n {
                s += t[i * n + j] * (y[i] - mu[i]);
            }
            quad += s * s;
            log_det_sigma -= 2.0 * t[j * n + j].ln();
        }
        -0.5 * (n as f64 * LN_2PI + log_det_sigma + quad)
    }

    /// Draw `(μ, Σ)` with `Σ` reconstructed as a dense matrix.
    pub fn sample(&self, rng: &mut RngStream) -> (Vec<f64>, SymMatrix) {
        let n = self.n();
        let (mu, t) = self.sample_precision_factor(rng);
        // Σ = T⁻ᵀ T⁻¹: invert the triangular factor column by column.
        let mut tinv = vec![0.0; n * n];
        for j in 0..n {
            tinv[j * n + j] = 1.0 / t[j * n + j];
            for i in (j + 1)..n {
                let mut sum = 0.0;
                for k in j..i {
                    sum -= t[i * n + k] * tinv[k * n + j];
                }
                tinv[i * n + j] = sum / t[i * n + i];
            }
        }
        let sigma = SymMatrix::from_fn(n, |i, j| {
            (i.max(j)..n).map(|k| tinv[k * n + i] * tinv[k * n + j]).sum()
        });
        (mu, sigma)
    }
}

/// Draw one `(μ, Σ)` pair from the NIW hierarchical model.
pub fn sample_niw(m: &EvidentialParams, rng: &mut RngStream) -> (Vec<f64>, SymMatrix) {
    NiwSampler::new(m)
        .expect("NIW sampling requires nu > n - 1 and SPD psi")
        .sample(rng)
}

/// Prediction and uncertainty moments of the NIW distribution:
/// `E[μ] = μ₀`, `E[Σ] = Ψ/(ν−n−1)`, `var[μ] = E[Σ]/κ`. Requires `ν > n + 1`.
pub fn niw_moments(m: &EvidentialParams) -> Result<Moments> {
    let n = m.n() as f64;
    if !(m.nu() > n + 1.0) {
        return Err(Error::domain(format!(
            "moments require nu > n + 1 = {}",
            n + 1.0
        )));
    }
    let aleatoric = m.psi().scaled(1.0 / (m.nu() - n - 1.0));
    let epistemic = aleatoric.scaled(1.0 / m.kappa());
    Ok(Moments {
        mean: m.mu0().to_vec(),
        aleatoric,
        epistemic,
    })
}

/// Univariate moments: `E[μ] = μ₀`, `E[σ²] = β/(α−1)`, `var[μ] = E[σ²]/κ`.
/// Requires `α > 1`.
pub fn nig_moments(p: &NigParams) -> Result<Moments> {
    if !(p.alpha > 1.0) {
        return Err(Error::domain("NIG moments require alpha > 1"));
    }
    let aleatoric = SymMatrix::from_fn(1, |_, _| p.beta / (p.alpha - 1.0));
    let epistemic = aleatoric.scaled(1.0 / p.kappa);
    Ok(Moments {
        mean: vec![p.mu0],
        aleatoric,
        epistemic,
    })
}

/// Conjugate posterior after observing `data`: `κ' = κ + m`, `ν' = ν + m`,
/// `μ₀' = (κμ₀ + m⟨Y⟩)/(κ+m)`, and `Ψ' = Ψ + S̃ + m(κ/κ')(μ₀−⟨Y⟩)(μ₀−⟨Y⟩)ᵀ`
/// where `S̃` is the scatter about the sample mean.
pub fn posterior_update(prior: &EvidentialParams, data: &[Vec<f64>]) -> Result<EvidentialParams> {
    let n = prior.n();
    if data.is_empty() {
        return Err(Error::domain("posterior update requires observations"));
    }
    for y in data {
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: y.len(),
            });
        }
    }
    let m = data.len() as f64;
    let mut mean = vec![0.0; n];
    for y in data {
        for i in 0..n {
            mean[i] += y[i];
        }
    }
    for v in &mut mean {
        *v /= m;
    }

    let kappa_post = prior.kappa() + m;
    let nu_post = prior.nu() + m;
    let mu_post: Vec<f64> = (0..n)
        .map(|i| (prior.kappa() * prior.mu0()[i] + m * mean[i]) / kappa_post)
        .collect();

    let mut psi_post = prior.psi();
    for y in data {
        let resid: Vec<f64> = (0..n).map(|i| y[i] - mean[i]).collect();
        psi_post = psi_post.add_outer(1.0, &resid);
    }
    let shift: Vec<f64> = (0..n).map(|i| prior.mu0()[i] - mean[i]).collect();
    psi_post = psi_post.add_outer(m * prior.kappa() / kappa_post, &shift);

    EvidentialParams::new(mu_post, &psi_post, kappa_post, nu_post)
}

/// Closed-form log model evidence: the likelihood of `y` with `(μ, Σ)`
/// integrated out against the NIW prior,
/// `log t_{ν−n+1}(y | μ₀, (1+κ)/(κ(ν−n+1)) Ψ)`. Requires `ν > n − 1`.
pub fn model_evidence_logpdf(y: &[f64], m: &EvidentialParams) -> Result<f64> {
    let n = m.n();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    let nf = n as f64;
    let nu = m.nu();
    let kappa = m.kappa();
    if !(nu > nf - 1.0) {
        return Err(Error::domain(format!(
            "model evidence requires nu > n - 1 = {}",
            nf - 1.0
        )));
    }
    let diff: Vec<f64> = y.iter().zip(m.mu0()).map(|(a, b)| a - b).collect();
    let c = kappa / (1.0 + kappa);
    let logdet_psi = m.psi_chol().logdet();
    let logdet_updated = m.psi_chol().sylvester_logdet_rank1(c, &diff);
    Ok(ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * (nu - nf + 1.0))
        + 0.5 * nf * (kappa.ln() - (1.0 + kappa).ln() - LN_PI)
        + 0.5 * nu * logdet_psi
        - 0.5 * (nu + 1.0) * logdet_updated)
}

/// Monte Carlo estimate of the model evidence: the average of
/// `N(y | μ, Σ)` over NIW draws. Returns the estimate and the standard error
/// of the mean. Sampling is chunked with one child RNG stream per chunk, so
/// the result is independent of the thread count.
pub fn model_evidence_mc(
    y: &[f64],
    m: &EvidentialParams,
    samples: usize,
    rng: &RngStream,
) -> McEstimate {
    assert!(samples >= 2, "need at least two samples for a standard error");
    let sampler = NiwSampler::new(m).expect("NIW sampling requires nu > n - 1 and SPD psi");
    const CHUNK: usize = 8192;
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<(f64, f64)> = exec::map_indexed(chunks, |ci| {
        let mut stream = rng.split(ci as u64);
        let count = CHUNK.min(samples - ci * CHUNK);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..count {
            let (mu, t) = sampler.sample_precision_factor(&mut stream);
            let p = sampler.gaussian_logpdf_at(y, &mu, &t).exp();
            sum += p;
            sumsq += p * p;
        }
        (sum, sumsq)
    });
    let (sum, sumsq) = partial
        .iter()
        .fold((0.0, 0.0), |(a, b), (s, q)| (a + s, b + q));
    let nf = samples as f64;
    let estimate = sum / nf;
    let var = ((sumsq - nf * estimate * estimate) / (nf - 1.0)).max(0.0);
    McEstimate {
        estimate,
        stderr: (var / nf).sqrt(),
    }
}

/// Non-standardized Student-t log-density with `ν` degrees of freedom,
/// location `μ` and squared scale `σ²`.
pub fn student_t_logpdf(x: f64, nu: f64, mu: f64, sigma2: f64) -> Result<f64> {
    if !(nu > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::domain("Student-t requires nu > 0 and sigma2 > 0"));
    }
    let d2 = (x - mu) * (x - mu);
    Ok(ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI * sigma2).ln()
        - 0.5 * (nu + 1.0) * (d2 / (nu * sigma2)).ln_1p())
}
