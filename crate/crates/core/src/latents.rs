//! Reparameterized samplers and KL terms for the per-object latents.
//!
//! All functions work on batched tape variables: the last axis is the
//! latent dimension and every leading axis is a batch axis. KL terms are
//! summed over the last axis and keep it with size 1, so a `[B, d]` input
//! yields a `[B, 1]` KL column that can be gated per example.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Diagonal Gaussian with mean `mu` and standard deviation `exp(log_sigma)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianParams<'t, T: Scalar> {
    pub mu: Var<'t, T>,
    pub log_sigma: Var<'t, T>,
}

impl<'t, T: Scalar> GaussianParams<'t, T> {
    pub fn new(mu: Var<'t, T>, log_sigma: Var<'t, T>) -> Result<Self> {
        if mu.shape() != log_sigma.shape() {
            return Err(Error::Shape {
                op: "GaussianParams",
                lhs: mu.shape(),
                rhs: log_sigma.shape(),
            });
        }
        Ok(GaussianParams { mu, log_sigma })
    }
}

/// Concrete (Gumbel-softmax) distribution over a `k`-simplex.
#[derive(Debug, Clone, Copy)]
pub struct RelaxedCategoricalParams<'t, T: Scalar> {
    /// Unnormalized log-probabilities, `[.., k]`.
    pub logits: Var<'t, T>,
    pub tau: T,
}

impl<'t, T: Scalar> RelaxedCategoricalParams<'t, T> {
    pub fn new(logits: Var<'t, T>, tau: T) -> Result<Self> {
        check_tau(tau)?;
        let k = logits.shape().last().copied().unwrap_or(0);
        if k < 2 {
            return Err(Error::invalid(format!("relaxed categorical needs k >= 2, got {k}")));
        }
        Ok(RelaxedCategoricalParams { logits, tau })
    }

    pub fn categories(&self) -> usize {
        self.logits.shape().last().copied().unwrap_or(0)
    }
}

/// Binary Concrete distribution on (0, 1).
#[derive(Debug, Clone, Copy)]
pub struct RelaxedBernoulliParams<'t, T: Scalar> {
    pub logit: Var<'t, T>,
    pub tau: T,
}

impl<'t, T: Scalar> RelaxedBernoulliParams<'t, T> {
    pub fn new(logit: Var<'t, T>, tau: T) -> Result<Self> {
        check_tau(tau)?;
        Ok(RelaxedBernoulliParams { logit, tau })
    }
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if tau > T::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {tau}")))
    }
}

/// A point on the simplex together with its elementwise logarithm, which is
/// computed in log space so it stays finite at low temperature.
#[derive(Debug, Clone, Copy)]
pub struct SimplexSample<'t, T: Scalar> {
    pub value: Var<'t, T>,
    pub log_value: Var<'t, T>,
}

/// A relaxed binary sample with its pre-sigmoid coordinate.
#[derive(Debug, Clone, Copy)]
pub struct BinarySample<'t, T: Scalar> {
    pub value: Var<'t, T>,
    /// `(logit + noise) / tau`, so that `value = sigmoid(pre_sigmoid)`.
    pub pre_sigmoid: Var<'t, T>,
}

/// `mu + exp(log_sigma) ⊙ eps`.
pub fn sample_gaussian<'t, T: Scalar>(
    params: &GaussianParams<'t, T>,
    eps: Var<'t, T>,
) -> Result<Var<'t, T>> {
    if eps.shape() != params.mu.shape() {
        return Err(Error::Shape {
            op: "sample_gaussian",
            lhs: params.mu.shape(),
            rhs: eps.shape(),
        });
    }
    params.mu.add(params.log_sigma.exp().mul(eps)?)
}

/// `softmax((logits + g) / tau)` with injected Gumbel noise `g`.
pub fn sample_gumbel_softmax<'t, T: Scalar>(
    params: &RelaxedCategoricalParams<'t, T>,
    g: Var<'t, T>,
) -> Result<SimplexSample<'t, T>> {
    check_tau(params.tau)?;
    if g.shape() != params.logits.shape() {
        return Err(Error::Shape {
            op: "sample_gumbel_softmax",
            lhs: params.logits.shape(),
            rhs: g.shape(),
        });
    }
    let z = params.logits.add(g)?.scale(T::one() / params.tau);
    Ok(SimplexSample {
        value: z.softmax()?,
        log_value: z.log_softmax()?,
    })
}

/// `sigmoid((logit + g) / tau)` where `g` is logistic noise (the difference
/// of two Gumbel draws).
pub fn sample_gumbel_sigmoid<'t, T: Scalar>(
    params: &RelaxedBernoulliParams<'t, T>,
    g: Var<'t, T>,
) -> Result<BinarySample<'t, T>> {
    check_tau(params.tau)?;
    if g.shape() != params.logit.shape() {
        return Err(Error::Shape {
            op: "sample_gumbel_sigmoid",
            lhs: params.logit.shape(),
            rhs: g.shape(),
        });
    }
    let pre = params.logit.add(g)?.scale(T::one() / params.tau);
    Ok(BinarySample {
        value: pre.sigmoid(),
        pre_sigmoid: pre,
    })
}

/// Closed-form `KL(N(mu, sigma²) || N(0, 1))` summed over the last axis.
pub fn kl_gaussian_standard<'t, T: Scalar>(params: &GaussianParams<'t, T>) -> Result<Var<'t, T>> {
    let half = T::lit(0.5);
    let mu2 = params.mu.square();
    let two_ls = params.log_sigma.scale(T::lit(2.0));
    let var = two_ls.exp();
    let last = params.mu.shape().len().saturating_sub(1);
    let per = mu2.add(var)?.sub(two_ls)?.add_scalar(-T::one()).scale(half);
    if per.shape().is_empty() {
        return Ok(per);
    }
    per.sum_axis(last)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Log-density of a Concrete distribution with the given logits at the
/// point whose elementwise log is `log_y`, summed into a `[.., 1]` column.
pub fn relaxed_categorical_log_density<'t, T: Scalar>(
    logits: Var<'t, T>,
    tau: T,
    log_y: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let k = log_y.shape().last().copied().unwrap_or(0);
    let last = log_y.shape().len() - 1;
    let constant = T::lit(ln_factorial(k - 1) + (k as f64 - 1.0) * tau.as_f64().ln());
    // Σ_i (l_i − (τ+1) log y_i)
    let body = logits
        .sub(log_y.scale(tau + T::one()))?
        .sum_axis(last)?;
    // k · logsumexp_i (l_i − τ log y_i)
    let norm = logits.sub(log_y.scale(tau))?.logsumexp()?.scale(T::lit(k as f64));
    body.sub(norm).map(|v| v.add_scalar(constant))
}

/// Single-sample `log q(y) − log p(y)` for a Concrete posterior against a
/// Concrete prior with the same temperature and fixed class probabilities.
pub fn kl_relaxed_categorical_mc<'t, T: Scalar>(
    params: &RelaxedCategoricalParams<'t, T>,
    prior_probs: &[T],
    sample: &SimplexSample<'t, T>,
) -> Result<Var<'t, T>> {
    let k = params.categories();
    if prior_probs.len() != k {
        return Err(Error::invalid(format!(
            "prior has {} classes, posterior {k}",
            prior_probs.len()
        )));
    }
    if prior_probs.iter().any(|&p| !(p > T::zero())) {
        return Err(Error::invalid("categorical prior with a zero component has no density"));
    }
    let tape = params.logits.tape();
    let prior_logits = tape.constant(Tensor::from_vec(
        &[k],
        prior_probs.iter().map(|p| p.ln()).collect(),
    )?);
    let log_q = relaxed_categorical_log_density(params.logits, params.tau, sample.log_value)?;
    // broadcast the prior logits over the batch axes
    let prior_full = params.logits.scale(T::zero()).add(prior_logits)?;
    let log_p = relaxed_categorical_log_density(prior_full, params.tau, sample.log_value)?;
    log_q.sub(log_p)
}

/// Log-density of a binary Concrete variable in its pre-sigmoid coordinate
/// `x`: `ln τ − (τx − l) − 2·softplus(l − τx)`.
pub fn relaxed_bernoulli_log_density<'t, T: Scalar>(
    logit: Var<'t, T>,
    tau: T,
    pre_sigmoid: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let z = pre_sigmoid.scale(tau).sub(logit)?;
    let sp = z.neg().softplus().scale(T::lit(2.0));
    Ok(z.neg().sub(sp)?.add_scalar(tau.ln()))
}

fn logit_of<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Per-step single-sample KL of the presence posterior against the relaxed
/// Bernoulli prior with success probability `continue_prob`.
pub fn kl_pres_step<'t, T: Scalar>(
    params: &RelaxedBernoulliParams<'t, T>,
    sample: &BinarySample<'t, T>,
    continue_prob: T,
) -> Result<Var<'t, T>> {
    if !(continue_prob > T::zero() && continue_prob < T::one()) {
        return Err(Error::invalid(format!(
            "continue probability must lie in (0, 1), got {continue_prob}"
        )));
    }
    // The Jacobian of the sigmoid cancels between q and p, so the estimate
    // is taken in the pre-sigmoid coordinate.
    let log_q = relaxed_bernoulli_log_density(params.logit, params.tau, sample.pre_sigmoid)?;
    let prior_logit = params.logit.scale(T::zero()).add_scalar(logit_of(continue_prob));
    let log_p = relaxed_bernoulli_log_density(prior_logit, params.tau, sample.pre_sigmoid)?;
    log_q.sub(log_p)
}

/// Sum over steps of [`kl_pres_step`]: the geometric prior factorized into
/// per-step continuation variables.
pub fn kl_pres_geometric_mc<'t, T: Scalar>(
    step_params: &[RelaxedBernoulliParams<'t, T>],
    samples: &[BinarySample<'t, T>],
    continue_prob: T,
) -> Result<Var<'t, T>> {
    if step_params.len() != samples.len() || step_params.is_empty() {
        return Err(Error::invalid(format!(
            "{} presence parameters for {} samples",
            step_params.len(),
            samples.len()
        )));
    }
    let mut total: Option<Var<'t, T>> = None;
    for (p, s) in step_params.iter().zip(samples) {
        let kl = kl_pres_step(p, s, continue_prob)?;
        total = Some(match total {
            None => kl,
            Some(acc) => acc.add(kl)?,
        });
    }
    Ok(total.expect("non-empty"))
}

/// Exponential temperature decay applied in blocks of `anneal_every` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub tau0: f64,
    pub tau_min: f64,
    pub rate: f64,
    pub anneal_every: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            tau0: 1.0,
            tau_min: 0.5,
            rate: 1e-4,
            anneal_every: 1000,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0 && self.tau0 >= self.tau_min && self.rate > 0.0 && self.anneal_every >= 1) {
            return Err(Error::invalid(format!("invalid anneal schedule {self:?}")));
        }
        Ok(())
    }

    /// `max(tau_min, tau0 · exp(−rate · ⌊step / every⌋ · every))`.
    pub fn tau(&self, step: u64) -> f64 {
        let block = (step / self.anneal_every) * self.anneal_every;
        (self.tau0 * (-self.rate * block as f64).exp()).max(self.tau_min)
    }
}

pub fn anneal_tau(schedule: &AnnealSchedule, step: u64) -> f64 {
    schedule.tau(step)
}
