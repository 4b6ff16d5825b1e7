//! DDPM noise schedule, forward noising, the reverse-step posterior mean and
//! the denoiser interface, all over control sequences.
//!
//! Index convention: `k = 0` is clean data (`alpha_bar_0 = 1`), `k = K` is the
//! noisiest step.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::kinematics::{Control, ControlSequence};
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const DEFAULT_STEPS: usize = 50;
/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("schedule needs at least one step")]
    Empty,
    #[error("beta_{0} is outside (0, 1)")]
    BetaOutOfRange(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule<T> {
    // All four vectors have K + 1 entries; entry 0 is the clean end.
    beta: Vec<T>,
    alpha: Vec<T>,
    alpha_bar: Vec<T>,
    sigma: Vec<T>,
}

impl<T: Scalar> DiffusionSchedule<T> {
    /// `betas[k - 1]` is beta_k for k = 1..=K.
    pub fn from_betas(betas: &[T]) -> Result<Self, ScheduleError> {
        if betas.is_empty() {
            return Err(ScheduleError::Empty);
        }
        if let Some(i) = betas
            .iter()
            .position(|b| !(*b > T::zero() && *b < T::one()))
        {
            return Err(ScheduleError::BetaOutOfRange(i + 1));
        }
        let k = betas.len();
        let mut beta = Vec::with_capacity(k + 1);
        let mut alpha = Vec::with_capacity(k + 1);
        let mut alpha_bar = Vec::with_capacity(k + 1);
        let mut sigma = Vec::with_capacity(k + 1);
        beta.push(T::zero());
        alpha.push(T::one());
        alpha_bar.push(T::one());
        sigma.push(T::zero());
        for &b in betas {
            let a = T::one() - b;
            let prev = *alpha_bar.last().unwrap();
            let ab = prev * a;
            beta.push(b);
            alpha.push(a);
            alpha_bar.push(ab);
            sigma.push((b * (T::one() - prev) / (T::one() - ab)).sqrt());
        }
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
        })
    }

    /// Cosine schedule: alpha_bar(k) proportional to cos^2(((k/K + s) / (1 + s)) * pi/2),
    /// with beta clipped at [`MAX_BETA`].
    pub fn cosine(steps: usize) -> Self {
        assert!(steps >= 1, "schedule needs at least one step");
        let s = COSINE_OFFSET;
        let f = |k: usize| {
            let u = (k as f64 / steps as f64 + s) / (1.0 + s);
            (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let betas: Vec<T> = (1..=steps)
            .map(|k| T::of((1.0 - f(k) / f(k - 1)).clamp(1e-8, MAX_BETA)))
            .collect();
        Self::from_betas(&betas).expect("cosine betas lie in (0, 1)")
    }

    /// Number of noising steps K.
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, k: usize) -> T {
        self.beta[k]
    }

    pub fn alpha(&self, k: usize) -> T {
        self.alpha[k]
    }

    pub fn alpha_bar(&self, k: usize) -> T {
        self.alpha_bar[k]
    }

    /// Posterior standard deviation of step k (0 at k = 1 and at k = 0).
    pub fn sigma(&self, k: usize) -> T {
        self.sigma[k]
    }

    /// Weights `(c_noisy, c_clean)` of the reverse-step posterior mean
    /// `mu = c_noisy * u_k + c_clean * a_hat`. `None` when alpha_bar_k = 1.
    pub fn posterior_coefficients(&self, k: usize) -> Option<(T, T)> {
        assert!(
            k >= 1 && k <= self.steps(),
            "step {k} outside 1..={}",
            self.steps()
        );
        let ab = self.alpha_bar[k];
        let ab_prev = self.alpha_bar[k - 1];
        let denom = T::one() - ab;
        if denom <= T::zero() {
            return None;
        }
        Some((
            self.alpha[k].sqrt() * (T::one() - ab_prev) / denom,
            ab_prev.sqrt() * self.beta[k] / denom,
        ))
    }
}

/// One standard-normal draw, taken in `f64` so both precisions consume the
/// stream identically.
pub fn standard_normal<T: Scalar>(rng: &mut Rng) -> T {
    T::of(rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_controls<T: Scalar>(steps: usize, dt: T, rng: &mut Rng) -> ControlSequence<T> {
    let controls = (0..steps)
        .map(|_| {
            let a = standard_normal(rng);
            Control::new(a, standard_normal(rng))
        })
        .collect();
    ControlSequence::new(controls, dt)
}

/// `sqrt(alpha_bar_k) * u + sqrt(1 - alpha_bar_k) * eps`. `k = 0` returns `u`.
pub fn forward_noise<T: Scalar>(
    u: &ControlSequence<T>,
    k: usize,
    sched: &DiffusionSchedule<T>,
    rng: &mut Rng,
) -> ControlSequence<T> {
    let ab = sched.alpha_bar(k);
    if k == 0 {
        return u.clone();
    }
    let (a, b) = (ab.sqrt(), (T::one() - ab).sqrt());
    let eps = normal_controls(u.len(), u.dt, rng);
    zip_map(u, &eps, |x, e| a * x + b * e)
}

pub fn posterior_mean<T: Scalar>(
    noisy: &ControlSequence<T>,
    clean: &ControlSequence<T>,
    k: usize,
    sched: &DiffusionSchedule<T>,
) -> ControlSequence<T> {
    match sched.posterior_coefficients(k) {
        Some((cn, cc)) => zip_map(noisy, clean, |x, a| cn * x + cc * a),
        None => clean.clone(),
    }
}

pub(crate) fn zip_map<T: Scalar>(
    a: &ControlSequence<T>,
    b: &ControlSequence<T>,
    f: impl Fn(T, T) -> T,
) -> ControlSequence<T> {
    assert_eq!(a.len(), b.len(), "control sequences differ in length");
    let controls = a
        .controls
        .iter()
        .zip(&b.controls)
        .map(|(x, y)| Control::new(f(x.accel, y.accel), f(x.yaw_rate, y.yaw_rate)))
        .collect();
    ControlSequence::new(controls, a.dt)
}

/// Predicts clean controls from noisy controls at step k.
pub trait Denoiser<T: Scalar> {
    fn denoise(
        &self,
        noisy: &ControlSequence<T>,
        k: usize,
        sched: &DiffusionSchedule<T>,
    ) -> ControlSequence<T>;
}

/// Exact posterior-mean denoiser for a Gaussian prior centred on lane-following
/// nominal controls with per-channel std `prior_std`:
///
/// ```text
/// a_hat = nom + c_k (u_k - sqrt(ab_k) nom),  c_k = sqrt(ab_k) s^2 / (ab_k s^2 + 1 - ab_k)
/// ```
///
/// A zero `prior_std` makes it return the nominal controls at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalPriorDenoiser<T> {
    pub nominal: ControlSequence<T>,
    pub prior_std: Control<T>,
}

impl<T: Scalar> NominalPriorDenoiser<T> {
    pub fn new(nominal: ControlSequence<T>, prior_std: Control<T>) -> Self {
        Self { nominal, prior_std }
    }

    /// Returns the nominal controls regardless of input.
    pub fn constant(nominal: ControlSequence<T>) -> Self {
        Self::new(nominal, Control::zero())
    }

    fn gain(std: T, ab: T) -> T {
        let v = std * std;
        let denom = ab * v + T::one() - ab;
        if denom <= T::zero() {
            T::one() / ab.sqrt()
        } else {
            ab.sqrt() * v / denom
        }
    }
}

impl<T: Scalar> Denoiser<T> for NominalPriorDenoiser<T> {
    fn denoise(
        &self,
        noisy: &ControlSequence<T>,
        k: usize,
        sched: &DiffusionSchedule<T>,
    ) -> ControlSequence<T> {
        let ab = sched.alpha_bar(k);
        let ga = Self::gain(self.prior_std.accel, ab);
        let gw = Self::gain(self.prior_std.yaw_rate, ab);
        let r = ab.sqrt();
        let controls = noisy
            .controls
            .iter()
            .zip(&self.nominal.controls)
            .map(|(x, n)| {
                Control::new(
                    n.accel + ga * (x.accel - r * n.accel),
                    n.yaw_rate + gw * (x.yaw_rate - r * n.yaw_rate),
                )
            })
            .collect();
        ControlSequence::new(controls, noisy.dt)
    }
}

/// Plain ancestral sampling: start from standard normal noise and apply the
/// reverse step K times. Returns the final (unclamped) controls.
pub fn reverse_sample<T: Scalar>(
    denoiser: &impl Denoiser<T>,
    sched: &DiffusionSchedule<T>,
    steps: usize,
    dt: T,
    rng: &mut Rng,
) -> ControlSequence<T> {
    let mut u = normal_controls(steps, dt, rng);
    for k in (1..=sched.steps()).rev() {
        let clean = denoiser.denoise(&u, k, sched);
        u = reverse_step(&u, &clean, k, sched, rng);
    }
    u
}

/// `mu_k + sigma_k * eps`, with no noise on the last step.
pub fn reverse_step<T: Scalar>(
    noisy: &ControlSequence<T>,
    clean: &ControlSequence<T>,
    k: usize,
    sched: &DiffusionSchedule<T>,
    rng: &mut Rng,
) -> ControlSequence<T> {
    let mu = posterior_mean(noisy, clean, k, sched);
    if k == 1 {
        return mu;
    }
    let sigma = sched.sigma(k);
    let eps = normal_controls(mu.len(), mu.dt, rng);
    zip_map(&mu, &eps, |m, e| m + sigma * e)
}
