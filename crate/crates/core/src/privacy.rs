//! Rényi-DP accountant for the Poisson-subsampled Gaussian mechanism.
//!
//! One DP-SGD step releases `sum(clipped gradients) + N(0, sigma^2 C^2 I)`
//! on a minibatch where each record is included independently with
//! probability `q`. Its RDP at order `alpha` is `ln(A_alpha) / (alpha - 1)`
//! with
//!
//! ```text
//! A_alpha = E_{z ~ N(0, sigma^2)} [ ((1 - q) + q * exp((2z - 1) / (2 sigma^2)))^alpha ]
//! ```
//!
//! Integer orders expand the power with the binomial theorem; fractional
//! orders use the two-sided series with complementary error functions.
//! Both are evaluated in the log domain. Steps compose additively and the
//! total is converted to `(epsilon, delta)` with
//! `epsilon = min_alpha rdp(alpha) + ln(1/delta) / (alpha - 1)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest noise multiplier [`calibrate_noise`] will consider.
pub const SIGMA_CEILING: f64 = 1000.0;
/// Smallest noise multiplier [`calibrate_noise`] will consider.
pub const SIGMA_FLOOR: f64 = 0.05;
/// Relative width of the calibration acceptance window below the target.
pub const CALIBRATION_TOLERANCE: f64 = 1e-3;

/// The fixed order grid: 1.25, 1.5, 1.75, 2, 2.25, 2.5 and every integer
/// from 3 to 256.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75, 2.0, 2.25, 2.5];
    orders.extend((3..=256).map(f64::from));
    orders
}

/// Which quantity of a [`PrivacySpec`] was solved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeVariable {
    /// Noise was calibrated to hit a target epsilon.
    NoiseMultiplier,
    /// Epsilon was computed from a given noise multiplier.
    Epsilon,
}

/// A complete privacy configuration, as recorded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    pub noise_multiplier: f64,
    pub sampling_rate: f64,
    pub steps: u64,
    pub order: f64,
    pub free: FreeVariable,
}

impl PrivacySpec {
    /// Accounts a run with known `sigma`.
    pub fn audit(noise_multiplier: f64, sampling_rate: f64, steps: u64, delta: f64) -> Result<Self> {
        let (epsilon, order) = epsilon_for(noise_multiplier, sampling_rate, steps, delta)?;
        Ok(Self {
            epsilon,
            delta,
            noise_multiplier,
            sampling_rate,
            steps,
            order,
            free: FreeVariable::Epsilon,
        })
    }

    /// Calibrates `sigma` for a target epsilon.
    pub fn calibrate(epsilon: f64, delta: f64, sampling_rate: f64, steps: u64) -> Result<Self> {
        let c = calibrate_noise(epsilon, delta, sampling_rate, steps)?;
        Ok(Self {
            epsilon: c.epsilon,
            delta,
            noise_multiplier: c.noise_multiplier,
            sampling_rate,
            steps,
            order: c.order,
            free: FreeVariable::NoiseMultiplier,
        })
    }
}

/// Accumulated RDP per order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    orders: Vec<f64>,
    rdp: Vec<f64>,
}

impl Default for AccountantState {
    fn default() -> Self {
        Self::new(default_orders()).expect("default order grid is valid")
    }
}

impl AccountantState {
    pub fn new(orders: Vec<f64>) -> Result<Self> {
        check_orders(&orders)?;
        if orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("orders must be strictly ascending".into()));
        }
        let rdp = vec![0.0; orders.len()];
        Ok(Self { orders, rdp })
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn rdp(&self) -> &[f64] {
        &self.rdp
    }

    /// Builds a state with explicit accumulated values.
    pub fn with_rdp(orders: Vec<f64>, rdp: Vec<f64>) -> Result<Self> {
        let mut state = Self::new(orders)?;
        if rdp.len() != state.orders.len() {
            return Err(Error::Domain(format!(
                "{} rdp values for {} orders",
                rdp.len(),
                state.orders.len()
            )));
        }
        if rdp.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("rdp values must be non-negative".into()));
        }
        state.rdp = rdp;
        Ok(state)
    }

    /// Adds `steps` releases of one subsampled Gaussian step.
    pub fn record_steps(&mut self, noise_multiplier: f64, sampling_rate: f64, steps: u64) -> Result<()> {
        let per_step = rdp_subsampled_gaussian(sampling_rate, noise_multiplier, &self.orders)?;
        *self = compose(self, &per_step, steps)?;
        Ok(())
    }

    pub fn epsilon(&self, delta: f64) -> Result<(f64, f64)> {
        rdp_to_dp(self, delta)
    }
}

fn check_orders(orders: &[f64]) -> Result<()> {
    if let Some(bad) = orders.iter().find(|a| !(**a > 1.0) || !a.is_finite()) {
        return Err(Error::Domain(format!("RDP order {bad} must be a finite number above 1")));
    }
    Ok(())
}

/// `ln(e^a + e^b)`.
fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(e^a - e^b)` for `a >= b`.
fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a <= b {
        return f64::NEG_INFINITY;
    }
    let d = a - b;
    if d > 700.0 {
        return a;
    }
    d.exp_m1().ln() + b
}

/// `ln(erfc(x))`, accurate far into the upper tail.
fn log_erfc(x: f64) -> f64 {
    if x < 25.0 {
        return libm::erfc(x).ln();
    }
    // Asymptotic expansion of erfc for large x.
    let x2 = x * x;
    let series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2)
        + 105.0 / (16.0 * x2 * x2 * x2 * x2);
    -x2 - x.ln() - 0.5 * std::f64::consts::PI.ln() + series.ln()
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    libm::lgamma((n + 1) as f64) - libm::lgamma((k + 1) as f64) - libm::lgamma((n - k + 1) as f64)
}

/// `ln(A_alpha)` for integer `alpha` by the binomial expansion.
fn log_a_integer(q: f64, sigma: f64, alpha: u64) -> f64 {
    let log_q = q.ln();
    let log_1mq = (-q).ln_1p();
    let two_s2 = 2.0 * sigma * sigma;
    let mut acc = f64::NEG_INFINITY;
    for k in 0..=alpha {
        let kf = k as f64;
        let term = ln_binomial(alpha, k) + kf * log_q + (alpha - k) as f64 * log_1mq + (kf * kf - kf) / two_s2;
        acc = log_add(acc, term);
    }
    acc
}

/// `ln(A_alpha)` for fractional `alpha` by the two-sided erfc series.
fn log_a_fractional(q: f64, sigma: f64, alpha: f64) -> f64 {
    let mut log_a0 = f64::NEG_INFINITY;
    let mut log_a1 = f64::NEG_INFINITY;
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let log_q = q.ln();
    let log_1mq = (-q).ln_1p();
    let two_s2 = 2.0 * sigma * sigma;
    let sqrt2_sigma = std::f64::consts::SQRT_2 * sigma;
    let half = 0.5f64.ln();

    // Generalized binomial coefficient C(alpha, i), tracked as log |C| and sign.
    let mut log_coef = 0.0;
    let mut positive = true;
    let mut i = 0u64;
    loop {
        let fi = i as f64;
        if i > 0 {
            let factor = alpha - fi + 1.0;
            if factor == 0.0 {
                break;
            }
            log_coef += factor.abs().ln() - fi.ln();
            if factor < 0.0 {
                positive = !positive;
            }
        }
        let j = alpha - fi;
        let log_t0 = log_coef + fi * log_q + j * log_1mq;
        let log_t1 = log_coef + j * log_q + fi * log_1mq;
        let log_e0 = half + log_erfc((fi - z0) / sqrt2_sigma);
        let log_e1 = half + log_erfc((z0 - j) / sqrt2_sigma);
        let log_s0 = log_t0 + (fi * fi - fi) / two_s2 + log_e0;
        let log_s1 = log_t1 + (j * j - j) / two_s2 + log_e1;
        if positive {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        i += 1;
        if log_s0.max(log_s1) < -30.0 || i > 10_000_000 {
            break;
        }
    }
    log_add(log_a0, log_a1)
}

fn rdp_one_order(q: f64, sigma: f64, alpha: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    if q == 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    let log_a = if alpha.fract() == 0.0 {
        log_a_integer(q, sigma, alpha as u64)
    } else {
        log_a_fractional(q, sigma, alpha)
    };
    (log_a / (alpha - 1.0)).max(0.0)
}

/// RDP of one subsampled Gaussian release at every order.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, orders: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("sampling rate {q} outside [0, 1]")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("noise multiplier {sigma} must be positive")));
    }
    check_orders(orders)?;
    Ok(orders.iter().map(|&a| rdp_one_order(q, sigma, a)).collect())
}

/// Adds `steps` copies of `per_step_rdp` to `state`.
pub fn compose(state: &AccountantState, per_step_rdp: &[f64], steps: u64) -> Result<AccountantState> {
    if per_step_rdp.len() != state.orders.len() {
        return Err(Error::Domain(format!(
            "{} per-step values for {} orders",
            per_step_rdp.len(),
            state.orders.len()
        )));
    }
    let t = steps as f64;
    let rdp = state.rdp.iter().zip(per_step_rdp).map(|(acc, step)| acc + t * step).collect();
    Ok(AccountantState { orders: state.orders.clone(), rdp })
}

/// Converts accumulated RDP to `(epsilon, minimizing order)` at `delta`.
pub fn rdp_to_dp(state: &AccountantState, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta {delta} outside (0, 1)")));
    }
    if state.orders.is_empty() {
        return Err(Error::Domain("accountant has no orders".into()));
    }
    let log_inv_delta = -delta.ln();
    let mut best = (f64::INFINITY, state.orders[0]);
    for (&alpha, &rdp) in state.orders.iter().zip(&state.rdp) {
        let eps = rdp + log_inv_delta / (alpha - 1.0);
        if eps < best.0 {
            best = (eps, alpha);
        }
    }
    Ok(best)
}

/// Epsilon of `steps` subsampled Gaussian releases on the default grid.
pub fn epsilon_for(noise_multiplier: f64, sampling_rate: f64, steps: u64, delta: f64) -> Result<(f64, f64)> {
    let mut state = AccountantState::default();
    state.record_steps(noise_multiplier, sampling_rate, steps)?;
    state.epsilon(delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub noise_multiplier: f64,
    pub epsilon: f64,
    pub order: f64,
}

/// Smallest-found noise multiplier whose epsilon lies in
/// `[target * (1 - 1e-3), target]`, by bisection on `[SIGMA_FLOOR, SIGMA_CEILING]`.
pub fn calibrate_noise(target_epsilon: f64, delta: f64, q: f64, steps: u64) -> Result<Calibration> {
    if !(target_epsilon > 0.0) || !target_epsilon.is_finite() {
        return Err(Error::Calibration(format!("target epsilon {target_epsilon} must be positive")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Calibration(format!("sampling rate {q} outside (0, 1]")));
    }
    let eval = |sigma: f64| epsilon_for(sigma, q, steps, delta);
    let (eps_hi, order_hi) = eval(SIGMA_CEILING)?;
    if eps_hi > target_epsilon {
        return Err(Error::Calibration(format!(
            "epsilon {target_epsilon} is unreachable: even sigma = {SIGMA_CEILING} gives epsilon {eps_hi:.6}"
        )));
    }
    let (eps_lo, order_lo) = eval(SIGMA_FLOOR)?;
    if eps_lo <= target_epsilon {
        return Ok(Calibration { noise_multiplier: SIGMA_FLOOR, epsilon: eps_lo, order: order_lo });
    }
    let lower_bound = target_epsilon * (1.0 - CALIBRATION_TOLERANCE);
    let (mut lo, mut hi) = (SIGMA_FLOOR, SIGMA_CEILING);
    let mut best = Calibration { noise_multiplier: hi, epsilon: eps_hi, order: order_hi };
    for _ in 0..200 {
        if best.epsilon >= lower_bound {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (eps, order) = eval(mid)?;
        if eps <= target_epsilon {
            hi = mid;
            best = Calibration { noise_multiplier: mid, epsilon: eps, order };
        } else {
            lo = mid;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_batch_is_plain_gaussian() {
        let r = rdp_subsampled_gaussian(1.0, 1.0, &[2.0]).unwrap();
        assert_eq!(r, vec![1.0]);
        let orders = default_orders();
        let r = rdp_subsampled_gaussian(1.0, 1.7, &orders).unwrap();
        for (a, v) in orders.iter().zip(r) {
            assert!((v - a / (2.0 * 1.7 * 1.7)).abs() <= 1e-12);
        }
    }

    #[test]
    fn no_sampling_releases_nothing() {
        let r = rdp_subsampled_gaussian(0.0, 0.3, &default_orders()).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn order_at_most_one_is_domain_error() {
        assert!(matches!(rdp_subsampled_gaussian(0.1, 1.0, &[1.0]), Err(Error::Domain(_))));
        assert!(matches!(rdp_subsampled_gaussian(0.1, 1.0, &[0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn compose_fixtures() {
        let s = AccountantState::new(vec![2.0, 4.0]).unwrap();
        assert_eq!(compose(&s, &[0.3, 0.4], 0).unwrap(), s);
        let a = compose(&compose(&s, &[0.01, 0.02], 5).unwrap(), &[0.01, 0.02], 5).unwrap();
        let b = compose(&s, &[0.01, 0.02], 10).unwrap();
        for (x, y) in a.rdp().iter().zip(b.rdp()) {
            assert!((x - y).abs() < 1e-15);
        }
        let c = compose(&AccountantState::new(vec![2.0]).unwrap(), &[0.01], 100).unwrap();
        assert!((c.rdp()[0] - 1.0).abs() < 1e-12);
        assert!(compose(&s, &[0.1], 1).is_err());
    }

    #[test]
    fn conversion_fixtures() {
        let s = AccountantState::with_rdp(vec![2.0], vec![1.0]).unwrap();
        let (eps, order) = rdp_to_dp(&s, 1e-5).unwrap();
        assert!((eps - (1.0 + 1e5f64.ln())).abs() < 1e-12);
        assert!((eps - 12.5129).abs() < 1e-4);
        assert_eq!(order, 2.0);

        let zero = AccountantState::default();
        let (eps, order) = rdp_to_dp(&zero, 1e-5).unwrap();
        assert_eq!(order, 256.0);
        assert!((eps - 1e5f64.ln() / 255.0).abs() < 1e-15);

        assert!(rdp_to_dp(&zero, 0.0).is_err());
        assert!(rdp_to_dp(&zero, 1.0).is_err());
    }

    #[test]
    fn doubling_rdp_never_decreases_epsilon() {
        let mut s = AccountantState::default();
        s.record_steps(1.1, 0.01, 300).unwrap();
        let doubled: Vec<f64> = s.rdp().iter().map(|v| 2.0 * v).collect();
        let d = AccountantState::with_rdp(default_orders(), doubled).unwrap();
        assert!(d.epsilon(1e-5).unwrap().0 >= s.epsilon(1e-5).unwrap().0);
    }

    #[test]
    fn integer_and_fractional_paths_agree_near_integers() {
        // The fractional series evaluated just off an integer order must be
        // continuous with the binomial expansion at that order.
        for &(q, sigma) in &[(0.01, 1.0), (0.1, 2.0), (0.05, 0.8)] {
            for alpha in [2u64, 3, 5, 8] {
                let exact = log_a_integer(q, sigma, alpha);
                let near = log_a_fractional(q, sigma, alpha as f64 + 1e-7);
                assert!((exact - near).abs() <= 1e-5 * exact.abs().max(1e-9), "{q} {sigma} {alpha}: {exact} {near}");
            }
        }
    }

    #[test]
    fn calibration_round_trip() {
        let (q, steps, delta, target) = (0.02, 500, 1e-5, 3.0);
        let c = calibrate_noise(target, delta, q, steps).unwrap();
        assert!(c.epsilon <= target && c.epsilon >= target * (1.0 - 1e-3));
        let (eps, _) = epsilon_for(c.noise_multiplier, q, steps, delta).unwrap();
        assert_eq!(eps, c.epsilon);
        let (eps_less, _) = epsilon_for(c.noise_multiplier * 0.99, q, steps, delta).unwrap();
        assert!(eps_less > target);
        assert_eq!(calibrate_noise(target, delta, q, steps).unwrap(), c);
    }

    #[test]
    fn infeasible_calibration_names_the_ceiling() {
        match calibrate_noise(1e-6, 1e-5, 1.0, 1_000_000) {
            Err(Error::Calibration(msg)) => assert!(msg.contains("1000")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn epsilon_monotone_in_steps() {
        let a = epsilon_for(1.0, 0.01, 100, 1e-5).unwrap().0;
        let b = epsilon_for(1.0, 0.01, 1000, 1e-5).unwrap().0;
        assert!(b > a);
    }
}
