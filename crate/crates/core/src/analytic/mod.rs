//! Exact solutions and constructive LRNRs that serve as data generators and
//! correctness oracles.

mod burgers;
mod generators;
mod planar;
mod rate;
mod sampling;

pub use burgers::{burgers_riemann, RiemannSpec};
pub use generators::{
    advection1d_dataset, burgers_riemann_dataset, equispaced_times, planar_wave_dataset, AdvectionParams,
};
pub use planar::{
    build_advection_lrnr, build_wave_lrnr, planar_wave_eval, planar_wave_solution, wave_coefficients, PlanarAtom,
    PlanarAtomSet, PlanarEval, WaveLrnr,
};
pub use rate::{cone_energy, fit_slope, rate_study, RateProblem, RateRow, RateStudy, RateStudyConfig};
pub use sampling::{maurey_sample, maurey_sample_set, reference_target, stratified_sample, stratified_sample_set};

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Unit step with `H(0) = 0`, the weak derivative of [`relu`].
pub fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `f(x − ct) + g(x + ct)`.
pub fn dalembert_1d(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, c: f64, x: f64, t: f64) -> f64 {
    f(x - c * t) + g(x + c * t)
}

/// `u0(x − a t)`.
pub fn advection_exact(u0: impl Fn(&[f64]) -> f64, a: &[f64], x: &[f64], t: f64) -> f64 {
    let shifted: Vec<f64> = x.iter().zip(a).map(|(xi, ai)| xi - ai * t).collect();
    u0(&shifted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dalembert_hand_values() {
        assert_eq!(dalembert_1d(|x| x, |_| 0.0, 1.0, 2.0, 1.0), 1.0);
        assert_eq!(dalembert_1d(|x| x * x, |x| 3.0 * x, 2.0, 0.5, 0.0), 0.25 + 1.5);
        assert_eq!(dalembert_1d(relu, relu, 1.0, 0.0, 1.0), 1.0);
    }

    #[test]
    fn advection_hand_values() {
        let u0 = |x: &[f64]| relu(x[0]);
        assert_eq!(advection_exact(u0, &[2.0], &[3.0], 1.0), 1.0);
        assert_eq!(advection_exact(u0, &[2.0], &[0.4], 0.0), 0.4);
    }

    #[test]
    fn advection_fd_residual() {
        let a = [0.7, -0.3];
        let u0 = |x: &[f64]| (2.0 * x[0]).sin() * (x[1] + 0.5).cos();
        let (x, t, h) = ([0.3, -0.2], 0.4, 1e-4);
        let u = |x: &[f64], t: f64| advection_exact(u0, &a, x, t);
        let ut = (u(&x, t + h) - u(&x, t - h)) / (2.0 * h);
        let ux = (u(&[x[0] + h, x[1]], t) - u(&[x[0] - h, x[1]], t)) / (2.0 * h);
        let uy = (u(&[x[0], x[1] + h], t) - u(&[x[0], x[1] - h], t)) / (2.0 * h);
        assert!((ut + a[0] * ux + a[1] * uy).abs() < 1e-7);
    }
}
