use serde::{Deserialize, Serialize};

/// Riemann data for Burgers' equation `∂_t u + ∂_x(u²/2) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiemannSpec {
    pub left: f64,
    pub right: f64,
    pub jump_at: f64,
}

/// Entropy solution: a shock moving at `(u_l + u_r)/2` when `u_l > u_r`,
/// otherwise the rarefaction fan `(x − x₀)/t`.
pub fn burgers_riemann(spec: &RiemannSpec, x: f64, t: f64) -> f64 {
    let y = x - spec.jump_at;
    if t <= 0.0 {
        return if y < 0.0 { spec.left } else { spec.right };
    }
    if spec.left > spec.right {
        let speed = 0.5 * (spec.left + spec.right);
        if y < speed * t {
            spec.left
        } else {
            spec.right
        }
    } else {
        (y / t).clamp(spec.left, spec.right)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flux(u: f64) -> f64 {
        0.5 * u * u
    }

    #[test]
    fn hand_values() {
        let shock = RiemannSpec {
            left: 1.0,
            right: 0.0,
            jump_at: 0.0,
        };
        assert_eq!(burgers_riemann(&shock, 0.4, 1.0), 1.0);
        assert_eq!(burgers_riemann(&shock, 0.6, 1.0), 0.0);
        let fan = RiemannSpec {
            left: 0.0,
            right: 1.0,
            jump_at: 0.0,
        };
        assert_eq!(burgers_riemann(&fan, 0.3, 1.0), 0.3);
        assert_eq!(burgers_riemann(&fan, 0.3, 0.5), 0.6);
        assert_eq!(burgers_riemann(&fan, -0.3, 1.0), 0.0);
        assert_eq!(burgers_riemann(&fan, 1.3, 1.0), 1.0);
    }

    fn midpoint(n: usize, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        let h = (hi - lo) / n as f64;
        (0..n).map(|i| f(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn mass_balance_over_wide_interval() {
        for spec in [
            RiemannSpec { left: 1.0, right: -0.5, jump_at: 0.1 },
            RiemannSpec { left: -0.4, right: 0.8, jump_at: -0.2 },
        ] {
            let (a, b) = (-2.0, 2.0);
            let m0 = midpoint(40000, a, b, |x| burgers_riemann(&spec, x, 0.0));
            for t in [0.3, 0.7, 1.0] {
                let mt = midpoint(40000, a, b, |x| burgers_riemann(&spec, x, t));
                let expected = m0 - t * (flux(spec.right) - flux(spec.left));
                assert!((mt - expected).abs() < 1e-3, "t={t}: {mt} vs {expected}");
            }
        }
    }

    // ∫∫ (u φ_t + F(u) φ_x) dx dt + ∫ u₀ φ(·, 0) dx = 0 for a smooth bump φ.
    #[test]
    fn weak_form_residual() {
        let phi = |x: f64, t: f64| (-((x - 0.2) * (x - 0.2) / 0.1 + (t - 0.3) * (t - 0.3) / 0.05)).exp();
        let phi_x = |x: f64, t: f64| -2.0 * (x - 0.2) / 0.1 * phi(x, t);
        let phi_t = |x: f64, t: f64| -2.0 * (t - 0.3) / 0.05 * phi(x, t);
        for spec in [
            RiemannSpec { left: 1.0, right: 0.0, jump_at: 0.0 },
            RiemannSpec { left: 0.0, right: 1.0, jump_at: 0.0 },
        ] {
            let (nx, nt) = (1200, 600);
            let (x0, x1, t1) = (-3.0, 3.0, 3.0);
            let hx = (x1 - x0) / nx as f64;
            let ht = t1 / nt as f64;
            let mut acc = 0.0;
            for j in 0..nt {
                let t = (j as f64 + 0.5) * ht;
                for i in 0..nx {
                    let x = x0 + (i as f64 + 0.5) * hx;
                    let u = burgers_riemann(&spec, x, t);
                    acc += (u * phi_t(x, t) + flux(u) * phi_x(x, t)) * hx * ht;
                }
            }
            acc += midpoint(nx, x0, x1, |x| burgers_riemann(&spec, x, 0.0) * phi(x, 0.0));
            assert!(acc.abs() < 2e-3, "residual {acc}");
        }
    }

    // Oleinik: the only admissible jumps go downward.
    #[test]
    fn no_upward_jumps() {
        for spec in [
            RiemannSpec { left: 1.0, right: -0.5, jump_at: 0.0 },
            RiemannSpec { left: -0.4, right: 0.8, jump_at: 0.0 },
        ] {
            let t = 0.5;
            let h = 1e-4;
            let mut prev = burgers_riemann(&spec, -2.0, t);
            for i in 1..40000 {
                let u = burgers_riemann(&spec, -2.0 + i as f64 * h, t);
                assert!(u - prev <= h / t + 1e-12);
                prev = u;
            }
        }
    }
}
