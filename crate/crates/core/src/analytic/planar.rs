use serde::{Deserialize, Serialize};

use super::{heaviside, relu};
use crate::error::{LrnrError, Result};
use crate::lrnr::{Activation, CoeffVector, LrnrFactors, RankSpec};
use crate::numerics::{norm2, Matrix};

/// `a·σ(w·x + b)` for value atoms, `a·H(w·x + b)` for velocity atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarAtom {
    pub amplitude: f64,
    pub direction: Vec<f64>,
    pub offset: f64,
}

impl PlanarAtom {
    pub fn phase(&self, x: &[f64]) -> f64 {
        self.direction.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.offset
    }
}

/// Planar decomposition of wave initial data: `u₀ = Σ a σ(w·x + b)` over
/// `value` and `v₀ = Σ a H(w·x + b)` over `velocity`, propagated at speed `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarAtomSet {
    pub dim: usize,
    pub speed: f64,
    pub value: Vec<PlanarAtom>,
    pub velocity: Vec<PlanarAtom>,
}

impl PlanarAtomSet {
    pub fn new(dim: usize, speed: f64, value: Vec<PlanarAtom>, velocity: Vec<PlanarAtom>) -> Result<Self> {
        let set = PlanarAtomSet {
            dim,
            speed,
            value,
            velocity,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(LrnrError::invalid("planar atoms need a positive dimension"));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(LrnrError::invalid(format!("wave speed must be positive, got {}", self.speed)));
        }
        for atom in self.value.iter().chain(&self.velocity) {
            if atom.direction.len() != self.dim {
                return Err(LrnrError::ShapeMismatch(format!(
                    "atom direction has {} entries, expected {}",
                    atom.direction.len(),
                    self.dim
                )));
            }
            if (norm2(&atom.direction) - 1.0).abs() > 1e-12 {
                return Err(LrnrError::invalid("atom directions must be unit vectors"));
            }
            if !(atom.amplitude.is_finite() && atom.offset.is_finite()) {
                return Err(LrnrError::invalid("non-finite atom"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.value.len() + self.velocity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hidden width of the exact LRNR: two rows per atom.
    pub fn hidden_width(&self) -> usize {
        2 * self.len()
    }
}

/// Value, spatial gradient and time derivative of a planar wave solution.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub time_derivative: f64,
}

/// Value atoms contribute `½a[σ(ξ − ct) + σ(ξ + ct)]`, velocity atoms the
/// d'Alembert antiderivative `(a/2c)[σ(ξ + ct) − σ(ξ − ct)]`, `ξ = w·x + b`.
pub fn planar_wave_solution(atoms: &PlanarAtomSet, x: &[f64], t: f64) -> f64 {
    let ct = atoms.speed * t;
    let mut u = 0.0;
    for a in &atoms.value {
        let xi = a.phase(x);
        u += 0.5 * a.amplitude * (relu(xi - ct) + relu(xi + ct));
    }
    let k = 0.5 / atoms.speed;
    for a in &atoms.velocity {
        let xi = a.phase(x);
        u += k * a.amplitude * (relu(xi + ct) - relu(xi - ct));
    }
    u
}

/// [`planar_wave_solution`] together with its weak first derivatives.
pub fn planar_wave_eval(atoms: &PlanarAtomSet, x: &[f64], t: f64) -> PlanarEval {
    let c = atoms.speed;
    let ct = c * t;
    let mut out = PlanarEval {
        value: 0.0,
        gradient: vec![0.0; atoms.dim],
        time_derivative: 0.0,
    };
    for a in &atoms.value {
        let xi = a.phase(x);
        let (hm, hp) = (heaviside(xi - ct), heaviside(xi + ct));
        out.value += 0.5 * a.amplitude * (relu(xi - ct) + relu(xi + ct));
        out.time_derivative += 0.5 * a.amplitude * c * (hp - hm);
        let g = 0.5 * a.amplitude * (hm + hp);
        for (o, w) in out.gradient.iter_mut().zip(&a.direction) {
            *o += g * w;
        }
    }
    let k = 0.5 / c;
    for a in &atoms.velocity {
        let xi = a.phase(x);
        let (hm, hp) = (heaviside(xi - ct), heaviside(xi + ct));
        out.value += k * a.amplitude * (relu(xi + ct) - relu(xi - ct));
        out.time_derivative += 0.5 * a.amplitude * (hp + hm);
        let g = k * a.amplitude * (hp - hm);
        for (o, w) in out.gradient.iter_mut().zip(&a.direction) {
            *o += g * w;
        }
    }
    out
}

/// An exact LRNR of rank `(d, 2; 1, 0)` and its linear coefficient rule.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveLrnr {
    pub factors: LrnrFactors,
}

impl WaveLrnr {
    pub fn coefficients(&self, t: f64) -> CoeffVector {
        wave_coefficients(self.factors.input_dim(), t)
    }

    pub fn rank_spec(&self) -> RankSpec {
        self.factors.rank_spec()
    }
}

/// `s(t) = (1…1 | 1, t ; 1 | ·)`.
pub fn wave_coefficients(dim: usize, t: f64) -> CoeffVector {
    CoeffVector {
        weight: vec![vec![1.0; dim], vec![1.0]],
        bias: vec![vec![1.0, t], vec![]],
    }
}

/// Shared two-layer skeleton: hidden rows `w_j·x + b_j + β_j t`, output
/// weights `v_j`.
fn two_layer(dim: usize, rows: Vec<(&[f64], f64, f64, f64)>) -> Result<LrnrFactors> {
    let m = rows.len();
    if m == 0 {
        return Err(LrnrError::invalid("exact LRNR needs at least one atom"));
    }
    let mut u1 = Matrix::zeros(m, dim);
    let mut b1 = Matrix::zeros(m, 2);
    let mut v2 = Matrix::zeros(m, 1);
    for (j, (w, b, beta, out)) in rows.into_iter().enumerate() {
        u1.row_mut(j).copy_from_slice(w);
        b1.row_mut(j).copy_from_slice(&[b, beta]);
        v2.row_mut(j)[0] = out;
    }
    LrnrFactors::new(
        vec![dim, m, 1],
        vec![u1, Matrix::identity(1)],
        vec![Matrix::identity(dim), v2],
        vec![b1, Matrix::zeros(1, 0)],
        vec![0.0],
        Activation::Relu,
    )
}

/// Rows `2j` and `2j+1` carry the `−ct` and `+ct` branches of atom `j`
/// (value atoms first).
pub fn build_wave_lrnr(atoms: &PlanarAtomSet) -> Result<WaveLrnr> {
    atoms.validate()?;
    let c = atoms.speed;
    let mut rows = Vec::with_capacity(atoms.hidden_width());
    for a in &atoms.value {
        rows.push((a.direction.as_slice(), a.offset, -c, 0.5 * a.amplitude));
        rows.push((a.direction.as_slice(), a.offset, c, 0.5 * a.amplitude));
    }
    let k = 0.5 / c;
    for a in &atoms.velocity {
        rows.push((a.direction.as_slice(), a.offset, -c, -k * a.amplitude));
        rows.push((a.direction.as_slice(), a.offset, c, k * a.amplitude));
    }
    Ok(WaveLrnr {
        factors: two_layer(atoms.dim, rows)?,
    })
}

/// Exact LRNR for `∂_t u + a·∇u = 0` with `u₀ = Σ a_j σ(w_j·x + b_j)`: one
/// hidden row per atom with time column `−w_j·a`. Uses the same coefficient
/// rule as [`build_wave_lrnr`].
pub fn build_advection_lrnr(atoms: &[PlanarAtom], velocity: &[f64]) -> Result<WaveLrnr> {
    let dim = velocity.len();
    if atoms.iter().any(|a| a.direction.len() != dim) {
        return Err(LrnrError::ShapeMismatch("atom and velocity dimensions differ".into()));
    }
    let rows = atoms
        .iter()
        .map(|a| {
            let drift: f64 = a.direction.iter().zip(velocity).map(|(w, v)| w * v).sum();
            (a.direction.as_slice(), a.offset, -drift, a.amplitude)
        })
        .collect();
    Ok(WaveLrnr {
        factors: two_layer(dim, rows)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{advection_exact, reference_target};
    use crate::lrnr::forward;
    use crate::numerics::rng;
    use rand::Rng as _;

    fn unit(d: usize, rng: &mut crate::numerics::rng::Rng) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = norm2(&v);
            if n > 0.1 {
                return v.iter().map(|x| x / n).collect();
            }
        }
    }

    fn random_atoms(d: usize, n: usize, rng: &mut crate::numerics::rng::Rng) -> Vec<PlanarAtom> {
        (0..n)
            .map(|_| PlanarAtom {
                amplitude: rng.gen_range(-1.0..1.0),
                direction: unit(d, rng),
                offset: rng.gen_range(-1.0..1.0),
            })
            .collect()
    }

    #[test]
    fn single_value_atom() {
        let atoms = PlanarAtomSet::new(
            1,
            1.0,
            vec![PlanarAtom {
                amplitude: 1.0,
                direction: vec![1.0],
                offset: 0.0,
            }],
            vec![],
        )
        .unwrap();
        assert_eq!(planar_wave_solution(&atoms, &[0.0], 1.0), 0.5);
        assert_eq!(planar_wave_solution(&atoms, &[0.3], 0.0), 0.3);
    }

    #[test]
    fn rejects_bad_sets() {
        let atom = PlanarAtom {
            amplitude: 1.0,
            direction: vec![0.6, 0.7],
            offset: 0.0,
        };
        assert!(PlanarAtomSet::new(2, 1.0, vec![atom.clone()], vec![]).is_err());
        let ok = PlanarAtom {
            direction: vec![0.6, 0.8],
            ..atom
        };
        assert!(PlanarAtomSet::new(2, 0.0, vec![ok.clone()], vec![]).is_err());
        assert!(PlanarAtomSet::new(2, 1.0, vec![ok], vec![]).is_ok());
        let empty = PlanarAtomSet::new(1, 1.0, vec![], vec![]).unwrap();
        assert!(build_wave_lrnr(&empty).is_err());
    }

    #[test]
    fn initial_data_reproduced() {
        let mut rng = rng::seeded(3);
        let value = random_atoms(2, 6, &mut rng);
        let velocity = random_atoms(2, 5, &mut rng);
        let set = PlanarAtomSet::new(2, 1.3, value.clone(), velocity.clone()).unwrap();
        let lrnr = build_wave_lrnr(&set).unwrap();
        for _ in 0..50 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let u0: f64 = value.iter().map(|a| a.amplitude * relu(a.phase(&x))).sum();
            let v0: f64 = velocity.iter().map(|a| a.amplitude * heaviside(a.phase(&x))).sum();
            assert!((planar_wave_solution(&set, &x, 0.0) - u0).abs() < 1e-14);
            assert!((forward(&lrnr.factors, &lrnr.coefficients(0.0), &x).unwrap()[0] - u0).abs() < 1e-14);
            let e = planar_wave_eval(&set, &x, 0.0);
            assert!((e.time_derivative - v0).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_and_coefficient_count() {
        let mut rng = rng::seeded(5);
        for d in [1, 2, 3] {
            let set = PlanarAtomSet::new(d, 1.0, random_atoms(d, 4, &mut rng), random_atoms(d, 3, &mut rng)).unwrap();
            let lrnr = build_wave_lrnr(&set).unwrap();
            let spec = lrnr.rank_spec();
            assert_eq!(spec.weight, vec![d, 1]);
            assert_eq!(spec.bias, vec![2, 0]);
            assert_eq!(spec.total(), d + 3);
            assert_eq!(lrnr.factors.width(), 14);
        }
    }

    // Five-point stencils in t and each x_k at points away from every kink.
    #[test]
    fn wave_equation_fd_residual() {
        let mut rng = rng::seeded(9);
        let set = PlanarAtomSet::new(2, 0.8, random_atoms(2, 8, &mut rng), random_atoms(2, 8, &mut rng)).unwrap();
        let h = 1e-3;
        let mut checked = 0;
        while checked < 40 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let t = rng.gen_range(0.1..0.9);
            let margin = set
                .value
                .iter()
                .chain(&set.velocity)
                .flat_map(|a| {
                    let xi = a.phase(&x);
                    [xi - set.speed * t, xi + set.speed * t]
                })
                .fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if margin < 10.0 * h {
                continue;
            }
            checked += 1;
            let u = |x: &[f64], t: f64| planar_wave_solution(&set, x, t);
            let d2 = |f: &dyn Fn(f64) -> f64| {
                (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h)) / (12.0 * h * h)
            };
            let utt = d2(&|s| u(&x, t + s));
            let uxx = d2(&|s| u(&[x[0] + s, x[1]], t));
            let uyy = d2(&|s| u(&[x[0], x[1] + s], t));
            let c2 = set.speed * set.speed;
            assert!((utt - c2 * (uxx + uyy)).abs() < 1e-6, "residual {}", utt - c2 * (uxx + uyy));
        }
    }

    #[test]
    fn weak_derivatives_match_differences() {
        let mut rng = rng::seeded(11);
        let set = reference_target(2, 40, 40, 0.9, &mut rng).unwrap();
        let h = 1e-7;
        for _ in 0..30 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let t = rng.gen_range(0.0..0.5);
            let e = planar_wave_eval(&set, &x, t);
            let u = |x: &[f64], t: f64| planar_wave_solution(&set, x, t);
            let ut = (u(&x, t + h) - u(&x, t - h)) / (2.0 * h);
            let ux = (u(&[x[0] + h, x[1]], t) - u(&[x[0] - h, x[1]], t)) / (2.0 * h);
            assert!((ut - e.time_derivative).abs() < 1e-6);
            assert!((ux - e.gradient[0]).abs() < 1e-6);
            assert_eq!(e.value, u(&x, t));
        }
    }

    #[test]
    fn advection_lrnr_is_exact() {
        let mut rng = rng::seeded(2);
        let atoms = random_atoms(2, 7, &mut rng);
        let vel = [0.4, -0.9];
        let lrnr = build_advection_lrnr(&atoms, &vel).unwrap();
        let u0 = |x: &[f64]| atoms.iter().map(|a| a.amplitude * relu(a.phase(x))).sum::<f64>();
        for _ in 0..100 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let t = rng.gen_range(0.0..1.0);
            let got = forward(&lrnr.factors, &lrnr.coefficients(t), &x).unwrap()[0];
            assert!((got - advection_exact(u0, &vel, &x, t)).abs() < 1e-13);
        }
    }
}
