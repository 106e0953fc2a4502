use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;

use super::planar::{PlanarAtom, PlanarAtomSet};
use crate::error::{LrnrError, Result};
use crate::numerics::rng::Rng;
use crate::numerics::norm2;

fn random_direction(dim: usize, rng: &mut Rng) -> Vec<f64> {
    match dim {
        1 => vec![if rng.gen::<bool>() { 1.0 } else { -1.0 }],
        2 => {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            vec![theta.cos(), theta.sin()]
        }
        _ => loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = norm2(&v);
            if n > 0.1 && n <= 1.0 {
                return v.iter().map(|x| x / n).collect();
            }
        },
    }
}

fn decaying_atoms(dim: usize, count: usize, rng: &mut Rng) -> Vec<PlanarAtom> {
    let raw: Vec<f64> = (0..count).map(|j| 1.0 / ((j + 1) as f64).sqrt()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter()
        .map(|a| {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            PlanarAtom {
                amplitude: sign * a / total,
                direction: random_direction(dim, rng),
                offset: rng.gen_range(-1.0..1.0),
            }
        })
        .collect()
}

/// Random initial data: amplitudes `±j^{-1/2}` normalized to unit ℓ1 mass per
/// part, directions uniform on the sphere, offsets uniform in `[-1, 1]`.
pub fn reference_target(
    dim: usize,
    value_atoms: usize,
    velocity_atoms: usize,
    speed: f64,
    rng: &mut Rng,
) -> Result<PlanarAtomSet> {
    let value = decaying_atoms(dim, value_atoms, rng);
    let velocity = decaying_atoms(dim, velocity_atoms, rng);
    PlanarAtomSet::new(dim, speed, value, velocity)
}

fn total_mass(atoms: &[PlanarAtom], m: usize) -> Result<f64> {
    let mass: f64 = atoms.iter().map(|a| a.amplitude.abs()).sum();
    if m > 0 && !(mass > 0.0 && mass.is_finite()) {
        return Err(LrnrError::invalid("cannot sample from a mixture without mass"));
    }
    Ok(mass)
}

fn rescaled(atom: &PlanarAtom, weight: f64) -> PlanarAtom {
    PlanarAtom {
        amplitude: atom.amplitude.signum() * weight,
        ..atom.clone()
    }
}

/// `m` i.i.d. atoms drawn with probability `∝ |a|`, each carrying amplitude
/// `sign(a)·‖a‖₁/m`; the empirical measure is an unbiased estimator of the mixture.
pub fn maurey_sample(atoms: &[PlanarAtom], m: usize, rng: &mut Rng) -> Result<Vec<PlanarAtom>> {
    let mass = total_mass(atoms, m)?;
    if m == 0 {
        return Ok(Vec::new());
    }
    let dist = WeightedIndex::new(atoms.iter().map(|a| a.amplitude.abs()))
        .map_err(|e| LrnrError::invalid(format!("sampling weights: {e}")))?;
    Ok((0..m).map(|_| rescaled(&atoms[dist.sample(rng)], mass / m as f64)).collect())
}

/// Ordering key of a direction: its angle in 2d, its sign in 1d.
fn direction_key(w: &[f64]) -> f64 {
    match w.len() {
        1 => w[0],
        2 => w[1].atan2(w[0]),
        _ => w[0],
    }
}

/// Stratified variant of [`maurey_sample`]. The mass of the mixture is laid out
/// by amplitude sign, then direction key, and cut into slabs (`⌊√m⌋` of them in 2d, one
/// otherwise), each slab is reordered by offset, and every sample is drawn
/// uniformly from its own equal-mass stratum. The estimator stays unbiased,
/// and each sample only perturbs the mixture locally in `(w, b)`.
pub fn stratified_sample(atoms: &[PlanarAtom], m: usize, rng: &mut Rng) -> Result<Vec<PlanarAtom>> {
    let mass = total_mass(atoms, m)?;
    if m == 0 {
        return Ok(Vec::new());
    }
    let dim = atoms[0].direction.len();
    let slabs = if dim == 2 { ((m as f64).sqrt().floor() as usize).max(1) } else { 1 };
    let mut order: Vec<usize> = (0..atoms.len()).filter(|&i| atoms[i].amplitude != 0.0).collect();
    let key = |i: usize| {
        let a = &atoms[i];
        (a.amplitude.signum(), direction_key(&a.direction), a.offset)
    };
    order.sort_by(|&i, &j| key(i).partial_cmp(&key(j)).expect("finite atoms").then(i.cmp(&j)));

    let unit = mass / m as f64;
    let mut out = Vec::with_capacity(m);
    let mut cursor = 0usize;
    let mut used = 0.0;
    for k in 0..slabs {
        let count = m / slabs + usize::from(k < m % slabs);
        let slab_mass = count as f64 * unit;
        // Portions of atoms falling in this slab.
        let mut portions: Vec<(usize, f64)> = Vec::new();
        let mut need = slab_mass;
        while need > 0.0 && cursor < order.len() {
            let i = order[cursor];
            let avail = atoms[i].amplitude.abs() - used;
            let take = avail.min(need);
            portions.push((i, take));
            need -= take;
            if take >= avail || k + 1 == slabs {
                cursor += 1;
                used = 0.0;
            } else {
                used += take;
            }
        }
        if slabs > 1 {
            portions.sort_by(|a, b| {
                let (x, y) = (&atoms[a.0], &atoms[b.0]);
                (x.amplitude.signum(), x.offset)
                    .partial_cmp(&(y.amplitude.signum(), y.offset))
                    .expect("finite offsets")
                    .then(a.0.cmp(&b.0))
            });
        }
        let available: f64 = portions.iter().map(|p| p.1).sum();
        let mut acc = 0.0;
        let mut p = 0;
        for s in 0..count {
            let target = (s as f64 + rng.gen::<f64>()) / count as f64 * available;
            while p + 1 < portions.len() && acc + portions[p].1 <= target {
                acc += portions[p].1;
                p += 1;
            }
            out.push(rescaled(&atoms[portions[p].0], unit));
        }
    }
    Ok(out)
}

fn sample_set(
    target: &PlanarAtomSet,
    m_value: usize,
    m_velocity: usize,
    rng: &mut Rng,
    sampler: fn(&[PlanarAtom], usize, &mut Rng) -> Result<Vec<PlanarAtom>>,
) -> Result<PlanarAtomSet> {
    let value = sampler(&target.value, m_value, rng)?;
    let velocity = sampler(&target.velocity, m_velocity, rng)?;
    PlanarAtomSet::new(target.dim, target.speed, value, velocity)
}

pub fn maurey_sample_set(target: &PlanarAtomSet, m_value: usize, m_velocity: usize, rng: &mut Rng) -> Result<PlanarAtomSet> {
    sample_set(target, m_value, m_velocity, rng, maurey_sample)
}

pub fn stratified_sample_set(
    target: &PlanarAtomSet,
    m_value: usize,
    m_velocity: usize,
    rng: &mut Rng,
) -> Result<PlanarAtomSet> {
    sample_set(target, m_value, m_velocity, rng, stratified_sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::relu;
    use crate::analytic::rate::fit_slope;
    use crate::numerics::rng;

    fn eval(atoms: &[PlanarAtom], x: f64) -> f64 {
        atoms.iter().map(|a| a.amplitude * relu(a.phase(&[x]))).sum()
    }

    #[test]
    fn single_atom_and_empty() {
        let atom = PlanarAtom {
            amplitude: -0.6,
            direction: vec![1.0],
            offset: 0.2,
        };
        let mut r = rng::seeded(1);
        for m in [1, 3, 10] {
            for sampler in [maurey_sample, stratified_sample] {
                let s = sampler(std::slice::from_ref(&atom), m, &mut r).unwrap();
                assert_eq!(s.len(), m);
                let sum: f64 = s.iter().map(|a| a.amplitude).sum();
                assert!((sum + 0.6).abs() < 1e-15);
                assert!(s.iter().all(|a| a.offset == 0.2));
            }
        }
        assert!(maurey_sample(&[atom.clone()], 0, &mut r).unwrap().is_empty());
        assert!(stratified_sample(&[atom], 0, &mut r).unwrap().is_empty());
        let zero = PlanarAtom {
            amplitude: 0.0,
            direction: vec![1.0],
            offset: 0.0,
        };
        assert!(maurey_sample(&[zero], 2, &mut r).is_err());
    }

    fn l2_error(target: &[PlanarAtom], approx: &[PlanarAtom]) -> f64 {
        let n = 400;
        let h = 2.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = -1.0 + (i as f64 + 0.5) * h;
            let e = eval(target, x) - eval(approx, x);
            acc += e * e * h;
        }
        acc.sqrt()
    }

    #[test]
    fn iid_error_decays_at_half_rate() {
        let mut r = rng::seeded(4);
        let target = reference_target(1, 300, 0, 1.0, &mut r).unwrap().value;
        let widths = [16usize, 32, 64, 128, 256, 512];
        let mut rows = Vec::new();
        for &m in &widths {
            let mut acc = 0.0;
            let seeds = 40;
            for s in 0..seeds {
                let mut rs = rng::stream(100 + s, m as u64);
                let e = l2_error(&target, &maurey_sample(&target, m, &mut rs).unwrap());
                acc += e * e;
            }
            rows.push((m as f64, (acc / seeds as f64).sqrt()));
        }
        let slope = fit_slope(&rows);
        assert!((slope + 0.5).abs() < 0.15, "slope {slope}");
    }

    #[test]
    fn stratified_is_unbiased_in_mass() {
        let mut r = rng::seeded(8);
        let target = reference_target(2, 200, 0, 1.0, &mut r).unwrap().value;
        let pos: f64 = target.iter().filter(|a| a.amplitude > 0.0).map(|a| a.amplitude).sum();
        let draws = 400;
        let mut mean = 0.0;
        for _ in 0..draws {
            let s = stratified_sample(&target, 37, &mut r).unwrap();
            assert_eq!(s.len(), 37);
            mean += s.iter().filter(|a| a.amplitude > 0.0).map(|a| a.amplitude).sum::<f64>() / draws as f64;
        }
        assert!((pos - mean).abs() < 0.02, "{pos} vs {mean}");
        let s = stratified_sample(&target, 37, &mut r).unwrap();
        assert!(s.iter().all(|a| (norm2(&a.direction) - 1.0).abs() < 1e-12));
    }
}
