use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::planar::{build_advection_lrnr, build_wave_lrnr, planar_wave_eval, PlanarAtom, PlanarAtomSet, PlanarEval};
use super::sampling::{maurey_sample, maurey_sample_set, reference_target, stratified_sample, stratified_sample_set};
use super::{heaviside, relu};
use crate::dataio::UniformGrid;
use crate::error::{LrnrError, Result};
use crate::lrnr::{forward, LrnrFactors, CoeffVector};
use crate::numerics::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateProblem {
    Wave1d,
    Wave2d,
    Advection1d,
}

impl RateProblem {
    pub fn dim(self) -> usize {
        match self {
            RateProblem::Wave2d => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RateProblem::Wave1d => "wave1d",
            RateProblem::Wave2d => "wave2d",
            RateProblem::Advection1d => "advection1d",
        }
    }

    /// Exponent of the width in the error bound, `−(½ + 1/(2d))`.
    pub fn predicted_slope(self) -> f64 {
        -(0.5 + 0.5 / self.dim() as f64)
    }
}

impl FromStr for RateProblem {
    type Err = LrnrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wave1d" => Ok(RateProblem::Wave1d),
            "wave2d" => Ok(RateProblem::Wave2d),
            "advection1d" => Ok(RateProblem::Advection1d),
            _ => Err(LrnrError::invalid(format!("unknown rate-study problem `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateStudyConfig {
    pub widths: Vec<usize>,
    pub seeds: usize,
    pub base_seed: u64,
    /// Atoms per part of the reference mixture.
    pub reference_atoms: usize,
    pub speed: f64,
    pub final_time: f64,
    pub time_samples: usize,
    /// Quadrature cells per dimension on `[-1, 1]^d`.
    pub cells_1d: usize,
    pub cells_2d: usize,
    /// Draw atoms i.i.d. instead of by stratified sampling.
    pub iid: bool,
}

impl Default for RateStudyConfig {
    fn default() -> Self {
        RateStudyConfig {
            widths: vec![32, 64, 128, 256, 512],
            seeds: 5,
            base_seed: 0,
            reference_atoms: 500,
            speed: 1.0,
            final_time: 0.5,
            time_samples: 6,
            cells_1d: 8192,
            cells_2d: 256,
            iid: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub width: usize,
    pub seed: usize,
    /// Worst error over the sampled times.
    pub l2_error: f64,
    pub h1_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateStudy {
    pub problem: RateProblem,
    pub rows: Vec<RateRow>,
    /// Log-log slope of the H¹ error over all rows.
    pub slope_h1: f64,
    pub slope_l2: f64,
    pub seed_slopes: Vec<f64>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(x, y) in points {
        sx += x.ln();
        sy += y.ln();
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut num, mut den) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x.ln() - mx;
        num += dx * (y.ln() - my);
        den += dx * dx;
    }
    num / den
}

/// Either a planar wave or a planar advected profile.
enum Target {
    Wave(PlanarAtomSet),
    Advection { atoms: Vec<PlanarAtom>, velocity: Vec<f64> },
}

fn advection_eval(atoms: &[PlanarAtom], velocity: &[f64], x: &[f64], t: f64) -> PlanarEval {
    let mut out = PlanarEval {
        value: 0.0,
        gradient: vec![0.0; x.len()],
        time_derivative: 0.0,
    };
    for a in atoms {
        let drift: f64 = a.direction.iter().zip(velocity).map(|(w, v)| w * v).sum();
        let xi = a.phase(x) - drift * t;
        out.value += a.amplitude * relu(xi);
        let h = a.amplitude * heaviside(xi);
        out.time_derivative -= h * drift;
        for (g, w) in out.gradient.iter_mut().zip(&a.direction) {
            *g += h * w;
        }
    }
    out
}

impl Target {
    fn eval(&self, x: &[f64], t: f64) -> PlanarEval {
        match self {
            Target::Wave(set) => planar_wave_eval(set, x, t),
            Target::Advection { atoms, velocity } => advection_eval(atoms, velocity, x, t),
        }
    }
}

fn quadrature_grid(dim: usize, cells: usize) -> Result<UniformGrid> {
    UniformGrid::covering(&vec![-1.0; dim], &vec![1.0; dim], &vec![cells; dim])
}

/// Worst-over-time L² and H¹ errors of an approximation whose values come
/// from an LRNR and whose weak gradient comes from its atom form.
fn sup_errors(
    reference: &[Vec<PlanarEval>],
    grid: &UniformGrid,
    times: &[f64],
    lrnr: (&LrnrFactors, &dyn Fn(f64) -> CoeffVector),
    approx: &Target,
) -> Result<(f64, f64)> {
    let points = grid.points();
    let vol = grid.cell_volume();
    let (mut l2, mut h1) = (0.0f64, 0.0f64);
    for (k, &t) in times.iter().enumerate() {
        let s = (lrnr.1)(t);
        let (mut e0, mut e1) = (0.0, 0.0);
        for (p, r) in reference[k].iter().enumerate() {
            let x = points.row(p);
            let v = forward(lrnr.0, &s, x)?[0];
            let g = approx.eval(x, t).gradient;
            let dv = v - r.value;
            e0 += dv * dv;
            e1 += g.iter().zip(&r.gradient).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        l2 = l2.max((e0 * vol).sqrt());
        h1 = h1.max(((e0 + e1) * vol).sqrt());
    }
    Ok((l2, h1))
}

/// Sample width-`M` approximations of a fixed reference mixture, build their
/// exact LRNRs, and measure the worst-over-time quadrature error against the
/// reference solution on `[-1, 1]^d`. Wave problems split `M` hidden rows
/// evenly between value and velocity atoms (two rows per atom); advection uses
/// one row per atom with velocity `c·e₁`.
pub fn rate_study(problem: RateProblem, config: &RateStudyConfig) -> Result<RateStudy> {
    if config.widths.len() < 2 || config.seeds == 0 || config.time_samples == 0 {
        return Err(LrnrError::invalid("rate study needs two widths, a seed and a time sample"));
    }
    let dim = problem.dim();
    let mut target_rng = rng::stream(config.base_seed, 0);
    let reference_set = reference_target(
        dim,
        config.reference_atoms,
        config.reference_atoms,
        config.speed,
        &mut target_rng,
    )?;
    let velocity = {
        let mut v = vec![0.0; dim];
        v[0] = config.speed;
        v
    };
    let reference = match problem {
        RateProblem::Advection1d => Target::Advection {
            atoms: reference_set.value.clone(),
            velocity: velocity.clone(),
        },
        _ => Target::Wave(reference_set.clone()),
    };
    let cells = if dim == 1 { config.cells_1d } else { config.cells_2d };
    let grid = quadrature_grid(dim, cells)?;
    let points = grid.points();
    let times: Vec<f64> = (0..config.time_samples)
        .map(|k| config.final_time * k as f64 / (config.time_samples - 1).max(1) as f64)
        .collect();
    let ref_values: Vec<Vec<PlanarEval>> = times
        .iter()
        .map(|&t| (0..points.rows()).map(|p| reference.eval(points.row(p), t)).collect())
        .collect();

    let tasks: Vec<(usize, usize)> = config
        .widths
        .iter()
        .flat_map(|&w| (0..config.seeds).map(move |s| (w, s)))
        .collect();
    let run = |&(width, seed): &(usize, usize)| -> Result<RateRow> {
        let mut r = rng::stream(config.base_seed.wrapping_add(1 + seed as u64), width as u64);
        let (approx, lrnr) = match problem {
            RateProblem::Advection1d => {
                let atoms = if config.iid {
                    maurey_sample(&reference_set.value, width, &mut r)?
                } else {
                    stratified_sample(&reference_set.value, width, &mut r)?
                };
                let lrnr = build_advection_lrnr(&atoms, &velocity)?;
                (
                    Target::Advection {
                        atoms,
                        velocity: velocity.clone(),
                    },
                    lrnr,
                )
            }
            _ => {
                let atoms = width / 2;
                let (mv, mw) = (atoms / 2, atoms - atoms / 2);
                let set = if config.iid {
                    maurey_sample_set(&reference_set, mv, mw, &mut r)?
                } else {
                    stratified_sample_set(&reference_set, mv, mw, &mut r)?
                };
                let lrnr = build_wave_lrnr(&set)?;
                (Target::Wave(set), lrnr)
            }
        };
        let rule = |t: f64| lrnr.coefficients(t);
        let (l2, h1) = sup_errors(&ref_values, &grid, &times, (&lrnr.factors, &rule), &approx)?;
        Ok(RateRow {
            width,
            seed,
            l2_error: l2,
            h1_error: h1,
        })
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(tasks.len());
    let rows: Vec<RateRow> = if threads <= 1 {
        tasks.iter().map(run).collect::<Result<_>>()?
    } else {
        let chunk = tasks.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = tasks
                .chunks(chunk)
                .map(|c| scope.spawn(move || c.iter().map(run).collect::<Result<Vec<_>>>()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("rate-study worker panicked"))
                .collect::<Result<Vec<Vec<_>>>>()
        })?
        .into_iter()
        .flatten()
        .collect()
    };

    let pts = |f: fn(&RateRow) -> f64| rows.iter().map(|r| (r.width as f64, f(r))).collect::<Vec<_>>();
    let seed_slopes = (0..config.seeds)
        .map(|s| {
            let p: Vec<_> = rows.iter().filter(|r| r.seed == s).map(|r| (r.width as f64, r.h1_error)).collect();
            fit_slope(&p)
        })
        .collect();
    Ok(RateStudy {
        problem,
        slope_h1: fit_slope(&pts(|r| r.h1_error)),
        slope_l2: fit_slope(&pts(|r| r.l2_error)),
        rows,
        seed_slopes,
    })
}

/// `½∫(|∇u|² + |∂_t u|²)` over the cone slice `{x : dist(x, [-1,1]^d) ≤ c(T − t)}`,
/// by cell-centred quadrature with `cells` cells per dimension on the widest slice.
pub fn cone_energy(atoms: &PlanarAtomSet, final_time: f64, t: f64, cells: usize) -> Result<f64> {
    let d = atoms.dim;
    let reach = atoms.speed * final_time;
    let grid = UniformGrid::covering(&vec![-1.0 - reach; d], &vec![1.0 + reach; d], &vec![cells; d])?;
    let radius = atoms.speed * (final_time - t);
    let points = grid.points();
    let mut acc = 0.0;
    for p in 0..points.rows() {
        let x = points.row(p);
        let dist2: f64 = x.iter().map(|v| (v.abs() - 1.0).max(0.0).powi(2)).sum();
        if dist2 > radius * radius {
            continue;
        }
        let e = planar_wave_eval(atoms, x, t);
        acc += e.gradient.iter().map(|g| g * g).sum::<f64>() + e.time_derivative * e.time_derivative;
    }
    Ok(0.5 * acc * grid.cell_volume())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let p: Vec<(f64, f64)> = [2.0f64, 4.0, 8.0].iter().map(|&x| (x, 3.0 * x.powf(-0.75))).collect();
        assert!((fit_slope(&p) + 0.75).abs() < 1e-12);
    }

    #[test]
    fn problem_names_round_trip() {
        for p in [RateProblem::Wave1d, RateProblem::Wave2d, RateProblem::Advection1d] {
            assert_eq!(p.name().parse::<RateProblem>().unwrap(), p);
        }
        assert_eq!(RateProblem::Wave2d.predicted_slope(), -0.75);
        assert!("wave3d".parse::<RateProblem>().is_err());
    }

    #[test]
    fn energy_nonincreasing_on_cone() {
        let mut r = rng::seeded(6);
        let set = reference_target(1, 60, 60, 1.0, &mut r).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=5 {
            let e = cone_energy(&set, 0.5, 0.1 * k as f64, 20000).unwrap();
            assert!(e <= prev * (1.0 + 1e-3), "energy rose at step {k}: {e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn small_study_has_expected_shape() {
        let cfg = RateStudyConfig {
            widths: vec![8, 16],
            seeds: 2,
            reference_atoms: 40,
            cells_1d: 512,
            time_samples: 3,
            ..RateStudyConfig::default()
        };
        let study = rate_study(RateProblem::Advection1d, &cfg).unwrap();
        assert_eq!(study.rows.len(), 4);
        assert_eq!(study.seed_slopes.len(), 2);
        assert!(study.rows.iter().all(|r| r.h1_error >= r.l2_error && r.l2_error > 0.0));
    }
}
