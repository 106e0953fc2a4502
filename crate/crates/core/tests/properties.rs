use proptest::prelude::*;
use rand::Rng as _;

use lrnr_core::analytic::{build_wave_lrnr, planar_wave_solution, reference_target};
use lrnr_core::dataio::{UniformGrid, WaveDataset};
use lrnr_core::fastlrnr::eim_select;
use lrnr_core::hypermodes::{coeff_snapshots, compute_hypermodes, perturb_tangent, project, reduced_hyper_forward};
use lrnr_core::hypernet::{MetaModel, ModelShape, TimeNormalizer};
use lrnr_core::lrnr::{assemble_layer, forward, forward_trace, Activation, CoeffVector, LrnrFactors, RankSpec};
use lrnr_core::numerics::rng::{self, Rng};
use lrnr_core::numerics::{box_convolve, lstsq, norm2, solve_square, thin_svd, Boundary, GridShape, Matrix};
use lrnr_core::training::{
    adam_step, mollifier_radius, misfit, plateau_lr, reg_sparse, small_meta_network, train_loop, AdamState,
    PlateauConfig, PlateauState, EPSILON,
};

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_ranks(depth: usize, rng: &mut Rng) -> RankSpec {
    let weight = (0..depth).map(|_| rng.gen_range(1..4)).collect();
    let mut bias: Vec<usize> = (0..depth).map(|_| rng.gen_range(0..3)).collect();
    bias[depth - 1] = 0;
    RankSpec::new(weight, bias).unwrap()
}

fn random_coeffs(spec: &RankSpec, rng: &mut Rng) -> CoeffVector {
    let flat: Vec<f64> = (0..spec.total()).map(|_| rng.gen_range(-1.5..1.5)).collect();
    CoeffVector::unflatten(spec, &flat).unwrap()
}

fn random_network(seed: u64) -> (LrnrFactors, CoeffVector, Rng) {
    let mut rng = rng::seeded(seed);
    let depth = rng.gen_range(2..5);
    let spec = random_ranks(depth, &mut rng);
    let d = rng.gen_range(1..4);
    let m = rng.gen_range(1..3);
    let mut f = LrnrFactors::random(d, 7, m, &spec, Activation::Relu, &mut rng).unwrap();
    f.b_out = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let s = random_coeffs(&spec, &mut rng);
    (f, s, rng)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut a = a.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a.as_mut_slice()[k * n + p] = c * akp - s * akq;
                    a.as_mut_slice()[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a.as_mut_slice()[p * n + k] = c * apk - s * aqk;
                    a.as_mut_slice()[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

fn spectral_norm(a: &Matrix) -> f64 {
    thin_svd(a).unwrap().singular_values.first().copied().unwrap_or(0.0)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn svd_reconstructs_with_orthonormal_factors(rows in 1usize..14, cols in 1usize..14, seed in any::<u64>()) {
        let a = random_matrix(rows, cols, &mut rng::seeded(seed));
        let svd = thin_svd(&a).unwrap();
        let norm = a.frobenius_norm();
        let k = svd.singular_values.len();
        prop_assert!(a.sub(&svd.reconstruct(k)).unwrap().frobenius_norm() / norm < 1e-10);
        prop_assert!(svd.left.orthonormality_defect() < 1e-10);
        prop_assert!(svd.right.orthonormality_defect() < 1e-10);
        prop_assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn singular_values_match_gram_eigenvalues(rows in 1usize..10, cols in 1usize..10, seed in any::<u64>()) {
        let a = random_matrix(rows, cols, &mut rng::seeded(seed));
        let svd = thin_svd(&a).unwrap();
        let gram = if rows >= cols { a.t_matmul(&a).unwrap() } else { a.matmul(&a.transpose()).unwrap() };
        let ev = jacobi_eigenvalues(&gram);
        for (s, e) in svd.singular_values.iter().zip(&ev) {
            prop_assert!((s * s - e.max(0.0)).abs() < 1e-10 * (1.0 + ev[0]));
        }
    }

    #[test]
    fn truncated_svd_error_is_tail_energy(rows in 2usize..12, cols in 2usize..12, seed in any::<u64>()) {
        let a = random_matrix(rows, cols, &mut rng::seeded(seed));
        let svd = thin_svd(&a).unwrap();
        let norm = a.frobenius_norm();
        for k in 0..=svd.singular_values.len() {
            let direct = a.sub(&svd.reconstruct(k)).unwrap().frobenius_norm();
            let tail: f64 = svd.singular_values[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
            prop_assert!((direct - tail).abs() < 1e-10 * norm);
        }
    }

    #[test]
    fn periodic_box_filter_keeps_the_mean(n in 4usize..40, n1 in 4usize..20, radius in 0.0f64..0.4, two_d in any::<bool>(), seed in any::<u64>()) {
        let mut rng = rng::seeded(seed);
        let grid = if two_d {
            GridShape::new_2d(n, n1, 1.0 / n as f64, 1.0 / n1 as f64)
        } else {
            GridShape::new_1d(n, 1.0 / n as f64)
        };
        let values: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let out = box_convolve(&values, &grid, radius, Boundary::Periodic).unwrap();
        prop_assert!((mean(&out) - mean(&values)).abs() < 1e-12);
    }

    #[test]
    fn solve_has_small_backward_error(n in 1usize..10, log_cond in 0.0f64..8.0, seed in any::<u64>()) {
        let mut rng = rng::seeded(seed);
        let q1 = thin_svd(&random_matrix(n, n, &mut rng)).unwrap().left;
        let q2 = thin_svd(&random_matrix(n, n, &mut rng)).unwrap().right;
        let sigma: Vec<f64> = (0..n)
            .map(|i| if n == 1 { 1.0 } else { 10f64.powf(-log_cond * i as f64 / (n - 1) as f64) })
            .collect();
        let a = q1.scale_columns(&sigma).matmul(&q2.transpose()).unwrap();
        let b = random_matrix(n, 1, &mut rng);
        let x = solve_square(&a, &b).unwrap();
        let r = a.matmul(&x).unwrap().sub(&b).unwrap().frobenius_norm();
        let scale = spectral_norm(&a) * x.frobenius_norm() + b.frobenius_norm();
        prop_assert!(r / scale < 1e-10, "backward error {}", r / scale);
    }

    #[test]
    fn least_squares_matches_normal_equations(rows in 3usize..15, cols in 1usize..3, seed in any::<u64>()) {
        let mut rng = rng::seeded(seed);
        let a = random_matrix(rows, cols, &mut rng);
        let b: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = lstsq(&a, &b).unwrap();
        // The residual of a least-squares solution is orthogonal to range(A).
        let fit = a.matvec(&x).unwrap();
        let r: Vec<f64> = b.iter().zip(&fit).map(|(p, q)| p - q).collect();
        let g = a.t_matvec(&r).unwrap();
        prop_assert!(norm2(&g) < 1e-10 * (1.0 + norm2(&b)));
    }

    #[test]
    fn assembled_weight_rank_is_bounded(seed in any::<u64>()) {
        let (f, s, _) = random_network(seed);
        let spec = f.rank_spec();
        for l in 0..f.depth() {
            let (w, _) = assemble_layer(&f, &s, l).unwrap();
            let sv = thin_svd(&w).unwrap().singular_values;
            for extra in sv.iter().skip(spec.weight[l]) {
                prop_assert!(*extra <= 1e-10 * sv[0]);
            }
        }
    }

    #[test]
    fn pre_activations_lie_in_factor_span(seed in any::<u64>()) {
        let (f, s, mut rng) = random_network(seed);
        let last = f.depth() - 1;
        for _ in 0..4 {
            let x: Vec<f64> = (0..f.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tr = forward_trace(&f, &s, &x).unwrap();
            for l in 0..f.depth() {
                let mut cols: Vec<Vec<f64>> = (0..f.u[l].cols()).map(|j| f.u[l].column(j)).collect();
                cols.extend((0..f.b[l].cols()).map(|j| f.b[l].column(j)));
                let span = Matrix::from_columns(f.widths[l + 1], &cols).unwrap();
                let mut y = tr.pre[l].clone();
                if l == last {
                    for (v, b) in y.iter_mut().zip(&f.b_out) {
                        *v -= b;
                    }
                }
                if span.cols() >= span.rows() {
                    continue;
                }
                let c = lstsq(&span, &y).unwrap();
                let proj = span.matvec(&c).unwrap();
                let resid: Vec<f64> = y.iter().zip(&proj).map(|(a, b)| a - b).collect();
                prop_assert!(norm2(&resid) < 1e-10 * (1.0 + norm2(&y)));
            }
        }
    }

    #[test]
    fn relu_network_is_lipschitz(seed in any::<u64>()) {
        let (f, s, mut rng) = random_network(seed);
        let bound: f64 = (0..f.depth())
            .map(|l| spectral_norm(&assemble_layer(&f, &s, l).unwrap().0))
            .product();
        for _ in 0..6 {
            let x1: Vec<f64> = (0..f.input_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x2: Vec<f64> = (0..f.input_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y1 = forward(&f, &s, &x1).unwrap();
            let y2 = forward(&f, &s, &x2).unwrap();
            let dy: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a - b).collect();
            let dx: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a - b).collect();
            prop_assert!(norm2(&dy) <= bound * norm2(&dx) * (1.0 + 1e-12) + 1e-14);
        }
    }

    #[test]
    fn output_is_affine_in_one_layers_coefficients(seed in any::<u64>(), layer_pick in any::<usize>()) {
        let (f, s, mut rng) = random_network(seed);
        let spec = f.rank_spec();
        let layer = layer_pick % f.depth();
        let x: Vec<f64> = (0..f.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut delta = CoeffVector::zeros(&spec);
        for v in delta.weight[layer].iter_mut().chain(delta.bias[layer].iter_mut()) {
            *v = rng.gen_range(-1e-4..1e-4);
        }
        let shifted = |k: f64| {
            let mut out = s.clone();
            for (o, d) in out.weight[layer].iter_mut().zip(&delta.weight[layer]) {
                *o += k * d;
            }
            for (o, d) in out.bias[layer].iter_mut().zip(&delta.bias[layer]) {
                *o += k * d;
            }
            out
        };
        let traces: Vec<_> = [0.0, 1.0, 2.0].iter().map(|&k| forward_trace(&f, &shifted(k), &x).unwrap()).collect();
        let pattern = |tr: &lrnr_core::lrnr::ForwardTrace| -> Vec<bool> {
            tr.pre[..tr.pre.len() - 1].iter().flatten().map(|v| *v > 0.0).collect()
        };
        prop_assume!(pattern(&traces[0]) == pattern(&traces[1]) && pattern(&traces[1]) == pattern(&traces[2]));
        for c in 0..f.output_dim() {
            let (a, b, e) = (traces[0].output[c], traces[1].output[c], traces[2].output[c]);
            prop_assert!((e - 2.0 * b + a).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn coefficient_flattening_round_trips(seed in any::<u64>(), depth in 2usize..6) {
        let mut rng = rng::seeded(seed);
        let spec = random_ranks(depth, &mut rng);
        let s = random_coeffs(&spec, &mut rng);
        let back = CoeffVector::unflatten(&spec, &s.flatten()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn misfit_is_scale_invariant(n in 1usize..30, m in 1usize..3, q in 1u32..3, lambda in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3], seed in any::<u64>()) {
        let mut rng = rng::seeded(seed);
        let y: Vec<f64> = (0..n * m).map(|_| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let yhat: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let base = misfit(&yhat, &y, &w, q).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| lambda * v).collect();
        let yhats: Vec<f64> = yhat.iter().map(|v| lambda * v).collect();
        let scaled = misfit(&yhats, &ys, &w, q).unwrap();
        prop_assert!((scaled - base).abs() < 1e-14 * base.max(1.0));
    }

    #[test]
    fn sparse_penalty_vanishes_exactly_on_decaying_blocks(seed in any::<u64>(), decaying in any::<bool>(), gamma in 1.0f64..1.5) {
        let mut rng = rng::seeded(seed);
        let spec = random_ranks(3, &mut rng);
        let mut s = random_coeffs(&spec, &mut rng);
        if decaying {
            for block in s.weight.iter_mut().chain(s.bias.iter_mut()) {
                for j in 1..block.len() {
                    block[j] = block[j - 1] / gamma * rng.gen_range(0.0..1.0);
                }
            }
        }
        let ordered = s
            .weight
            .iter()
            .chain(&s.bias)
            .all(|b| b.windows(2).all(|w| w[0] >= gamma * w[1]));
        prop_assert_eq!(reg_sparse(&s, gamma) == 0.0, ordered);
    }

    #[test]
    fn mollifier_radius_decays_to_zero_at_half(w0 in 0.0f64..0.2, n in 1usize..500) {
        let mut prev = f64::INFINITY;
        for epoch in 0..n {
            let r = mollifier_radius(epoch, w0, n);
            prop_assert!(r <= prev && r >= 0.0);
            if 2 * epoch >= n {
                prop_assert_eq!(r, 0.0);
            }
            prev = r;
        }
    }

    #[test]
    fn plateau_schedule_matches_reference(losses in prop::collection::vec(0.0f64..1.0, 1..200), patience in 1usize..12) {
        let config = PlateauConfig { patience, ..PlateauConfig::default() };
        let mut state = PlateauState::default();
        let mut lr = 1e-3;
        let (mut best, mut bad, mut expected) = (f64::INFINITY, 0usize, 1e-3);
        for &loss in &losses {
            lr = plateau_lr(lr, &mut state, loss, &config);
            if loss < best * (1.0 - config.threshold) {
                best = loss;
                bad = 0;
            } else {
                bad += 1;
                if bad == patience {
                    bad = 0;
                    expected *= config.factor;
                }
            }
            prop_assert_eq!(lr, expected);
        }
    }

    #[test]
    fn adam_with_constant_gradient_takes_equal_steps(g in prop_oneof![-10.0f64..-1e-3, 1e-3f64..10.0], steps in 1usize..50, lr in 1e-5f64..1e-1) {
        let mut p = [0.0];
        let mut state = AdamState::new(1);
        for _ in 0..steps {
            adam_step(&mut p, &[g], &mut state, lr);
        }
        // Bias correction makes m̂ = g and v̂ = g² at every step.
        let expected = -(steps as f64) * lr * g / (g.abs() + EPSILON);
        prop_assert!((p[0] - expected).abs() < 1e-9 * expected.abs());
    }

    #[test]
    fn deim_interpolates_its_own_span(m in 2usize..20, k_pick in any::<usize>(), seed in any::<u64>()) {
        let mut rng = rng::seeded(seed);
        let k = 1 + k_pick % m.min(6);
        let xi = thin_svd(&random_matrix(m, k, &mut rng)).unwrap().left;
        let p = eim_select(&xi).unwrap();
        prop_assert_eq!(&p, &eim_select(&xi).unwrap());
        let mut sorted = p.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), k);
        let c = random_matrix(k, 1, &mut rng);
        let v = xi.matmul(&c).unwrap();
        let coef = solve_square(&xi.select_rows(&p), &v.select_rows(&p)).unwrap();
        let back = xi.matmul(&coef).unwrap();
        prop_assert!(back.sub(&v).unwrap().frobenius_norm() < 1e-10 * (1.0 + v.frobenius_norm()));
    }

    #[test]
    fn wave_lrnr_equals_planar_solution(dim in 1usize..3, value in 0usize..6, velocity in 0usize..6, speed in 0.2f64..2.0, seed in any::<u64>()) {
        prop_assume!(value + velocity > 0);
        let mut rng = rng::seeded(seed);
        let atoms = reference_target(dim, value, velocity, speed, &mut rng).unwrap();
        let lrnr = build_wave_lrnr(&atoms).unwrap();
        for _ in 0..10 {
            let t = rng.gen_range(0.0..1.0);
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let s = lrnr.coefficients(t);
            prop_assert_eq!(&s.bias[0], &vec![1.0, t]);
            let y = forward(&lrnr.factors, &s, &x).unwrap()[0];
            prop_assert!((y - planar_wave_solution(&atoms, &x, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_dataset_round_trips_and_weights_cover_the_box(n0 in 1usize..12, n1 in 1usize..12, two_d in any::<bool>(), seed in any::<u64>()) {
        let mut rng = rng::seeded(seed);
        let (lo, hi, counts) = if two_d {
            (vec![-1.0, 0.0], vec![1.0, 0.5], vec![n0, n1])
        } else {
            (vec![0.0], vec![3.0], vec![n0])
        };
        let grid = UniformGrid::covering(&lo, &hi, &counts).unwrap();
        let volume: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
        let len = grid.len();
        let times = [0.0, 0.25, 0.5];
        let values = times.iter().map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ds = WaveDataset::uniform(grid, 1, &times, values).unwrap();
        for snap in &ds.snapshots {
            prop_assert!((snap.weights.iter().sum::<f64>() - volume).abs() < 1e-12);
        }
        let back = WaveDataset::from_container(&ds.to_container().unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }
}

fn small_model(seed: u64) -> MetaModel {
    let shape = ModelShape {
        input_dim: 1,
        output_dim: 1,
        width: 6,
        ranks: RankSpec::uniform(3, 3, 1).unwrap(),
        activation: Activation::Relu,
        hyper_width: 5,
        hyper_depth: 3,
        hyper_activation: Activation::Tanh,
    };
    MetaModel::init(&shape, TimeNormalizer::new(0.0, 1.0).unwrap(), &mut rng::seeded(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn reduced_projection_is_idempotent(seed in any::<u64>(), rank_cap in 1usize..6, t in 0.0f64..1.0) {
        let model = small_model(seed);
        let times: Vec<f64> = (0..21).map(|k| k as f64 / 20.0).collect();
        let s = coeff_snapshots(&model, &times).unwrap();
        let full = compute_hypermodes(&s, &times, 1e-8).unwrap();
        let basis = full.with_rank(rank_cap.min(full.rank)).unwrap();
        let once = reduced_hyper_forward(&model, &basis, t).unwrap().flatten();
        let twice = project(&basis, &once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let base = perturb_tangent(&model, &basis, t, 0, 0.0).unwrap();
        let reduced = reduced_hyper_forward(&model, &basis, t).unwrap();
        for x in [0.1, 0.5, 0.9] {
            prop_assert_eq!(base.eval(&[x]).unwrap(), forward(&model.factors, &reduced, &[x]).unwrap());
        }
    }

    #[test]
    fn training_is_deterministic_and_switches_at_most_once(seed in 0u64..1000) {
        let (model, ds, mut config) = small_meta_network(&mut rng::seeded(seed)).unwrap();
        config.epochs = 12;
        config.batch = 2;
        config.tau = 0.5;
        config.seed = seed;
        let mut a = model.clone();
        let mut b = model;
        let (_, ha, _) = train_loop(&mut a, &ds, &config).unwrap();
        let (_, hb, _) = train_loop(&mut b, &ds, &config).unwrap();
        prop_assert_eq!(&ha, &hb);
        prop_assert_eq!(a, b);
        let alphas: Vec<f64> = ha.iter().map(|r| r.alpha).collect();
        prop_assert!(alphas.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(alphas.windows(2).filter(|w| w[0] != w[1]).count() <= 1);
    }
}
