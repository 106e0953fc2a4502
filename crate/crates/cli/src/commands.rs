use std::path::{Path, PathBuf};
use std::str::FromStr;

use lrnr_core::analytic::{
    advection1d_dataset, burgers_riemann_dataset, equispaced_times, planar_wave_dataset, rate_study as run_rate_study,
    reference_target, AdvectionParams, RateProblem, RateStudyConfig, RiemannSpec,
};
use lrnr_core::dataio::{
    load_checkpoint, load_dataset, save_checkpoint, save_dataset, write_csv, write_table,
    Checkpoint, Snapshot, UniformGrid, WaveDataset,
};
use lrnr_core::fastlrnr::{compress as build_fast, fast_eval_series, CompressOptions, FastLrnrModel};
use lrnr_core::hypermodes::{
    coeff_snapshots, compute_hypermodes, extrapolate_hypermode, fit_temporal_modes, normalized_eta, perturb_tangent,
    truncate_coeffs, HypermodeBasis,
};
use lrnr_core::hypernet::{MetaModel, TimeNormalizer};
use lrnr_core::lrnr::forward;
use lrnr_core::numerics::{rng, Matrix};
use lrnr_core::training::{
    gradcheck_default, misfit, read_history, relative_l2, snapshot_output, train_epochs, write_history, TrainState,
};
use lrnr_core::LrnrError;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{
    CompressArgs, EvalArgs, FastEvalArgs, GenArgs, GradcheckArgs, HypermodeArgs, ModeArgs, Problem, RateArgs,
    TrainArgs,
};

type CliResult = Result<(), CliError>;

/// Stream id reserved for model initialization; epochs use ids from 0.
const INIT_STREAM: u64 = u64::MAX;

/// `lo:hi:cells` per axis, comma separated.
pub fn parse_grid(spec: &str) -> Result<UniformGrid, CliError> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut counts = Vec::new();
    for axis in spec.split(',') {
        let parts: Vec<&str> = axis.trim().split(':').collect();
        let bad = || CliError::Config(format!("grid axis `{axis}` is not lo:hi:cells"));
        if parts.len() != 3 {
            return Err(bad());
        }
        lo.push(parts[0].parse::<f64>().map_err(|_| bad())?);
        hi.push(parts[1].parse::<f64>().map_err(|_| bad())?);
        counts.push(parts[2].parse::<usize>().map_err(|_| bad())?);
    }
    Ok(UniformGrid::covering(&lo, &hi, &counts)?)
}

pub fn parse_point(spec: &str) -> Result<Vec<f64>, CliError> {
    spec.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("point `{spec}` is not a comma separated list of numbers")))
        })
        .collect()
}

fn training_times(normalizer: &TimeNormalizer, n: usize) -> Result<Vec<f64>, CliError> {
    Ok(equispaced_times(n, normalizer.t0, normalizer.t1)?)
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn gen(a: &GenArgs) -> CliResult {
    let times = equispaced_times(a.snapshots, a.t_start, a.t_end)?;
    let ds = match a.problem {
        Problem::Advection1d => advection1d_dataset(&AdvectionParams {
            points: a.points,
            snapshots: a.snapshots,
            t_start: a.t_start,
            t_end: a.t_end,
            speed: a.speed,
            center: a.center,
            width: a.width,
        })?,
        Problem::Wave1d | Problem::Wave2dPlanar => {
            let dim = if a.problem == Problem::Wave1d { 1 } else { 2 };
            let mut r = rng::seeded(a.seed);
            let atoms = reference_target(dim, a.value_atoms, a.velocity_atoms, a.speed, &mut r)?;
            planar_wave_dataset(&atoms, a.points, &times)?
        }
        Problem::Burgers1dRiemann => {
            let spec = RiemannSpec {
                left: a.left,
                right: a.right,
                jump_at: a.jump_at,
            };
            burgers_riemann_dataset(&spec, (a.lo, a.hi), a.points, &times)?
        }
    };
    save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} snapshots of {} points to {}",
        ds.len(),
        ds.snapshots[0].len(),
        a.out.display()
    );
    Ok(())
}

fn required(flag: Option<&PathBuf>, file: Option<&PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    flag.or(file)
        .cloned()
        .ok_or_else(|| CliError::Config(format!("no {what} path given on the command line or in the config")))
}

pub fn train(a: &TrainArgs) -> CliResult {
    let cfg = RunConfig::load(&a.config)?;
    let data_path = required(a.data.as_ref(), cfg.data.as_ref(), "data")?;
    let out = required(a.out.as_ref(), cfg.out.as_ref(), "output")?;
    let history_path = a
        .history
        .clone()
        .or_else(|| cfg.history.clone())
        .unwrap_or_else(|| out.with_extension("history.csv"));
    let ds = load_dataset(&data_path)?;

    let (mut model, mut state, mut history) = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let state = ck
                .state
                .ok_or_else(|| CliError::Config(format!("{} has no optimizer state to resume", path.display())))?;
            let history = match &ck.history {
                Some(h) if Path::new(h).exists() => read_history(Path::new(h))?,
                _ => Vec::new(),
            };
            (ck.model, state, history)
        }
        None => {
            let shape = cfg.model.shape(ds.spatial_dim, ds.output_dim)?;
            let normalizer = TimeNormalizer::from_times(&ds.times())?;
            let model = MetaModel::init(&shape, normalizer, &mut rng::stream(cfg.train.seed, INIT_STREAM))?;
            let state = TrainState::new(model.parameter_count(), &cfg.train);
            (model, state, Vec::new())
        }
    };
    let until = a.until.unwrap_or(cfg.train.epochs);
    let result = train_epochs(&mut model, &ds, &cfg.train, &mut state, until, &mut history);

    write_history(&history_path, &history)?;
    let ck = Checkpoint {
        state: Some(state.clone()),
        config: Some(cfg.train.clone()),
        history: Some(history_path.to_string_lossy().into_owned()),
        ..Checkpoint::new(model.clone())
    };
    save_checkpoint(&ck, &out)?;
    let outcome = result?;
    let err = relative_l2(&model, &ds)?;
    println!(
        "trained {} epochs (total {}), relative l2 {err:.6e}{}; checkpoint {}",
        outcome.epochs_run,
        state.epoch,
        if outcome.stopped_early { ", target reached" } else { "" },
        out.display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = &ck.model;
    let m = model.factors.output_dim();
    let predicted = if let Some(path) = &a.data {
        let ds = load_dataset(path)?;
        let mut snapshots = Vec::with_capacity(ds.len());
        let mut total = 0.0;
        for snap in &ds.snapshots {
            let s = model.coefficients(snap.time)?;
            let yhat = snapshot_output(&model.factors, &s, &snap.points)?;
            total += misfit(&yhat, snap.values.as_slice(), &snap.weights, 2)?;
            snapshots.push(Snapshot {
                time: snap.time,
                points: snap.points.clone(),
                values: Matrix::from_vec(snap.len(), m, yhat)?,
                weights: snap.weights.clone(),
            });
        }
        println!("mean misfit {:.17e}", total / ds.len() as f64);
        println!("relative l2 {:.17e}", relative_l2(model, &ds)?);
        WaveDataset { snapshots, ..ds }
    } else {
        let spec = a
            .grid
            .as_deref()
            .ok_or_else(|| CliError::Config("eval needs --grid or --data".into()))?;
        if a.t.is_empty() {
            return Err(CliError::Config("eval on a grid needs at least one --t".into()));
        }
        let grid = parse_grid(spec)?;
        if grid.dim() != model.factors.input_dim() {
            return Err(CliError::Config(format!(
                "grid is {}-dimensional, the model takes {} inputs",
                grid.dim(),
                model.factors.input_dim()
            )));
        }
        let points = grid.points();
        let mut values = Vec::with_capacity(a.t.len());
        for &t in &a.t {
            let s = model.coefficients(t)?;
            let mut v = Vec::with_capacity(points.rows() * m);
            for p in 0..points.rows() {
                v.extend(forward(&model.factors, &s, points.row(p))?);
            }
            values.push(v);
        }
        WaveDataset::uniform(grid, m, &a.t, values)?
    };
    save_dataset(&predicted, &a.out)?;
    if let Some(csv) = &a.csv {
        let d = predicted.spatial_dim;
        let mut header = vec!["t".to_string()];
        header.extend(numbered("x", d));
        header.extend(numbered("u", m));
        let mut rows = Vec::new();
        for snap in &predicted.snapshots {
            for p in 0..snap.len() {
                let mut row = vec![snap.time];
                row.extend_from_slice(snap.points.row(p));
                row.extend_from_slice(snap.values.row(p));
                rows.push(row);
            }
        }
        write_table(csv, &header, &rows)?;
    }
    println!("wrote {} snapshot(s) to {}", predicted.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct SingularValueRow {
    index: usize,
    sigma: f64,
    sigma_relative: f64,
    retained: bool,
}

#[derive(Serialize)]
struct TruncationRow {
    layer: usize,
    weight_rank: usize,
    weight_kept: usize,
    bias_rank: usize,
    bias_kept: usize,
}

#[derive(Serialize)]
struct FitRow {
    mode: usize,
    degree: usize,
    max_residual: f64,
}

fn snapshot_basis(model: &MetaModel, n: usize, energy_tol: f64) -> Result<(Matrix, HypermodeBasis), CliError> {
    let times = training_times(&model.normalizer, n)?;
    let s = coeff_snapshots(model, &times)?;
    let basis = compute_hypermodes(&s, &times, energy_tol)?;
    Ok((s, basis))
}

pub fn hypermodes(a: &HypermodeArgs) -> CliResult {
    let mut ck = load_checkpoint(&a.checkpoint)?;
    let (s, basis) = snapshot_basis(&ck.model, a.times, a.energy_tol)?;
    let ranks = ck.model.ranks();
    let report = truncate_coeffs(&s, &ranks, a.threshold)?;
    let fits = fit_temporal_modes(&basis, a.degree)?;
    std::fs::create_dir_all(&a.out_dir).map_err(LrnrError::from)?;

    let sigma1 = basis.singular_values.first().copied().unwrap_or(0.0);
    let sv: Vec<SingularValueRow> = basis
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, &sigma)| SingularValueRow {
            index: i + 1,
            sigma,
            sigma_relative: if sigma1 > 0.0 { sigma / sigma1 } else { 0.0 },
            retained: i < basis.rank,
        })
        .collect();
    write_csv(&a.out_dir.join("singular_values.csv"), &sv)?;
    let trunc: Vec<TruncationRow> = (0..ranks.depth())
        .map(|l| TruncationRow {
            layer: l + 1,
            weight_rank: ranks.weight[l],
            weight_kept: report.weight[l],
            bias_rank: ranks.bias[l],
            bias_kept: report.bias[l],
        })
        .collect();
    write_csv(&a.out_dir.join("truncation.csv"), &trunc)?;
    let fit_rows: Vec<FitRow> = fits
        .iter()
        .enumerate()
        .map(|(i, f)| FitRow {
            mode: i + 1,
            degree: f.degree(),
            max_residual: f.max_residual,
        })
        .collect();
    write_csv(&a.out_dir.join("temporal_fits.csv"), &fit_rows)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=basis.rank).map(|i| format!("psi{i}")));
    let rows: Vec<Vec<f64>> = basis
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| std::iter::once(t).chain((0..basis.rank).map(|i| basis.psi[(k, i)])).collect())
        .collect();
    write_table(&a.out_dir.join("temporal_modes.csv"), &header, &rows)?;

    let kept: usize = report.weight.iter().chain(&report.bias).sum();
    println!(
        "n = {}, kept {kept} coefficients at threshold {:e}, {} hypermodes above threshold, r̄ = {} at energy {:e}",
        ranks.total(),
        a.threshold,
        report.hypermodes,
        basis.rank,
        a.energy_tol
    );
    for f in &fit_rows {
        println!("temporal mode {}: degree {} residual {:.3e}", f.mode, f.degree, f.max_residual);
    }
    if a.save {
        ck.hypermodes = Some(basis);
        save_checkpoint(&ck, &a.checkpoint)?;
    }
    Ok(())
}

pub fn mode_field(a: &ModeArgs, extrapolate: bool) -> CliResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = &ck.model;
    let basis = match ck.hypermodes.clone() {
        Some(b) => b,
        None => snapshot_basis(model, a.times, a.energy_tol)?.1,
    };
    if a.mode == 0 {
        return Err(CliError::Config("hypermode indices start at 1".into()));
    }
    let mode = a.mode - 1;
    let eta = if a.normalize {
        normalized_eta(model, &basis, a.t, a.eta)?
    } else {
        a.eta
    };
    let reduced = perturb_tangent(model, &basis, a.t, mode, 0.0)?;
    let field = if extrapolate {
        extrapolate_hypermode(model, &basis, a.t, mode, eta)?
    } else {
        perturb_tangent(model, &basis, a.t, mode, eta)?
    };
    let grid = parse_grid(&a.grid)?;
    let points = grid.points();
    let m = model.factors.output_dim();
    let mut header = numbered("x", grid.dim());
    header.extend(numbered("reduced", m));
    header.extend(numbered("field", m));
    header.extend(numbered("difference", m));
    let mut rows = Vec::with_capacity(points.rows());
    for p in 0..points.rows() {
        let x = points.row(p);
        let base = reduced.eval(x)?;
        let moved = field.eval(x)?;
        let mut row = x.to_vec();
        row.extend(&base);
        row.extend(&moved);
        row.extend(moved.iter().zip(&base).map(|(f, b)| f - b));
        rows.push(row);
    }
    write_table(&a.out, &header, &rows)?;
    println!(
        "{} along hypermode {} of {} at t = {} with eta = {eta:e}; wrote {}",
        if extrapolate { "extrapolation" } else { "perturbation" },
        a.mode,
        basis.rank,
        a.t,
        a.out.display()
    );
    Ok(())
}

fn midpoints(times: &[f64]) -> Vec<f64> {
    times.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

pub fn compress(a: &CompressArgs) -> CliResult {
    let mut ck = load_checkpoint(&a.checkpoint)?;
    let model = &ck.model;
    let anchors = a.anchors.iter().map(|s| parse_point(s)).collect::<Result<Vec<_>, _>>()?;
    if anchors.iter().any(|x| x.len() != model.factors.input_dim()) {
        return Err(CliError::Config("anchor dimension does not match the model".into()));
    }
    let projector = if a.hypermodes {
        Some(
            ck.hypermodes
                .as_ref()
                .ok_or_else(|| CliError::Config("checkpoint has no stored hypermodes (run `hypermodes --save`)".into()))?,
        )
    } else {
        None
    };
    let times = training_times(&model.normalizer, a.times)?;
    let options = CompressOptions {
        tol: a.tol,
        max_rank: a.max_rank,
    };
    let fast = build_fast(model, &anchors, &times, projector, &options)?;
    let eval_times = midpoints(&times);
    let report = fast_eval_series(&fast, model, &anchors[0], &eval_times)?;
    for w in &fast.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &a.sweep {
        let top = fast.hidden_ranks().into_iter().max().unwrap_or(1);
        let hidden = fast.hidden_ranks().len();
        let mut header = vec!["rank_cap".to_string()];
        header.extend((1..=hidden).map(|l| format!("rank_layer{l}")));
        header.extend(["rel_error", "fast_ops", "lowrank_ops", "dense_ops"].map(String::from));
        let mut rows = Vec::new();
        for cap in 1..=top {
            let capped = CompressOptions {
                max_rank: Some(cap),
                ..options
            };
            let f = build_fast(model, &anchors, &times, projector, &capped)?;
            let r = fast_eval_series(&f, model, &anchors[0], &eval_times)?;
            let mut row = vec![cap as f64];
            row.extend(f.hidden_ranks().iter().map(|&v| v as f64));
            row.extend([r.rel_error, r.fast_ops as f64, r.lowrank_ops as f64, r.full_ops as f64]);
            rows.push(row);
        }
        write_table(path, &header, &rows)?;
    }
    println!(
        "hidden ranks {:?}, relative error {:.3e} at the first anchor, {} multiply-adds per evaluation ({} low-rank, {} dense)",
        fast.hidden_ranks(),
        report.rel_error,
        report.fast_ops,
        report.lowrank_ops,
        report.full_ops
    );
    ck.fast = Some(fast);
    save_checkpoint(&ck, &a.out)?;
    Ok(())
}

fn fast_model(ck: &Checkpoint, path: &Path) -> Result<FastLrnrModel, CliError> {
    ck.fast.clone().ok_or_else(|| {
        CliError::Config(format!("{} has no compressed model (run `compress` first)", path.display()))
    })
}

pub fn fast_eval(a: &FastEvalArgs) -> CliResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    let fast = fast_model(&ck, &a.checkpoint)?;
    let x = match &a.point {
        Some(s) => parse_point(s)?,
        None => fast
            .anchors
            .first()
            .cloned()
            .ok_or_else(|| CliError::Config("compressed model has no anchors".into()))?,
    };
    let times = training_times(&ck.model.normalizer, a.times)?;
    let report = fast_eval_series(&fast, &ck.model, &x, &times)?;
    let m = ck.model.factors.output_dim();
    let mut header = vec!["t".to_string()];
    header.extend(numbered("fast", m));
    header.extend(numbered("full", m));
    header.extend(["fast_ops", "lowrank_ops", "dense_ops"].map(String::from));
    let rows: Vec<Vec<f64>> = report
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut row = vec![t];
            row.extend(&report.fast[k]);
            row.extend(&report.full[k]);
            row.extend([report.fast_ops as f64, report.lowrank_ops as f64, report.full_ops as f64]);
            row
        })
        .collect();
    write_table(&a.out, &header, &rows)?;
    println!(
        "relative error {:.3e} over {} times; {} multiply-adds per evaluation ({} low-rank, {} dense)",
        report.rel_error,
        times.len(),
        report.fast_ops,
        report.lowrank_ops,
        report.full_ops
    );
    Ok(())
}

#[derive(Serialize)]
struct RateCsvRow {
    problem: &'static str,
    width: usize,
    seed: usize,
    l2_error: f64,
    h1_error: f64,
    slope_h1: f64,
    slope_l2: f64,
}

pub fn rate_study(a: &RateArgs) -> CliResult {
    let problem = RateProblem::from_str(&a.problem)?;
    let cfg = RateStudyConfig {
        widths: a.widths.clone(),
        seeds: a.seeds,
        base_seed: a.seed,
        iid: a.iid,
        ..RateStudyConfig::default()
    };
    let study = run_rate_study(problem, &cfg)?;
    let rows: Vec<RateCsvRow> = study
        .rows
        .iter()
        .map(|r| RateCsvRow {
            problem: problem.name(),
            width: r.width,
            seed: r.seed,
            l2_error: r.l2_error,
            h1_error: r.h1_error,
            slope_h1: study.slope_h1,
            slope_l2: study.slope_l2,
        })
        .collect();
    write_csv(&a.out, &rows)?;
    println!(
        "{}: H1 slope {:.3}, L2 slope {:.3} (predicted {:.3})",
        problem.name(),
        study.slope_h1,
        study.slope_l2,
        problem.predicted_slope()
    );
    Ok(())
}

#[derive(Serialize)]
struct GradcheckRow {
    seed: u64,
    max_rel_error: f64,
    worst_block: String,
    parameters: usize,
    attempts: usize,
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult {
    let mut rows = Vec::new();
    for seed in 0..a.seeds {
        let r = gradcheck_default(seed)?;
        println!("seed {seed}: max relative error {:.3e} in {}", r.max_rel_error, r.worst_block);
        rows.push(GradcheckRow {
            seed,
            max_rel_error: r.max_rel_error,
            worst_block: r.worst_block,
            parameters: r.parameters,
            attempts: r.attempts,
        });
    }
    if let Some(path) = &a.out {
        write_csv(path, &rows)?;
    }
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    if worst >= a.tol {
        return Err(CliError::Numeric(format!(
            "gradient audit failed: max relative error {worst:.3e} ≥ {:e}",
            a.tol
        )));
    }
    println!("gradient audit passed: max relative error {worst:.3e} < {:e}", a.tol);
    Ok(())
}
