use beamid::beam::{build_operators, ground_truth_fields, BeamSpec, BeamSystem, LoadModel, ParameterField, SpatialGrid};
use beamid::solver::{
    beam_adjoint_gradients, estimate_stable_step, integrate, solve, SampleCotangent, SolverConfig, StepControl,
    TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn system(n: usize, fields: ParameterField, load: LoadModel) -> BeamSystem {
    let spec = BeamSpec::default();
    let grid = SpatialGrid::for_beam(&spec, n).unwrap();
    BeamSystem::new(spec, build_operators(&grid).unwrap(), fields, load).unwrap()
}

fn truth_system(n: usize) -> BeamSystem {
    let spec = BeamSpec::default();
    let grid = SpatialGrid::for_beam(&spec, n).unwrap();
    system(n, ground_truth_fields(&spec, &grid).unwrap(), LoadModel::default())
}

fn midspan(sys: &BeamSystem, cfg: &SolverConfig) -> Vec<f64> {
    let grid = cfg.time_grid(sys).unwrap();
    let traj = solve(sys, &vec![0.0; 2 * sys.n()], &grid).unwrap();
    traj.displacement().node_series(sys.n() / 2)
}

fn static_deflection_mid(spec: &BeamSpec, q: f64) -> f64 {
    5.0 * q * spec.length().powi(4) / (384.0 * spec.flexural_rigidity())
}

#[test]
fn default_peak_is_about_twice_static_deflection() {
    let sys = truth_system(16);
    let series = midspan(&sys, &SolverConfig::default());
    let peak = series.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // P varies between 1 and 2 with mean 1.5
    let reference = static_deflection_mid(sys.spec(), 1000.0) / 1.5;
    let ratio = peak / reference;
    assert!(ratio > 1.3 && ratio < 2.7, "peak/static = {ratio}");
}

#[test]
fn fourth_order_convergence() {
    let sys = truth_system(16);
    let h_auto = estimate_stable_step(&sys, 0.5).unwrap();
    let field_at = |h: f64| {
        let cfg = SolverConfig { step: StepControl::Fixed(h), ..SolverConfig::default() };
        let grid = cfg.time_grid(&sys).unwrap();
        solve(&sys, &vec![0.0; 32], &grid).unwrap().displacement()
    };
    let h = h_auto / 4.0;
    let reference = field_at(h / 8.0);
    let err = |f: &beamid::field::DisplacementField| {
        f.values().iter().zip(reference.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    };
    let ratio = err(&field_at(h)) / err(&field_at(h / 2.0));
    assert!((ratio - 16.0).abs() <= 0.2 * 16.0, "error ratio {ratio}");
}

#[test]
fn undamped_free_vibration_conserves_energy() {
    let n = 16;
    let sys = system(n, ParameterField::uniform(n, 1.0, 0.0).unwrap(), LoadModel::default());
    let cfg = SolverConfig { t_end: 0.02 + 5.0 * 0.014, n_save: 900, ..SolverConfig::default() };
    let grid = cfg.time_grid(&sys).unwrap();
    let traj = solve(&sys, &vec![0.0; 2 * n], &grid).unwrap();
    let ops = sys.ops();
    let k = sys.spec().flexural_rigidity() / sys.spec().mass_per_length() / ops.dx.powi(4);
    let energy = |s: &[f64]| {
        let mut a2u = vec![0.0; n];
        ops.a2.matvec(&s[..n], &mut a2u);
        0.5 * s[n..].iter().map(|v| v * v).sum::<f64>() + 0.5 * k * a2u.iter().map(|v| v * v).sum::<f64>()
    };
    let free: Vec<f64> = traj
        .times()
        .iter()
        .zip(traj.states())
        .filter(|(t, _)| **t > 0.0201)
        .map(|(_, s)| energy(s))
        .collect();
    let drift = (free.last().unwrap() - free[0]).abs() / free[0];
    // about five fundamental periods after the load is released
    assert!(drift / 5.0 < 1e-3, "energy drift {drift}");
}

#[test]
fn damped_peaks_decrease() {
    let sys = truth_system(16);
    let cfg = SolverConfig { t_end: 0.12, n_save: 2400, ..SolverConfig::default() };
    let series = midspan(&sys, &cfg);
    let times = cfg.save_spacing();
    let start = (0.0205 / times) as usize;
    let tail = &series[start..];
    let mut peaks = Vec::new();
    let mut best = 0.0f64;
    for w in tail.windows(2) {
        best = best.max(w[0].abs());
        if w[0].signum() != w[1].signum() && w[1] != 0.0 {
            peaks.push(best);
            best = 0.0;
        }
    }
    // drop the partial lobe at the start
    let peaks = &peaks[1..];
    assert!(peaks.len() >= 10);
    assert!(peaks.windows(2).all(|w| w[1] < w[0]), "{peaks:?}");
}

#[test]
fn heavy_damping_settles_on_static_deflection() {
    let n = 16;
    let load = LoadModel { amplitude: 1000.0, cutoff: 1.0 };
    let sys = system(n, ParameterField::uniform(n, 1.0, 600.0).unwrap(), load);
    let cfg = SolverConfig { t_end: 0.1, n_save: 100, ..SolverConfig::default() };
    let series = midspan(&sys, &cfg);
    let mid_node_x = SpatialGrid::for_beam(sys.spec(), n).unwrap().node_x(n / 2);
    let l = sys.spec().length();
    let x = mid_node_x;
    let exact = 1000.0 / (24.0 * sys.spec().flexural_rigidity()) * (x.powi(4) - 2.0 * l * x.powi(3) + l.powi(3) * x);
    let got = *series.last().unwrap();
    assert!((got - exact).abs() / exact < 0.01, "settled {got}, static {exact}");
}

#[test]
fn fundamental_period_matches_modal_formula() {
    let n = 16;
    let sys = system(n, ParameterField::uniform(n, 1.0, 0.0).unwrap(), LoadModel::default());
    let k = nalgebra::DMatrix::from_fn(n, n, |i, j| sys.stiffness().get(i, j));
    let lambda_min = k.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    let period = 2.0 * std::f64::consts::PI / lambda_min.sqrt();
    let s = sys.spec();
    let l = s.length();
    let analytic = 2.0 * std::f64::consts::PI
        / ((std::f64::consts::PI / l).powi(2) * (s.flexural_rigidity() / s.mass_per_length()).sqrt());
    assert!((period - analytic).abs() / analytic < 0.05, "{period} vs {analytic}");
    assert!((analytic - 0.0139).abs() < 2e-4);
}

#[test]
fn adjoint_matches_finite_differences_on_small_problem() {
    let n = 8;
    let spec = BeamSpec::default();
    let grid = SpatialGrid::for_beam(&spec, n).unwrap();
    let truth = ground_truth_fields(&spec, &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p: Vec<f64> = truth.p().iter().map(|v| v * rng.gen_range(0.9..1.1)).collect();
    let c: Vec<f64> = truth.c().iter().map(|v| v + rng.gen_range(0.5..1.5)).collect();
    let base = ParameterField::new(p, c).unwrap();

    let truth_sys = system(n, truth.clone(), LoadModel::default());
    let h = estimate_stable_step(&truth_sys, 0.4).unwrap();
    let tgrid = TimeGrid::new(0.045, 20, h, &[0.02]).unwrap();
    let target = solve(&truth_sys, &vec![0.0; 2 * n], &tgrid).unwrap().displacement();

    let mut picks: Vec<(usize, usize)> = Vec::new();
    while picks.len() < 12 {
        let pick = (rng.gen_range(0..n), rng.gen_range(1..=20));
        if !picks.contains(&pick) {
            picks.push(pick);
        }
    }
    let loss = |fields: &ParameterField| {
        let sys = system(n, fields.clone(), LoadModel::default());
        let u = solve(&sys, &vec![0.0; 2 * n], &tgrid).unwrap().displacement();
        picks.iter().map(|&(i, s)| (u.get(s, i) - target.get(s, i)).abs()).sum::<f64>() / picks.len() as f64
    };

    let sys = system(n, base.clone(), LoadModel::default());
    let (traj, tape) = integrate(&sys, &vec![0.0; 2 * n], &tgrid).unwrap();
    let u = traj.displacement();
    let cots: Vec<SampleCotangent> = picks
        .iter()
        .map(|&(i, s)| SampleCotangent {
            component: i,
            save: s,
            weight: (u.get(s, i) - target.get(s, i)).signum() / picks.len() as f64,
        })
        .collect();
    let (gp, gc) = beam_adjoint_gradients(&tape, &sys, &cots).unwrap();

    let eps = f64::EPSILON.cbrt();
    let check = |g_adj: f64, plus: ParameterField, minus: ParameterField, step: f64, what: String| {
        let g_fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
        let rel = ((g_adj - g_fd) / g_fd.abs().max(1e-12)).abs();
        assert!(rel <= 1e-5, "{what}: adjoint {g_adj:e}, fd {g_fd:e}, rel {rel:e}");
    };
    for k in 0..n + 2 {
        let step = eps * base.p()[k].abs().max(1.0);
        let mut pp = base.p().to_vec();
        pp[k] += step;
        let mut pm = base.p().to_vec();
        pm[k] -= step;
        check(
            gp[k],
            ParameterField::new(pp, base.c().to_vec()).unwrap(),
            ParameterField::new(pm, base.c().to_vec()).unwrap(),
            step,
            format!("P[{k}]"),
        );
    }
    for k in 0..n {
        let step = eps * base.c()[k].abs().max(1.0);
        let mut cp = base.c().to_vec();
        cp[k] += step;
        let mut cm = base.c().to_vec();
        cm[k] -= step;
        check(
            gc[k],
            ParameterField::new(base.p().to_vec(), cp).unwrap(),
            ParameterField::new(base.p().to_vec(), cm).unwrap(),
            step,
            format!("C[{k}]"),
        );
    }
}

#[test]
fn minibatch_gradient_is_sum_of_sample_gradients() {
    let sys = truth_system(16);
    let grid = SolverConfig::default().time_grid(&sys).unwrap();
    let (_, tape) = integrate(&sys, &vec![0.0; 32], &grid).unwrap();
    let cots = [
        SampleCotangent { component: 3, save: 40, weight: 0.25 },
        SampleCotangent { component: 9, save: 151, weight: -0.25 },
        SampleCotangent { component: 14, save: 7, weight: 0.25 },
    ];
    let (bp, bc) = beam_adjoint_gradients(&tape, &sys, &cots).unwrap();
    let mut sp = vec![0.0; 18];
    let mut sc = vec![0.0; 16];
    for c in &cots {
        let (p, cc) = beam_adjoint_gradients(&tape, &sys, std::slice::from_ref(c)).unwrap();
        sp.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        sc.iter_mut().zip(&cc).for_each(|(a, b)| *a += b);
    }
    for (a, b) in bp.iter().chain(&bc).zip(sp.iter().chain(&sc)) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300), "{a} vs {b}");
    }
    let (zp, zc) = beam_adjoint_gradients(&tape, &sys, &[]).unwrap();
    assert!(zp.iter().chain(&zc).all(|v| *v == 0.0));
}

#[test]
fn symmetric_fields_give_mirrored_nodes() {
    let n = 16;
    let sys = system(n, ParameterField::uniform(n, 1.3, 2.0).unwrap(), LoadModel::default());
    let grid = SolverConfig::default().time_grid(&sys).unwrap();
    let u = solve(&sys, &vec![0.0; 2 * n], &grid).unwrap().displacement();
    for i in 0..n / 2 {
        let (a, b) = (u.node_series(i), u.node_series(n - 1 - i));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * u.max_abs());
        }
    }
}
