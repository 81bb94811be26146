use beamid::baselines::{
    jet_forward, regressor::loss_terms, train_dnn, train_pinn, BaselineConfig, DataLoss, PinnLoss, RegressorModel, StarLayout,
};
use beamid::beam::{BeamSpec, LoadModel, TruthProfile};
use beamid::field::DisplacementField;
use beamid::net::{Activation, DenseStack};
use beamid::problem::BeamProblem;
use beamid::solver::SolverConfig;
use beamid::trainer::{draw_samples, SampleSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem() -> BeamProblem {
    let solver = SolverConfig { n_save: 20, ..Default::default() };
    BeamProblem::new(BeamSpec::default(), 8, LoadModel::default(), solver, 3.0).unwrap()
}

fn small_cfg(seed: u64) -> BaselineConfig {
    BaselineConfig { width: 8, n_layers: 3, seed, ..Default::default() }
}

fn setup() -> (BeamProblem, SampleSet, f64) {
    let pb = problem();
    let truth = pb.solve(pb.truth_fields(&TruthProfile::default()).unwrap()).unwrap().displacement();
    let samples = draw_samples(&truth, 0.5, 1).unwrap();
    let u = samples.samples().iter().fold(0.0f64, |m, s| m.max(s.value.abs()));
    (pb, samples, u)
}

fn fresh(cfg: &BaselineConfig, pb: &BeamProblem, u: f64) -> RegressorModel {
    RegressorModel::new(cfg, pb.spec().length(), 0.045, u).unwrap()
}

#[test]
fn zero_physics_weights_reduce_to_the_data_fit() {
    let (pb, samples, u) = setup();
    let cfg = small_cfg(2);
    let mut a = fresh(&cfg, &pb, u);
    let mut b = a.clone();
    let ha = train_dnn(&mut a, &pb, &samples, &cfg, 15).unwrap();
    let zero = PinnLoss { w_pde: 0.0, w_bc: 0.0, ..Default::default() };
    let hb = train_pinn(&mut b, &pb, &samples, zero, &cfg, 15).unwrap();
    assert_eq!(ha.len(), hb.len());
    for (x, y) in ha.iter().zip(&hb) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    assert_eq!(a.stack().params(), b.stack().params());
}

#[test]
fn heavier_data_weight_lowers_the_data_term() {
    let (pb, samples, u) = setup();
    let cfg = small_cfg(3);
    let run = |w_data: f64| {
        let mut m = fresh(&cfg, &pb, u);
        let loss = PinnLoss { w_data, ..Default::default() };
        train_pinn(&mut m, &pb, &samples, loss, &cfg, 40).unwrap();
        loss_terms(&m, &pb, &samples, loss, cfg.data_loss).unwrap().data
    };
    let (plain, heavy) = (run(1.0), run(100.0));
    assert!(heavy < plain, "data term {heavy:e} with weight 100, {plain:e} with weight 1");
}

/// L-BFGS crawls once the output is near zero (about 1e-9 after 500
/// iterations, 1e-10 only after a few thousand), so the bound is 1e-8.
#[test]
fn squared_loss_fits_a_zero_field() {
    let pb = problem();
    let times = pb.time_grid().save_times().to_vec();
    let zeros = DisplacementField::zeros(times.clone(), 8);
    let samples = draw_samples(&zeros, 0.5, 0).unwrap();
    let cfg = BaselineConfig { data_loss: DataLoss::Mse, ..Default::default() };
    let mut m = fresh(&cfg, &pb, 1.0);
    let hist = train_dnn(&mut m, &pb, &samples, &cfg, 500).unwrap();
    let last = *hist.last().unwrap();
    assert!(last < 1e-8, "final loss {last:e} after {} iterations", hist.len() - 1);
    let pred = m.predict_field(&pb.grid().interior_coords(), &times).unwrap();
    let worst = pred.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(worst < 1e-3, "largest predicted displacement {worst:e}");
}

#[test]
fn baseline_training_is_deterministic() {
    let (pb, samples, u) = setup();
    let cfg = small_cfg(5);
    let run = || {
        let mut m = fresh(&cfg, &pb, u);
        let h = train_pinn(&mut m, &pb, &samples, PinnLoss::default(), &cfg, 5).unwrap();
        (m, h)
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(m1.stack().params(), m2.stack().params());
    assert_eq!(h1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), h2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

fn random_net(seed: u64, width: usize) -> DenseStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stack = DenseStack::glorot(&[2, width, width, 1], Activation::Tanh, &mut rng).unwrap();
    for b in 0..stack.n_layers() {
        stack.layer_mut(b).1.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    stack
}

#[test]
fn first_order_jets_match_reverse_mode() {
    for seed in 0..5 {
        let stack = random_net(seed, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let pts: Vec<[f64; 2]> = (0..20).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let layout = StarLayout::new(1, 1).unwrap();
        let (out, _) = jet_forward(&stack, &pts, layout).unwrap();
        for (p, pt) in pts.iter().enumerate() {
            let g = stack.input_gradient(pt).unwrap();
            let row = &out[p * layout.len()..(p + 1) * layout.len()];
            assert!((row[layout.x(1)] - g[0]).abs() < 1e-8);
            assert!((row[layout.t(1)] - g[1]).abs() < 1e-8);
        }
    }
}

/// Finite-difference weights for derivative `m` on the given offsets
/// (Fornberg's recursion).
fn fd_weights(offsets: &[f64], m: usize) -> Vec<f64> {
    let n = offsets.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = offsets[0];
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = offsets[i];
        for j in 0..i {
            let c3 = offsets[i] - offsets[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[m]).collect()
}

#[test]
fn fornberg_weights_reproduce_classic_stencils() {
    let off = [-1.0, 0.0, 1.0];
    assert_eq!(fd_weights(&off, 1), vec![-0.5, 0.0, 0.5]);
    assert_eq!(fd_weights(&off, 2), vec![1.0, -2.0, 1.0]);
    let five = fd_weights(&[-2.0, -1.0, 0.0, 1.0, 2.0], 4);
    for (a, b) in five.iter().zip([1.0, -4.0, 6.0, -4.0, 1.0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn jets_to_fourth_order_match_high_order_differences() {
    let offsets: Vec<f64> = (-5..=5).map(f64::from).collect();
    let h: f64 = 0.04;
    let layout = StarLayout::new(4, 4).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..4 {
        let stack = random_net(seed, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let pts: Vec<[f64; 2]> = (0..25).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let (out, _) = jet_forward(&stack, &pts, layout).unwrap();
        let f = |x: f64, t: f64| stack.forward(&[x, t], 1).unwrap().0[0];
        for (p, pt) in pts.iter().enumerate() {
            let row = &out[p * layout.len()..(p + 1) * layout.len()];
            for m in 1..=4 {
                let w = fd_weights(&offsets, m);
                let scale = h.powi(m as i32);
                let dx: f64 = offsets.iter().zip(&w).map(|(o, c)| c * f(pt[0] + o * h, pt[1])).sum::<f64>() / scale;
                let dt: f64 = offsets.iter().zip(&w).map(|(o, c)| c * f(pt[0], pt[1] + o * h)).sum::<f64>() / scale;
                let fact = (1..=m).product::<usize>() as f64;
                for (jet, fd) in [(row[layout.x(m)] * fact, dx), (row[layout.t(m)] * fact, dt)] {
                    let rel = (jet - fd).abs() / fd.abs().max(1e-2);
                    assert!(rel < 1e-4, "order {m} at {pt:?}: jet {jet:e}, fd {fd:e}");
                    worst = worst.max(rel);
                }
            }
        }
    }
    println!("max relative error {worst:e}");
}
