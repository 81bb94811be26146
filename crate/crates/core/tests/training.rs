use beamid::beam::{BeamSpec, LoadModel, ParameterField, TruthProfile};
use beamid::net::{MlpModel, ModelConfig};
use beamid::problem::BeamProblem;
use beamid::solver::SolverConfig;
use beamid::trainer::{draw_samples, mae_loss, minibatch_gradient, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem(n: usize, n_save: usize) -> BeamProblem {
    let solver = SolverConfig { n_save, ..Default::default() };
    BeamProblem::new(BeamSpec::default(), n, LoadModel::default(), solver, 3.0).unwrap()
}

#[test]
fn network_gradient_matches_finite_differences() {
    let pb = problem(8, 20);
    let truth = pb.solve(pb.truth_fields(&TruthProfile::default()).unwrap()).unwrap().displacement();
    let samples = draw_samples(&truth, 0.5, 3).unwrap();
    let batch: Vec<usize> = (0..samples.len()).collect();

    let cfg = ModelConfig { zero_output_init: true, ..Default::default() };
    let mut model = MlpModel::new(cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for which in 0..2 {
        let head = if which == 0 { model.p_head_mut() } else { model.c_head_mut() };
        let last = head.n_layers() - 1;
        let (w, b) = head.layer_mut(last);
        w.iter_mut().for_each(|v| *v = rng.gen_range(-0.05..0.05));
        b[0] = rng.gen_range(-0.2..0.2);
    }
    let (_, grad) = minibatch_gradient(&pb, &model, &samples, &batch).unwrap();

    let theta = model.to_flat();
    let loss_at = |params: &[f64]| {
        let mut m = model.clone();
        m.load_flat(params).unwrap();
        let u = pb.solve(m.forward_fields(pb.grid()).unwrap().0).unwrap().displacement();
        mae_loss(&u, &samples, &batch).unwrap().0
    };
    let eps = f64::EPSILON.cbrt();
    let mut fd = vec![0.0; theta.len()];
    for k in 0..theta.len() {
        let step = eps * theta[k].abs().max(1.0);
        let mut plus = theta.clone();
        plus[k] += step;
        let mut minus = theta.clone();
        minus[k] -= step;
        fd[k] = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
    }
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(scale > 0.0);
    let mut worst = 0.0f64;
    for (k, (g, f)) in grad.iter().zip(&fd).enumerate() {
        let rel = (g - f).abs() / f.abs().max(1e-3 * scale);
        assert!(rel <= 1e-4, "weight {k}: adjoint {g:e}, fd {f:e}");
        worst = worst.max(rel);
    }
    println!("max relative error {worst:e} over {} weights", theta.len());
}

/// Adam's sign-like steps on an MAE subgradient move the fields off the
/// exact optimum, so the bound is against the untrained uniform start.
#[test]
fn training_from_truth_stays_near_the_minimum() {
    let pb = problem(16, 160);
    let truth_fields = pb.truth_fields(&TruthProfile::default()).unwrap();
    let truth = pb.solve(truth_fields.clone()).unwrap().displacement();
    let samples = draw_samples(&truth, 0.2, 0).unwrap();
    let all: Vec<usize> = (0..samples.len()).collect();
    let full_loss = |f: ParameterField| mae_loss(&pb.solve(f).unwrap().displacement(), &samples, &all).unwrap().0;

    let mut mc = ModelConfig { c_scale: 0.03, ..Default::default() };
    mc.embedding.dim = 8;
    let mut model = MlpModel::new(mc, 0).unwrap();
    model.fit_output_layers(pb.grid(), &truth_fields).unwrap();
    let loss0 = full_loss(model.forward_fields(pb.grid()).unwrap().0);
    assert!(loss0 < 1e-8, "epoch-0 loss {loss0:e}");

    let cfg = TrainConfig { epochs: 1, lr: 1e-3, ..Default::default() };
    let (_, history) = train(&pb, &samples, &mut model, &cfg, Some(&truth_fields)).unwrap();
    assert_eq!(history[0].skipped, 0);
    let loss = full_loss(model.forward_fields(pb.grid()).unwrap().0);
    let uniform = full_loss(ParameterField::uniform(16, 1.75, 0.0).unwrap());
    assert!(loss < 0.5 * uniform, "trained loss {loss:e}, uniform start {uniform:e}");
}

#[test]
fn identical_seeds_give_identical_histories() {
    let pb = problem(8, 40);
    let truth_fields = pb.truth_fields(&TruthProfile::default()).unwrap();
    let truth = pb.solve(truth_fields.clone()).unwrap().displacement();
    let samples = draw_samples(&truth, 0.2, 4).unwrap();
    let cfg = TrainConfig { epochs: 3, ..Default::default() };
    let mc = ModelConfig { zero_output_init: true, ..Default::default() };
    let run = || {
        let mut model = MlpModel::new(mc, 7).unwrap();
        let (opt, hist) = train(&pb, &samples, &mut model, &cfg, Some(&truth_fields)).unwrap();
        (model, opt, hist)
    };
    let (m1, o1, h1) = run();
    let (m2, o2, h2) = run();
    assert_eq!(m1, m2);
    assert_eq!(o1, o2);
    for (a, b) in h1.iter().zip(&h2) {
        assert_eq!(a.mean_loss.to_bits(), b.mean_loss.to_bits());
        assert_eq!(a.frechet_p.to_bits(), b.frechet_p.to_bits());
    }
    assert!(h1.iter().all(|r| r.mean_loss.is_finite() && r.skipped == 0));
}
