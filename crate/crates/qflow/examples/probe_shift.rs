use qflow::array::Array;
use qflow::data::{sample_gmm, Covariance, GmmSpec};
use qflow::flow::{init_flow, transport_knots, InitConfig, RefineConfig, RefineSession};
use qflow::losses::{w2_loss_plain, Phase};
use qflow::metrics::{cos_metric, l2_uvp, total_variance};
use qflow::nn::{Activation, MlpSpec};
use qflow::ode::{Direction, TimeGrid};
use qflow::oracle::gaussian_ot_map;

fn main() {
    let shift = [5.0, 0.0];
    let p_spec = GmmSpec::single(vec![0.0; 2], Covariance::Isotropic(1.0));
    let q_spec = GmmSpec::single(shift.to_vec(), Covariance::Isotropic(1.0));
    let (t_star, _) = gaussian_ot_map(&[0.0; 2], &Array::identity(2), &shift, &Array::identity(2)).unwrap();
    let p = sample_gmm(&p_spec, 4000, 101);
    let q = sample_gmm(&q_spec, 4000, 102);
    let test_p = sample_gmm(&p_spec, 4000, 999);
    let test_q = sample_gmm(&q_spec, 4000, 998);
    let grid = TimeGrid::uniform(5, 4);
    let fspec = MlpSpec::new(vec![3, 64, 64, 2], Activation::Softplus { beta: 20.0 }).unwrap();

    // (label, classifier hidden, E0, E_in, c_lr, c_batch, flow_lr)
    let configs: Vec<(&str, Vec<usize>, usize, usize, f64, usize, f64)> = vec![
        ("weak-c", vec![32, 32], 150, 2, 5e-4, 1024, 3e-4),
        ("weak-c-lr1e3", vec![32, 32], 150, 2, 5e-4, 1024, 1e-3),
        ("tiny-c", vec![16], 150, 2, 5e-4, 2048, 3e-4),
    ];
    for (label, hidden, e0, e_in, c_lr, c_batch, f_lr) in configs {
        let icfg = InitConfig { steps: 2500, batch_size: 256, learning_rate: 1e-3, seed: 11 };
        let flow = init_flow(&p, &q, &fspec, grid.clone(), &icfg).unwrap();
        let eval = |f: &qflow::flow::FlowModel| {
            let (knots, hs) = transport_knots(f, &test_p, Direction::Forward).unwrap();
            let w2 = w2_loss_plain(&knots, &hs);
            let push = |b: &Array| qflow::flow::push(f, b, Direction::Forward).unwrap();
            let uvp = l2_uvp(&push, &t_star, &test_p, total_variance(&test_q)).unwrap();
            let star = t_star.clone();
            let cos = cos_metric(&push, move |b: &Array| star.apply(b), &test_p).unwrap();
            (w2, uvp, cos)
        };
        let (w2, uvp, cos) = eval(&flow);
        println!("{label} init: w2 = {w2:.3}, uvp = {uvp:.2}%, cos = {cos:.4}");
        let rcfg = RefineConfig {
            gamma: 0.5,
            outer_iters: 1,
            epochs: 10,
            initial_classifier_epochs: e0,
            inner_classifier_epochs: e_in,
            flow_batch: 512,
            classifier_batch: c_batch,
            flow_lr: f_lr,
            classifier_lr: c_lr,
            classifier_hidden: hidden,
            classifier_activation: Activation::Softplus { beta: 20.0 },
            seed: 21,
            unidirectional: false,
            classifier_cadence: 1,
        };
        let mut session = RefineSession::new(flow, p.clone(), q.clone(), rcfg).unwrap();
        for phase in [Phase::Forward, Phase::Reverse] {
            for _ in 0..e0 {
                session.classifier_epoch(phase).unwrap();
            }
        }
        for block in 0..10 {
            for phase in [Phase::Forward, Phase::Reverse] {
                for _ in 0..2 {
                    session.flow_epoch(phase).unwrap();
                    for _ in 0..e_in {
                        session.classifier_epoch(phase).unwrap();
                    }
                }
            }
            let (w2, uvp, cos) = eval(session.flow());
            println!("{label} epochs/dir {:2}: w2 = {w2:.3}, uvp = {uvp:.2}%, cos = {cos:.4}", (block + 1) * 2);
        }
        println!();
    }
}
