use qflow::array::Array;
use qflow::data::{sample_gmm, Covariance, GmmSpec};
use qflow::flow::{init_flow, refine, transport_knots, InitConfig, RefineConfig};
use qflow::losses::w2_loss_plain;
use qflow::nn::{Activation, MlpSpec};
use qflow::ode::{Direction, TimeGrid};

fn main() {
    let spec = GmmSpec::new(
        vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
        vec![Covariance::Isotropic(0.3), Covariance::Isotropic(0.3)],
        vec![0.5, 0.5],
    )
    .unwrap();
    let n = 4000;
    let p = sample_gmm(&spec, n, 5);
    let q = sample_gmm(&spec, n, 6);
    let icfg = InitConfig { steps: 800, batch_size: 128, learning_rate: 1e-3, seed: 7 };
    let grid = TimeGrid::uniform(3, 3);
    let fspec = MlpSpec::new(vec![3, 24, 24, 2], Activation::Softplus { beta: 20.0 }).unwrap();
    let test = sample_gmm(&spec, 400, 99);
    let eval = |f: &qflow::flow::FlowModel| {
        let (knots, hs) = transport_knots(f, &test, Direction::Forward).unwrap();
        let w2 = w2_loss_plain(&knots, &hs);
        let disp = knots.last().unwrap().sub(&knots[0]).mean_row_sq_norm().sqrt();
        (w2, disp)
    };
    for (gamma, flow_lr, cbatch) in [(2.0, 5e-4, 512usize), (5.0, 5e-4, 512), (2.0, 1e-3, 1024)] {
        let flow = init_flow(&p, &q, &fspec, grid.clone(), &icfg).unwrap();
        println!("gamma={gamma} lr={flow_lr} cbatch={cbatch} init: {:?}", eval(&flow));
        let rcfg = RefineConfig {
            gamma,
            outer_iters: 1,
            epochs: 120,
            initial_classifier_epochs: 150,
            inner_classifier_epochs: 2,
            flow_batch: 256,
            classifier_batch: cbatch,
            flow_lr,
            classifier_hidden: vec![32, 32],
            seed: 8,
            ..Default::default()
        };
        let (f2, _) = refine(flow, &p, &q, &rcfg).unwrap();
        println!("  after 120 epochs: {:?}", eval(&f2));
    }
    let _ = Array::zeros(1, 1);
}
