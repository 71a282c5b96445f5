use gtl::experiments::*;
use gtl::network::*;
use gtl::numerics::*;
use gtl::Error;

fn two_blobs() -> Dataset {
    make_dataset(
        &DatasetSpec::Blobs {
            n_classes: 2,
            per_class: 40,
            dim: 2,
            noise: 0.3,
            separation: 4.0,
        },
        7,
    )
    .unwrap()
}

fn tiny_resnet() -> Network {
    let arch = Architecture {
        kind: ArchKind::Resnet,
        input_dim: 2,
        widths: vec![4],
        blocks_per_stage: 2,
        n_classes: 2,
    };
    Network::init(&arch, &mut Rng::new(1)).unwrap()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr: 0.05,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn linear_net(w: Matrix) -> Network {
    let d = w.rows();
    Network {
        stem: None,
        stages: vec![Stage::Plain(PlainNet { layers: vec![w] })],
        changers: vec![],
        head: Matrix::identity(d),
    }
}

#[test]
fn zero_epochs_return_the_input_network() {
    let net = tiny_resnet();
    let (out, log) = train(&net, &two_blobs(), &cfg(0)).unwrap();
    assert_eq!(out, net);
    assert!(log.epochs.is_empty());
}

#[test]
fn separable_blobs_are_fit_exactly() {
    let (_, log) = train(&tiny_resnet(), &two_blobs(), &cfg(50)).unwrap();
    assert_eq!(log.epochs.len(), 50);
    assert_eq!(log.epochs.last().unwrap().train_acc, 1.0);
}

#[test]
fn same_seed_gives_identical_logs() {
    let data = two_blobs();
    let (na, a) = train(&tiny_resnet(), &data, &cfg(5)).unwrap();
    let (nb, b) = train(&tiny_resnet(), &data, &cfg(5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(na, nb);
    let (_, c) = train(&tiny_resnet(), &data, &TrainConfig { seed: 4, ..cfg(5) }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn eval_every_thins_the_log() {
    let (_, log) = train(&tiny_resnet(), &two_blobs(), &TrainConfig { eval_every: 4, ..cfg(10) }).unwrap();
    let epochs: Vec<usize> = log.epochs.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![4, 8, 10]);
}

#[test]
fn zero_gradient_without_decay_is_a_no_op() {
    let net = tiny_resnet();
    let step = sgd_step(&net, &Gradients::zeros_like(&net), &cfg(1)).unwrap();
    assert_eq!(step, net);
}

#[test]
fn zero_gradient_with_decay_shrinks_every_weight() {
    let net = tiny_resnet();
    let c = TrainConfig { gamma: 0.5, lr: 0.1, ..cfg(1) };
    let step = sgd_step(&net, &Gradients::zeros_like(&net), &c).unwrap();
    let factor = 1.0 - 2.0 * 0.1 * 0.5;
    for (a, b) in net.params().iter().zip(step.params()) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x * factor - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }
}

#[test]
fn small_step_decreases_a_quadratic_loss() {
    let net = linear_net(Matrix::from_rows(&[vec![0.5, -0.2], vec![0.1, 0.7]]).unwrap());
    let xs = vec![
        Vector::new(vec![1.0, 2.0]).unwrap(),
        Vector::new(vec![-0.5, 0.3]).unwrap(),
    ];
    let ts = vec![
        Target::Value(Vector::new(vec![0.0, 1.0]).unwrap()),
        Target::Value(Vector::new(vec![1.0, -1.0]).unwrap()),
    ];
    let before = backward(&net, &xs, &ts, Loss::MeanSquaredError).unwrap();
    let c = TrainConfig { lr: 1e-3, ..cfg(1) };
    let stepped = sgd_step(&net, &before.grads, &c).unwrap();
    let after = backward(&stepped, &xs, &ts, Loss::MeanSquaredError).unwrap();
    assert!(after.loss < before.loss);
}

#[test]
fn mismatched_gradients_are_rejected() {
    let net = tiny_resnet();
    let short = Gradients(Gradients::zeros_like(&net).0[1..].to_vec());
    assert!(matches!(sgd_step(&net, &short, &cfg(1)), Err(Error::Dimension { .. })));
}

#[test]
fn exploding_steps_report_divergence() {
    let c = TrainConfig { lr: 1e200, ..cfg(3) };
    assert!(matches!(train(&tiny_resnet(), &two_blobs(), &c), Err(Error::Divergence { .. })));
}

#[test]
fn oversized_batch_is_a_config_error() {
    let c = TrainConfig { batch_size: 1000, ..cfg(1) };
    match train(&tiny_resnet(), &two_blobs(), &c) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "train.batch_size"),
        other => panic!("expected a config error, got {other:?}"),
    }
}
