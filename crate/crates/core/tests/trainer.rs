use gaf_core::data::{make_dataset, DatasetKind, DatasetSpec, LabeledDataset};
use gaf_core::par::{self, Execution};
use gaf_core::{Checkpoint, GafConfig, GafModel, TrainConfig, Trainer};

fn tiny_config(seed: u64) -> GafConfig {
    GafConfig {
        width: 32,
        depth: 2,
        time_embed: 16,
        num_classes: 3,
        seed,
        ..GafConfig::default()
    }
}

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 96,
        iterations: 100,
        seed,
        ..TrainConfig::default()
    }
}

fn dataset() -> LabeledDataset {
    make_dataset(&DatasetSpec {
        per_class: 200,
        ..DatasetSpec::default()
    })
    .unwrap()
}

fn trainer(seed: u64) -> Trainer {
    Trainer::new(GafModel::new(tiny_config(seed)).unwrap(), train_config(seed)).unwrap()
}

fn same_params(a: &Trainer, b: &Trainer) -> bool {
    a.model().params().iter().zip(b.model().params()).all(|(x, y)| x.bitwise_eq(y))
}

#[test]
fn hundred_steps_are_bitwise_reproducible() {
    let data = dataset();
    let mut a = trainer(4);
    let mut b = trainer(4);
    a.train(&data).unwrap();
    b.train(&data).unwrap();
    assert!(same_params(&a, &b));
    assert_eq!(a.checkpoint().to_bytes().unwrap(), b.checkpoint().to_bytes().unwrap());
}

#[test]
fn resume_equals_uninterrupted_run() {
    let data = dataset();
    let mut full = trainer(9);
    full.train(&data).unwrap();

    let mut first = trainer(9);
    first.run_until(&data, 37, |_, _| Ok(())).unwrap();
    let bytes = first.checkpoint().to_bytes().unwrap();
    drop(first);
    let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(resumed.iteration(), 37);
    resumed.train(&data).unwrap();
    assert!(same_params(&full, &resumed));
    assert_eq!(full.checkpoint(), resumed.checkpoint());
}

#[test]
fn sequential_and_parallel_steps_agree_bitwise() {
    let data = dataset();
    let mut a = trainer(2);
    let mut b = trainer(2);
    par::set_execution(Execution::Sequential);
    a.run_until(&data, 5, |_, _| Ok(())).unwrap();
    par::set_execution(Execution::Parallel);
    b.run_until(&data, 5, |_, _| Ok(())).unwrap();
    assert!(same_params(&a, &b));
}

#[test]
fn absent_class_heads_get_no_gradient() {
    let data = dataset();
    let t = trainer(1);
    let mut batch = t.draw_batch(&data).unwrap();
    let keep: Vec<usize> = (0..batch.len()).filter(|&i| batch.classes[i] != 2).collect();
    batch = gaf_core::objective::BridgeBatch::new(
        batch.z_y.select_rows(&keep).unwrap(),
        batch.z_x.select_rows(&keep).unwrap(),
        keep.iter().map(|&i| batch.t[i]).collect(),
        keep.iter().map(|&i| batch.classes[i]).collect(),
    )
    .unwrap();
    let (_, grads) = t.loss_and_grad(&batch).unwrap();
    let model = t.model();
    for &p in model.head_k_params(2).unwrap() {
        assert!(grads[p].data().iter().all(|&g| g == 0.0), "{}", model.param_names()[p]);
    }
    for c in 0..2 {
        let nonzero = model.head_k_params(c).unwrap().iter().any(|&p| grads[p].data().iter().any(|&g| g != 0.0));
        assert!(nonzero, "class {c} head should be trained");
    }
}

#[test]
fn first_step_loss_matches_anchored_twins() {
    // Zero-initialized heads make J = (1 - t) x and K = t x exactly.
    let data = dataset();
    let mut t = trainer(6);
    let batch = t.draw_batch(&data).unwrap();
    let d = batch.x_t.row_len();
    let mut oracle = 0.0;
    for i in 0..batch.len() {
        let ti = batch.t[i];
        let (mut pj, mut pk) = (0.0, 0.0);
        for c in 0..d {
            let x = batch.x_t.row(i)[c] as f64;
            pj += ((1.0 - ti) * x - batch.z_y.row(i)[c] as f64).powi(2);
            pk += (ti * x - batch.z_x.row(i)[c] as f64).powi(2);
        }
        oracle += ((1.0 - ti) * pj + ti * pk) / d as f64;
    }
    oracle /= batch.len() as f64;
    let loss = t.step(&data).unwrap();
    assert!((loss.pair - oracle).abs() < 1e-5 * oracle.max(1.0), "{} vs {oracle}", loss.pair);
    assert_eq!(loss.res, 0.0);
    assert_eq!(loss.swap, 0.0);
}

#[test]
fn swap_loss_decreases_on_symmetric_pair() {
    let data = make_dataset(&DatasetSpec {
        kind: DatasetKind::Gaussians,
        classes: 2,
        per_class: 300,
        ..DatasetSpec::default()
    })
    .unwrap();
    for seed in 0..3 {
        let cfg = GafConfig {
            num_classes: 2,
            zero_init_heads: false,
            ..tiny_config(seed)
        };
        let mut t = Trainer::new(GafModel::new(cfg).unwrap(), train_config(seed)).unwrap();
        let first = t.loss_and_grad(&t.draw_batch(&data).unwrap()).unwrap().0.swap;
        t.run_until(&data, 300, |_, _| Ok(())).unwrap();
        let last = t.loss_and_grad(&t.draw_batch(&data).unwrap()).unwrap().0.swap;
        assert!(last < first, "seed {seed}: swap {first} -> {last}");
    }
}

#[test]
fn mismatched_dataset_is_rejected() {
    let data = make_dataset(&DatasetSpec {
        classes: 2,
        per_class: 10,
        ..DatasetSpec::default()
    })
    .unwrap();
    assert!(trainer(0).step(&data).is_err());
}
