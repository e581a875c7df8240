use spartan::model::{Model, ModelConfig};
use spartan::par::with_threads;
use spartan::train::{evaluate, Augment, Dataset, EpochMetrics, MetricsLog, TrainConfig, Trainer};
use spartan::Error;

fn train(ds: &Dataset, tc: TrainConfig, model_seed: u64) -> (Vec<EpochMetrics>, Model<f32>) {
    let model = Model::build(&ModelConfig::spartan_tiny(), model_seed).unwrap();
    let mut trainer = Trainer::new(model, tc.clone(), ds.len()).unwrap();
    let metrics = (0..tc.epochs).map(|_| trainer.train_epoch(ds).unwrap()).collect();
    (metrics, trainer.model)
}

#[test]
fn tiny_model_learns_quadrants_in_two_epochs() {
    let ds = Dataset::synthetic_quadrants(512, 32, 0);
    let init = evaluate(&Model::<f32>::build(&ModelConfig::spartan_tiny(), 0).unwrap(), &ds, 64).unwrap();
    let (metrics, model) = train(&ds, TrainConfig { epochs: 2, ..TrainConfig::default() }, 0);
    assert!(metrics[0].loss < init.loss, "{} vs init {}", metrics[0].loss, init.loss);
    assert!(metrics[1].top1 >= 0.95, "{metrics:?}");
    assert!(model.all_finite());
}

#[test]
fn five_epochs_generalize_to_eval_mode() {
    let ds = Dataset::synthetic_quadrants(512, 32, 0);
    let held_out = Dataset::synthetic_quadrants(128, 32, 99);
    let (metrics, model) = train(&ds, TrainConfig::default(), 0);
    assert!(metrics.windows(2).take(2).all(|w| w[1].loss < w[0].loss), "{metrics:?}");
    assert!(metrics[4].top1 >= 0.95);
    let e = evaluate(&model, &held_out, 64).unwrap();
    assert!(e.top1 >= 0.95, "{e:?}");
}

#[test]
fn training_is_reproducible() {
    let ds = Dataset::synthetic_quadrants(96, 32, 1);
    let tc = TrainConfig { epochs: 2, batch_size: 32, augment: Augment::None, seed: 4, ..TrainConfig::default() };
    let (a, ma) = train(&ds, tc.clone(), 2);
    let (b, mb) = train(&ds, tc, 2);
    assert_eq!(a, b);
    assert_eq!(ma.checksum(), mb.checksum());
}

#[test]
fn thread_count_does_not_change_results() {
    let ds = Dataset::synthetic_quadrants(64, 32, 2);
    let tc = TrainConfig { epochs: 1, batch_size: 16, seed: 9, ..TrainConfig::default() };
    let one = with_threads(1, || train(&ds, tc.clone(), 3));
    let four = with_threads(4, || train(&ds, tc.clone(), 3));
    assert_eq!(one.0, four.0);
    assert_eq!(one.1.checksum(), four.1.checksum());
}

#[test]
fn evaluate_is_pure() {
    let ds = Dataset::synthetic_quadrants(40, 32, 3);
    let model = Model::<f32>::build(&ModelConfig::spartan_tiny(), 1).unwrap();
    let before = model.checksum();
    let a = evaluate(&model, &ds, 16).unwrap();
    let b = evaluate(&model, &ds, 16).unwrap();
    assert_eq!(a, b);
    assert_eq!(model.checksum(), before);
    assert!((0.0..=1.0).contains(&a.top1));

    let empty = Dataset::new(spartan::Tensor::zeros(vec![0, 3, 32, 32]), vec![]).unwrap();
    assert!(matches!(evaluate(&model, &empty, 16), Err(Error::Empty(_))));
    let bad = Dataset::new(spartan::Tensor::zeros(vec![2, 3, 32, 32]), vec![0, 5]).unwrap();
    assert!(matches!(evaluate(&model, &bad, 16), Err(Error::Data(_))));
}

#[test]
fn random_init_accuracy_is_near_chance() {
    // balanced two-class set; each seed's accuracy must sit inside the 3σ
    // binomial band around 1/2
    let n = 400;
    let ds = Dataset::synthetic_quadrants(n, 32, 4);
    let sigma = (0.25 / n as f64).sqrt();
    for seed in 0..4 {
        let model = Model::<f32>::build(&ModelConfig::spartan_tiny(), seed).unwrap();
        let m = evaluate(&model, &ds, 100).unwrap();
        assert!((m.top1 - 0.5).abs() <= 3.0 * sigma, "seed {seed}: {}", m.top1);
    }
}

#[test]
fn datasets_round_trip_through_both_layouts() {
    let ds = Dataset::synthetic_quadrants(6, 8, 5);
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("ds.sprt");
    ds.save_archive(&archive).unwrap();
    assert_eq!(Dataset::load(&archive).unwrap(), ds);
    let folder = dir.path().join("ds");
    ds.save_dir(&folder).unwrap();
    assert_eq!(Dataset::load(&folder).unwrap(), ds);
    let index = std::fs::read_to_string(folder.join("index.tsv")).unwrap();
    assert_eq!(index.lines().count(), 6);
    assert!(index.lines().all(|l| l.split('\t').count() == 2));

    assert!(matches!(Dataset::load(&dir.path().join("missing")), Err(Error::Data(_))));
    std::fs::write(folder.join("index.tsv"), "000000.sprt\tcat\n").unwrap();
    assert!(matches!(Dataset::load(&folder), Err(Error::Data(m)) if m.contains("cat")));
}

#[test]
fn metrics_log_appends() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let log = MetricsLog::open(&path).unwrap();
    log.append(1, "train", 0.5, 0.75, 1e-4).unwrap();
    let log = MetricsLog::open(&path).unwrap();
    log.append(1, "eval", 0.25, 1.0, 1e-4).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines, ["epoch,split,loss,top1,lr", "1,train,0.5,0.75,0.0001", "1,eval,0.25,1,0.0001"]);
}

#[test]
fn trainer_rejects_tiny_batches_and_sets() {
    let model = Model::<f32>::build(&ModelConfig::spartan_tiny(), 0).unwrap();
    let tc = TrainConfig { batch_size: 1, ..TrainConfig::default() };
    assert!(matches!(Trainer::new(model.clone(), tc, 10), Err(Error::Config(_))));
    let mut t = Trainer::new(model, TrainConfig::default(), 1).unwrap();
    let one = Dataset::synthetic_quadrants(1, 32, 0);
    assert!(matches!(t.train_epoch(&one), Err(Error::Empty(_))));
}
