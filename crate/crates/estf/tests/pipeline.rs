mod common;

use estf::checkpoint;
use estf::core::training::lr_at;
use estf::dataset::{self, GenOptions, Split};
use estf::eval;
use estf::train::{self, CURVE_HEADER};

#[test]
fn same_seed_gives_identical_artifacts() {
    let data = tempfile::tempdir().unwrap();
    let m = common::toy_dataset(data.path(), 1);
    let run = common::toy_run(3);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (oa, fa) = train::train(&run, &m, a.path(), |_| {}).unwrap();
    let (ob, fb) = train::train(&run, &m, b.path(), |_| {}).unwrap();
    for (x, y) in [(&fa.best, &fb.best), (&fa.last, &fb.last), (&fa.config, &fb.config)] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    assert_eq!(oa.params, ob.params);
    for (ra, rb) in oa.curve.iter().zip(&ob.curve) {
        assert_eq!(
            (ra.epoch, ra.lr, ra.train_loss, ra.train_top1, ra.val_top1),
            (rb.epoch, rb.lr, rb.train_loss, rb.train_top1, rb.val_top1)
        );
    }

    let mut other = run.clone();
    other.train.seed = 9;
    let c = tempfile::tempdir().unwrap();
    let (oc, _) = train::train(&other, &m, c.path(), |_| {}).unwrap();
    assert_ne!(oc.params, oa.params);
}

#[test]
fn curve_follows_the_schedule() {
    let data = tempfile::tempdir().unwrap();
    let m = common::toy_dataset(data.path(), 2);
    let mut run = common::toy_run(5);
    run.train.decay_every = 2;
    let out = tempfile::tempdir().unwrap();
    let (o, art) = train::train(&run, &m, out.path(), |_| {}).unwrap();
    assert_eq!(o.curve.len(), 5);
    for (e, r) in o.curve.iter().enumerate() {
        assert_eq!(r.epoch, e);
        assert_eq!(r.lr, lr_at(e, &run.train));
        assert!(r.train_loss.is_finite() && (0.0..=1.0).contains(&r.train_top1));
    }
    let text = std::fs::read_to_string(&art.curve).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CURVE_HEADER));
    for (line, r) in lines.zip(&o.curve) {
        let lr: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(lr, r.lr);
    }
    // best is the first epoch reaching the highest validation score
    let best = o.curve.iter().filter_map(|r| r.val_top1).fold(f64::MIN, f64::max);
    let first = o.curve.iter().position(|r| r.val_top1 == Some(best)).unwrap();
    assert_eq!((o.best_epoch, o.best_val_top1), (first, Some(best)));
    assert_eq!(checkpoint::load(&art.best).unwrap().params, o.best);
    assert_eq!(checkpoint::load(&art.last).unwrap().params, o.params);
}

#[test]
fn overfit_toy_scores_perfectly_on_its_training_split() {
    let data = tempfile::tempdir().unwrap();
    let m = common::toy_dataset(data.path(), 5);
    let run = common::toy_run(40);
    let out = tempfile::tempdir().unwrap();
    let (o, _) = train::train(&run, &m, out.path(), |_| {}).unwrap();
    let report = eval::evaluate(&o.params, &run, &m, Split::Train).unwrap();
    assert_eq!(report.top1, 1.0, "final loss {}", o.curve.last().unwrap().train_loss);
    assert_eq!(report.top1, report.confusion.trace() as f64 / report.confusion.total() as f64);
    assert_eq!(report.confusion.total(), 24);
    assert_eq!(report.mean_class_accuracy, 1.0);

    let test = eval::evaluate(&o.params, &run, &m, Split::Test).unwrap();
    assert_eq!(test.top1, test.confusion.trace() as f64 / test.confusion.total() as f64);
    assert!(test.top5 >= test.top1);
    let files = test.write(out.path()).unwrap();
    let csv = std::fs::read_to_string(&files[1]).unwrap();
    assert_eq!(csv.lines().count(), 1 + run.model.num_classes);
}

#[test]
fn empty_split_is_an_error() {
    let data = tempfile::tempdir().unwrap();
    // seven per class leaves nothing for validation
    let opts = GenOptions { per_class: 7, ..common::toy_options(0) };
    let m = dataset::generate(&opts, data.path()).unwrap();
    let run = common::toy_run(1);
    let params = estf::core::model::init_params(&run.model, 0).unwrap();
    let err = eval::evaluate(&params, &run, &m, Split::Val).unwrap_err();
    assert!(err.to_string().contains("val split is empty"), "{err}");
}

#[test]
fn too_few_model_classes_is_a_config_error() {
    let data = tempfile::tempdir().unwrap();
    let m = common::toy_dataset(data.path(), 0);
    let mut run = common::toy_run(1);
    run.model.num_classes = 3;
    let out = tempfile::tempdir().unwrap();
    assert!(matches!(train::train(&run, &m, out.path(), |_| {}), Err(estf::Error::Config(_))));
}
