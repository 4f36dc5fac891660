use lobscope_nn::checkpoint::Checkpoint;
use lobscope_nn::train::{evaluate, predict, train_model, write_history};
use lobscope_nn::{Dataset, Dims, Family, Head, Level, ModelSpec, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn volume_spec() -> ModelSpec {
    let dims = Dims { t: 8, l: 2, w: 4, d: 3, k: 1 };
    ModelSpec::new(Family::DeepVol, Level::L2, Head::Single, dims).unwrap().with_widths(4, 4, 8)
}

/// Volume windows whose class is read off the best-tick volumes: heavy bid
/// side → up, heavy ask side → down, both heavy → flat.
fn separable(n: usize, seed: u64) -> Dataset {
    let spec = volume_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::new(spec.input_shape(), 1);
    for i in 0..n {
        let class = (i % 3) as u8;
        let mut x: Vec<f32> = (0..spec.input_len()).map(|_| rng.random_range(0.0..0.3)).collect();
        for t in 0..8 {
            let row = t * 8;
            if class != 2 {
                x[row + 1] = rng.random_range(0.8..1.0);
            }
            if class != 0 {
                x[row] = rng.random_range(0.8..1.0);
            }
        }
        ds.push(&x, &[class]);
    }
    ds
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig { batch_size: 32, max_epochs: epochs, patience: 10, seed: 5, ..TrainConfig::default() }
}

#[test]
fn learns_a_separable_problem() {
    let spec = volume_spec();
    let train = separable(300, 1);
    let val = separable(90, 2);
    let out = train_model::<f32>(&spec, &train, &val, &config(20)).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
    for w in losses[..4].windows(2) {
        assert!(w[1] < w[0], "training loss not decreasing: {losses:?}");
    }
    let test = separable(150, 3);
    let probs = predict(&spec, &out.params, &test).unwrap();
    let hits = probs
        .iter()
        .zip(&test.y)
        .filter(|(p, &y)| {
            let arg = (0..3).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
            arg == y as usize
        })
        .count();
    assert!(hits as f64 / test.len() as f64 > 0.95, "accuracy {hits}/150");
}

#[test]
fn same_seed_same_parameters() {
    let spec = volume_spec();
    let train = separable(96, 4);
    let val = separable(30, 5);
    let a = train_model::<f32>(&spec, &train, &val, &config(3)).unwrap();
    let b = train_model::<f32>(&spec, &train, &val, &config(3)).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
}

#[test]
fn seq2seq_trains_on_every_head() {
    let dims = Dims { t: 8, l: 2, w: 4, d: 3, k: 2 };
    let spec = ModelSpec::new(Family::DeepVol, Level::L2, Head::Seq2Seq, dims).unwrap().with_widths(2, 2, 4);
    let single = separable(64, 6);
    let mut ds = Dataset::new(spec.input_shape(), 2);
    for i in 0..single.len() {
        let y = single.y[i];
        ds.push(single.sample(i), &[y, 2 - y]);
    }
    let out = train_model::<f32>(&spec, &ds, &ds, &config(2)).unwrap();
    assert_eq!(out.history.len(), 2);
    assert!(out.params.all_finite());
    assert_eq!(predict(&spec, &out.params, &ds).unwrap().len(), 128);
}

#[test]
fn benchmark_is_training_frequencies() {
    let spec = ModelSpec::new(Family::Benchmark, Level::L2, Head::Single, Dims::default()).unwrap();
    let mut ds = Dataset::new(vec![1], 1);
    for y in [0u8, 1, 1, 2, 1, 0, 1, 1, 2, 1] {
        ds.push(&[0.0], &[y]);
    }
    let out = train_model::<f64>(&spec, &ds, &ds, &TrainConfig::default()).unwrap();
    assert_eq!(out.params.params[0].data, vec![0.2, 0.6, 0.2]);
    assert!(!out.degenerate);

    let mut balanced = Dataset::new(vec![1], 1);
    for y in [0u8, 1, 2, 2, 1, 0] {
        balanced.push(&[0.0], &[y]);
    }
    let fit = train_model::<f64>(&spec, &balanced, &balanced, &TrainConfig::default()).unwrap();
    let mut skewed = Dataset::new(vec![1], 1);
    for y in [2u8, 2, 2, 2, 0] {
        skewed.push(&[0.0], &[y]);
    }
    assert!((evaluate(&spec, &fit.params, &skewed).unwrap() - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn checkpoint_and_history_files() {
    let spec = volume_spec();
    let train = separable(48, 7);
    let out = train_model::<f32>(&spec, &train, &train, &config(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ck = Checkpoint::new(spec, 5, out.best_epoch, &out.params);
    let path = dir.path().join("model.lobm");
    ck.write(&path).unwrap();
    let back = Checkpoint::read(&path).unwrap();
    assert_eq!(back.params, out.params);
    assert_eq!(back.header.spec, spec);
    let hist = dir.path().join("history.csv");
    write_history(&hist, &out.history).unwrap();
    let text = std::fs::read_to_string(hist).unwrap();
    assert!(text.starts_with("epoch,train_loss,val_loss,best"));
    assert_eq!(text.lines().count(), 3);
}
