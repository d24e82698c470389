use std::path::PathBuf;

use sbnn::checkpoint::save_checkpoint;
use sbnn::data::{Dataset, Split};
use sbnn::train::{init_network, train, InitMode, SupportMode, TrainingConfig};
use sbnn::{Network32, NetworkSpec};

fn mnist(split: Split, n: usize) -> Option<Dataset> {
    let dir = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    match Dataset::load(&dir, split) {
        Ok(ds) => Some(ds.subset(n)),
        Err(e) => {
            eprintln!("MNIST unavailable ({e}); skipping");
            None
        }
    }
}

fn spec(p: usize) -> NetworkSpec {
    NetworkSpec::uniform(&[784, 256, 256, 256, 10], p).with_fan_in_scaling(true)
}

#[test]
fn small_subset_overfits_at_p2() {
    let (Some(tr), Some(te)) = (mnist(Split::Train, 200), mnist(Split::Test, 200)) else { return };
    let cfg = TrainingConfig {
        epochs: 20,
        ..TrainingConfig::default()
    };
    let net = init_network::<f32>(&spec(2), &cfg).unwrap();
    let (_, recs) = train(net, &tr, &te, &cfg).unwrap();
    let last = recs.last().unwrap();
    assert!(last.train_acc >= 0.95, "{last:?}");
}

#[test]
fn pretrained_support_learning_keeps_weights_frozen() {
    let (Some(tr), Some(te)) = (mnist(Split::Train, 300), mnist(Split::Test, 300)) else { return };
    let base_cfg = TrainingConfig {
        epochs: 2,
        supports: SupportMode::Fixed,
        ..TrainingConfig::default()
    };
    let base = init_network::<f32>(&spec(16), &base_cfg).unwrap();
    let (base, _) = train(base, &tr, &te, &base_cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plain.sbnn");
    save_checkpoint(&base, &path).unwrap();

    let cfg = TrainingConfig {
        epochs: 3,
        init: InitMode::Pretrained(path),
        ..TrainingConfig::default()
    };
    let start: Network32 = init_network(&spec(16), &cfg).unwrap();
    let (tuned, _) = train(start, &tr, &te, &cfg).unwrap();
    for (before, after) in base.layers().iter().zip(tuned.layers()) {
        assert_eq!(before.weights(), after.weights());
        assert_eq!(before.binary(), after.binary());
        assert_ne!(before.supports_a(), after.supports_a());
    }
}

#[test]
fn p2_training_loss_tracks_larger_blocks() {
    let (Some(tr), Some(te)) = (mnist(Split::Train, 1000), mnist(Split::Test, 100)) else { return };
    let cfg = TrainingConfig {
        epochs: 5,
        ..TrainingConfig::default()
    };
    let final_loss = |p| {
        let net = init_network::<f32>(&spec(p), &cfg).unwrap();
        train(net, &tr, &te, &cfg).unwrap().1.last().unwrap().train_loss
    };
    let (l2, l16) = (final_loss(2), final_loss(16));
    assert!(l2 < l16, "p=2 loss {l2} vs p=16 loss {l16}");
}
