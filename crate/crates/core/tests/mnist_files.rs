use std::path::PathBuf;

use sbnn::data::{load_idx, Dataset, IdxKind, Split, CLASSES, PIXELS};

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    if dir.join(Split::Test.file_names().0).is_file() {
        Some(dir)
    } else {
        eprintln!("MNIST not found at {}; skipping", dir.display());
        None
    }
}

#[test]
fn official_files_have_expected_sizes() {
    let Some(dir) = mnist_dir() else { return };
    let labels = load_idx(dir.join("t10k-labels-idx1-ubyte"), IdxKind::Labels).unwrap();
    assert_eq!(labels.dims, vec![10_000]);
    assert_eq!(labels.data.len(), 10_000);

    let images = load_idx(dir.join("train-images-idx3-ubyte"), IdxKind::Images).unwrap();
    assert_eq!(images.dims, vec![60_000, 28, 28]);
    assert_eq!(images.data.len(), 47_040_000);
    assert_eq!(images.data.len(), images.dims.iter().product::<usize>());
}

#[test]
fn datasets_load_and_normalize() {
    let Some(dir) = mnist_dir() else { return };
    for split in [Split::Train, Split::Test] {
        let ds = Dataset::load(&dir, split).unwrap();
        assert_eq!(ds.len(), split.expected_len());
        assert_eq!(ds.width(), PIXELS);
        assert!(ds.labels().iter().all(|&l| usize::from(l) < CLASSES));
        let x = ds.gather::<f32>(&[0, 1, 2]);
        assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(x.iter().any(|&v| v == 1.0));
    }
}
