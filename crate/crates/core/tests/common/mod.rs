use std::path::PathBuf;

use gtl::experiments::{make_dataset, Dataset, DatasetSpec};

/// The bundled MNIST 0/1 fixture, `cap` training images per class.
pub fn mnist01(cap: usize) -> Dataset {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist01");
    let spec = DatasetSpec::MnistSubset {
        train_images: dir.join("train-images-idx3-ubyte"),
        train_labels: dir.join("train-labels-idx1-ubyte"),
        test_images: dir.join("t10k-images-idx3-ubyte"),
        test_labels: dir.join("t10k-labels-idx1-ubyte"),
        classes: vec![0, 1],
        cap_per_class: Some(cap),
        test_cap_per_class: None,
    };
    make_dataset(&spec, 0).unwrap()
}
