//! Checks against real dataset files, active only when the data is present.
//! Point TURNOVER_MNIST_DIR at a directory holding the four standard IDX files
//! and run with `--ignored`.

use std::path::PathBuf;

use turnover::data::{load_idx, Split};

#[test]
#[ignore]
fn real_mnist_loads() {
    let Ok(dir) = std::env::var("TURNOVER_MNIST_DIR") else {
        eprintln!("TURNOVER_MNIST_DIR not set; skipping");
        return;
    };
    let dir = PathBuf::from(dir);
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        Split::Train,
    )
    .expect("load MNIST train");
    assert_eq!(train.len(), 60_000);
    assert_eq!(train.input_shape, vec![28 * 28]);
    train.check_invariants().unwrap();

    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        Split::Test,
    )
    .expect("load MNIST test");
    assert_eq!(test.len(), 10_000);
}
