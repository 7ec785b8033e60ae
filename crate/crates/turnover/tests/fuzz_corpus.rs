//! Keeps the checked-in fuzz corpus seeds valid and regenerable.

use std::path::PathBuf;

use turnover::config::RunConfig;
use turnover::data::{write_cifar10_batch, write_idx_images, write_idx_labels};
use turnover::model_io::model_to_bytes;
use turnover::nn::{init_params, ModelConfig, Precision};

fn corpus_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus")
}

fn seed_files() -> Vec<(&'static str, &'static str, Vec<u8>)> {
    let pixels: Vec<f32> = (0..2 * 3 * 3).map(|i| (i % 7) as f32 / 6.0).collect();
    let idx_images = write_idx_images(2, 3, 3, &pixels);
    let idx_labels = write_idx_labels(&[3, 9]);
    let cifar = write_cifar10_batch(&[
        (1, vec![0.25; 3072]),
        (7, (0..3072).map(|i| (i % 256) as f32 / 255.0).collect()),
    ]);
    let config = b"# sample run config\n\
        dataset = synth-mnist\n\
        train_n = 100\n\
        epochs = 3\n\
        lr = 0.06\n\
        batch_size = 32\n\
        turnover = true\n\
        out_dir = /tmp/run\n"
        .to_vec();
    let scores = b"example_id,split,true_label,observed_label,corrupted,loss_unmuted,loss_muted,score\n\
        0,train,3,3,false,0.125,0.5,0.375\n\
        1,train,7,2,true,0.25,2.5,2.25\n\
        2,test,1,1,false,0.3,0.31,0.01\n"
        .to_vec();
    let subsets = b"tag,example_id\neasy,0\neasy,4\ndifficult,9\n".to_vec();
    let dynamics = b"epoch,subset,split,accuracy,loss\n\
        0,full,train,0.5,1.25\n\
        0,clean,train,0.6,1.0\n\
        1,full,train,0.75,0.5\n"
        .to_vec();
    let model_cfg = ModelConfig::mlp(4, 6, 3, 1, Precision::F32);
    let model = model_to_bytes(&init_params::<f32>(&model_cfg).unwrap());
    vec![
        ("fuzz_idx_images", "seed_images.idx", idx_images),
        ("fuzz_idx_labels", "seed_labels.idx", idx_labels),
        ("fuzz_cifar10", "seed_batch.bin", cifar),
        ("fuzz_config", "seed.conf", config),
        ("fuzz_scores_csv", "seed_scores.csv", scores),
        ("fuzz_subsets_csv", "seed_subsets.csv", subsets),
        ("fuzz_dynamics_csv", "seed_dynamics.csv", dynamics),
        ("fuzz_model_bin", "seed_model.bin", model),
    ]
}

#[test]
fn corpus_seeds_are_valid_inputs() {
    for (target, name, bytes) in seed_files() {
        let path = corpus_root().join(target).join(name);
        let on_disk = std::fs::read(&path)
            .unwrap_or_else(|_| panic!("missing corpus seed {}", path.display()));
        assert_eq!(on_disk, bytes, "corpus seed {target}/{name} drifted");
    }
    // Each seed must be accepted by its parser.
    assert!(turnover::data::parse_idx_images(&seed_files()[0].2).is_ok());
    assert!(turnover::data::parse_idx_labels(&seed_files()[1].2).is_ok());
    assert!(turnover::data::parse_cifar10(&seed_files()[2].2).is_ok());
    assert!(turnover::config::parse_config_str(std::str::from_utf8(&seed_files()[3].2).unwrap(), &[]).is_ok());
    assert!(turnover::report::parse_scores_csv(std::str::from_utf8(&seed_files()[4].2).unwrap()).is_ok());
    assert!(turnover::report::parse_subsets_csv(std::str::from_utf8(&seed_files()[5].2).unwrap()).is_ok());
    assert!(turnover::report::parse_dynamics_csv(std::str::from_utf8(&seed_files()[6].2).unwrap()).is_ok());
    assert!(turnover::model_io::parse_model(&seed_files()[7].2).is_ok());
    let _ = RunConfig::default();
}

/// `cargo test -p turnover --test fuzz_corpus -- --ignored regenerate`
#[test]
#[ignore]
fn regenerate_corpus_seeds() {
    for (target, name, bytes) in seed_files() {
        let dir = corpus_root().join(target);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}
