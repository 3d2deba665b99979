#![allow(dead_code)]

use std::path::Path;

use cpac::config::RunConfig;
use cpac::data::{save_dataset, save_labels, sibling_labels_path, synth_blobs, DataFormat};
use cpac::pipeline::run_pretrain;
use tempfile::TempDir;

pub const N: usize = 60;

/// Pretrained tiny run on three 2×2 "image" blobs.
pub fn pretrained_run() -> (TempDir, RunConfig) {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_blobs(N, 4, 3, 10.0, 3).unwrap();
    let path = dir.path().join("blobs.csv");
    save_dataset(&path, &data, DataFormat::Csv).unwrap();
    save_labels(&sibling_labels_path(&path), data.labels().unwrap()).unwrap();
    let config = config_for(dir.path(), &path);
    run_pretrain(&config).unwrap();
    (dir, config)
}

pub fn config_for(root: &Path, data: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = 5;
    c.data = Some(data.to_path_buf());
    c.image_shape = Some((2, 2));
    c.output_dir = root.join("run");
    c.pretrain.hidden = vec![8, 4];
    c.pretrain.layerwise_epochs = 3;
    c.pretrain.finetune_epochs = 3;
    c.pretrain.batch_size = 16;
    c.pretrain.learning_rate = 1e-3;
    c.graph.k = 5;
    c.cluster.epochs = 2;
    c
}
