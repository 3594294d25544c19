//! Shared fixtures for the benchmarks.

use embodiflow::generator::{Backbone, BackboneConfig};
use embodiflow::harness::TrainConfig;
use embodiflow::synthworld::{build_dataset, Dataset};

/// A small but complete configuration: 16 px, 8 frames, 4 seeds per cell.
pub fn small_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    for (k, v) in [
        ("frames", "8"),
        ("size", "16"),
        ("card_size", "16"),
        ("seeds_per_cell", "4"),
        ("val_fraction", "0.25"),
        ("test_fraction", "0.25"),
        ("enc_hidden", "32"),
        ("d_z", "16"),
        ("enc_heads", "2"),
        ("adapter_depth", "2"),
        ("lr", "1e-3"),
    ] {
        c.set(k, v).expect("valid override");
    }
    c
}

pub fn small_dataset(cfg: &TrainConfig) -> Dataset {
    build_dataset(&cfg.dataset_config()).expect("dataset builds")
}

/// Untrained but frozen backbone matching `cfg`.
pub fn frozen_backbone(cfg: &TrainConfig) -> Backbone {
    let mut b = Backbone::new(BackboneConfig::for_layout(&cfg.layout(), cfg.gen_hidden, cfg.gen_heads, 2, cfg.depth), cfg.seed);
    b.freeze();
    b
}
