//! Trains the reference classifiers on the default synthetic identity set
//! and prints the calibration record kept in `tests/fixtures`.
//!
//!     cargo run --release --example calibrate_synth > tests/fixtures/synth_calibration.json

use facenas_core::data::{baseline_accuracy, synth_identity_dataset, BaselineConfig, BaselineModel, SynthParams};
use serde_json::json;

fn main() -> facenas_core::Result<()> {
    let (classes, per_class, size, seed) = (10, 200, 32, 7);
    let data = synth_identity_dataset(classes, per_class, size, seed)?;
    let cfg = BaselineConfig::default();
    let linear = baseline_accuracy(BaselineModel::Linear, &data, &data.test, &cfg)?;
    eprintln!("linear: {linear}");
    let cnn = baseline_accuracy(BaselineModel::SmallCnn, &data, &data.test, &cfg)?;
    eprintln!("small cnn: {cnn}");
    let record = json!({
        "n_classes": classes,
        "per_class": per_class,
        "image_size": size,
        "seed": seed,
        "generator": SynthParams::default(),
        "trainer": cfg,
        "linear_test_accuracy": linear,
        "small_cnn_test_accuracy": cnn,
    });
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(())
}
