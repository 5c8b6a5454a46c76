//! The shipped example configs parse, load their data and train a few steps.

use std::path::Path;

use gon::config::Config;
use gon::runner;

#[test]
fn example_configs_train_a_few_steps() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    // dataset paths in the examples are relative to the repository root
    std::env::set_current_dir(&root).unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut names: Vec<_> = std::fs::read_dir("configs").unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert_eq!(names.len(), 4);
    for path in names {
        let dir = out.path().join(path.file_stem().unwrap());
        let overrides = [
            "run.epochs=1".to_string(),
            "run.max_steps=2".to_string(),
            format!("output_dir={}", serde_json::Value::String(dir.to_string_lossy().into_owned())),
        ];
        let cfg = Config::load(&path, &overrides).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let run = runner::train(&cfg).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let last = run.history.last().unwrap();
        assert!(last.train_loss.is_finite() && last.val_loss.is_finite(), "{}", path.display());
        assert!(dir.join(runner::CHECKPOINT).exists());
    }
}
