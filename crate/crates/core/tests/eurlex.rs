//! Checks against the public Eurlex-4K files, when `XMC_EURLEX4K_DIR` points at them.

use std::path::PathBuf;

use xmc_core::dataset::load_xmc_text;

fn data_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("XMC_EURLEX4K_DIR").map(PathBuf::from);
    if dir.is_none() {
        eprintln!("XMC_EURLEX4K_DIR not set; Eurlex-4K checks skipped");
    }
    dir
}

#[test]
fn training_file_shape() {
    let Some(dir) = data_dir() else { return };
    let train = load_xmc_text(dir.join("train.txt")).unwrap();
    assert_eq!(train.n_instances(), 15449);
    assert_eq!(train.n_features(), 186104);
    assert_eq!(train.n_labels(), 3956);
}
