//! Generate a seeded phantom dataset with a train/val/test manifest.

use dosekit::phantom::{generate_dataset, DatasetManifest, SplitName, MANIFEST_FILE};

fn main() -> dosekit::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| dosekit::Error::io("tempdir", e))?;
    let manifest = generate_dataset(12, 500, [16; 3], None, dir.path())?;
    println!("split {:?}", manifest.split);
    let again = DatasetManifest::read(dir.path().join(MANIFEST_FILE))?;
    for split in [SplitName::Train, SplitName::Val, SplitName::Test] {
        let ids: Vec<&str> = again.entries(split).map(|e| e.case_id.as_str()).collect();
        println!("  {split:?}: {}", ids.join(" "));
    }
    Ok(())
}
