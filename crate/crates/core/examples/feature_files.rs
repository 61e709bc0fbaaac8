//! Externally produced features: write a domain pair to CSV, read it back
//! and run the client steps on the loaded files.

use inheritable::data::{load_labeled, load_unlabeled, save_labeled, save_unlabeled};
use inheritable::eval::{evaluate_model, truth_from_ids};
use inheritable::{adapt, generate_pair, train_vendor, AdaptConfig, ShiftSpec, VendorConfig};

fn main() -> inheritable::Result<()> {
    let dir = std::env::temp_dir().join("inheritable-features");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let pair = generate_pair(&ShiftSpec {
        dims: 6,
        ..ShiftSpec::default()
    })?;
    save_labeled(&pair.source, dir.join("source.csv"))?;
    save_unlabeled(&pair.target, dir.join("target.csv"))?;
    save_labeled(&pair.target_labeled(), dir.join("target_labeled.csv"))?;

    let source = load_labeled(dir.join("source.csv"))?;
    let target = load_unlabeled(dir.join("target.csv"))?;
    let labeled = load_labeled(dir.join("target_labeled.csv"))?;
    assert_eq!(source, pair.source);

    let vendor = train_vendor(&source, &VendorConfig::default())?;
    let adapted = adapt(&vendor.model, &target, &AdaptConfig::default())?;
    let truth = truth_from_ids(&labeled.labels, &vendor.model.shared_labels);
    let report = evaluate_model(&adapted.model.adapted, &labeled.features, &truth)?;
    println!("files in {}", dir.display());
    println!("{report}");
    Ok(())
}
