//! Source-free adaptation of a vendor model to an unlabeled target, with
//! held-out labels used only to print progress.

use inheritable::client::adapt_with;
use inheritable::eval::{evaluate_model, truth_from_ids};
use inheritable::{generate_pair, train_vendor, AdaptConfig, ShiftSpec, TargetModel, VendorConfig};

fn main() -> inheritable::Result<()> {
    let pair = generate_pair(&ShiftSpec::default())?;
    let vendor = train_vendor(&pair.source, &VendorConfig::default())?;
    let truth = truth_from_ids(&pair.target_labels, &vendor.model.shared_labels);

    let before = evaluate_model(&vendor.model, &pair.target.features, &truth)?;
    println!("source only   OS {:.4}  OS* {:.4}", before.os, before.os_star);

    let cfg = AdaptConfig::default();
    let out = adapt_with(&vendor.model, &pair.target, &cfg, Some(&truth), &mut |r, _| {
        println!(
            "epoch {:>2}  L_inh {:.4}  L_t1 {:.4}  L_t2 {:.4}  OS {:.4}",
            r.epoch + 1,
            r.inherit,
            r.separation,
            r.entropy,
            r.os.unwrap_or(f64::NAN)
        );
    })?;
    println!("{} pseudo-labels fixed before training", out.pseudo.len());

    let target_model: TargetModel = out.model;
    let after = evaluate_model(&target_model.adapted, &pair.target.features, &truth)?;
    println!("adapted       OS {:.4}  OS* {:.4}", after.os, after.os_star);

    let preds = target_model.infer(&pair.target.features.select_rows(&[0, 1, 2, 1599]))?;
    println!("first rows -> {preds:?}");
    Ok(())
}
