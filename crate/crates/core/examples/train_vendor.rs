//! Vendor side: train an inheritable model on labeled source data and ship
//! it as a model file.
//!
//! ```text
//! cargo run --release --example train_vendor -- vendor.inhm
//! ```

use inheritable::model::{load_model, save_model};
use inheritable::vendor::{train_vendor_with, Phase};
use inheritable::{generate_pair, ShiftSpec, VendorConfig};

fn main() -> inheritable::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "vendor.inhm".into());
    let pair = generate_pair(&ShiftSpec::default())?;
    let cfg = VendorConfig::default();

    let run = train_vendor_with(&pair.source, &cfg, &mut |r| {
        if r.epoch % 10 == 9 {
            let phase = match r.phase {
                Phase::Pretrain => "pretrain",
                Phase::Finetune => "finetune",
            };
            println!(
                "{phase:<8} epoch {:>2}  loss {:.4}  acc {:.3}  mean w {:.3}",
                r.epoch + 1,
                r.loss,
                r.source_accuracy,
                r.mean_source_w
            );
        }
    })?;

    save_model(&run.model, &out)?;
    let back = load_model(&out)?;
    println!(
        "{out}: {} shared + {} negative classes, source mean w {:.4}, {} negatives used",
        back.num_shared(),
        back.num_negative(),
        back.source_mean_w,
        run.negatives.len()
    );
    Ok(())
}
