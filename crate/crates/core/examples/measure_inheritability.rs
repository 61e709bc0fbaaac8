//! Client side model selection: score candidate vendor models on an
//! unlabeled target before adapting any of them.

use inheritable::data::DomainTransform;
use inheritable::eval::truth_from_ids;
use inheritable::inheritability::{instance_weight, model_inheritability, ordering_diagnostic, weight_histogram};
use inheritable::pipeline::{split_target, translated_source};
use inheritable::{generate_pair, train_vendor, ShiftSpec, VendorConfig};

fn main() -> inheritable::Result<()> {
    let spec = ShiftSpec {
        transform: DomainTransform::identity(),
        ..ShiftSpec::default()
    };
    let pair = generate_pair(&spec)?;
    let cfg = VendorConfig::default();

    let mut candidates = Vec::new();
    for shift in [0.0, 0.5, 1.5, 3.0] {
        let vendor = train_vendor(&translated_source(&pair.source, shift), &cfg)?;
        let score = model_inheritability(&vendor.model, &pair.target)?;
        candidates.push((shift, score, vendor.model));
    }
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("source shift  inheritability");
    for (shift, score, _) in &candidates {
        println!("{shift:>12.1}  {score:.4}");
    }

    let best = &candidates[0].2;
    let truth = truth_from_ids(&pair.target_labels, &best.shared_labels);
    let split = split_target(&pair.target, &truth);
    let d = ordering_diagnostic(best, &pair.source, &split.shared, &split.unknown)?;
    println!("\nmean w  source {:.3}  target-shared {:.3}  target-unknown {:.3}", d.source, d.shared, d.unknown);

    for (name, set) in [("shared", &split.shared), ("unknown", &split.unknown)] {
        let hist = weight_histogram(&instance_weight(best, &set.features)?, 10);
        let bars: Vec<String> = hist.iter().map(|b| b.count.to_string()).collect();
        println!("w histogram {name:<7} [{}]", bars.join(" "));
    }
    Ok(())
}
