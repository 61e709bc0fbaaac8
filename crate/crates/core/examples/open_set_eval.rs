//! Open-set metrics: OS / OS*, the confusion table, pseudo-label precision
//! curves and PAD in the pre-classifier space.

use inheritable::eval::{write_precision_curves, EvalReport};
use inheritable::pipeline::{pad_comparison, run, split_target, PipelineConfig};

fn main() -> inheritable::Result<()> {
    let out = run(&PipelineConfig::default())?;

    println!("before adaptation\n{}", out.source_only);
    println!("after adaptation\n{}", out.adapted);

    println!("percentile  precision before  after");
    for (b, a) in out.curve_before.iter().zip(&out.curve_after) {
        let show = |p: Option<f64>| p.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{:>10}  {:>16}  {:>5}", b.percentile, show(b.precision), show(a.precision));
    }
    let path = std::env::temp_dir().join("precision_curves.csv");
    write_precision_curves(&[("before", &out.curve_before), ("after", &out.curve_after)], &path)?;
    println!("curves written to {}", path.display());

    let split = split_target(&out.pair.target, &out.truth);
    let pad = pad_comparison(&out.vendor.model, &out.adaptation.model.adapted, &out.pair.source.features, &split, 0)?;
    println!(
        "PAD source vs target-shared {:.3} -> {:.3}, vs target-unknown {:.3} -> {:.3}",
        pad.shared_before, pad.shared_after, pad.unknown_before, pad.unknown_after
    );

    let json = out.adapted.to_json();
    let back: EvalReport = serde_json::from_str(&json).expect("report parses");
    assert_eq!(back, out.adapted);
    Ok(())
}
