//! Feature splicing on a toy vector, then a full negative set built from a
//! pretrained backbone and clustered into negative classes.

use inheritable::negatives::{feature_splice, generate_negatives, splice_width};
use inheritable::numcore::Rng;
use inheritable::vendor::{pretrain, VendorConfig};
use inheritable::{generate_pair, InheritableModel, NetworkSpec, ShiftSpec};

fn main() -> inheritable::Result<()> {
    let u_i = [0.9, 0.1, 2.4, 0.0, 1.7, 0.3, 0.8, 3.1];
    let u_j = [-1.0; 8];
    for d in [15.0, 33.0, 50.0] {
        let spliced = feature_splice(&u_i, &u_j, d)?;
        println!("d = {d:>4}: replace {} coords -> {spliced:?}", splice_width(u_i.len(), d));
    }

    let pair = generate_pair(&ShiftSpec::default())?;
    let cfg = VendorConfig {
        pretrain_epochs: 10,
        ..VendorConfig::default()
    };
    let pre = pretrain(&pair.source, &cfg, &mut |_| {})?;
    let k = cfg.k_for(pre.num_shared());
    let spec = NetworkSpec {
        num_negative: k,
        ..NetworkSpec::with_defaults(pair.source.dims(), pre.num_shared(), k)
    };
    let mut model = InheritableModel::init(spec, pre.shared_labels.clone(), &mut Rng::new(1))?;
    model.backbone = pre.backbone;

    let negatives = generate_negatives(&model, &pair.source, pair.source.len(), cfg.d_percent, k, &mut Rng::new(2))?;
    let mut sizes = vec![0usize; k];
    for &y in &negatives.y_n {
        sizes[y] += 1;
    }
    println!(
        "{} negatives in {}-d splice space, {k} clusters, sizes {sizes:?}",
        negatives.len(),
        negatives.u_n.cols()
    );
    Ok(())
}
