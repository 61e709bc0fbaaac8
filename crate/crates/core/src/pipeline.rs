//! End-to-end runs on the synthetic benchmark: generate a domain pair, train
//! a vendor model, adapt it, and measure everything.

use serde::{Deserialize, Serialize};

use crate::client::{adapt_with, AdaptConfig, Adaptation};
use crate::data::{generate_pair, DomainPair, DomainTransform, LabeledSet, ShiftSpec, UnlabeledSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, precision_at_percentile, proxy_a_distance, truth_from_ids, EvalReport, OpenSetLabel, PrecisionPoint};
use crate::inheritability::{model_inheritability, ordering_diagnostic, OrderingDiagnostic};
use crate::model::InheritableModel;
use crate::numcore::{Matrix, Rng};
use crate::vendor::{train_vendor, VendorConfig, VendorRun};

/// Percentiles reported in precision curves.
pub const CURVE_PERCENTILES: [f64; 10] = [5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 70.0, 85.0, 100.0];

/// Data, vendor and client settings for one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: ShiftSpec,
    pub vendor: VendorConfig,
    pub adapt: AdaptConfig,
}

impl PipelineConfig {
    /// The same settings with every stage reseeded from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.data.seed = seed;
        cfg.vendor.seed = seed;
        cfg.adapt.seed = seed;
        cfg
    }
}

/// Target rows split by ground truth.
#[derive(Debug, Clone)]
pub struct TargetSplit {
    pub shared: UnlabeledSet,
    pub unknown: UnlabeledSet,
}

/// Splits target rows into shared-class and unknown-class rows.
pub fn split_target(target: &UnlabeledSet, truth: &[OpenSetLabel]) -> TargetSplit {
    let pick = |want_unknown: bool| {
        let idx: Vec<usize> = (0..truth.len())
            .filter(|&i| (truth[i] == OpenSetLabel::Unknown) == want_unknown)
            .collect();
        UnlabeledSet::new(target.features.select_rows(&idx))
    };
    TargetSplit {
        shared: pick(false),
        unknown: pick(true),
    }
}

/// Pre-classifier discrepancy between source rows and target rows, measured
/// with the vendor extractor before adaptation and the adapted extractor
/// after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PadComparison {
    pub shared_before: f64,
    pub shared_after: f64,
    pub unknown_before: f64,
    pub unknown_after: f64,
}

/// Measures PAD between source rows and the shared / unknown target rows,
/// both embedded by the same extractor: `F_s` before adaptation, `F_t`
/// after. Before and after use the same discriminator split.
pub fn pad_comparison(
    vendor: &InheritableModel,
    adapted: &InheritableModel,
    source: &Matrix,
    split: &TargetSplit,
    seed: u64,
) -> Result<PadComparison> {
    let pad = |model: &InheritableModel, x: &Matrix, stream: u64| -> Result<f64> {
        proxy_a_distance(&model.embed(source)?, &model.embed(x)?, &mut Rng::new(seed).fork(stream))
    };
    Ok(PadComparison {
        shared_before: pad(vendor, &split.shared.features, 1)?,
        shared_after: pad(adapted, &split.shared.features, 1)?,
        unknown_before: pad(vendor, &split.unknown.features, 2)?,
        unknown_after: pad(adapted, &split.unknown.features, 2)?,
    })
}

/// Everything measured in one run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub pair: DomainPair,
    pub truth: Vec<OpenSetLabel>,
    pub vendor: VendorRun,
    pub adaptation: Adaptation,
    pub source_only: EvalReport,
    pub adapted: EvalReport,
    pub ordering: OrderingDiagnostic,
    pub inheritability: f64,
    pub curve_before: Vec<PrecisionPoint>,
    pub curve_after: Vec<PrecisionPoint>,
}

impl RunOutcome {
    /// Precision at `percentile` on the given curve.
    pub fn precision(curve: &[PrecisionPoint], percentile: f64) -> Option<f64> {
        curve.iter().find(|p| p.percentile == percentile).and_then(|p| p.precision)
    }

    /// Summary fit for JSON output.
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            source_only: self.source_only.clone(),
            adapted: self.adapted.clone(),
            ordering: [self.ordering.source, self.ordering.shared, self.ordering.unknown],
            inheritability: self.inheritability,
            source_mean_w: self.vendor.model.source_mean_w,
            pseudo_labels: self.adaptation.pseudo.len(),
            curve_before: self.curve_before.clone(),
            curve_after: self.curve_after.clone(),
        }
    }
}

/// Serializable digest of a [`RunOutcome`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub source_only: EvalReport,
    pub adapted: EvalReport,
    /// Mean `w` over source, target-shared and target-unknown rows.
    pub ordering: [f64; 3],
    pub inheritability: f64,
    pub source_mean_w: f64,
    pub pseudo_labels: usize,
    pub curve_before: Vec<PrecisionPoint>,
    pub curve_after: Vec<PrecisionPoint>,
}

/// Adapts `model` to `pair` and measures the result.
pub fn adapt_and_measure(pair: DomainPair, vendor: VendorRun, adapt_cfg: &AdaptConfig, openness: f64) -> Result<RunOutcome> {
    let model = &vendor.model;
    let truth = truth_from_ids(&pair.target_labels, &model.shared_labels);
    let split = split_target(&pair.target, &truth);
    if split.shared.is_empty() || split.unknown.is_empty() {
        return Err(Error::input("benchmark target needs both shared and unknown rows"));
    }
    let ordering = ordering_diagnostic(model, &pair.source, &split.shared, &split.unknown)?;
    let inheritability = model_inheritability(model, &pair.target)?;
    let mut source_only = evaluate_model(model, &pair.target.features, &truth)?;
    source_only.openness = Some(openness);
    let curve_before = precision_at_percentile(model, &pair.target.features, &truth, &CURVE_PERCENTILES)?;

    let adaptation = adapt_with(model, &pair.target, adapt_cfg, Some(&truth), &mut |_, _| {})?;
    let adapted_model = &adaptation.model.adapted;
    let mut adapted = evaluate_model(adapted_model, &pair.target.features, &truth)?;
    adapted.openness = Some(openness);
    let curve_after = precision_at_percentile(adapted_model, &pair.target.features, &truth, &CURVE_PERCENTILES)?;

    Ok(RunOutcome {
        pair,
        truth,
        vendor,
        adaptation,
        source_only,
        adapted,
        ordering,
        inheritability,
        curve_before,
        curve_after,
    })
}

/// Generates data, trains the vendor model, adapts and measures.
pub fn run(cfg: &PipelineConfig) -> Result<RunOutcome> {
    let pair = generate_pair(&cfg.data)?;
    let vendor = train_vendor(&pair.source, &cfg.vendor)?;
    adapt_and_measure(pair, vendor, &cfg.adapt, cfg.data.openness())
}

/// The source set moved by `amount` along the unit diagonal.
pub fn translated_source(source: &LabeledSet, amount: f64) -> LabeledSet {
    let shift = DomainTransform::diagonal_shift(source.dims(), amount);
    LabeledSet {
        features: shift.apply(&source.features),
        ..source.clone()
    }
}

/// Median of a nonempty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Which hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Number of negative classes.
    K,
    /// Splice percent.
    D,
    /// Pseudo-label percent.
    PseudoK,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K => "K",
            SweepParam::D => "d",
            SweepParam::PseudoK => "k",
        }
    }

    pub fn apply(self, cfg: &PipelineConfig, value: f64) -> Result<PipelineConfig> {
        let mut out = cfg.clone();
        match self {
            SweepParam::K => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::input(format!("K must be a positive integer, got {value}")));
                }
                out.vendor.k = Some(value as usize);
            }
            SweepParam::D => out.vendor.d_percent = value,
            SweepParam::PseudoK => out.adapt.k_percent = value,
        }
        Ok(out)
    }
}

/// One row of a sweep CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub seed: u64,
    pub source_only_os: f64,
    pub os: f64,
    pub os_star: f64,
    pub inheritability: f64,
}

/// Runs the pipeline for every `(value, seed)` pair.
pub fn sweep(
    base: &PipelineConfig,
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
    on_row: &mut dyn FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len() * seeds.len());
    for &value in values {
        for &seed in seeds {
            let cfg = param.apply(&base.with_seed(seed), value)?;
            let out = run(&cfg)?;
            let row = SweepRow {
                param,
                value,
                seed,
                source_only_os: out.source_only.os,
                os: out.adapted.os,
                os_star: out.adapted.os_star,
                inheritability: out.inheritability,
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Sweep rows as CSV text.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("param,value,seed,source_only_os,os,os_star,inheritability\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{},{:?},{:?},{:?},{:?}\n",
            r.param.name(),
            r.value,
            r.seed,
            r.source_only_os,
            r.os,
            r.os_star,
            r.inheritability
        ));
    }
    out
}
