//! Sensitivity of the full pipeline to the number of negative classes, the
//! splice percent and the pseudo-label percent.
//!
//! ```text
//! cargo run --release --example sensitivity_sweep -- 3
//! ```

use inheritable::pipeline::{median, sweep, PipelineConfig, SweepParam};

fn main() -> inheritable::Result<()> {
    let n_seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let base = PipelineConfig::default();

    let grid: [(SweepParam, &[f64]); 3] = [
        (SweepParam::K, &[1.0, 4.0, 16.0, 32.0]),
        (SweepParam::D, &[5.0, 15.0, 50.0]),
        (SweepParam::PseudoK, &[5.0, 15.0, 40.0]),
    ];
    for (param, values) in grid {
        let rows = sweep(&base, param, values, &seeds, &mut |_| {})?;
        for &v in values {
            let os: Vec<f64> = rows.iter().filter(|r| r.value == v).map(|r| r.os).collect();
            let inh: Vec<f64> = rows.iter().filter(|r| r.value == v).map(|r| r.inheritability).collect();
            println!("{} = {v:<4}  median OS {:.4}  median I {:.4}", param.name(), median(&os), median(&inh));
        }
    }
    Ok(())
}
