//! Correlation and error metrics on a small prediction set.

use biqa::metrics::{average_ranks, krocc, plcc, srocc, MetricsReport};

fn main() -> biqa::Result<()> {
    let truth = [0.91, 0.75, 0.62, 0.40, 0.33, 0.12];
    let good = [0.88, 0.80, 0.55, 0.45, 0.20, 0.15];
    let monotone: Vec<f64> = truth.iter().map(|v: &f64| v.powi(3)).collect();

    println!(
        "good predictor\n{}\n",
        MetricsReport::compute(&truth, &good)?
    );
    println!(
        "cubed truth: plcc {:.4}, srocc {:.4}, krocc {:.4}",
        plcc(&truth, &monotone)?,
        srocc(&truth, &monotone)?,
        krocc(&truth, &monotone)?
    );
    println!(
        "average ranks of [3, 1, 3, 2]: {:?}",
        average_ranks(&[3.0, 1.0, 3.0, 2.0])
    );

    let constant = MetricsReport::compute(&truth, &[0.5; 6])?;
    println!("\nconstant predictor\n{constant}");
    println!("\n{}\n{}", MetricsReport::CSV_HEADER, constant.csv_row());
    Ok(())
}
