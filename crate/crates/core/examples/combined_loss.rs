//! The training objective and its gradient, minimized directly over a
//! vector of predictions.

use biqa::metrics::{combined_loss, plcc, LossConfig};

fn main() -> biqa::Result<()> {
    let truth: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
    let mut pred: Vec<f64> = (0..12)
        .map(|i| 0.5 + 0.3 * ((i * 7 % 12) as f64 / 11.0 - 0.5))
        .collect();
    let cfg = LossConfig::default();
    println!("lambda1 {} lambda2 {}", cfg.lambda1, cfg.lambda2);
    for step in 0..=200 {
        let (loss, grad) = combined_loss(&truth, &pred, &cfg)?;
        if step % 40 == 0 {
            println!(
                "step {step:3}  loss {loss:.5}  plcc {:.4}",
                plcc(&truth, &pred)?
            );
        }
        for (p, g) in pred.iter_mut().zip(&grad) {
            *p -= 0.02 * g;
        }
    }
    let (at_truth, _) = combined_loss(&truth, &truth, &cfg)?;
    println!("loss at a perfect prediction: {at_truth:.2e}");
    Ok(())
}
