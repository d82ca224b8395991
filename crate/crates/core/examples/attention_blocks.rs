//! Run both attention blocks on a random feature map and show what the
//! gates do to it.

use biqa::attention::{channel_hidden_width, ChannelAttention, SpatialAttention};
use biqa::autodiff::Tape;
use biqa::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> biqa::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (n, h, w, c) = (2, 6, 6, 16);
    let x = Tensor::new(
        vec![n, h, w, c],
        (0..n * h * w * c)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )?;

    let mut store = ParamStore::<f64>::new();
    let sa = SpatialAttention::register(&mut store, "sa", &mut rng)?;
    let ca = ChannelAttention::register(&mut store, "ca", c, &mut rng)?;

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let s = sa.forward(&mut tape, &store, xv)?;
    let y = ca.forward(&mut tape, &store, s)?;

    let out = tape.value(y);
    // each gate lies in (0, 1), so |y| <= |x| elementwise
    let ratios: Vec<f64> = x
        .data()
        .iter()
        .zip(out.data())
        .filter(|(a, _)| a.abs() > 1e-9)
        .map(|(a, b)| b / a)
        .collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    println!("input {:?} -> output {:?}", x.shape(), out.shape());
    println!("combined gate range [{lo:.4}, {hi:.4}]");
    println!(
        "parameters: {}",
        store.names().collect::<Vec<_>>().join(", ")
    );
    for ch in [1, 4, 8, 16, 64, 512] {
        println!("channels {ch:4} -> bottleneck {}", channel_hidden_width(ch));
    }
    Ok(())
}
