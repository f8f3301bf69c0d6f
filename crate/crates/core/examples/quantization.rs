//! Byte quantization of grid values and the straight-through gradient.
//!
//! cargo run --example quantization

use rfbake::field::quantize::{decode_cell, encode_cell, grid_value, grid_value_grad, quantize_value};
use rfbake::field::QuantizationSpec;

fn main() {
    let spec = QuantizationSpec::default();
    let m = spec.m_for_channel(0);
    println!("density range [-{m}, {m}], appearance range [-{a}, {a}]", a = spec.m_for_channel(1));
    println!("{:>8} {:>6} {:>12} {:>12} {:>12}", "raw", "byte", "continuous", "quantized", "d/draw");
    for raw in [-6.0, -1.0, -0.01, 0.0, 0.3, 2.5, 8.0] {
        let b = encode_cell(raw);
        let q = grid_value(raw, m, true);
        assert_eq!(q, decode_cell(b, m));
        println!(
            "{raw:>8.2} {b:>6} {:>12.6} {q:>12.6} {:>12.6}",
            grid_value(raw, m, false),
            grid_value_grad(raw, m)
        );
    }
    let worst = (0..=10_000).map(|i| i as f64 / 10_000.0).map(|v| (quantize_value(v) - v).abs()).fold(0.0, f64::max);
    println!("max |q(v) - v| on [0, 1]: {worst:.6} (bound 1/510 = {:.6})", 1.0 / 510.0);
}
