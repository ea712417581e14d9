//! The center-weighted regression loss field: raw distance-to-edge values and
//! their softmax normalization, for both weighting modes.

use tsmt::model::{raw_weight, WeightMatrix, WeightMode};

fn main() {
    for mode in [WeightMode::Pyramid, WeightMode::Cap2] {
        let wm = WeightMatrix::new(mode);
        let n = wm.side();
        let sum: f64 = wm.values().iter().sum();
        println!("{mode}: sum {sum:.15}, corner {:.3e}, center {:.3e}", wm.get(0, 0), wm.get(n / 2, n / 2));
        println!("  corner / center = {:.6e}", wm.get(0, 0) / wm.get(n / 2 - 1, n / 2 - 1));
        // raw values along the top-left to center diagonal
        let diagonal: Vec<String> = (0..n / 2).step_by(4).map(|i| format!("{}", raw_weight(i, i, mode))).collect();
        println!("  raw diagonal: {}", diagonal.join(" "));
    }
    println!("e^-23 = {:.6e}", (-23f64).exp());
}
