//! Width- and depth-scaled learning rates for SGD and Adam.

use attnscale::optim::{scaled_lr, OptimizerKind};

fn main() {
    println!("{:>6} {:>4} {:>4} {:>6} {:>14} {:>14}", "N", "H", "L", "alpha_l", "sgd", "adam");
    for n in [16, 64, 256] {
        for heads in [1, 4] {
            for depth in [2, 8] {
                for alpha_l in [0.5, 1.0] {
                    println!(
                        "{n:>6} {heads:>4} {depth:>4} {alpha_l:>7} {:>14.6e} {:>14.6e}",
                        scaled_lr(OptimizerKind::Sgd, 0.1, n, heads, depth, alpha_l),
                        scaled_lr(OptimizerKind::Adam, 0.1, n, heads, depth, alpha_l),
                    );
                }
            }
        }
    }
}
