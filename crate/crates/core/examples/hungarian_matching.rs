//! Set-prediction matching: Hungarian assignment checked against brute
//! force, and the trajectory losses built on it.
//!
//! cargo run --example hungarian_matching

use ndarray::array;
use radarfuse::losses::{ade, brute_force_match, fde, focal_loss, hungarian_match};

fn main() {
    let cost = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0], [9.0, 9.0, 0.5]];
    let fast = hungarian_match(&cost).unwrap();
    let slow = brute_force_match(&cost);
    println!("hungarian {:?} cost {}", fast.pairs, fast.total_cost);
    println!("brute     {:?} cost {}", slow.pairs, slow.total_cost);

    let gt = [[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
    let pred = [[1.0, 0.5], [2.0, 0.5], [3.5, 0.5]];
    println!("ADE {:.3}  FDE {:.3}", ade(&pred, &gt).unwrap(), fde(&pred, &gt).unwrap());
    for p in [0.9, 0.5, 0.1] {
        println!("focal loss with p(positive) = {p}: {:.4}", focal_loss(&[p, 1.0 - p], 0, 2.0, 1.0).unwrap());
    }
}
