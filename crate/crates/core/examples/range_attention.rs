//! Range-adaptive attention: how the distance penalty α shifts weight toward
//! nearby keys, and a finite-difference check of the analytic gradients.
//!
//! cargo run --example range_attention

use ndarray::{array, Array2};
use radarfuse::fusion::{attention_gradcheck, attention_weights, range_adaptive_attention, AttentionInputs};

fn main() {
    // One query at the origin, three keys with identical content at 2, 20 and 45 m.
    let inputs = AttentionInputs {
        queries: array![[1.0, 0.5]],
        keys: array![[1.0, 0.5], [1.0, 0.5], [1.0, 0.5]],
        values: array![[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]],
        query_positions: array![[0.0, 0.0, 0.0]],
        key_positions: array![[2.0, 0.0, 0.0], [20.0, 0.0, 0.0], [45.0, 0.0, 0.0]],
    };
    let r_max = 50.0;
    println!("weights for keys at 2 m, 20 m, 45 m:");
    for alpha in [0.0, 1.0, 5.0, 20.0] {
        let w = attention_weights(&inputs, alpha, r_max).unwrap();
        let out = range_adaptive_attention(&inputs, alpha, r_max).unwrap();
        println!(
            "  α = {alpha:>4}: [{:.3}, {:.3}, {:.3}]  output [{:+.3}, {:+.3}]",
            w[[0, 0]],
            w[[0, 1]],
            w[[0, 2]],
            out[[0, 0]],
            out[[0, 1]]
        );
    }

    let grad_out = Array2::from_elem((1, 2), 1.0);
    let check = attention_gradcheck(&inputs, 3.0, r_max, &grad_out, 1e-4).unwrap();
    println!(
        "max relative gradient error: q {:.1e}, k {:.1e}, v {:.1e}, α {:.1e}",
        check.queries, check.keys, check.values, check.alpha
    );
}
