//! Times the data-term convolution kernels at benchmark geometry.

use std::time::Instant;

use deblur_core::nn::ops_bench::{conv_valid_bench, conv_valid_grads_bench};

fn main() {
    let (h, w, kh, kw) = (191, 191, 64, 64);
    let fwd = conv_valid_bench(h, w, kh, kw, 20);
    println!("conv_valid forward {fwd:.1} ms");
    let (gk, gx) = conv_valid_grads_bench(h, w, kh, kw, 20);
    println!("grad_k {gk:.1} ms, grad_x {gx:.1} ms");
    let t = Instant::now();
    let _ = t;
}
