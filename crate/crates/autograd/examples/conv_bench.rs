use ndarray::{ArrayD, IxDyn};
use sfd_autograd::{conv2d, Tape};
use std::time::Instant;

fn main() {
    for &(n, c, h, co) in &[(4usize, 64usize, 16usize, 16usize), (4, 32, 32, 32), (4, 32, 64, 32)] {
        let x = ArrayD::from_elem(IxDyn(&[n, c, h, h]), 0.1);
        let w = ArrayD::from_elem(IxDyn(&[co, c, 3, 3]), 0.01);
        let t0 = Instant::now();
        let reps = 10;
        for _ in 0..reps {
            let tape = Tape::new();
            let xv = tape.param(x.clone());
            let wv = tape.param(w.clone());
            let y = conv2d(xv, wv, None, 1, 1).sum_all();
            tape.backward(y);
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        let flops = 2.0 * 3.0 * (n * co * h * h * c * 9) as f64;
        println!("n{n} c{c} h{h} co{co}: {:.2} ms, {:.2} GFLOP/s", dt * 1e3, flops / dt / 1e9);
    }
}
