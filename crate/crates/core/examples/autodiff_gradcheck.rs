//! Reverse-mode gradients through a conv + relu + DMOL likelihood, checked
//! against central differences.

use mspc::dmol;
use mspc::tensor::{Shape, Tape, Tensor};

fn loss(w: &Tensor<f64>) -> (f64, Tensor<f64>) {
    let x = Tensor::from_vec(Shape::new(1, 2, 3, 3), (0..18).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let q = dmol::params_per_pixel(1);
    let mut tape = Tape::new();
    let x = tape.constant(x);
    let wv = tape.param(w.clone());
    let b = tape.constant(Tensor::zeros(Shape::new(1, q, 1, 1)));
    let h = tape.conv2d(x, wv, b, 1).unwrap();
    let h = tape.leaky_relu(h, 0.1).unwrap();
    let targets: Vec<u8> = (0..27).map(|i| (i * 37 % 256) as u8).collect();
    let nll = tape.dmol_nll(h, 1, &targets, &[true; 9]).unwrap();
    let value = tape.value(nll).data()[0];
    let grads = tape.backward(nll).unwrap();
    (value, grads.get_or_zeros(wv, w.shape()))
}

fn main() {
    let q = dmol::params_per_pixel(1);
    let shape = Shape::new(q, 2, 3, 3);
    let w = Tensor::from_vec(shape, (0..shape.numel()).map(|i| 0.3 * ((i * 7919) as f64).cos()).collect()).unwrap();
    let (value, grad) = loss(&w);
    println!("nll {value:.6} bits");
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in (0..shape.numel()).step_by(11) {
        let mut up = w.clone();
        up.data_mut()[i] += h;
        let mut down = w.clone();
        down.data_mut()[i] -= h;
        let numeric = (loss(&up).0 - loss(&down).0) / (2.0 * h);
        let analytic = grad.data()[i];
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3));
        println!("w[{i:>3}] analytic {analytic:>12.6} numeric {numeric:>12.6}");
    }
    println!("max relative error {worst:.2e}");
}
