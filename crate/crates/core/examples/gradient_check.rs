//! Compare tape gradients with central finite differences on a small network.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use fairaudit::nn::{Architecture, Network};
use fairaudit::tape::Tape;
use fairaudit::Tensor;

fn output(net: &Network, x: &[f64]) -> f64 {
    net.predict(x).unwrap()
}

fn main() {
    let arch = Architecture::Dense {
        hidden: vec![8, 8],
        outputs: 1,
        dropout: 0.0,
    };
    let net = Network::init(arch, 4, 42).unwrap();
    let x = [0.3, -1.2, 0.8, 2.0];

    let mut tape = Tape::new();
    let params = net.bind(&mut tape, true);
    let xv = tape.leaf(Tensor::new(vec![1, 4], x.to_vec()).unwrap(), true);
    let y = net.forward(&mut tape, &params, xv, None).unwrap();
    let total = tape.sum(y).unwrap();
    tape.backward(total).unwrap();
    let analytic = tape.grad(xv).unwrap().data().to_vec();

    println!("{:>4} {:>14} {:>14} {:>10}", "i", "tape", "numeric", "abs err");
    let h = 1e-6;
    for i in 0..x.len() {
        let (mut up, mut down) = (x, x);
        up[i] += h;
        down[i] -= h;
        let numeric = (output(&net, &up) - output(&net, &down)) / (2.0 * h);
        println!("{i:>4} {:>14.8} {:>14.8} {:>10.2e}", analytic[i], numeric, (analytic[i] - numeric).abs());
    }

    let first_layer = tape.grad(params[0]).unwrap();
    println!("fc1.weight gradient shape {:?}", first_layer.shape());
}
