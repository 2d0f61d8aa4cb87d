//! Builds a small expression on the tape, backpropagates and compares the
//! gradient with central differences.

use secaps::autograd::{finite_difference_check, Graph, Tensor};

fn main() -> secaps::Result<()> {
    let mut g = Graph::new();
    let x = g.param(Tensor::new([2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?);
    let w = g.param(Tensor::new([3, 1], vec![1.0, 0.5, -0.25])?);
    let h = g.matmul(x, w)?;
    let h = g.tanh(h)?;
    let p = g.softmax(h, 0)?;
    let loss = g.sum_all(p)?;
    let loss = g.log(loss)?;
    let first = g.slice(p, 0, 0, 1)?;
    let nll = g.log(first)?;
    let nll = g.neg(nll)?;
    let nll = g.sum_all(nll)?;
    let grads = g.backward(nll)?;
    println!("p = {:?}", g.value(p).data());
    println!("log sum p = {:.3e}", g.value(loss).item()?);
    println!("-log p0 = {:.6}", g.value(nll).item()?);
    println!("dw = {:?}", grads.get(w).map(|t| t.data().to_vec()));
    println!("dx = {:?}", grads.get(x).map(|t| t.data().to_vec()));

    // x -> sum(tanh(x)^2), checked numerically
    let report = finite_difference_check(
        |g, vars| {
            let t = g.tanh(vars[0])?;
            let sq = g.mul(t, t)?;
            g.sum_all(sq)
        },
        &[Tensor::new([4], vec![0.3, -1.2, 0.8, 2.0])?],
        1e-5,
    )?;
    println!("finite-difference max relative error {:.2e}", report);
    Ok(())
}
