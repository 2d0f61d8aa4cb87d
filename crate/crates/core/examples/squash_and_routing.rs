//! Squashes a few vectors, routes random predictions and prints how the
//! couplings and the clustering objective evolve with more iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secaps::autograd::Tensor;
use secaps::capsule::{
    dynamic_route, routing_objective_trace, squash, transform_shared, CapsuleSet, RoutingObjectiveParams,
    SharedWeights,
};

fn main() -> secaps::Result<()> {
    for s in [vec![0.0, 0.0], vec![0.1, 0.0], vec![1.0, 1.0], vec![30.0, -40.0]] {
        let v = squash(&s);
        println!("squash({s:?}) = {v:.4?}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, m, p, d) = (6, 3, 4, 5);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let inputs = CapsuleSet::from_rows(&rows)?;
    let weights = SharedWeights::uniform(m, p, d, 0.5, &mut rng);
    let pred = transform_shared(&inputs, &weights)?;
    println!("predictions shape {:?}", pred.shape());

    for iters in [1, 3, 5] {
        let (v, state) = dynamic_route(&pred, iters)?;
        println!("r={iters} output norms {:.4?}", v.norms());
        println!("    couplings of input 0 {:.4?}", &state.couplings.data()[..m]);
    }
    let trace = routing_objective_trace(&pred, 6, RoutingObjectiveParams::default())?;
    println!("objective per iteration {trace:.5?}");

    // one output capsule: routing reduces to squash of the plain sum
    let single = Tensor::new([n, 1, p], pred.data()[..n * p].to_vec())?;
    let (v, _) = dynamic_route(&single, 4)?;
    println!("m=1 output {:.4?}", v.vector(0));
    Ok(())
}
