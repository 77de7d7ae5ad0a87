//! Recording a computation on a tape, pulling gradients back out, and
//! checking them against central differences.

use topofield::autodiff::{finite_difference_gradient, ParamStore, Tape, Tensor};

fn main() -> topofield::Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![2, 3], vec![0.1, -0.4, 0.9, 1.2, 0.0, -0.7])?);
    let w = tape.leaf(&Tensor::new(vec![3, 1], vec![0.5, -1.0, 0.25])?);

    // y = mean(tanh(x·w)²)
    let h = tape.matmul(&x, &w)?;
    let h = tape.tanh(&h);
    let sq = tape.square(&h);
    let y = tape.mean(&sq)?;
    println!("y = {:.6}", y.item());

    let grads = tape.backward(&y)?;
    println!("dy/dw = {:?}", grads.get(&w).unwrap());

    // the same function over a parameter store, differentiated numerically
    let mut store = ParamStore::new();
    store.insert("w", Tensor::new(vec![3, 1], vec![0.5, -1.0, 0.25])?)?;
    let xv = x.detach();
    let fd = finite_difference_gradient(
        |p| {
            let mut t = Tape::inference();
            let h = t.matmul(&xv, p.value("w")).unwrap();
            let h = t.tanh(&h);
            let sq = t.square(&h);
            t.mean(&sq).unwrap().item()
        },
        &store,
        1e-5,
    )?;
    println!("numeric  = {:?}", fd["w"]);

    // inference tapes record nothing
    let mut t = Tape::inference();
    let z = t.sin(&xv);
    println!("inference output {:?}, tape nodes {}", z.shape(), t.len());
    Ok(())
}
