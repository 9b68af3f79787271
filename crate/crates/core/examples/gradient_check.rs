//! Builds a tiny graph through the autodiff tape and compares its analytic
//! gradients with finite differences.

use coupa::gradcheck::{check_gradients, GradCheck};
use coupa::nn::{Constraint, Graph, ParamStore, Tensor};

fn main() -> coupa::Result<()> {
    let mut params = ParamStore::new();
    let w = params.insert("w", Tensor::matrix(3, 2, vec![0.5, -0.3, 0.8, 0.1, -0.6, 0.4]), Constraint::Free);
    let b = params.insert("b", Tensor::matrix(1, 2, vec![0.1, -0.2]), Constraint::Free);
    let x = Tensor::matrix(2, 3, vec![1.0, 2.0, -1.0, 0.5, -0.5, 0.3]);

    let loss = |p: &ParamStore, grads: Option<&mut coupa::nn::Gradients>| -> coupa::Result<f64> {
        let mut g = Graph::new(p);
        let xn = g.input(x.clone());
        let h = g.dense(xn, w, Some(b));
        let h = g.tanh(h);
        let logits = g.softmax(h);
        let first = g.pick(logits, 0);
        let out = g.bce_logits(first, 1.0);
        let value = g.value(out).item();
        if let Some(grads) = grads {
            g.backward(out, grads)?;
        }
        Ok(value)
    };

    let mut grads = params.zero_gradients();
    let value = loss(&params, Some(&mut grads))?;
    println!("loss {value:.6}");
    for (id, p) in params.iter() {
        println!("∂/∂{} = {:?}", p.name, grads.get(id).data());
    }
    let report = check_gradients(&params, &grads, |p| loss(p, None), &GradCheck::default())?;
    println!("{} entries checked, max relative error {:.2e}", report.checked, report.max_error);
    Ok(())
}
