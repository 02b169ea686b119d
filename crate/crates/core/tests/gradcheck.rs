mod common;

use common::*;
use concept_core::model::Params;

#[test]
fn double_precision_gradients_match_finite_differences() {
    let model = gradcheck_model(5, 11);
    let batch = check_batch(5);
    let g = analytic_grads(&model, &batch, 1.0);
    let errs = max_relative_error(&model, &g, &batch, 1.0, 1e-4);
    for (name, e) in &errs {
        println!("{name}: {e:e}");
    }
    for (name, e) in &errs {
        assert!(*e < 1e-5, "{name}: relative error {e:e}");
    }
    assert_eq!(errs.len(), model.params().len());
}

#[test]
fn single_precision_gradients_match_finite_differences() {
    let model = gradcheck_model(5, 12);
    let batch = check_batch(5);
    let g = analytic_grads(&cast::<f32>(&model), &batch, 1.0);
    for (name, e) in max_relative_error(&model, &g, &batch, 1.0, 1e-4) {
        assert!(e < 1e-3, "{name}: relative error {e:e}");
    }
}

#[test]
fn zero_lambda_leaves_concept_head_without_gradient() {
    let model = gradcheck_model(5, 13);
    let batch = check_batch(5);
    let g = analytic_grads(&model, &batch, 0.0);
    for p in g.params().iter().filter(|p| p.name.starts_with("ecp.")) {
        assert!(p.data.iter().all(|&x| x == 0.0), "{}", p.name);
    }
    let errs = max_relative_error(&model, &g, &batch, 0.0, 1e-4);
    assert!(errs.iter().all(|(_, e)| *e < 1e-5));
}
