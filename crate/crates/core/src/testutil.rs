use std::collections::BTreeMap;

pub use crate::autodiff::gradcheck::{param_grad_errors, rand_tensor, weighted_sum};

pub fn assert_grads_close(errors: &BTreeMap<String, f64>, tol: f64) {
    assert!(!errors.is_empty(), "no parameters were checked");
    for (name, e) in errors {
        assert!(*e < tol, "{name}: relative gradient error {e}");
    }
}
