mod common;

#[test]
fn pipeline_gradients_match_central_differences() {
    let err = common::pipeline_grad_check(10, 1e-5, 11);
    assert!(err < 1e-4, "worst relative error {err:e}");
}
