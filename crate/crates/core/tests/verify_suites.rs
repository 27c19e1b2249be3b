use convctc::layers::conv::{ConvGrads, ConvTape};
use convctc::layers::conv2d_backward;
use convctc::verify::{
    ctc_oracle_suite, gradcheck_suite, gradcheck_suite_with, shapes_suite, ORACLE_INSTANCES,
};
use convctc::{Result, Tensor};

#[test]
fn gradcheck_passes() {
    let report = gradcheck_suite(1).unwrap();
    println!("{report}");
    assert!(report.passed(), "{report}");
    assert!(report.checks > 1000);
}

fn negated_bias_term(
    tape: &ConvTape<f64>,
    w: &Tensor<f64>,
    g: &Tensor<f64>,
) -> Result<ConvGrads<f64>> {
    let mut grads = conv2d_backward(tape, w, g)?;
    grads.biases.scale(-1.0);
    Ok(grads)
}

#[test]
fn gradcheck_catches_corrupted_conv_backward() {
    let report = gradcheck_suite_with(1, negated_bias_term).unwrap();
    assert!(!report.passed());
    assert!(
        report.failures.iter().any(|f| f.contains("bias")),
        "{report}"
    );
}

#[test]
fn ctc_oracle_suite_passes() {
    let report = ctc_oracle_suite(2, ORACLE_INSTANCES).unwrap();
    println!("{report}");
    assert!(report.passed(), "{report}");
    assert_eq!(report.cases, ORACLE_INSTANCES);
}

#[test]
fn shapes_suite_passes() {
    let report = shapes_suite(3, &[1, 7, 40], 5).unwrap();
    println!("{report}");
    assert!(report.passed(), "{report}");
}
