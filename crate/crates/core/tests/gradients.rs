use kathleen::config::ModelConfig;
use kathleen::gradcheck::{self, Options, Status};

fn report(rows: &[gradcheck::Row]) -> String {
    rows.iter()
        .map(|r| {
            format!(
                "{:<40} {:>6} {:.3e} {}",
                r.name, r.elements, r.max_rel_err, r.status
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn every_primitive_matches_finite_differences() {
    let rows = gradcheck::check_ops(&Options::default());
    assert!(rows.iter().all(|r| r.passed()), "{}", report(&rows));
}

#[test]
fn stop_gradient_sites_match_hand_adjoints() {
    let rows = gradcheck::check_stop_gradients(&Options::default());
    assert!(
        rows.iter().all(|r| r.status == Status::AdjointPass),
        "{}",
        report(&rows)
    );
}

#[test]
fn tiny_model_matches_finite_differences() {
    let rows = gradcheck::check_model(&ModelConfig::tiny(), &Options::default());
    println!("{}", report(&rows));
    assert!(rows.iter().all(|r| r.passed()), "{}", report(&rows));
}

#[test]
fn corrupted_tensor_is_the_only_failure() {
    let opts = Options {
        corrupt: Some("reverb.w_gate".into()),
        ..Options::default()
    };
    let rows = gradcheck::check_model(&ModelConfig::tiny(), &opts);
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    assert_eq!(failed, vec!["reverb.w_gate"], "{}", report(&rows));
}
