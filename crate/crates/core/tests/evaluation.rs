use std::sync::OnceLock;

use ugm_core::data::{SyntheticConfig, generate_synthetic};
use ugm_core::eval::{evaluate_sequential, evaluate_static};
use ugm_core::training::{Hyperparams, em_fit};
use ugm_core::{Dataset, ModelParams};

fn trained() -> &'static (Dataset, ModelParams) {
    static FIT: OnceLock<(Dataset, ModelParams)> = OnceLock::new();
    FIT.get_or_init(|| {
        let data = generate_synthetic(&SyntheticConfig::default()).unwrap().dataset;
        let fit = em_fit(&data, &Hyperparams::default()).unwrap();
        (data, fit.params)
    })
}

#[test]
fn entropy_starts_near_ln2_and_collapses() {
    let (d, m) = trained();
    let report = evaluate_sequential(d, m).unwrap();
    let first = report.curve_at(1).unwrap().mean_entropy;
    let ln2 = std::f64::consts::LN_2;
    assert!(first <= ln2 + 1e-12);
    // The generator splits users 50/50, so the learned prior is almost flat.
    assert!(ln2 - first < 1e-3, "{first}");
    for p in 3..=d.max_history_len() {
        let e = report.curve_at(p).unwrap().mean_entropy;
        assert!(e < 0.01, "position {p}: {e}");
    }
}

#[test]
fn static_mixture_is_no_better_than_picking_one_rule() {
    let (d, m) = trained();
    let report = evaluate_static(d, m).unwrap();
    // Argmax of a near 50/50 mixture of the max- and min-rule always lands on
    // one of the two extremes, which is right for exactly one half of users.
    assert!((report.accuracy - 0.5).abs() < 0.05, "{}", report.accuracy);
}

#[test]
fn adaptation_beats_the_static_mixture() {
    let (d, m) = trained();
    let seq = evaluate_sequential(d, m).unwrap();
    let stat = evaluate_static(d, m).unwrap();
    assert!(seq.accuracy > stat.accuracy + 0.3);
    let first_seq: Vec<i64> = seq.predictions.iter().filter(|p| p.position == 1).map(|p| p.predicted).collect();
    let first_stat: Vec<i64> = stat.predictions.iter().filter(|p| p.position == 1).map(|p| p.predicted).collect();
    assert_eq!(first_seq, first_stat);
}
