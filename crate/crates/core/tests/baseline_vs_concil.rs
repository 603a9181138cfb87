mod common;

use common::{joint_oracle, matmul, rows_of, run_concil};
use concil::engine::argmax;
use concil::harness::{generate_synthetic, slice_phase};
use concil::metrics::class_accuracy;
use concil::{BaselineState, CicilSchedule, EngineConfig, SplitConfig, SyntheticSpec};

fn desk_config() -> EngineConfig {
    EngineConfig {
        lambda1: 0.1,
        lambda2: 0.1,
        backbone_dim: 64,
        concept_dim: 64,
        ..EngineConfig::default()
    }
}

#[test]
fn baseline_collapses_on_old_classes_while_concil_matches_joint() {
    let spec = SyntheticSpec::default_benchmark();
    let table = generate_synthetic(&spec).unwrap();
    let schedule = CicilSchedule::build(spec.classes, spec.concepts, 0.5, 0.5, 2).unwrap();
    let split = SplitConfig::default();
    let (train0, test0) = slice_phase(&table, &schedule, 0, &split).unwrap();
    let (train1, _) = slice_phase(&table, &schedule, 1, &split).unwrap();
    let cfg = desk_config();

    let baseline = BaselineState::base_fit(&train0, &cfg).unwrap().phase_fit(&train1).unwrap();
    let batches = vec![train0, train1];
    let states = run_concil(&batches, &cfg);
    let concil = states.last().unwrap();

    let truth = test0.labels();
    let acc = |pred: Vec<u32>| class_accuracy(&pred, &truth).unwrap();
    let baseline_acc = acc(baseline.head().predict(test0.features()).unwrap().predicted_classes);
    let concil_acc = acc(concil.predict(test0.features()).unwrap().predicted_classes);

    // Joint oracle predictions, through the same fixed expansions.
    let oracle = joint_oracle(&batches, &states);
    let head = concil.head();
    let z = rows_of(&head.expand_features(test0.features()).unwrap());
    let l = head.concept_ids().len();
    let k = head.class_ids().len();
    let c_hat = concil::DenseMatrix::from_rows(&matmul(&z, &oracle.w_c, head.backbone_expansion().out_dim(), l));
    let c_star = rows_of(&head.concept_expansion().expand(&c_hat).unwrap());
    let scores = matmul(&c_star, &oracle.w_y, head.concept_expansion().out_dim(), k);
    let oracle_pred: Vec<u32> = scores.iter().map(|s| head.class_ids()[argmax(s)]).collect();
    let oracle_acc = acc(oracle_pred);

    let chance = 1.0 / k as f64;
    assert!(baseline_acc <= chance + 0.1, "baseline old-class accuracy {baseline_acc}");
    assert!((concil_acc - oracle_acc).abs() < 1e-6, "concil {concil_acc} vs joint {oracle_acc}");
    assert!(concil_acc > baseline_acc);
}
