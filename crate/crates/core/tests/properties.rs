use ibrkit::clustering::{assign, build_features, ClusterModel};
use ibrkit::dataset::{generate, log_space, read_csv_path, write_csv_path, GridSpec};
use ibrkit::fnn::{self, FnnModel, FnnSpec, TrainConfig};
use ibrkit::ibr::{
    equilibrium_residual, steady_state, AdmittanceModel, Catalog, OperatingPoint, EQUILIBRIUM_TOL,
};
use proptest::prelude::*;
use tempfile::TempDir;

fn feasible_op() -> impl Strategy<Value = OperatingPoint> {
    (0.9..=1.1f64, 0.0..=1.0f64, 0.0..std::f64::consts::TAU)
        .prop_map(|(v, s, th)| OperatingPoint::new(v, s * th.cos(), s * th.sin()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_device_has_a_consistent_equilibrium(op in feasible_op()) {
        for p in &Catalog::canonical().ibrs {
            let ss = steady_state(p, &op).unwrap();
            prop_assert!(equilibrium_residual(p, &op, &ss) < EQUILIBRIUM_TOL, "{} at {op}", p.name);
        }
    }

    #[test]
    fn admittance_is_finite_and_real_valued_in_time(op in feasible_op(), f in 1.0..=200.0f64) {
        for p in &Catalog::canonical().ibrs {
            let m = AdmittanceModel::new(p, &op).unwrap();
            let (pos, neg) = (m.at(f).unwrap(), m.at(-f).unwrap());
            prop_assert!(pos.is_finite());
            for (a, b) in pos.entries().iter().zip(neg.entries()) {
                prop_assert!((a.conj() - b).norm() <= 1e-12 * a.norm().max(1.0));
            }
        }
    }

    #[test]
    fn log_space_is_increasing_with_exact_ends(lo in 0.1..10.0f64, span in 1.5..100.0f64, n in 2usize..300) {
        let hi = lo * span;
        let g = log_space(lo, hi, n);
        prop_assert_eq!(g.len(), n);
        prop_assert_eq!((g[0], g[n - 1]), (lo, hi));
        prop_assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn dataset_csv_round_trip_is_bit_exact() {
    let dir = TempDir::new().unwrap();
    let catalog = Catalog::canonical();
    let samples = generate(
        &[catalog.get("GFMI2").unwrap().clone()],
        &GridSpec::training(),
    )
    .unwrap();
    let path = dir.path().join("gfmi2.csv");
    write_csv_path(&path, &samples).unwrap();
    let back = read_csv_path(&path).unwrap();
    assert_eq!(back.len(), samples.len());
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.ibr, b.ibr);
        assert_eq!(a.inputs().map(f64::to_bits), b.inputs().map(f64::to_bits));
        assert_eq!(a.y.map(f64::to_bits), b.y.map(f64::to_bits));
    }
}

#[test]
fn cluster_model_file_round_trip_keeps_assignments() {
    let dir = TempDir::new().unwrap();
    let catalog = Catalog::canonical();
    let spec = GridSpec::training();
    let samples = generate(&catalog.training_set(), &spec).unwrap();
    let model = ClusterModel::fit(&build_features(&samples, &spec).unwrap(), 2..=6, 0).unwrap();
    let path = dir.path().join("clusters.json");
    model.save(&path).unwrap();
    let back = ClusterModel::load(&path).unwrap();
    assert_eq!(back, model);

    // a training profile placed at the training frequencies lands in its own row's cluster
    let row = 7;
    let label = &model.row_labels[row];
    let points: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.ibr == label.ibr && s.op() == (label.v, label.p, label.q))
        .map(|s| (s.f, s.ydd().norm()))
        .collect();
    assert_eq!(points.len(), model.freqs.len());
    let a = assign(&points, &back).unwrap();
    assert_eq!(a.cluster, model.labels[row]);
}

#[test]
fn trained_network_file_round_trip_predicts_identically() {
    let dir = TempDir::new().unwrap();
    let catalog = Catalog::canonical();
    let samples = generate(
        &[catalog.get("GFLI2").unwrap().clone()],
        &GridSpec::training(),
    )
    .unwrap();
    let cfg = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let net = fnn::train(
        &fnn::init(&FnnSpec::preset("FNN2").unwrap(), 3).unwrap(),
        &samples,
        &cfg,
    )
    .unwrap();
    let path = dir.path().join("net.json");
    net.save(&path).unwrap();
    let back = FnnModel::load(&path).unwrap();
    for s in samples.iter().step_by(97) {
        let (a, b) = (
            net.predict(s.v, s.p, s.q, s.f).unwrap(),
            back.predict(s.v, s.p, s.q, s.f).unwrap(),
        );
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }
}
