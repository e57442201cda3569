//! Equal seeds give bit-identical fits, estimates and reports, whatever the
//! thread count.

use ndarray::Array2;
use orthoscore::folds::rng_from_seed;
use orthoscore::late::{late_crossfit, LateConfig, LateMethod};
use orthoscore::learners::{fit_logistic, fit_mlp, Learner, LossKind, MlpArchitecture, TrainConfig};
use orthoscore::plr::{plr_crossfit, PlrConfig, PlrDesign};
use orthoscore::qte::{qte_crossfit, QteConfig, QteDesign};
use orthoscore::sim::{self, run_replications, DgpConfig, Scenario};
use rand::Rng;

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn every_method_repeats_exactly() {
    let (data, _) = sim::sample(&mut rng_from_seed(1), 600, 4, Scenario::S1).unwrap();
    for method in LateMethod::ALL {
        let cfg = LateConfig::new(method, 9);
        let a = in_pool(1, || late_crossfit(&data, &cfg).unwrap());
        let b = in_pool(3, || late_crossfit(&data, &cfg).unwrap());
        assert_eq!(a, b, "{method}");
        let c = late_crossfit(&data, &LateConfig::new(method, 10)).unwrap();
        assert_ne!(a.beta_hat, c.beta_hat, "{method}: seed should matter");
    }
}

#[test]
fn worked_examples_repeat_exactly() {
    let plr = PlrDesign::default().sample(&mut rng_from_seed(2), 500).unwrap();
    let cfg = PlrConfig::new(Learner::mlp_early_stopping(4), 4);
    assert_eq!(in_pool(1, || plr_crossfit(&plr, &cfg).unwrap()), in_pool(2, || plr_crossfit(&plr, &cfg).unwrap()));
    let qte = QteDesign { tau: 0.3 }.sample(&mut rng_from_seed(3), 500).unwrap();
    let cfg = QteConfig::new(0.3, 5);
    assert_eq!(in_pool(1, || qte_crossfit(&qte, &cfg).unwrap()), in_pool(2, || qte_crossfit(&qte, &cfg).unwrap()));
}

#[test]
fn replication_reports_repeat_exactly() {
    let dgp = DgpConfig { scenario: Scenario::S2, n: 300, p: 4, seed: 0 };
    let methods: Vec<LateConfig> = [LateMethod::RobustLr, LateMethod::Moment, LateMethod::RegLr]
        .into_iter()
        .map(|m| LateConfig::new(m, 0))
        .collect();
    let a = in_pool(1, || run_replications(&dgp, &methods, 12, 77).unwrap());
    let b = in_pool(4, || run_replications(&dgp, &methods, 12, 77).unwrap());
    assert_eq!(a, b);
}

#[test]
fn learners_repeat_bit_for_bit() {
    let mut rng = rng_from_seed(4);
    let n = 300;
    let x: Array2<f64> = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
    let y: Vec<f64> = (0..n).map(|i| (3.0 * x[[i, 0]]).sin() + x[[i, 1]]).collect();
    let labels: Vec<f64> = (0..n).map(|i| (x[[i, 2]] + rng.random_range(-0.5..0.5) > 0.0) as u8 as f64).collect();
    let arch = MlpArchitecture { depth: 2, width: 16 };
    let config = TrainConfig { epochs: 20, seed: 11, ..TrainConfig::default() };
    for loss in [LossKind::SquaredError, LossKind::CrossEntropyOnLogits] {
        let targets = if matches!(loss, LossKind::SquaredError) { &y } else { &labels };
        let a = fit_mlp(x.view(), targets, &loss, &arch, &config).unwrap();
        let b = fit_mlp(x.view(), targets, &loss, &arch, &config).unwrap();
        assert_eq!(a.params(), b.params());
        let c = fit_mlp(x.view(), targets, &loss, &arch, &config.with_seed(12)).unwrap();
        assert_ne!(a.params(), c.params());
    }
    let a = fit_logistic(x.view(), &labels).unwrap();
    assert_eq!(a, fit_logistic(x.view(), &labels).unwrap());
}
