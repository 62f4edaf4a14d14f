use absa_demo::prior::compare_priors;
use absa_demo::session::Session;
use absa_demo::{prior_explorer, DemoModel};

#[test]
fn prior_histograms_are_densities_with_dirichlet_moments() {
    let c = compare_priors(1.0, 5, 20_000, 20, 3).unwrap();
    for h in [&c.dirichlet, &c.laplace] {
        let mass: f64 = h.density.iter().sum::<f64>() / 20.0;
        assert!((mass - 1.0).abs() < 1e-12);
    }
    assert!((c.dirichlet.mean - c.exact_mean).abs() < 0.005);
    assert!((c.dirichlet.variance - c.exact_variance).abs() < 0.002);
    // the approximation matches the mean only roughly
    assert!((c.laplace.mean - c.exact_mean).abs() < 0.05);
    assert_eq!(c, compare_priors(1.0, 5, 20_000, 20, 3).unwrap());
}

#[test]
fn prior_explorer_rejects_bad_input() {
    assert!(prior_explorer(0.0, 5, 100, 10, 1).is_err());
    assert!(prior_explorer(1.0, 1, 100, 10, 1).is_err());
    let json: serde_json::Value = serde_json::from_str(&prior_explorer(0.3, 4, 500, 10, 1).unwrap()).unwrap();
    assert_eq!(json["dirichlet"]["density"].as_array().unwrap().len(), 10);
}

#[test]
fn session_trains_and_labels_text() {
    let mut s = Session::new(600, 5).unwrap();
    let seeded = s.topics(3).unwrap();
    assert_eq!(seeded[0].name, "aspect:food");
    let mut totals = Vec::new();
    for _ in 0..8 {
        totals.push(s.train_epoch().unwrap().total);
    }
    assert_eq!(s.epochs_done(), 8);
    assert!(totals[7] < totals[2], "{totals:?}");

    let a = s.analyze("pizza pasta soup delicious great", 0.05, 0.2).unwrap();
    assert_eq!(a.scores.len(), 3);
    let best = a.scores.iter().max_by(|x, y| x.weight.total_cmp(&y.weight)).unwrap();
    assert_eq!(best.aspect, "food", "{a:?}");
    assert!(a.prediction.aspects.contains(&"food".to_string()), "{a:?}");
    let total_weight: f64 = a.scores.iter().map(|s| s.weight).sum();
    assert!(total_weight <= 1.0 + 1e-12);

    let a = s.analyze("zzzz pizza", 0.3, 0.2).unwrap();
    assert_eq!(a.unknown, vec!["zzzz".to_string()]);
    assert!(s.analyze("!!", 0.3, 0.2).is_err());
    assert!(s.analyze("pizza", 1.5, 0.2).is_err());
}

#[test]
fn bindings_return_json() {
    let mut m = DemoModel::new(200, 1).unwrap();
    let log: serde_json::Value = serde_json::from_str(&m.train_epoch().unwrap()).unwrap();
    assert_eq!(log["epoch"], 0);
    let examples: Vec<String> = serde_json::from_str(&m.examples()).unwrap();
    assert_eq!(examples.len(), 8);
    let out: serde_json::Value = serde_json::from_str(&m.analyze(&examples[0], 0.2, 0.2).unwrap()).unwrap();
    assert!(out["prediction"]["aspects"].is_array());
}
