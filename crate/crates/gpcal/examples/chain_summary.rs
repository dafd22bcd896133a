//! Scratch diagnostic: posterior summaries of the classifier fixture at a
//! fixed learning rate for growing chain lengths, to judge convergence.

use gpcal::core::RandomStream;
use gpcal::data::{load_csv, CsvSchema, LabelMap};
use gpcal::mcmc::run_chain;
use gpcal::model::SvmModel;
use nalgebra::DVector;

fn main() {
    let eta: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.15);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/heart_synthetic.csv");
    let schema = CsvSchema {
        label_column: "chd".into(),
        label_mapping: LabelMap { negative: "0".into(), positive: "1".into() },
        predictor_columns: vec![
            "sbp".into(),
            "tobacco".into(),
            "ldl".into(),
            "famhist".into(),
            "obesity".into(),
            "alcohol".into(),
            "age".into(),
        ],
        add_intercept: true,
        standardize: true,
    };
    let data = load_csv(path.as_ref(), &schema).unwrap();
    let model = SvmModel::from_data(&data, 10.0).unwrap();

    for (draws, warmup) in [(1000, 1000), (4000, 4000), (20000, 20000)] {
        let mut rng = RandomStream::new(4242);
        let chain =
            run_chain(&model, &data, eta, draws, warmup, &DVector::zeros(8), &mut rng).unwrap();
        let r = draws as f64;
        let mut line = format!("draws={draws:6} accept={:.3}", chain.accept_rate);
        let ess = chain.ess.as_ref().map(|e| e.ess.min()).unwrap_or(f64::NAN);
        line.push_str(&format!(" min_ess={ess:8.1}"));
        for j in 0..8 {
            let col = chain.draws.column(j);
            let mean = col.sum() / r;
            let sd = (col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0))
                .sqrt();
            line.push_str(&format!(" | {mean:7.3}±{sd:5.3}"));
        }
        println!("{line}");
    }
}
