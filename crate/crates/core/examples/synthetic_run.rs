//! Trains on a generated corpus and prints the per-epoch losses and scores.

use absa_core::synthetic::{run_experiment, Experiment};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut exp = Experiment::default();
    let args: Vec<String> = std::env::args().collect();
    if let Some(e) = args.get(1) {
        exp.train.epochs = e.parse()?;
    }
    if let Some(lr) = args.get(2) {
        exp.train.learning_rate = lr.parse()?;
    }
    let start = std::time::Instant::now();
    let r = run_experiment(&exp)?;
    for log in &r.report.history {
        println!("{}", serde_json::to_string(log)?);
    }
    println!("threshold {:.2} dev F1 {:.3}", r.threshold, r.dev_f1);
    println!("{}", serde_json::to_string_pretty(&r.eval)?);
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
