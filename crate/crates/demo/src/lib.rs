//! Browser bindings. Every call returns JSON text or an error message.

pub mod prior;
pub mod session;

use wasm_bindgen::prelude::*;

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("demo values serialize")
}

/// Histograms of one topic proportion under `Dirichlet(alpha)` and under
/// its logistic-normal approximation.
#[wasm_bindgen]
pub fn prior_explorer(alpha: f64, topics: u32, samples: u32, bins: u32, seed: u32) -> Result<String, String> {
    prior::compare_priors(alpha, topics as usize, samples as usize, bins as usize, seed.into())
        .map(|c| json(&c))
        .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub struct DemoModel(session::Session);

#[wasm_bindgen]
impl DemoModel {
    #[wasm_bindgen(constructor)]
    pub fn new(train_docs: u32, seed: u32) -> Result<DemoModel, String> {
        session::Session::new(train_docs as usize, seed.into())
            .map(DemoModel)
            .map_err(|e| e.to_string())
    }

    pub fn epochs_done(&self) -> u32 {
        self.0.epochs_done() as u32
    }

    /// Runs one epoch and returns its loss log entry.
    pub fn train_epoch(&mut self) -> Result<String, String> {
        self.0.train_epoch().map(|l| json(&l)).map_err(|e| e.to_string())
    }

    pub fn topics(&self, n: u32) -> Result<String, String> {
        self.0.topics(n as usize).map(|t| json(&t)).map_err(|e| e.to_string())
    }

    pub fn analyze(&self, text: &str, aspect_threshold: f64, sentiment_threshold: f64) -> Result<String, String> {
        self.0
            .analyze(text, aspect_threshold, sentiment_threshold)
            .map(|a| json(&a))
            .map_err(|e| e.to_string())
    }

    pub fn examples(&self) -> String {
        json(&self.0.examples())
    }
}
