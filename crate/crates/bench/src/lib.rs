//! Inputs shared by the pipeline benchmarks.

use std::sync::Arc;

use mcot_core::backend::{Backend, SyntheticBackend, SyntheticConfig};
use mcot_core::chain::{Category, ChainOfThought, Task};

const WORDS: [&str; 16] = [
    "train", "leaves", "station", "speed", "hour", "distance", "total", "sum", "apples", "basket",
    "price", "cost", "france", "capital", "river", "city",
];

/// A chain of `n` steps whose neighbours share some vocabulary.
pub fn chain_of(n: usize) -> ChainOfThought {
    let texts: Vec<String> = (0..n)
        .map(|i| {
            let w = |k: usize| WORDS[(i * 3 + k) % WORDS.len()];
            format!(
                "The {} and the {} give the {} of step {i}.",
                w(0),
                w(1),
                w(2)
            )
        })
        .collect();
    ChainOfThought::from_texts(texts, "x")
}

/// A generate-then-review response with an `n`-step initial chain.
pub fn combined_response(n: usize) -> String {
    let chain = chain_of(n);
    let mut s = String::from("Step 1 (Initial CoT):\n");
    for step in &chain.steps {
        s.push_str(&format!("{}. {}\n", step.index, step.text));
    }
    s.push_str(&format!("{}. Therefore, the answer is 42.\n\n", n + 1));
    s.push_str("Step 2 (Review and Refinement):\n- Upon reviewing step 2, I realize it has an error.\nRefined chain:\n");
    for step in &chain.steps {
        s.push_str(&format!("{}. {}\n", step.index, step.text));
    }
    s.push_str(&format!("{}. Therefore, the answer is 42.\n", n + 1));
    s
}

pub fn synthetic_backend() -> Arc<dyn Backend> {
    Arc::new(SyntheticBackend::new(SyntheticConfig::default()).expect("default config is valid"))
}

pub fn task(i: usize) -> Task {
    Task::new(
        format!("bench-{i}"),
        Category::Arithmetic,
        format!("Evaluate expression {i}."),
    )
}
