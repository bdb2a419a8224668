use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mcot_bench::{chain_of, combined_response, synthetic_backend, task};
use mcot_core::judge::{JudgeConfig, JudgeStrategy};
use mcot_core::metrics::{coherence, logical_consistency};
use mcot_core::orchestrator::{run_multiplex, RunConfig};
use mcot_core::parser::Parser;
use mcot_core::Judge;

fn parsing(c: &mut Criterion) {
    let parser = Parser::default();
    let mut g = c.benchmark_group("parse_multiplex_response");
    for n in [3, 10, 40] {
        let text = combined_response(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &text, |b, t| {
            b.iter(|| parser.parse_multiplex_response(black_box(t)).unwrap())
        });
    }
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let judge = Judge::lexical();
    let mut g = c.benchmark_group("lexical_scoring");
    for n in [3, 10, 40] {
        let chain = chain_of(n);
        g.bench_with_input(BenchmarkId::new("consistency", n), &chain, |b, ch| {
            b.iter(|| logical_consistency(black_box(ch), &judge).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("coherence", n), &chain, |b, ch| {
            b.iter(|| coherence(black_box(ch), black_box(ch), &judge).unwrap())
        });
    }
    g.finish();
}

fn end_to_end(c: &mut Criterion) {
    let backend = synthetic_backend();
    let mut g = c.benchmark_group("run_multiplex_synthetic");
    for rounds in [2u32, 5] {
        let cfg = RunConfig {
            max_rounds: rounds,
            judge_config: JudgeConfig::with_strategy(JudgeStrategy::Annotated),
            seed: Some(1),
            ..Default::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(rounds), &cfg, |b, cfg| {
            let mut i = 0;
            b.iter(|| {
                i += 1;
                run_multiplex(&task(i), backend.clone(), cfg).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, parsing, scoring, end_to_end);
criterion_main!(benches);
