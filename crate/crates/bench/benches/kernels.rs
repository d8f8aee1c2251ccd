use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use gcbf_core::dynamics::DynamicsModel;
use gcbf_core::nets::init;
use gcbf_core::qpbase::{centralized_filter, decentralized_filter, FilterConfig};
use gcbf_core::safectl::{select_control, SafetyConfig};
use gcbf_core::world::{generate_scenario, observe, raycast, Scenario, ScenarioConfig, Suite, N_RAYS};
use gcbf_core::ModelKind;

fn scenario(model: ModelKind, suite: Suite, n: usize) -> Scenario {
    generate_scenario(&ScenarioConfig::new(model, suite, n, 0)).expect("scenario")
}

fn nominals(model: &DynamicsModel, sc: &Scenario) -> Vec<Vec<f64>> {
    sc.states.iter().zip(&sc.goals).map(|(x, g)| model.nominal_control(x, g)).collect()
}

fn graph_and_net(c: &mut Criterion) {
    let model = DynamicsModel::new(ModelKind::SimpleCar);
    let (h, pi) = init(ModelKind::SimpleCar, 0, 0.125).expect("init");
    let mut g = c.benchmark_group("gcbf");
    for n in [16, 64] {
        let sc = scenario(ModelKind::SimpleCar, Suite::Obstacles, n);
        let graph = observe(&model, &sc.states, &sc.obstacles, 1.0, N_RAYS);
        let u_nom = nominals(&model, &sc);
        g.bench_with_input(BenchmarkId::new("observe", n), &n, |b, _| {
            b.iter(|| observe(&model, black_box(&sc.states), &sc.obstacles, 1.0, N_RAYS))
        });
        g.bench_with_input(BenchmarkId::new("eval", n), &n, |b, _| b.iter(|| h.eval(black_box(&graph))));
        g.bench_with_input(BenchmarkId::new("select_control", n), &n, |b, _| {
            b.iter(|| select_control(&h, &pi, black_box(&graph), &u_nom, &SafetyConfig::default()))
        });
    }
    g.finish();
}

fn lidar(c: &mut Criterion) {
    let sc = scenario(ModelKind::SimpleCar, Suite::Obstacles, 128);
    c.bench_function("raycast", |b| b.iter(|| raycast(black_box(&sc.states[0][..2]), &sc.obstacles, N_RAYS, 1.0)));
}

fn qp_filters(c: &mut Criterion) {
    let model = DynamicsModel::new(ModelKind::SimpleCar);
    let cfg = FilterConfig { speed_bound: model.speed_bound, ..FilterConfig::default() };
    let mut g = c.benchmark_group("qp");
    g.sample_size(20);
    for n in [16, 32, 64] {
        let sc = scenario(ModelKind::SimpleCar, Suite::IncreaseDensity, n);
        let u_nom = nominals(&model, &sc);
        g.bench_with_input(BenchmarkId::new("centralized", n), &n, |b, _| {
            b.iter(|| centralized_filter(black_box(&sc.states), &u_nom, &cfg))
        });
        g.bench_with_input(BenchmarkId::new("decentralized", n), &n, |b, _| {
            b.iter(|| decentralized_filter(black_box(&sc.states), &u_nom, &cfg))
        });
    }
    g.finish();
}

criterion_group!(benches, graph_and_net, lidar, qp_filters);
criterion_main!(benches);
