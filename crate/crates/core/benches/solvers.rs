use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hzeq::baselines::{grid_oracle_with, rsd_interim_with};
use hzeq::par::ExecPolicy;
use hzeq::rational::qi;
use hzeq::solver_agents::{solve_fixed_agents, AgentsOptions};
use hzeq::solver_goods::{solve_fixed_goods, GoodsOptions};
use hzeq::Market;

const POLICIES: [(&str, ExecPolicy); 2] = [("sequential", ExecPolicy::Sequential), ("auto", ExecPolicy::Auto)];

fn unit_market(rows: &[&[i64]]) -> Market {
    Market::new(rows.iter().map(|r| r.iter().map(|&v| qi(v)).collect()).collect(), vec![qi(1); rows.len()]).unwrap()
}

fn rsd(c: &mut Criterion) {
    let rows: Vec<Vec<i64>> = (0..7).map(|i| (0..7).map(|j| ((i * 3 + j * 5) % 7) as i64).collect()).collect();
    let refs: Vec<&[i64]> = rows.iter().map(Vec::as_slice).collect();
    let market = unit_market(&refs);
    let mut g = c.benchmark_group("rsd_7");
    for (name, policy) in POLICIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &policy, |b, &p| b.iter(|| rsd_interim_with(&market, p).unwrap()));
    }
    g.finish();
}

fn grid(c: &mut Criterion) {
    let market = unit_market(&[&[2, 1], &[0, 1]]);
    let mut g = c.benchmark_group("grid_r5");
    g.sample_size(10);
    for (name, policy) in POLICIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &policy, |b, &p| b.iter(|| grid_oracle_with(&market, 5, p).unwrap()));
    }
    g.finish();
}

fn solvers(c: &mut Criterion) {
    let market = unit_market(&[&[5, 4, 1], &[5, 1, 4], &[1, 5, 4]]);
    let mut g = c.benchmark_group("solve_3x3");
    g.sample_size(10);
    for (name, policy) in POLICIES {
        let goods = GoodsOptions { policy, ..GoodsOptions::default() };
        g.bench_with_input(BenchmarkId::new("goods", name), &goods, |b, o| b.iter(|| solve_fixed_goods(&market, o).unwrap()));
        let agents = AgentsOptions { policy, ..AgentsOptions::default() };
        g.bench_with_input(BenchmarkId::new("agents", name), &agents, |b, o| b.iter(|| solve_fixed_agents(&market, o).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, rsd, grid, solvers);
criterion_main!(benches);
