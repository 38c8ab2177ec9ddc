//! Indexes synthetic 256-d vectors at million scale and times 100 queries.
//! Prints one JSON object; timings are recorded, not asserted.

use std::time::Instant;

use clap::Parser;
use provenant::index::{brute_force_search, build_index, recall_at_k, IndexParams};
use provenant_bench::{clustered_records, queries_near};
use serde_json::json;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, default_value_t = 1024)]
    nlist: usize,
    #[arg(long, default_value_t = 16)]
    nprobe: usize,
    /// Coarse and PQ k-means iterations.
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    #[arg(long, default_value_t = 64)]
    points_per_centroid: usize,
    /// Also compute recall@10 against an exhaustive scan.
    #[arg(long)]
    recall: bool,
}

fn main() {
    let a = Args::parse();
    let t = Instant::now();
    let records = clustered_records(a.n, 256, 4096, 0.03, 1);
    let generate_s = t.elapsed().as_secs_f64();

    let params = IndexParams {
        nlist: a.nlist,
        nprobe: a.nprobe,
        max_iters: a.max_iters,
        max_points_per_centroid: a.points_per_centroid,
        seed: 1,
        ..IndexParams::default()
    };
    let t = Instant::now();
    let index = build_index(&records, &params).expect("index builds");
    let build_s = t.elapsed().as_secs_f64();

    let queries = queries_near(&records, a.queries, 0.02, 2);
    let t = Instant::now();
    let hits: Vec<_> = queries.iter().map(|q| index.search(q, 10).expect("search")).collect();
    let query_s = t.elapsed().as_secs_f64();

    let recall = a.recall.then(|| {
        let total: f64 = queries
            .iter()
            .zip(&hits)
            .map(|(q, h)| recall_at_k(h, &brute_force_search(&records, q, 10)))
            .sum();
        total / queries.len() as f64
    });
    let out = json!({
        "vectors": a.n,
        "dim": 256,
        "nlist": a.nlist,
        "m": params.m,
        "nprobe": a.nprobe,
        "maxIters": a.max_iters,
        "generateSecs": generate_s,
        "buildSecs": build_s,
        "queries": a.queries,
        "querySecs": query_s,
        "msPerQuery": 1000.0 * query_s / a.queries as f64,
        "recallAt10": recall,
    });
    println!("{}", serde_json::to_string_pretty(&out).unwrap());
}
