use std::time::Instant;

use relmdp::model::parse_domain;
use relmdp::sdp::{backup, SolveConfig, ValueFunction};

fn main() {
    let src = std::fs::read_to_string("../../fixtures/boxworld.rmdp").unwrap();
    let spec = parse_domain(&src).unwrap();
    let cfg = SolveConfig::default();
    let mut v = ValueFunction { horizon: 0, expr: spec.reward.clone() };
    let hmax: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let dump: bool = std::env::args().nth(2).is_some();
    let total = Instant::now();
    for h in 1..=hmax {
        let t = Instant::now();
        v = backup(&v, &spec, &cfg).unwrap();
        println!(
            "V{h}: {} cases, {} prefix vars, {:.2?}",
            v.expr.cases.len(),
            v.expr.prefix.len(),
            t.elapsed()
        );
        if dump {
            println!("{}", v.expr);
        }
    }
    println!("total {:.2?}", total.elapsed());
}
