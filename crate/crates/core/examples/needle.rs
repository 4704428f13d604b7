//! Train on synthetic needle instances against the oracle solver and compare
//! the four evaluation variants on a held-out split.
//!
//! cargo run --release --example needle -- [steps] [instances] [tokens] [seed]

use std::time::Instant;

use hilight::data::{gen_needles, tokens_in_spans, SynthSpec};
use hilight::markup::MarkerFormat;
use hilight::solver::{OracleConfig, OracleSolver};
use hilight::trainer::{evaluate, train, EvalConfig, TrainConfig, Variant};

fn main() -> hilight::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let steps = args.first().copied().unwrap_or(2000);
    let n = args.get(1).copied().unwrap_or(500);
    let tokens = args.get(2).copied().unwrap_or(2048);
    let seed = args.get(3).copied().unwrap_or(7) as u64;

    let data = gen_needles(&SynthSpec::new(tokens, seed), n)?;
    let (train_set, test_set) = data.split_at(n - n / 5);
    let oracle = OracleSolver::new(OracleConfig::default(), MarkerFormat::default(), "\n")?;

    let cfg = TrainConfig {
        steps: steps as u64,
        seed,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let run = train(train_set, &oracle, &cfg, None)?;
    println!("trained {steps} steps in {:.1?}", t0.elapsed());
    println!("weights {:?} bias {:.3}", run.model.params.weights, run.model.params.bias);
    for chunk in run.log.chunks(200) {
        let r: f64 = chunk.iter().flat_map(|r| &r.rewards).sum::<f64>() / (4 * chunk.len()) as f64;
        let p: f64 = chunk.iter().map(|r| r.mean_p).sum::<f64>() / chunk.len() as f64;
        println!("  steps {:>5}: reward {r:.3} mean_p {p:.3}", chunk[0].step);
    }
    let (mut lo_ev, mut hi_other) = (1.0f64, 0.0f64);
    for inst in test_set {
        let (prep, scores) = run.model.score_instance(inst)?;
        let ev = tokens_in_spans(&prep.ctx, &inst.evidence_ranges());
        for &i in prep.ctx.omega() {
            if ev.binary_search(&i).is_ok() {
                lo_ev = lo_ev.min(scores.get(i));
            } else {
                hi_other = hi_other.max(scores.get(i));
            }
        }
    }
    println!("lowest evidence p {lo_ev:.3}, highest other p {hi_other:.3}");
    for variant in Variant::ALL {
        let ecfg = EvalConfig {
            variant,
            ..EvalConfig::default()
        };
        let rep = evaluate(test_set, &run.model, &oracle, &ecfg)?;
        println!(
            "{:<13} reward {:.3} highlight {:.3} evidence {:?}",
            variant.name(),
            rep.reward,
            rep.mean_highlight_fraction,
            rep.evidence
        );
    }
    Ok(())
}
