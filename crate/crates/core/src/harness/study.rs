//! Multi-run studies sharing one prepared experiment.

use std::fmt::Write as _;
use std::thread;

use crate::error::Result;
use crate::triggering::Mode;

use super::engine::{Experiment, RunOptions, RunOutput, RunSummary};

fn run_all(exp: &Experiment, options: Vec<RunOptions>) -> Result<Vec<RunOutput>> {
    thread::scope(|s| {
        let handles: Vec<_> = options.iter().map(|o| s.spawn(move || exp.run(o))).collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
    })
}

/// Runs each mode from the same initial data, in parallel.
pub fn compare(exp: &Experiment, base: &RunOptions, modes: &[Mode]) -> Result<Vec<RunOutput>> {
    let options = modes.iter().map(|&mode| RunOptions { mode, ..base.clone() }).collect();
    run_all(exp, options)
}

/// PETC runs for each value of the performance gain `c`.
pub fn sweep_c(exp: &Experiment, base: &RunOptions, cs: &[f64]) -> Result<Vec<RunOutput>> {
    let options = cs
        .iter()
        .map(|&c| {
            let mut o = base.clone();
            o.mode = Mode::Petc;
            o.trigger.c = c;
            o
        })
        .collect();
    run_all(exp, options)
}

/// One row per run: mode, c, events, dwell statistics and final norms.
pub fn summary_table(runs: &[&RunSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>6} {:>7} {:>11} {:>11} {:>11} {:>12} {:>12}",
        "mode", "c", "events", "min_dwell", "mean_dwell", "max_dwell", "final_norm", "decay_rate"
    );
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
    for s in runs {
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>7} {:>11} {:>11} {:>11} {:>12.4e} {:>12}",
            s.mode.to_string(),
            format!("{:.3}", s.c),
            s.events,
            opt(s.min_dwell),
            opt(s.mean_dwell),
            opt(s.max_dwell),
            s.final_norm_uv,
            opt(s.v_hat_decay_rate),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RunConfig;
    use crate::params::DesignChoices;

    fn experiment() -> Experiment {
        let mut cfg = RunConfig::default();
        cfg.simulation.grid = 256;
        cfg.simulation.horizon = 1.0;
        cfg.design = DesignChoices { mu: Some(0.3), delta: Some(0.1), a_margin: 1.0, ..DesignChoices::default() };
        Experiment::prepare(&cfg).unwrap()
    }

    #[test]
    fn parallel_runs_match_sequential_ones() {
        let exp = experiment();
        let base = exp.default_options();
        let modes = [Mode::Petc, Mode::Etc, Mode::Continuous];
        let runs = compare(&exp, &base, &modes).unwrap();
        for (mode, out) in modes.iter().zip(&runs) {
            let alone = exp.run(&RunOptions { mode: *mode, ..base.clone() }).unwrap();
            assert_eq!(out.summary.mode, *mode);
            assert_eq!(out.events, alone.events);
            let last = |o: &RunOutput| o.trace.last().unwrap().norm_uv.to_bits();
            assert_eq!(last(out), last(&alone));
        }
    }

    #[test]
    fn zero_gain_sweep_reproduces_etc() {
        let exp = experiment();
        let base = exp.default_options();
        let swept = sweep_c(&exp, &base, &[0.0, 2.0]).unwrap();
        let etc = exp.run(&RunOptions { mode: Mode::Etc, ..base }).unwrap();
        assert_eq!(swept[0].events, etc.events);
        assert_eq!(swept[1].summary.c, 2.0);
        let table = summary_table(&[&swept[0].summary, &etc.summary]);
        assert_eq!(table.lines().count(), 3);
    }
}
