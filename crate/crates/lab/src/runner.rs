//! Runs the cells of a plan on worker threads.
//!
//! Each cell seeds its own generators, so results do not depend on the
//! thread count or on scheduling order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use d2dce_core::experiments::{assemble, run_cell, CellResult, ExperimentPlan, ExperimentReport};

use crate::error::Result;

/// Environment variable capping the worker count.
pub const THREADS_VAR: &str = "D2DCE_THREADS";

/// Worker count from `D2DCE_THREADS`, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_VAR)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every cell, at most `threads` at a time, and returns results in
/// plan order.
pub fn run_parallel(plan: &ExperimentPlan, threads: usize) -> Result<ExperimentReport> {
    let n = plan.cells.len();
    let workers = threads.clamp(1, n.max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<d2dce_core::Result<CellResult>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let result = run_cell(&plan.cells[i], &plan.spec);
                *slots[i].lock().expect("result slot poisoned") = Some(result);
            });
        }
    });
    let cells = slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("result slot poisoned")
                .expect("every cell ran")
        })
        .collect::<d2dce_core::Result<Vec<_>>>()?;
    Ok(assemble(plan, cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use d2dce_core::experiments::{plan_mog, run_plan, Method, MoGSpec};
    use d2dce_core::trainer::RunConfig;

    #[test]
    fn thread_count_does_not_change_results() {
        let config = RunConfig {
            total_iters: 20,
            log_interval: 10,
            eval_samples: 50,
            batch_size: 8,
            n_dis: 1,
            g_hidden_width: 8,
            d_hidden_width: 8,
            embed_dim: 4,
            ..RunConfig::default()
        };
        let plan = plan_mog(
            &[Method::Acgan, Method::Reacgan],
            &MoGSpec::overlapped(),
            &config,
            &[0, 1],
        );
        let serial = run_plan(&plan).unwrap();
        assert_eq!(run_parallel(&plan, 3).unwrap(), serial);
        assert_eq!(run_parallel(&plan, 1).unwrap(), serial);
    }
}
