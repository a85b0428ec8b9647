use std::path::PathBuf;

use serde::Serialize;
use uniscale_core::autodiff::{op_suite, OpCheck, OP_TOLERANCE};
use uniscale_core::supervision::{model_gradcheck, MODEL_TOLERANCE};

use super::write_text;
use crate::config::{command_config, write_effective};
use crate::error::{CliError, CliResult};

command_config! {
    GradcheckConfig, GradcheckArgs {
        seed: u64 = 0;
        /// Random cases per op.
        draws: usize = 20;
        /// Sampled parameter coordinates of the micro model.
        model_coords: usize = 100;
        op_tolerance: f64 = OP_TOLERANCE;
        model_tolerance: f64 = MODEL_TOLERANCE;
        /// Directory for gradcheck.json (empty = do not write).
        out: PathBuf = PathBuf::new();
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    ops: &'a [OpCheck],
    model_passed: bool,
    model_checked: usize,
    model_excluded: usize,
    model_worst_rel_error: f64,
}

pub fn run(cfg: &GradcheckConfig) -> CliResult<()> {
    let ops = op_suite(cfg.seed, cfg.draws, cfg.op_tolerance)?;
    for c in &ops {
        println!(
            "{} {:<20} checked {:>4} excluded {:>3} worst {:.3e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.op,
            c.checked,
            c.excluded,
            c.worst_rel_error
        );
    }
    let m = model_gradcheck(cfg.seed, cfg.model_coords, cfg.model_tolerance)?;
    println!(
        "{} {:<20} checked {:>4} excluded {:>3} worst {:.3e}",
        if m.passed { "PASS" } else { "FAIL" },
        "micro-model",
        m.checked,
        m.excluded.len(),
        m.worst_rel_error()
    );
    if !cfg.out.as_os_str().is_empty() {
        write_effective(&cfg.out, "gradcheck", cfg)?;
        let s = Summary {
            ops: &ops,
            model_passed: m.passed,
            model_checked: m.checked,
            model_excluded: m.excluded.len(),
            model_worst_rel_error: m.worst_rel_error(),
        };
        write_text(&cfg.out.join("gradcheck.json"), &(serde_json::to_string_pretty(&s)? + "\n"))?;
    }
    let failed: Vec<&str> = ops.iter().filter(|c| !c.passed).map(|c| c.op).collect();
    if !failed.is_empty() || !m.passed {
        return Err(CliError::numeric(format!(
            "gradient check failed: ops {failed:?}, model {}",
            if m.passed { "passed" } else { "failed" }
        )));
    }
    Ok(())
}
