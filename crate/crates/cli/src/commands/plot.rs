use std::path::{Path, PathBuf};

use uniscale_core::eval::line_chart_svg;

use super::eval::CurveFile;
use super::write_text;
use crate::config::command_config;
use crate::error::{CliError, CliResult};

command_config! {
    PlotConfig, PlotArgs {
        /// curves.json written by eval or ablate.
        input: PathBuf = PathBuf::from("ablation/curves.json");
        /// Directory for rel_vs_views.svg and tau_vs_views.svg.
        out: PathBuf = PathBuf::from("plots");
    }
}

pub fn render(curves: &CurveFile, out: &Path) -> CliResult<()> {
    let rel = line_chart_svg(&format!("rel vs views ({})", curves.mode), "views", "rel", &curves.rel);
    let tau = line_chart_svg(&format!("tau vs views ({})", curves.mode), "views", "tau (%)", &curves.tau);
    write_text(&out.join("rel_vs_views.svg"), &rel)?;
    write_text(&out.join("tau_vs_views.svg"), &tau)
}

pub fn run(cfg: &PlotConfig) -> CliResult<()> {
    let text = std::fs::read_to_string(&cfg.input).map_err(|e| CliError::data(format!("{}: {e}", cfg.input.display())))?;
    let curves: CurveFile =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", cfg.input.display())))?;
    render(&curves, &cfg.out)?;
    println!("wrote {}", cfg.out.display());
    Ok(())
}
