use topostain_core::gradcheck::run_gradcheck;

use crate::config::RunConfig;
use crate::CliError;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let only = cfg.str_("only");
    let only = if only.is_empty() { None } else { Some(only) };
    let report = run_gradcheck(only, cfg.u64_("seed")?)
        .map_err(|e| CliError::gradcheck(e.to_string()))?;
    print!("{}", report.render_table());
    if report.passed() {
        println!("all gradients within tolerance");
        Ok(())
    } else {
        let worst = report.worst().expect("non-empty report");
        Err(CliError::gradcheck(format!(
            "gradient check failed at `{}` (max rel err {:.3e})",
            worst.name, worst.max_rel_err
        )))
    }
}
