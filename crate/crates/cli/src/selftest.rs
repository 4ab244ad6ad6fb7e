use dcue::selfcheck::{run_all, SelfCheckConfig};
use serde_json::json;

use crate::config::{RunHeader, SelftestSection};
use crate::failure::{CliResult, Failure};
use crate::{write_output, SelftestArgs};

pub fn run(args: SelftestArgs, file: SelftestSection) -> CliResult<()> {
    let defaults = SelfCheckConfig::default();
    let cfg = SelfCheckConfig {
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        instances: args.instances.or(file.instances).unwrap_or(defaults.instances),
        corrupt_gradient: args.corrupt_gradient,
    };
    if cfg.instances == 0 {
        return Err(Failure::config("--instances must be positive"));
    }
    let outcomes = run_all(&cfg);
    let header = RunHeader::new("selftest", cfg.seed, &cfg);
    println!("# {}", header.to_line());
    for o in &outcomes {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        match &o.error {
            Some(e) => println!("{verdict} {} (error: {e})", o.name),
            None => println!(
                "{verdict} {} (worst {:.3e}, tolerance {:.0e}, {} instances)",
                o.name, o.worst, o.tolerance, o.instances
            ),
        }
    }
    if let Some(dir) = args.out.or(file.out) {
        let body = serde_json::to_string_pretty(&json!({ "run": header, "properties": outcomes })).expect("serializes");
        write_output(&dir, "selftest.json", &(body + "\n"))?;
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::property(format!("failed properties: {}", failed.join(", "))))
    }
}
