use clap::{Parser, Subcommand, ValueEnum};
use fapi_sim::monitors::{Property, Verdict};
use fapi_sim::runtime::explore::ExploreOutcome;
use fapi_sim::scenario::{self, campaign, run_attack, Scenario};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sim", version, about = "Symbolic simulator for FAPI authorization flows")]
struct Cli {
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario under its scheduler (seeded unless it is guided).
    Run {
        /// Scenario file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Print the full trace.
        #[arg(long)]
        trace: bool,
    },
    /// Run a packaged attack.
    Attack {
        #[arg(long)]
        name: String,
        /// Fix override, e.g. fixAtIss=off. Repeatable.
        #[arg(long = "fix", value_parser = parse_fix)]
        fixes: Vec<(String, bool)>,
        #[arg(long)]
        trace: bool,
    },
    /// Exhaustive bounded exploration.
    Explore {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value_t = 1_000_000)]
        node_limit: usize,
    },
    /// Seeded runs over every scenario file in a directory.
    Campaign {
        #[arg(long)]
        scenario_dir: PathBuf,
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// List bundled scenarios and attacks.
    List,
}

fn parse_fix(s: &str) -> Result<(String, bool), String> {
    let (k, v) = s.split_once('=').ok_or("expected NAME=on|off")?;
    let on = match v {
        "on" | "true" => true,
        "off" | "false" => false,
        _ => return Err(format!("bad value {v:?}, expected on or off")),
    };
    Ok((k.to_string(), on))
}

const PASS: u8 = 0;
const VIOLATION: u8 = 1;
const INCONCLUSIVE: u8 = 2;

fn load(spec: &str) -> Result<Scenario, String> {
    let path = Path::new(spec);
    if path.exists() {
        Scenario::load(path).map_err(|e| e.to_string())
    } else {
        Scenario::bundled(spec).map_err(|e| e.to_string())
    }
}

fn verdict_lines(verdicts: &[Verdict]) -> String {
    let mut out = String::new();
    for v in verdicts {
        match &v.witness {
            None => out.push_str(&format!("PASS {}\n", v.property)),
            Some(w) => out.push_str(&format!("FAIL {} at step {}: {}\n", v.property, w.step, w.detail)),
        }
    }
    out
}

fn status(verdicts: &[Verdict]) -> u8 {
    if verdicts.iter().all(|v| v.holds) {
        PASS
    } else {
        VIOLATION
    }
}

fn steps_json(trace: &fapi_sim::runtime::Trace) -> serde_json::Value {
    serde_json::to_value(&trace.steps).unwrap_or_default()
}

fn run(cli: Cli) -> Result<u8, String> {
    let json_out = cli.format == Format::Json;
    match cli.cmd {
        Cmd::Run { scenario, seed, max_steps, trace } => {
            let sc = load(&scenario)?;
            let r = sc.run_default(seed, max_steps).map_err(|e| e.to_string())?;
            if json_out {
                let mut v = serde_json::to_value(&r).map_err(|e| e.to_string())?;
                if trace {
                    v["trace"] = steps_json(&r.trace);
                }
                println!("{v}");
            } else {
                if trace {
                    print!("{}", r.trace.render_text());
                }
                println!("scenario {} ({} steps)", r.scenario, r.steps);
                print!("{}", verdict_lines(&r.verdicts));
            }
            Ok(status(&r.verdicts))
        }
        Cmd::Attack { name, fixes, trace } => {
            let r = run_attack(&name, &fixes).map_err(|e| e.to_string())?;
            if json_out {
                let mut v = serde_json::to_value(&r).map_err(|e| e.to_string())?;
                if trace {
                    v["trace"] = steps_json(&r.run.trace);
                }
                println!("{v}");
            } else {
                if trace {
                    print!("{}", r.run.trace.render_text());
                }
                let state = if r.reproduced { "reproduced" } else { "blocked" };
                println!("attack {} {state} after {} steps", r.attack, r.run.steps);
                print!("{}", verdict_lines(&r.run.verdicts));
            }
            Ok(status(&r.run.verdicts))
        }
        Cmd::Explore { scenario, depth, node_limit } => {
            let sc = load(&scenario)?;
            let rep = sc.explore(depth, node_limit, &Property::ALL).map_err(|e| e.to_string())?;
            let (code, verdict) = match &rep.outcome {
                ExploreOutcome::Complete => (PASS, "PASS".to_string()),
                ExploreOutcome::NodeLimit => (INCONCLUSIVE, "INCONCLUSIVE (node limit)".to_string()),
                ExploreOutcome::Violation { violation, .. } => {
                    (VIOLATION, format!("FAIL {}: {}", violation.property, violation.detail))
                }
            };
            let witness = match &rep.outcome {
                ExploreOutcome::Violation { path, .. } => Some(sc.witness_trace(path).map_err(|e| e.to_string())?),
                _ => None,
            };
            if json_out {
                let v = json!({
                    "scenario": sc.name(),
                    "depth": depth,
                    "node_limit": node_limit,
                    "nodes": rep.nodes,
                    "distinct": rep.distinct,
                    "depth_reached": rep.depth_reached,
                    "verdict": verdict,
                    "witness": witness.as_ref().map(|w| steps_json(&w.trace)),
                });
                println!("{v}");
            } else {
                if let Some(w) = &witness {
                    print!("{}", w.trace.render_text());
                }
                println!(
                    "explored {} steps, {} distinct configurations, depth {}: {verdict}",
                    rep.nodes, rep.distinct, rep.depth_reached
                );
            }
            Ok(code)
        }
        Cmd::Campaign { scenario_dir, seeds, max_steps } => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&scenario_dir)
                .map_err(|e| format!("{}: {e}", scenario_dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "scenario" || x == "json"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(format!("no scenario files in {}", scenario_dir.display()));
            }
            let scenarios = files
                .iter()
                .map(|p| Scenario::load(p).map_err(|e| format!("{}: {e}", p.display())))
                .collect::<Result<Vec<_>, _>>()?;
            let rep = campaign(&scenarios, seeds, max_steps);
            if json_out {
                println!("{}", serde_json::to_string(&rep).map_err(|e| e.to_string())?);
            } else {
                println!("{} runs over {} scenarios", rep.runs, rep.scenarios.len());
                println!("runs with a login: {}, with a resource: {}", rep.logged_in_runs, rep.resource_runs);
                for p in Property::ALL {
                    let n = rep.exercised.get(p.id()).copied().unwrap_or(0);
                    let bad = rep.violations.iter().filter(|v| v.violation.property == p).count();
                    let word = if bad == 0 { "PASS" } else { "FAIL" };
                    let vacuous = if n == 0 { " (vacuous)" } else { "" };
                    println!("{word} {p}: {bad} violations, exercised in {n} runs{vacuous}");
                }
                for v in rep.violations.iter().take(10) {
                    println!("  {} seed {}: {}", v.scenario, v.seed, v.violation.detail);
                }
                for e in &rep.errors {
                    println!("error: {e}");
                }
            }
            Ok(if !rep.errors.is_empty() {
                INCONCLUSIVE
            } else if rep.violations.is_empty() {
                PASS
            } else {
                VIOLATION
            })
        }
        Cmd::List => {
            for (name, _) in scenario::BUNDLED {
                println!("scenario {name}");
            }
            for a in &scenario::ATTACKS {
                println!("attack {} (blocked by {})", a.name, a.fix.unwrap_or("OAUTB web-server clients"));
            }
            Ok(PASS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(INCONCLUSIVE)
        }
    }
}
