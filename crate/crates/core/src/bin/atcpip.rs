//! Command-line front end for the simulator and ledger tools.
//!
//! Exit codes: 0 on success or a true check, 1 on a mismatch or false
//! check, 2 on errors.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use atcpip_core::disputes::collect_evidence;
use atcpip_core::harness::{load_scenario, replay, run, verify_ledger, HarnessError, BUILTIN_SCENARIOS};
use atcpip_core::ledger::{verify_export, Ledger};

#[derive(Parser)]
#[command(name = "atcpip", version, about = "Agent IP licensing simulator and ledger tools")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file (or built-in name) and report its expectations.
    Run {
        #[arg(long)]
        scenario: String,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSONL transcript here.
        #[arg(long)]
        transcript: Option<String>,
        /// Write the canonical ledger export here.
        #[arg(long)]
        export_ledger: Option<String>,
    },
    /// Re-run a scenario and compare with a recorded transcript.
    Replay {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        transcript: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the hash chain of an exported ledger.
    VerifyLedger { file: String },
    /// Print the evidence bundle for a dispute recorded in an exported ledger.
    ExportEvidence {
        #[arg(long)]
        ledger: String,
        #[arg(long)]
        dispute: String,
        /// Write the bundle here instead of stdout.
        #[arg(long)]
        out: Option<String>,
    },
    /// List the built-in scenarios.
    Scenarios,
}

enum Failure {
    Mismatch(String),
    Error(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Error(e.to_string())
    }
}

fn write(path: &str, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::Error(format!("{path}: {e}")))
}

fn read(path: &str) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::Error(format!("{path}: {e}")))
}

fn execute(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run { scenario, seed, transcript, export_ledger } => {
            let mut s = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                s = s.with_seed(seed);
            }
            let (t, world) = run(&s)?;
            if let Some(path) = transcript {
                write(&path, &t.to_jsonl())?;
            }
            if let Some(path) = export_ledger {
                write(&path, &world.ledger.export())?;
            }
            println!("scenario {} seed {} ticks {} transcript {}", s.name, s.seed, world.net.now(), t.sha256());
            for (agent, balance) in world.wallets.balances() {
                println!("balance {agent} {balance} ({:+})", world.balance_delta(agent));
            }
            let mut failed = 0;
            for (what, ok) in world.check_expectations() {
                println!("{} {what}", if ok { "ok  " } else { "FAIL" });
                failed += usize::from(!ok);
            }
            if world.halted() {
                return Err(Failure::Mismatch(format!("halted at max_ticks {}", s.max_ticks)));
            }
            if failed > 0 {
                return Err(Failure::Mismatch(format!("{failed} expectation(s) failed")));
            }
            Ok(())
        }
        Cmd::Replay { scenario, transcript, seed } => {
            let mut s = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                s = s.with_seed(seed);
            }
            if replay(&read(&transcript)?, &s)? {
                println!("match");
                Ok(())
            } else {
                Err(Failure::Mismatch("transcript differs from a fresh run".into()))
            }
        }
        Cmd::VerifyLedger { file } => {
            if verify_ledger(&file)? {
                println!("intact");
                Ok(())
            } else {
                Err(Failure::Mismatch("ledger chain broken".into()))
            }
        }
        Cmd::ExportEvidence { ledger, dispute, out } => {
            let bytes = read(&ledger)?;
            match verify_export(&bytes) {
                Ok(true) => {}
                Ok(false) => return Err(Failure::Error("ledger chain broken".into())),
                Err(e) => return Err(Failure::Error(e.to_string())),
            }
            let ledger = Ledger::from_export(&bytes).map_err(|e| Failure::Error(e.to_string()))?;
            let bundle = collect_evidence(&ledger, &dispute).map_err(|e| Failure::Error(e.to_string()))?;
            let bytes = bundle.to_canonical_bytes();
            match out {
                Some(path) => write(&path, &bytes),
                None => {
                    println!("{}", String::from_utf8_lossy(&bytes));
                    Ok(())
                }
            }
        }
        Cmd::Scenarios => {
            for (name, _) in BUILTIN_SCENARIOS {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Mismatch(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Error(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
