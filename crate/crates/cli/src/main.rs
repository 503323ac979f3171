mod output;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;

use clap::{Parser, Subcommand};
use mmw_core::format::Format;
use mmw_mesh::demo::{run_demo, Scenario, DEMO_SEED};
use mmw_mesh::protocol::ANONYMOUS;
use mmw_mesh::{
    load_topology_file, mesh_up, validate_topology, ComponentError, ErrorCode, Mesh, MeshError, MeshOptions,
    MeshTopology,
};
use serde::{Deserialize, Serialize};

const OK: u8 = 0;
const DENIED: u8 = 1;
const USAGE: u8 = 2;
const RUNTIME: u8 = 3;

/// Operate a mask-mediator-wrapper mesh described by a topology document.
#[derive(Parser)]
#[command(name = "mesh", version)]
struct Cli {
    /// Topology document.
    #[arg(long, global = true, default_value = "topology.json")]
    config: PathBuf,
    /// Output format: csv, jsonl or pretty.
    #[arg(long, global = true, default_value = "pretty")]
    format: Format,
    /// Principal the request is made as.
    #[arg(long, global = true, default_value = ANONYMOUS)]
    principal: String,
    /// Where `up` records its pid and endpoints [default: <config>.state.json].
    #[arg(long, global = true)]
    state: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check governance rules; exit 1 on violations.
    Validate,
    /// Run the mesh in the foreground until interrupted.
    Up,
    /// Stop the mesh started by `up`.
    Down,
    /// Run one query at a mediator, mask or wrapper.
    Query {
        #[arg(long)]
        component: String,
        #[arg(long)]
        query: String,
        /// Start the topology for this one request instead of using `up`.
        #[arg(long)]
        ephemeral: bool,
    },
    /// List product mediators and their schemas.
    Catalog {
        #[arg(long)]
        ephemeral: bool,
    },
    /// Show where a served relation comes from.
    Lineage {
        #[arg(long)]
        component: String,
        #[arg(long)]
        relation: String,
        #[arg(long)]
        ephemeral: bool,
    },
    /// Refresh a materializing mask now.
    Materialize {
        #[arg(long)]
        component: String,
        #[arg(long)]
        ephemeral: bool,
    },
    /// Request counters of one component.
    Stats {
        #[arg(long)]
        component: String,
        #[arg(long)]
        ephemeral: bool,
    },
    /// Run a built-in scenario and its checks.
    Demo {
        scenario: Scenario,
        /// Directory to write the scenario into [default: a fresh temporary one].
        #[arg(long)]
        workspace: Option<PathBuf>,
        #[arg(long, default_value_t = DEMO_SEED)]
        seed: u64,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    /// Component errors are reported as their JSON form.
    fn component(e: &ComponentError) -> Self {
        let code = match e.code {
            ErrorCode::AccessDenied => DENIED,
            ErrorCode::Syntax | ErrorCode::Type | ErrorCode::UnknownRelation => USAGE,
            ErrorCode::Unavailable | ErrorCode::Protocol => RUNTIME,
        };
        Failure::new(code, serde_json::to_string(e).expect("errors serialize"))
    }

    fn mesh(e: MeshError) -> Self {
        let code = match e {
            MeshError::Violations(_) => DENIED,
            MeshError::UnknownComponent(_) => USAGE,
            _ => RUNTIME,
        };
        Failure::new(code, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Serialize, Deserialize)]
struct State {
    pid: u32,
    endpoints: BTreeMap<String, SocketAddr>,
}

struct Session {
    config: PathBuf,
    state: PathBuf,
    format: Format,
    principal: String,
}

impl Session {
    fn topology(&self) -> Result<MeshTopology, Failure> {
        load_topology_file(&self.config).map_err(|e| Failure::new(USAGE, e.to_string()))
    }

    /// A fresh mesh for `--ephemeral`, else a client of the one `up` runs.
    fn mesh(&self, ephemeral: bool) -> Result<Mesh, Failure> {
        let topology = self.topology()?;
        if ephemeral {
            return mesh_up(&topology, &MeshOptions::default()).map_err(Failure::mesh);
        }
        let text = std::fs::read_to_string(&self.state).map_err(|e| {
            Failure::new(
                RUNTIME,
                format!(
                    "no running mesh ({}: {e}); run `mesh up` or pass --ephemeral",
                    self.state.display()
                ),
            )
        })?;
        let state: State =
            serde_json::from_str(&text).map_err(|e| Failure::new(RUNTIME, format!("{}: {e}", self.state.display())))?;
        Mesh::attach(&topology, &state.endpoints).map_err(Failure::mesh)
    }
}

fn validate(s: &Session) -> Outcome {
    let findings = validate_topology(&s.topology()?);
    for f in &findings {
        println!("{f}");
    }
    let violations = findings.iter().filter(|f| f.is_violation()).count();
    println!("{violations} violations, {} warnings", findings.len() - violations);
    if violations > 0 {
        return Err(Failure::new(
            DENIED,
            format!("{} is not deployable", s.config.display()),
        ));
    }
    Ok(())
}

fn up(s: &Session) -> Outcome {
    let topology = s.topology()?;
    let options = MeshOptions {
        log_dir: None,
        expose_all: true,
    };
    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .map_err(|e| Failure::new(RUNTIME, format!("cannot install signal handler: {e}")))?;
    let mesh = mesh_up(&topology, &options).map_err(Failure::mesh)?;
    for w in mesh.warnings() {
        eprintln!("{w}");
    }
    let state = State {
        pid: std::process::id(),
        endpoints: mesh.endpoints(),
    };
    std::fs::write(
        &s.state,
        serde_json::to_string_pretty(&state).expect("state serializes"),
    )
    .map_err(|e| Failure::new(RUNTIME, format!("{}: {e}", s.state.display())))?;
    for (id, addr) in &state.endpoints {
        println!("{id} tcp:{addr}");
    }
    println!("mesh up: {} components", state.endpoints.len());
    let _ = rx.recv();
    mesh.down();
    let _ = std::fs::remove_file(&s.state);
    println!("mesh down");
    Ok(())
}

fn down(s: &Session) -> Outcome {
    let text = std::fs::read_to_string(&s.state)
        .map_err(|e| Failure::new(RUNTIME, format!("no running mesh ({}: {e})", s.state.display())))?;
    let state: State =
        serde_json::from_str(&text).map_err(|e| Failure::new(RUNTIME, format!("{}: {e}", s.state.display())))?;
    let status = std::process::Command::new("kill")
        .args(["-TERM", &state.pid.to_string()])
        .status()
        .map_err(|e| Failure::new(RUNTIME, format!("kill: {e}")))?;
    if !status.success() {
        // the process is gone; drop its stale state
        let _ = std::fs::remove_file(&s.state);
        return Err(Failure::new(RUNTIME, format!("process {} is not running", state.pid)));
    }
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(10);
    while s.state.exists() {
        if std::time::Instant::now() > deadline {
            return Err(Failure::new(RUNTIME, format!("process {} did not stop", state.pid)));
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    println!("mesh down");
    Ok(())
}

fn demo(scenario: Scenario, workspace: Option<&Path>, seed: u64) -> Outcome {
    let temp;
    let dir = match workspace {
        Some(d) => d,
        None => {
            temp = tempfile::tempdir().map_err(|e| Failure::new(RUNTIME, e.to_string()))?;
            temp.path()
        }
    };
    let report = run_demo(scenario, dir, seed).map_err(|e| Failure::new(RUNTIME, e.to_string()))?;
    print!("{}", report.render());
    match report.first_failure() {
        Some(c) => Err(Failure::new(RUNTIME, format!("check failed: {}: {}", c.name, c.detail))),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Outcome {
    let state = cli.state.clone().unwrap_or_else(|| {
        let mut name = cli.config.clone().into_os_string();
        name.push(".state.json");
        PathBuf::from(name)
    });
    let s = Session {
        config: cli.config,
        state,
        format: cli.format,
        principal: cli.principal,
    };
    match cli.command {
        Command::Validate => validate(&s),
        Command::Up => up(&s),
        Command::Down => down(&s),
        Command::Query {
            component,
            query,
            ephemeral,
        } => {
            let mesh = s.mesh(ephemeral)?;
            let out = mesh
                .query(&component, &query, &s.principal, s.format)
                .map_err(|e| Failure::component(&e))?;
            print!("{out}");
            Ok(())
        }
        Command::Catalog { ephemeral } => {
            let mesh = s.mesh(ephemeral)?;
            print!("{}", output::catalog(&mesh.catalog(), s.format));
            Ok(())
        }
        Command::Lineage {
            component,
            relation,
            ephemeral,
        } => {
            let mesh = s.mesh(ephemeral)?;
            let l = mesh
                .lineage(&component, &relation)
                .map_err(|e| Failure::component(&e))?;
            print!("{}", output::lineage(&l, s.format));
            Ok(())
        }
        Command::Materialize { component, ephemeral } => {
            let mesh = s.mesh(ephemeral)?;
            let c = mesh
                .component(&component)
                .ok_or_else(|| Failure::new(USAGE, format!("unknown component {component}")))?;
            let report = c.materialize().map_err(|e| Failure::component(&e))?;
            print!("{}", output::materialized(&report, s.format));
            Ok(())
        }
        Command::Stats { component, ephemeral } => {
            let mesh = s.mesh(ephemeral)?;
            let stats = mesh.stats(&component).map_err(Failure::mesh)?;
            print!("{}", output::stats(&component, &stats, s.format));
            Ok(())
        }
        Command::Demo {
            scenario,
            workspace,
            seed,
        } => demo(scenario, workspace.as_deref(), seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(OK),
        Err(f) => {
            eprintln!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}
