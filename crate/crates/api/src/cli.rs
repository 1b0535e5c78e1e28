// SPDX-License-Identifier: Apache-2.0

//! `netorch` command line. Exit codes: 0 success, 1 API or operation
//! failure, 2 usage error.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use netorch_core::devsim::{Binding, Faults, SimFleet, SpawnOptions};
use netorch_core::dialect::DialectRegistry;
use netorch_core::orchestrator::{Orchestrator, OrchestratorConfig};
use netorch_core::provisioner::{Baselines, InstanceKind, InstanceType};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::client::{Client, ClientError};
use crate::server;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "netorch", version, about = "Network orchestration service and client")]
pub struct Cli {
    /// API base URL.
    #[arg(long, env = "NETORCH_SERVER", default_value = "http://127.0.0.1:7878", global = true)]
    server: String,
    /// File holding the bearer token.
    #[arg(long, env = "NETORCH_TOKEN", global = true)]
    token: Option<PathBuf>,
    /// Run an embedded service for this one command instead of calling a server.
    #[arg(long, global = true)]
    local: bool,
    /// Inventory file for `serve` and `--local`.
    #[arg(long, env = "NETORCH_INVENTORY", global = true)]
    inventory: Option<PathBuf>,
    #[arg(long, env = "NETORCH_LOG_LEVEL", default_value = "warn", global = true)]
    log_level: String,
    /// Print raw JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve(ServeArgs),
    #[command(subcommand)]
    Device(DeviceCmd),
    #[command(subcommand)]
    Tenant(TenantCmd),
    #[command(subcommand)]
    Task(TaskCmd),
    #[command(subcommand)]
    Instance(InstanceCmd),
    #[command(subcommand)]
    Policy(PolicyCmd),
    #[command(subcommand)]
    Bgp(BgpCmd),
    #[command(subcommand)]
    Sim(SimCmd),
    /// Print events, optionally following the stream.
    Events(EventsArgs),
    Metrics,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "NETORCH_LISTEN", default_value = "127.0.0.1:7878")]
    listen: SocketAddr,
    /// Append every event to this JSON-lines file.
    #[arg(long, env = "NETORCH_EVENTS_FILE")]
    events_file: Option<PathBuf>,
    /// Extra dialect definition files.
    #[arg(long = "dialect-file")]
    dialect_files: Vec<PathBuf>,
    /// Replacement golden-image baselines (JSON).
    #[arg(long, env = "NETORCH_BASELINES")]
    baselines: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum DeviceCmd {
    List {
        #[arg(long)]
        platform: Option<String>,
        #[arg(long)]
        reachability: Option<String>,
    },
    Add {
        #[arg(long)]
        name: String,
        #[arg(long)]
        platform: String,
        #[arg(long)]
        dialect: String,
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        asn: Option<u32>,
        #[arg(long)]
        credential_ref: Option<String>,
    },
    Get { id: String },
    Probe { id: String },
}

#[derive(Debug, Subcommand)]
enum TenantCmd {
    List,
    Add {
        name: String,
        #[arg(long)]
        quota: u32,
    },
}

#[derive(Debug, Subcommand)]
enum TaskCmd {
    /// Run a task document (JSON) and wait for the result.
    Run {
        file: PathBuf,
        /// Return as soon as the task is accepted.
        #[arg(long)]
        no_wait: bool,
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
    },
    Get { id: String },
    List,
}

#[derive(Debug, Subcommand)]
enum InstanceCmd {
    List,
    Get { id: String },
    Create {
        #[arg(long)]
        host: String,
        #[arg(long)]
        tenant: String,
        #[arg(long)]
        count: u32,
        #[arg(long = "type")]
        instance_type: InstanceType,
        #[arg(long, value_parser = parse_enum::<InstanceKind>)]
        kind: InstanceKind,
        #[arg(long)]
        validate: bool,
        #[arg(long)]
        fresh_install: bool,
        /// Seconds to wait for the instances to settle.
        #[arg(long)]
        wait: Option<f64>,
    },
    Validate { id: String },
    FreshInstall { id: String },
    Retry { id: String },
    Disable { id: String },
    Terminate { id: String },
    /// Report a health sample for an instance.
    Health {
        id: String,
        #[arg(long)]
        utilization: f64,
        #[arg(long)]
        dead: bool,
    },
}

#[derive(Debug, Subcommand)]
enum PolicyCmd {
    List,
    Set {
        #[arg(long)]
        service: InstanceType,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        #[arg(long, default_value_t = 500)]
        check_interval_ms: u64,
        #[arg(long, default_value_t = 5000)]
        cooldown_ms: u64,
        #[arg(long, default_value_t = 2)]
        max_replicas: u32,
        #[arg(long, default_value = "failover")]
        mode: String,
        #[arg(long, default_value_t = 1)]
        smoothing: usize,
    },
}

#[derive(Debug, Subcommand)]
enum BgpCmd {
    Speakers,
    Rib { speaker: String },
    Announce {
        speaker: String,
        prefix: String,
        #[arg(long, default_value = "igp")]
        origin: String,
    },
    Withdraw { speaker: String, prefix: String },
}

#[derive(Debug, Subcommand)]
enum SimCmd {
    /// Run one simulated device on a TCP port in the foreground.
    Spawn {
        #[arg(long)]
        dialect: String,
        #[arg(long, default_value_t = 0)]
        port: u16,
        /// Initial running config (JSON document).
        #[arg(long)]
        initial: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        latency_ms: u64,
    },
    /// Start a simulated device inside the server.
    Add {
        #[arg(long)]
        dialect: String,
        #[arg(long)]
        initial: Option<PathBuf>,
    },
    Inspect { endpoint: String },
}

#[derive(Debug, Args)]
struct EventsArgs {
    #[arg(long, default_value_t = 0)]
    since: u64,
    /// Long-poll up to this many seconds for the first new event.
    #[arg(long)]
    wait: Option<f64>,
    /// Keep printing new events until interrupted.
    #[arg(long)]
    follow: bool,
    #[arg(long)]
    category: Option<String>,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

enum Failure {
    Usage(String),
    Op(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Op(e.to_string())
    }
}

type Outcome = Result<i32, Failure>;

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Parse and execute `args` (including the program name).
pub async fn run(args: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log_level).unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .try_init();
    match execute(cli, out).await {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Op(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_FAILURE
        }
    }
}

fn read_token(path: &Option<PathBuf>) -> Result<Option<String>, Failure> {
    path.as_ref()
        .map(|p| {
            std::fs::read_to_string(p)
                .map(|t| t.trim().to_string())
                .map_err(|e| Failure::Usage(format!("token file {}: {e}", p.display())))
        })
        .transpose()
}

async fn orchestrator(cli: &Cli, serve: Option<&ServeArgs>) -> Result<Arc<Orchestrator>, Failure> {
    let mut config = OrchestratorConfig {
        inventory_path: cli.inventory.clone(),
        ..Default::default()
    };
    if let Some(s) = serve {
        config.events_path = s.events_file.clone();
        config.dialect_files = s.dialect_files.clone();
        if let Some(p) = &s.baselines {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            config.baselines = Baselines::from_json(&text).map_err(Failure::Usage)?;
        }
    }
    Orchestrator::start(config).await.map_err(|e| Failure::Op(e.to_string()))
}

async fn execute(cli: Cli, out: &mut dyn Write) -> Outcome {
    let token = read_token(&cli.token)?;
    match &cli.command {
        Command::Serve(args) => return serve(&cli, args, token, out).await,
        Command::Sim(SimCmd::Spawn { dialect, port, initial, latency_ms }) => {
            return sim_spawn(dialect, *port, initial.as_deref(), *latency_ms, out).await;
        }
        _ => {}
    }
    let (client, embedded) = if cli.local {
        let orch = orchestrator(&cli, None).await?;
        let base = server::spawn_local(orch.clone(), token.clone())
            .await
            .map_err(|e| Failure::Op(e.to_string()))?;
        (Client::new(base, token), Some(orch))
    } else {
        (Client::new(cli.server.clone(), token), None)
    };
    let result = dispatch(&cli, &client, out).await;
    if let Some(o) = embedded {
        o.shutdown();
    }
    result
}

async fn serve(cli: &Cli, args: &ServeArgs, token: Option<String>, out: &mut dyn Write) -> Outcome {
    let orch = orchestrator(cli, Some(args)).await?;
    let listener = tokio::net::TcpListener::bind(args.listen)
        .await
        .map_err(|e| Failure::Op(format!("bind {}: {e}", args.listen)))?;
    let addr = listener.local_addr().map_err(|e| Failure::Op(e.to_string()))?;
    let _ = writeln!(out, "listening on http://{addr}");
    let _ = out.flush();
    tracing::info!(%addr, "serving");
    let app = server::router(orch.clone(), token);
    server::serve(listener, app, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(|e| Failure::Op(e.to_string()))?;
    orch.shutdown();
    Ok(EXIT_OK)
}

async fn sim_spawn(dialect: &str, port: u16, initial: Option<&Path>, latency_ms: u64, out: &mut dyn Write) -> Outcome {
    let mut opts = SpawnOptions::new(dialect)
        .binding(Binding::Tcp { port })
        .faults(Faults {
            latency_ms,
            ..Default::default()
        });
    if let Some(p) = initial {
        let doc = serde_json::from_value(read_json(p)?).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
        opts = opts.initial(doc);
    }
    let fleet = SimFleet::new(DialectRegistry::builtin());
    let endpoint = fleet.spawn(opts).await.map_err(|e| match e {
        netorch_core::devsim::SimError::UnknownDialect(_) => Failure::Usage(e.to_string()),
        _ => Failure::Op(e.to_string()),
    })?;
    let _ = writeln!(out, "{endpoint}");
    let _ = out.flush();
    let _ = tokio::signal::ctrl_c().await;
    Ok(EXIT_OK)
}

async fn dispatch(cli: &Cli, c: &Client, out: &mut dyn Write) -> Outcome {
    let json_out = cli.json;
    let print = |out: &mut dyn Write, v: &Value| {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(v).expect("json prints"));
    };
    match &cli.command {
        Command::Serve(_) | Command::Sim(SimCmd::Spawn { .. }) => unreachable!("handled before dispatch"),

        Command::Device(cmd) => match cmd {
            DeviceCmd::List { platform, reachability } => {
                let mut q = Vec::new();
                if let Some(p) = platform {
                    q.push(format!("platform={p}"));
                }
                if let Some(r) = reachability {
                    q.push(format!("reachability={r}"));
                }
                let path = if q.is_empty() { "/devices".to_string() } else { format!("/devices?{}", q.join("&")) };
                let v = c.get(&path).await?;
                if json_out {
                    print(out, &v);
                } else {
                    table(
                        out,
                        &["NAME", "ID", "PLATFORM", "DIALECT", "ENDPOINT", "REACHABILITY", "ASN"],
                        rows(&v, &["name", "id", "platform", "dialect_id", "mgmt_endpoint", "reachability", "asn"]),
                    );
                }
            }
            DeviceCmd::Add { name, platform, dialect, endpoint, asn, credential_ref } => {
                let body = json!({
                    "name": name, "platform": platform, "dialect_id": dialect,
                    "mgmt_endpoint": endpoint, "asn": asn, "credential_ref": credential_ref,
                });
                let v = c.post("/devices", &body).await?;
                if json_out {
                    print(out, &v);
                } else {
                    let _ = writeln!(out, "{}", s(&v["id"]));
                }
            }
            DeviceCmd::Get { id } => print(out, &c.get(&format!("/devices/{id}")).await?),
            DeviceCmd::Probe { id } => {
                let v = c.post(&format!("/devices/{id}/probe"), &json!({})).await?;
                if json_out {
                    print(out, &v);
                } else {
                    let _ = writeln!(out, "{}: {}", s(&v["name"]), s(&v["reachability"]));
                }
            }
        },

        Command::Tenant(cmd) => match cmd {
            TenantCmd::List => {
                let v = c.get("/tenants").await?;
                if json_out {
                    print(out, &v);
                } else {
                    table(out, &["NAME", "QUOTA"], rows(&v, &["name", "quota_instances"]));
                }
            }
            TenantCmd::Add { name, quota } => {
                let v = c.post("/tenants", &json!({"name": name, "quota_instances": quota})).await?;
                if json_out {
                    print(out, &v);
                }
            }
        },

        Command::Task(cmd) => match cmd {
            TaskCmd::Run { file, no_wait, timeout } => {
                let doc = read_json(file)?;
                let path = if *no_wait { "/tasks".to_string() } else { format!("/tasks?wait={timeout}") };
                let v = c.post(&path, &doc).await?;
                return Ok(print_task(out, &v, json_out));
            }
            TaskCmd::Get { id } => {
                let v = c.get(&format!("/tasks/{id}")).await?;
                return Ok(print_task(out, &v, json_out));
            }
            TaskCmd::List => {
                let v = c.get("/tasks").await?;
                if json_out {
                    print(out, &v);
                } else {
                    table(out, &["ID", "STATE", "SUBMITTED", "DEVICES"], {
                        let mut r = rows(&v, &["id", "state", "submitted_at"]);
                        for (row, t) in r.iter_mut().zip(v.as_array().into_iter().flatten()) {
                            row.push(t["reports"].as_array().map_or(0, Vec::len).to_string());
                        }
                        r
                    });
                }
            }
        },

        Command::Instance(cmd) => match cmd {
            InstanceCmd::List => {
                let v = c.get("/instances").await?;
                if json_out {
                    print(out, &v);
                } else {
                    table(
                        out,
                        &["ID", "TYPE", "KIND", "TENANT", "HOST", "STATE", "ROLE", "ENDPOINT"],
                        rows(&v, &["id", "type", "kind", "tenant", "host_device_id", "state", "role", "endpoint"]),
                    );
                }
            }
            InstanceCmd::Get { id } => print(out, &c.get(&format!("/instances/{id}")).await?),
            InstanceCmd::Create { host, tenant, count, instance_type, kind, validate, fresh_install, wait } => {
                let body = json!({
                    "host": host, "tenant": tenant, "count": count, "type": instance_type,
                    "kind": kind, "validate": validate, "fresh_install": fresh_install,
                });
                let path = match wait {
                    Some(w) => format!("/instances?wait={w}"),
                    None => "/instances".to_string(),
                };
                let v = c.post(&path, &body).await?;
                if json_out {
                    print(out, &v);
                } else {
                    for r in v.as_array().into_iter().flatten() {
                        let _ = writeln!(out, "{}", s(&r["id"]));
                    }
                }
            }
            InstanceCmd::Validate { id } => {
                let v = c.post(&format!("/instances/{id}/validate"), &json!({})).await?;
                if json_out {
                    print(out, &v);
                } else {
                    table(out, &["CHECK", "PASS", "DETAIL"], rows(&v["checks"], &["name", "pass", "detail"]));
                }
                return Ok(if v["overall"] == json!(true) { EXIT_OK } else { EXIT_FAILURE });
            }
            InstanceCmd::FreshInstall { id } => print(out, &c.post(&format!("/instances/{id}/fresh-install"), &json!({})).await?),
            InstanceCmd::Retry { id } => print(out, &c.post(&format!("/instances/{id}/retry"), &json!({})).await?),
            InstanceCmd::Disable { id } => print(out, &c.post(&format!("/instances/{id}/disable"), &json!({})).await?),
            InstanceCmd::Terminate { id } => print(out, &c.delete(&format!("/instances/{id}")).await?),
            InstanceCmd::Health { id, utilization, dead } => {
                let v = c
                    .post(&format!("/instances/{id}/health"), &json!({"utilization": utilization, "alive": !dead}))
                    .await?;
                print(out, &v);
            }
        },

        Command::Policy(cmd) => match cmd {
            PolicyCmd::List => {
                let v = c.get("/policies").await?;
                if json_out {
                    print(out, &v);
                } else {
                    table(
                        out,
                        &["SERVICE", "MODE", "THRESHOLD", "INTERVAL_MS", "COOLDOWN_MS", "MAX_REPLICAS"],
                        rows(&v, &["service", "mode", "threshold", "check_interval_ms", "cooldown_ms", "max_replicas"]),
                    );
                }
            }
            PolicyCmd::Set { service, threshold, check_interval_ms, cooldown_ms, max_replicas, mode, smoothing } => {
                let body = json!({
                    "service": service, "threshold": threshold, "check_interval_ms": check_interval_ms,
                    "cooldown_ms": cooldown_ms, "max_replicas": max_replicas, "mode": mode, "smoothing": smoothing,
                });
                let v = c.post("/policies", &body).await?;
                if json_out {
                    print(out, &v);
                }
            }
        },

        Command::Bgp(cmd) => match cmd {
            BgpCmd::Speakers => {
                let v = c.get("/bgp").await?;
                if json_out {
                    print(out, &v);
                } else {
                    let mut r = rows(&v, &["name", "asn", "listen", "next_hop"]);
                    for (row, sp) in r.iter_mut().zip(v.as_array().into_iter().flatten()) {
                        let peers = sp["peers"].as_array().cloned().unwrap_or_default();
                        let up = peers.iter().filter(|p| p["state"] == "established").count();
                        row.push(format!("{up}/{}", peers.len()));
                    }
                    table(out, &["NAME", "ASN", "LISTEN", "NEXT_HOP", "PEERS_UP"], r);
                }
            }
            BgpCmd::Rib { speaker } => {
                let v = c.get(&format!("/bgp/{speaker}/rib")).await?;
                if json_out {
                    print(out, &v);
                } else {
                    print_routes(out, &v["loc_rib"]);
                }
            }
            BgpCmd::Announce { speaker, prefix, origin } => {
                let v = c
                    .post(&format!("/bgp/{speaker}/routes"), &json!({"prefix": prefix, "origin": origin}))
                    .await?;
                if json_out {
                    print(out, &v);
                } else {
                    print_routes(out, &v["loc_rib"]);
                }
            }
            BgpCmd::Withdraw { speaker, prefix } => {
                let v = c
                    .post(&format!("/bgp/{speaker}/routes"), &json!({"prefix": prefix, "withdraw": true}))
                    .await?;
                if json_out {
                    print(out, &v);
                } else {
                    print_routes(out, &v["loc_rib"]);
                }
            }
        },

        Command::Sim(cmd) => match cmd {
            SimCmd::Spawn { .. } => unreachable!(),
            SimCmd::Add { dialect, initial } => {
                let mut body = json!({"dialect": dialect});
                if let Some(p) = initial {
                    body["initial"] = read_json(p)?;
                }
                let v = c.post("/sim/devices", &body).await?;
                if json_out {
                    print(out, &v);
                } else {
                    let _ = writeln!(out, "{}", s(&v["endpoint"]));
                }
            }
            SimCmd::Inspect { endpoint } => print(out, &c.get(&format!("/sim/devices/{endpoint}")).await?),
        },

        Command::Events(a) => {
            let mut since = a.since;
            let cat = a.category.as_ref().map(|c| format!("&category={c}")).unwrap_or_default();
            loop {
                let wait = if a.follow { Some(30.0) } else { a.wait };
                let w = wait.map(|w| format!("&wait={w}")).unwrap_or_default();
                let v = c.get(&format!("/events?since={since}{w}{cat}")).await?;
                let batch = v.as_array().cloned().unwrap_or_default();
                if json_out {
                    for e in &batch {
                        let _ = writeln!(out, "{e}");
                    }
                } else {
                    for e in &batch {
                        let _ = writeln!(
                            out,
                            "{:>6}  {}  {:<8} {:<5} {}",
                            e["seq"],
                            s(&e["timestamp"]),
                            s(&e["category"]),
                            s(&e["severity"]),
                            s(&e["payload"]["kind"])
                        );
                    }
                }
                let _ = out.flush();
                if let Some(last) = batch.last() {
                    since = last["seq"].as_u64().unwrap_or(since);
                }
                if !a.follow {
                    break;
                }
            }
        }

        Command::Metrics => print(out, &c.get("/metrics").await?),
    }
    Ok(EXIT_OK)
}

fn print_task(out: &mut dyn Write, v: &Value, json_out: bool) -> i32 {
    if json_out {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(v).expect("json prints"));
    } else {
        let _ = writeln!(out, "{} {}", s(&v["id"]), s(&v["state"]));
        table(
            out,
            &["DEVICE", "OUTCOME", "SENT", "MS", "ERROR"],
            rows(&v["reports"], &["device_name", "outcome", "commands_sent", "duration_ms", "error"]),
        );
    }
    if v["state"] == "failed" {
        EXIT_FAILURE
    } else {
        EXIT_OK
    }
}

fn print_routes(out: &mut dyn Write, routes: &Value) {
    let mut r = rows(routes, &["prefix", "next_hop"]);
    for (row, route) in r.iter_mut().zip(routes.as_array().into_iter().flatten()) {
        let path: Vec<String> = route["as_path"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|a| a.to_string())
            .collect();
        row.push(path.join(" "));
        row.push(s(&route["local_pref"]));
        row.push(s(&route["origin"]));
        row.push(s(&route["learned_from"]));
    }
    table(out, &["PREFIX", "NEXT_HOP", "AS_PATH", "LOCAL_PREF", "ORIGIN", "FROM"], r);
}

/// JSON scalar as display text; null is empty.
fn s(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(x) => x.clone(),
        other => other.to_string(),
    }
}

fn rows(list: &Value, fields: &[&str]) -> Vec<Vec<String>> {
    list.as_array()
        .into_iter()
        .flatten()
        .map(|item| fields.iter().map(|f| s(&item[*f])).collect())
        .collect()
}

fn table(out: &mut dyn Write, headers: &[&str], rows: Vec<Vec<String>>) {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let _ = writeln!(out, "{}", line(headers.to_vec()));
    for r in &rows {
        let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
    }
}
