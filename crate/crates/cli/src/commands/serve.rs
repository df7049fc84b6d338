use std::io::BufRead;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use todsim_core::agents::{Agent, AgentError, Observation, Role};
use todsim_core::bootstrap::{ExemplarTrainer, Trainer};
use todsim_core::dialogue::{parse_call, ApiResponse, Speaker, Turn, CALL_PREFIX, DONE};
use todsim_core::mock_api::{ApiBackend, ApiTable};
use todsim_http::{agent_router, invoke_router, AgentService};

use crate::agents::{self, AgentSpec};
use crate::error::CliError;
use crate::Outcome;

fn serve_blocking(addr: SocketAddr, app: axum::Router, what: &str) -> Result<Outcome, CliError> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Usage(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Usage(format!("bind {addr}: {e}")))?;
        eprintln!("{what} listening on http://{addr}");
        todsim_http::serve(listener, app)
            .await
            .map_err(|e| CliError::Usage(format!("serve: {e}")))
    })?;
    Ok(Outcome::default())
}

#[derive(Debug, Clone, clap::Args)]
pub struct ServeApiArgs {
    #[arg(long)]
    pub api_table: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8090")]
    pub addr: SocketAddr,
}

pub fn run_serve_api(args: &ServeApiArgs) -> Result<Outcome, CliError> {
    agents::check_input(&args.api_table)?;
    let table: Arc<dyn ApiBackend> = Arc::new(ApiTable::load_jsonl(&args.api_table)?);
    serve_blocking(args.addr, invoke_router(table), "API table")
}

/// Sends each observation to the agent for its role.
struct ByRole {
    user: Arc<dyn Agent>,
    assistant: Arc<dyn Agent>,
}

impl Agent for ByRole {
    fn act(&self, obs: &Observation) -> Result<String, AgentError> {
        match obs.role {
            Role::User => self.user.act(obs),
            Role::Assistant => self.assistant.act(obs),
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct ServeAgentArgs {
    /// Agent answering requests without a checkpoint header.
    #[arg(long, default_value = "scripted")]
    pub agent: String,
    /// Load exemplar checkpoints named in the checkpoint header.
    #[arg(long)]
    pub load_checkpoints: bool,
    #[arg(long)]
    pub phrasebook: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8091")]
    pub addr: SocketAddr,
}

pub fn run_serve_agent(args: &ServeAgentArgs) -> Result<Outcome, CliError> {
    let book = agents::phrasebook(args.phrasebook.as_deref())?;
    let spec = AgentSpec::parse(&args.agent)?;
    let default: Arc<dyn Agent> = Arc::new(ByRole {
        user: spec.build(Role::User, &book)?,
        assistant: spec.build(Role::Assistant, &book)?,
    });
    let service = if args.load_checkpoints {
        AgentService::with_loader(
            Some(default),
            Box::new(|ckpt: &str| ExemplarTrainer.load(std::path::Path::new(ckpt)).map_err(|e| e.to_string())),
        )
    } else {
        AgentService::new(default)
    };
    serve_blocking(args.addr, agent_router(Arc::new(service)), "agent")
}

#[derive(Debug, Clone, clap::Args)]
pub struct PlayArgs {
    /// scripted | exemplar:<path> | remote:<url>
    #[arg(long, default_value = "scripted")]
    pub assistant_agent: String,
    /// Goal whose schema a schema-aware assistant is shown.
    #[arg(long)]
    pub goal: Option<String>,
    #[arg(long)]
    pub schema_aware: bool,
    #[arg(long)]
    pub api_table: Option<PathBuf>,
    #[arg(long)]
    pub phrasebook: Option<PathBuf>,
    #[arg(long, default_value = "greedy")]
    pub decode: String,
    #[arg(long, default_value_t = 0.9)]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Reads User turns from stdin until EOF or `[DONE]`, printing the
/// Assistant's calls, API responses and replies.
pub fn run_play(args: &PlayArgs) -> Result<Outcome, CliError> {
    let book = agents::phrasebook(args.phrasebook.as_deref())?;
    let assistant = AgentSpec::parse(&args.assistant_agent)?.build(Role::Assistant, &book)?;
    let api: Box<dyn ApiBackend> = match &args.api_table {
        Some(p) => agents::api_backend(Some(p.as_path()), None)?,
        None => Box::new(ApiTable::new()),
    };
    let grounding = match (&args.goal, args.schema_aware) {
        (Some(g), true) => Some(
            parse_call(g)
                .map_err(|e| CliError::Usage(format!("--goal: {e}")))?
                .schema()
                .to_string(),
        ),
        (None, true) => return Err(CliError::Usage("--schema-aware needs --goal".into())),
        _ => None,
    };
    let decode = agents::decode(&args.decode, args.p, args.seed)?;
    let mut history: Vec<Turn> = Vec::new();
    let ask = |history: &[Turn]| {
        assistant.act(&Observation {
            role: Role::Assistant,
            grounding: grounding.clone(),
            history: history.to_vec(),
            decode,
        })
    };
    eprintln!("type User turns; {DONE} or EOF ends the dialogue");
    for line in std::io::stdin().lock().lines() {
        let line = line.map_err(|e| CliError::io("stdin", e))?;
        let said = line.trim().to_string();
        if said == DONE {
            break;
        }
        history.push(Turn::new(Speaker::User, said));
        let reply = ask(&history)?;
        if reply.trim_start().starts_with(CALL_PREFIX) {
            let response = parse_call(&reply).map_or(ApiResponse::Failure, |c| api.invoke(&c));
            println!("  {reply}");
            println!("  {response}");
            history.push(Turn::new(Speaker::AssistantCall, reply));
            history.push(Turn::new(Speaker::ApiResp, response.to_string()));
            let utterance = ask(&history)?;
            println!("Assistant: {utterance}");
            history.push(Turn::new(Speaker::AssistantUtt, utterance));
        } else {
            println!("Assistant: {reply}");
            history.push(Turn::new(Speaker::AssistantUtt, reply));
        }
    }
    Ok(Outcome::new("", &serde_json::json!({ "turns": history })))
}
