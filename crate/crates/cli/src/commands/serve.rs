use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use resistkit_inference::mock::{EchoGoldBackend, FixedReplyBackend};
use resistkit_inference::{ChatBackend, HttpChatClient};
use resistkit_server::{AppState, Classifier, ScenarioBank, Study};

use super::eval::{MOCK_GOLD, MOCK_TEXT};
use crate::config::Settings;
use crate::output::invalid;

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Port 0 picks a free port; the bound address is printed on stdout.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long, default_value = "study")]
    pub study_id: String,
    /// Holds the study event log.
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    /// Scenario bank (JSON lines); the built-in synthetic bank when absent.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Variable holding the admin token for ratings import and export.
    /// Those endpoints are open when the variable is unset.
    #[arg(long, default_value = "RESISTKIT_ADMIN_TOKEN")]
    pub admin_token_env: String,
}

pub async fn serve(s: &Settings, a: ServeArgs) -> Result<()> {
    let bank = match &a.scenarios {
        Some(p) => ScenarioBank::load_path(p).map_err(|e| invalid(p, e))?,
        None => ScenarioBank::synthetic(),
    };
    let (backend, parallelism): (Arc<dyn ChatBackend>, usize) = match s.backend.as_str() {
        MOCK_GOLD => (
            Arc::new(EchoGoldBackend::new(
                bank.scenarios().iter().map(|x| (x.response.clone(), x.gold, x.rationale.clone())),
            )),
            4,
        ),
        MOCK_TEXT => (Arc::new(FixedReplyBackend::new("I think the client resists.")), 4),
        _ => {
            let cfg = s.http_backend()?;
            let p = cfg.parallelism;
            (Arc::new(HttpChatClient::new(cfg)?), p)
        }
    };
    std::fs::create_dir_all(&a.data_dir).with_context(|| format!("creating {}", a.data_dir.display()))?;
    let log = a.data_dir.join(format!("{}.events.jsonl", a.study_id));
    let study = Study::open(&a.study_id, &log, Arc::new(bank), s.seed).map_err(|e| invalid(&log, e))?;
    let admin_token = std::env::var(&a.admin_token_env).ok().filter(|t| !t.is_empty());
    if admin_token.is_none() {
        tracing::warn!("{} is unset; admin endpoints are unauthenticated", a.admin_token_env);
    }
    let state = AppState {
        classifier: Arc::new(Classifier::new(&s.backend, backend, parallelism)),
        study: Arc::new(study),
        admin_token,
    };
    let listener = tokio::net::TcpListener::bind(&a.addr).await.with_context(|| format!("binding {}", a.addr))?;
    let mut stdout = std::io::stdout();
    writeln!(stdout, "listening on http://{}", listener.local_addr()?)?;
    stdout.flush()?;
    resistkit_server::serve(listener, state).await?;
    Ok(())
}
