//! Per-record audit trail: every prompt, response, decision, and flag.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditEvent {
    Filter {
        retained_chunks: usize,
        total_chunks: usize,
        error: Option<String>,
    },
    Generation {
        category: String,
        template_version: u32,
        prompt: String,
        response: Option<String>,
        error: Option<String>,
    },
    Rerank {
        prompt: String,
        response: Option<String>,
        parsed_order: Option<Vec<usize>>,
        repair: bool,
        fallback: bool,
        error: Option<String>,
    },
    Selection {
        chosen_index: usize,
        category: String,
        rerank_called: bool,
    },
    RefineAttempt {
        attempt: u32,
        prompt: String,
        response: Option<String>,
        token_count: Option<usize>,
        in_window: Option<bool>,
        error: Option<String>,
    },
    Flag {
        flag: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditTrail {
    pub paper_id: String,
    pub model_id: String,
    pub events: Vec<AuditEvent>,
    pub flags: Vec<String>,
}

impl AuditTrail {
    pub fn new(paper_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        AuditTrail {
            paper_id: paper_id.into(),
            model_id: model_id.into(),
            events: Vec::new(),
            flags: Vec::new(),
        }
    }

    pub fn push(&mut self, event: AuditEvent) {
        self.events.push(event);
    }

    pub fn flag(&mut self, flag: impl Into<String>) {
        let flag = flag.into();
        self.events.push(AuditEvent::Flag { flag: flag.clone() });
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
    }

    pub fn rerank_calls(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, AuditEvent::Rerank { .. })).count()
    }

    /// Strip verbatim prompts and responses, keeping structure and decisions.
    pub fn redact(&mut self) {
        for event in &mut self.events {
            match event {
                AuditEvent::Generation { prompt, response, .. } => {
                    *prompt = String::new();
                    *response = None;
                }
                AuditEvent::Rerank { prompt, response, .. } => {
                    *prompt = String::new();
                    *response = None;
                }
                AuditEvent::RefineAttempt { prompt, response, .. } => {
                    *prompt = String::new();
                    *response = None;
                }
                _ => {}
            }
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("trail serializes");
        out.push('\n');
        out
    }
}
