//! Personalized tool-using LLM agents.
//!
//! Each user gets an episodic memory of past interactions, a summarized
//! semantic profile and a persona (a per-user system prompt) that conditions
//! a ReAct-style tool loop. Before answering held-out queries the persona is
//! aligned to the user by replaying recent interactions, collecting critic
//! feedback and rewriting the prompt. The [`benchmark`] module evaluates this
//! pipeline against single-completion and agent baselines.

pub mod agent;
pub mod alignment;
pub mod analysis;
pub mod benchmark;
pub mod cli;
pub mod config;
pub mod embedding;
pub mod llm;
pub mod memory;
pub mod model;
pub mod text;
pub mod tools;
