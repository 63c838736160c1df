pub mod clock;
pub mod corpus;
pub mod llm;
pub mod text;
pub mod idea;
pub mod workspace;
pub mod protocol;
pub mod toolkit;
pub mod evaluation;
pub mod store;
pub mod agent;
pub mod harness;
