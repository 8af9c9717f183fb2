pub mod backend;
pub mod canned;
pub mod emotion;
pub mod eval;
pub mod memory;
pub mod par;
pub mod pipeline;
pub mod prompts;
pub mod role_card;
pub mod synthesis;
pub mod transcript;
