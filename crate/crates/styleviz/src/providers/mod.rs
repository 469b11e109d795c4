pub mod http;
pub mod mock;

pub use http::{HttpImageProvider, HttpLlmProvider};
pub use mock::{MockImageProvider, MockLlm, ScriptedLlm};
