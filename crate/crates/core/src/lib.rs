//! Session runtime for the headset copilot.

pub mod clock;
pub mod context;
pub mod intent;
pub mod status;
pub mod assets;
pub mod audio;
pub mod email;
pub mod gateway;
pub mod script;
pub mod search;
pub mod config;
pub mod dispatcher;
pub mod events;
pub mod runtime;
pub mod session;

pub use copilot_media as media;
