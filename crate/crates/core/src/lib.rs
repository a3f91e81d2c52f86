pub mod chaosj;
pub mod chimera;
pub mod engine;
pub mod exact;
pub mod landscape;
pub mod mixing;
pub mod pipeline;
pub mod ttslab;
pub mod util;
