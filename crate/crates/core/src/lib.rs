//! Page-level test-time adaptation for line-level handwriting recognition.

pub mod confidence;
pub mod ctc;
pub mod decoder;
pub mod data;
pub mod lm;
pub mod optical;
pub mod rescore;
pub mod textcore;
pub mod tta;
