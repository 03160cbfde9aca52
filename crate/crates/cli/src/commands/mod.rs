pub mod analysis;
pub mod corpus;
pub mod eval;
pub mod serve;

use std::path::Path;

use anyhow::Result;
use resistkit_core::corpus::{load_annotations, load_samples, load_sessions, AnnotationRecord, Sample, Session};

use crate::output::{invalid, open};

pub fn read_sessions(path: &Path) -> Result<Vec<Session>> {
    load_sessions(open(path)?).map_err(|e| invalid(path, e))
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    load_annotations(open(path)?).map_err(|e| invalid(path, e))
}

pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    load_samples(open(path)?).map_err(|e| invalid(path, e))
}
