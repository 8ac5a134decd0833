//! placeholder
pub fn clamp_extend() {}
pub fn run() {}
pub struct FinalCertificate;
pub struct IterationState;
pub struct Schedule;
