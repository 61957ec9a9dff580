pub mod analyze;
pub mod oracle;
pub mod simulate;
