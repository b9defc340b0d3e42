//! File formats shared by the commands.

pub mod binary;
pub mod corpus;
pub mod records;
pub mod text;
