pub mod audit;
pub mod gradcheck;
pub mod oracle;
pub mod run;
