pub mod agent;
pub mod context;
pub mod controller;
pub mod frame;
pub mod fsm;
pub mod predictor;
pub mod window;
pub mod corpus;
pub mod metrics;
pub mod harness;
