//! Desk-scale laboratory for tracker detection on page-load graphs: parse
//! page-load traces, build cross-layer graphs with information-flow edges,
//! extract content/structural/flow features, train and explain decision-tree
//! ensembles, and probe them with content- and structure-mutation attacks.

pub mod attack;
pub mod corpus;
pub mod domains;
pub mod eventlog;
pub mod features;
pub mod graph;
pub mod labels;
pub mod model;
pub mod pipeline;
pub mod seed;
