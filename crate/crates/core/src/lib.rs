pub mod corpus;
pub mod model;
pub mod synthetic;
pub mod text;
pub mod tokenize;
pub mod trainer;
