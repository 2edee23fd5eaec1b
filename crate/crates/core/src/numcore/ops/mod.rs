pub mod conv;
pub mod layers;
pub mod loss;
pub mod lstm;
pub mod norm;
