pub mod evaluate;
pub mod generate;
pub mod inspect;
pub mod preprocess;
pub mod train;
