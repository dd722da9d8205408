pub mod autodiff;
pub mod bilevel;
pub mod dynamics;
pub mod harness;
pub mod magnitude_stop;
pub mod search_space;
