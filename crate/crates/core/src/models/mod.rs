//! Predictors: generalised linear models, random-intercept mixed models and
//! recurrent networks trained from scratch, with effect augmentation or
//! effect pretraining.

pub mod glm;
pub mod lm;
pub mod mixed;
pub mod rnn;
pub mod sequence;
pub mod train;
pub mod checkpoint;
