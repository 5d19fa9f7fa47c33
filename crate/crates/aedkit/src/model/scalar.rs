//! Element type abstraction: the network runs in `f32` for training speed
//! and in `f64` when gradients are being verified against finite
//! differences.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn cast_from_f64(v: f64) -> Self;
    fn cast_to_f64(self) -> f64;
    fn cast_from_f32(v: f32) -> Self;
    fn cast_to_f32(self) -> f32;
}

impl Scalar for f32 {
    fn cast_from_f64(v: f64) -> Self {
        v as f32
    }
    fn cast_to_f64(self) -> f64 {
        self as f64
    }
    fn cast_from_f32(v: f32) -> Self {
        v
    }
    fn cast_to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn cast_from_f64(v: f64) -> Self {
        v
    }
    fn cast_to_f64(self) -> f64 {
        self
    }
    fn cast_from_f32(v: f32) -> Self {
        v as f64
    }
    fn cast_to_f32(self) -> f32 {
        self as f32
    }
}
