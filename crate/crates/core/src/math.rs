//! Float math that works on both std and no_std builds.
//!
//! `core` does not provide transcendental functions, so every call site in
//! this crate goes through these shims: std builds use the std intrinsics,
//! no_std builds use `libm`. The two disagree by at most an ulp or two,
//! which is far below every tolerance used in this crate.

#[cfg(feature = "std")]
mod imp {
    pub fn abs32(x: f32) -> f32 {
        x.abs()
    }
    pub fn sqrt32(x: f32) -> f32 {
        x.sqrt()
    }
    pub fn ln32(x: f32) -> f32 {
        x.ln()
    }
    pub fn exp32(x: f32) -> f32 {
        x.exp()
    }
    pub fn tanh32(x: f32) -> f32 {
        x.tanh()
    }
    pub fn abs64(x: f64) -> f64 {
        x.abs()
    }
    pub fn sqrt64(x: f64) -> f64 {
        x.sqrt()
    }
    pub fn ln64(x: f64) -> f64 {
        x.ln()
    }
    pub fn exp64(x: f64) -> f64 {
        x.exp()
    }
    pub fn tanh64(x: f64) -> f64 {
        x.tanh()
    }
    pub fn cos64(x: f64) -> f64 {
        x.cos()
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    pub fn abs32(x: f32) -> f32 {
        libm::fabsf(x)
    }
    pub fn sqrt32(x: f32) -> f32 {
        libm::sqrtf(x)
    }
    pub fn ln32(x: f32) -> f32 {
        libm::logf(x)
    }
    pub fn exp32(x: f32) -> f32 {
        libm::expf(x)
    }
    pub fn tanh32(x: f32) -> f32 {
        libm::tanhf(x)
    }
    pub fn abs64(x: f64) -> f64 {
        libm::fabs(x)
    }
    pub fn sqrt64(x: f64) -> f64 {
        libm::sqrt(x)
    }
    pub fn ln64(x: f64) -> f64 {
        libm::log(x)
    }
    pub fn exp64(x: f64) -> f64 {
        libm::exp(x)
    }
    pub fn tanh64(x: f64) -> f64 {
        libm::tanh(x)
    }
    pub fn cos64(x: f64) -> f64 {
        libm::cos(x)
    }
}

pub use imp::*;
