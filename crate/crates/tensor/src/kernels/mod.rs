pub mod attention;
pub mod conv;
pub mod pixel;
pub mod resample;
pub mod warp;
