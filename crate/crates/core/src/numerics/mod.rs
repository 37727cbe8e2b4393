//! Dense tensor kernel: the math substrate for every other module.

mod gradcheck;
mod layers;
mod params;
mod tensor;

pub use gradcheck::{fd_gradcheck, relative_error, GradCheckReport, REL_FLOOR};
pub use layers::{
    avg_pool2, avg_pool2_backward, conv_out_extent, dropout, dropout_mask, global_avg_pool,
    kaiming_uniform, linear, relu, relu_backward, softmax, upsample2, upsample2_backward,
    Conv3x3, ConvGrads, LinearGrads, LinearLayer,
};
pub use params::{Param, ParamStore};
pub use tensor::Tensor;
