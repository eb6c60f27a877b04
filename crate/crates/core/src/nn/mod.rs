//! Minimal convolutional network engine with hand-written backward passes.
//!
//! Parameters live in one flat `Vec<f64>` per network; layers address their
//! slice by offset. That keeps checkpoints, optimizers and finite-difference
//! checks trivial.

mod adam;
mod layer;
mod network;
mod tensor;

pub use adam::Adam;
pub use layer::{Cache, Conv2d, Layer};
pub use network::{NetBuilder, Network, LEAKY_SLOPE};
pub use tensor::Tensor;

/// Row/column-strided `C = A * B + beta * C`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}
