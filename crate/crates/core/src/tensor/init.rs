use rand::Rng;

use super::Tensor;

/// Tensor with entries drawn i.i.d. from uniform(-radius, radius).
pub fn uniform_init(shape: &[usize], radius: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    if radius > 0.0 {
        for x in t.data_mut() {
            *x = rng.gen_range(-radius..radius);
        }
    }
    t
}
