use fairaudit::nn::{Differentiable, ModelError};
use fairaudit::tape::{Tape, Var};
use fairaudit::Tensor;

/// `F(x) = w·x + b` with no output squashing.
pub struct Affine {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Differentiable for Affine {
    fn input_dim(&self) -> usize {
        self.w.len()
    }

    fn outputs(&self) -> usize {
        1
    }

    fn forward_eval(&self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let w = tape.constant(Tensor::new(vec![self.w.len(), 1], self.w.clone())?);
        let b = tape.constant(Tensor::vector(vec![self.b]));
        let z = tape.matmul(x, w)?;
        Ok(tape.add_row(z, b)?)
    }
}
