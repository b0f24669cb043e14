use ndarray::ArrayD;

pub type Tensor = ArrayD<f32>;

/// A learnable tensor with its gradient accumulator, or a non-learnable buffer
/// (batch-norm running statistics) that still travels with checkpoints.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
    pub buffer: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.raw_dim());
        Self { value, grad, trainable: true, buffer: false }
    }

    pub fn buffer(value: Tensor) -> Self {
        Self { value, grad: Tensor::zeros(ndarray::IxDyn(&[0])), trainable: false, buffer: true }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Counts toward trainable parameters.
    pub fn is_trainable(&self) -> bool {
        self.trainable && !self.buffer
    }

    pub fn zero_grad(&mut self) {
        if !self.buffer {
            self.grad.fill(0.0);
        }
    }
}
