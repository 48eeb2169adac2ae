use std::cell::{Ref, RefCell, RefMut};
use std::rc::Rc;

use super::Tensor;

/// A trainable tensor with accumulated gradient and Adam moments.
/// Cloning is shallow: all clones refer to the same storage.
#[derive(Clone)]
pub struct Param(Rc<RefCell<ParamData>>);

pub struct ParamData {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros_like(&value);
        let adam_m = Tensor::zeros_like(&value);
        let adam_v = Tensor::zeros_like(&value);
        Param(Rc::new(RefCell::new(ParamData {
            value,
            grad,
            adam_m,
            adam_v,
            step_count: 0,
        })))
    }

    pub fn borrow(&self) -> Ref<'_, ParamData> {
        self.0.borrow()
    }

    pub fn borrow_mut(&self) -> RefMut<'_, ParamData> {
        self.0.borrow_mut()
    }

    pub fn value(&self) -> Tensor {
        self.0.borrow().value.clone()
    }

    pub fn set_value(&self, v: Tensor) {
        let mut d = self.0.borrow_mut();
        assert_eq!(d.value.shape(), v.shape(), "param shape is fixed");
        d.value = v;
    }

    pub fn grad(&self) -> Tensor {
        self.0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        let mut d = self.0.borrow_mut();
        for g in d.grad.data_mut() {
            *g = 0.0;
        }
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().value.numel()
    }

    /// Deep copy with fresh optimizer state (used for target networks).
    pub fn detached_copy(&self) -> Param {
        Param::new(self.0.borrow().value.clone())
    }

    pub fn same_storage(&self, other: &Param) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}
