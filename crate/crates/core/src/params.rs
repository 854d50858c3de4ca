//! Named parameter collections.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// A named, ordered collection of parameter tensors.
pub trait ParamGroup: Clone {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>);

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    /// Same order as [`ParamGroup::named_tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.visit_mut(&mut out);
        out
    }

    fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Attaches each tensor of `grads` as the gradient of the matching tensor.
    fn attach_grads(&mut self, grads: &Self) {
        let src = grads.named_tensors();
        for (dst, (_, g)) in self.tensors_mut().into_iter().zip(src) {
            dst.set_grad(g.data().to_vec());
        }
    }

    /// Elementwise `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self) {
        let src = other.named_tensors();
        for (dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    /// Same structure with every entry zero and no gradients attached.
    fn zeroed(&self) -> Self {
        let mut z = self.clone();
        let mut ts = Vec::new();
        z.visit_mut(&mut ts);
        for t in ts {
            t.fill(0.0);
            t.clear_grad();
        }
        z
    }
}

pub fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        String::from(field)
    } else {
        format!("{prefix}.{field}")
    }
}

impl ParamGroup for Tensor {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((String::from(prefix), self));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(self);
    }
}

impl<T: ParamGroup> ParamGroup for Vec<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, item) in self.iter().enumerate() {
            item.visit(&join(prefix, &format!("{i}")), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for item in self {
            item.visit_mut(out);
        }
    }
}

impl<T: ParamGroup> ParamGroup for Option<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        if let Some(v) = self {
            v.visit(prefix, out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        if let Some(v) = self {
            v.visit_mut(out);
        }
    }
}

/// Implements [`ParamGroup`] by visiting the listed fields in order.
macro_rules! param_group {
    ($ty:ty { $($field:ident),+ $(,)? }) => {
        impl $crate::params::ParamGroup for $ty {
            fn visit<'a>(
                &'a self,
                prefix: &str,
                out: &mut alloc::vec::Vec<(alloc::string::String, &'a $crate::Tensor)>,
            ) {
                $( self.$field.visit(&$crate::params::join(prefix, stringify!($field)), out); )+
            }

            fn visit_mut<'a>(&'a mut self, out: &mut alloc::vec::Vec<&'a mut $crate::Tensor>) {
                $( self.$field.visit_mut(out); )+
            }
        }
    };
}
pub(crate) use param_group;
