//! Named traversal of every parameter and buffer in a model tree.

use skinmamba_tensor::{Param, ParamId, Real, Tensor};

/// A node of the model tree. Names are dotted paths built from field names.
pub trait Module<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    /// Learnable scalars only; buffers are excluded.
    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.is_trainable() {
                n += p.numel();
            }
        });
        n
    }

    fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name.to_string(), p)));
        out
    }

    fn zero_all(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_());
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Real> Module<T> for Param<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        f(prefix, self);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(prefix, self);
    }
}

impl<T: Real, M: Module<T>> Module<T> for Option<M> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        if let Some(m) = self {
            m.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        if let Some(m) = self {
            m.visit_mut(prefix, f);
        }
    }
}

impl<T: Real, M: Module<T> + ?Sized> Module<T> for Box<M> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Param<T>)) {
        (**self).visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        (**self).visit_mut(prefix, f);
    }
}

/// Implements [`Module`] for a struct generic over `T` by visiting the listed
/// fields in order, each under its own name.
macro_rules! impl_module {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T: skinmamba_tensor::Real> $crate::module::Module<T> for $ty<T> {
            fn visit<'a>(
                &'a self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &'a skinmamba_tensor::Param<T>),
            ) {
                $( $crate::module::Module::visit(&self.$field, &$crate::module::join(prefix, stringify!($field)), f); )*
            }

            fn visit_mut(
                &mut self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &mut skinmamba_tensor::Param<T>),
            ) {
                $( $crate::module::Module::visit_mut(&mut self.$field, &$crate::module::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}
pub(crate) use impl_module;

/// Exponential moving average of buffers toward batch values:
/// `p = (1 - momentum) p + momentum v`.
pub fn apply_buffer_updates<T: Real>(
    module: &mut (impl Module<T> + ?Sized),
    updates: &[(ParamId, Tensor<T>)],
    momentum: T,
) {
    if updates.is_empty() {
        return;
    }
    module.visit_mut("", &mut |_, p| {
        let id = p.id();
        for (_, v) in updates.iter().filter(|(u, _)| *u == id) {
            let keep = T::one() - momentum;
            for (dst, &src) in p.value.data_mut().iter_mut().zip(v.data()) {
                *dst = keep * *dst + momentum * src;
            }
        }
    });
}
