//! Parameter trees, generic over the leaf type.
//!
//! The same structs hold stored weights (`Tensor<f64>`), graph handles
//! (`Var`) while a forward pass is recorded, and gradients afterwards, so
//! the mapping between them is structural rather than by name lookup.

use crate::autodiff::Tensor;

pub trait ParamTree<P> {
    type Mapped<Q>;

    fn map_params<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Self::Mapped<Q>;

    /// Visits leaves in a fixed order with dotted paths.
    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P));

    fn visit_mut<'a>(&'a mut self, path: &str, f: &mut dyn FnMut(&str, &'a mut P));
}

pub(crate) fn join(path: &str, field: &str) -> String {
    if path.is_empty() {
        field.to_string()
    } else {
        format!("{path}.{field}")
    }
}

macro_rules! leaf_group {
    ($(#[$meta:meta])* $name:ident { $($field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<P> {
            $(pub $field: P),+
        }

        impl<P> ParamTree<P> for $name<P> {
            type Mapped<Q> = $name<Q>;

            fn map_params<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> $name<Q> {
                $name { $($field: f(&self.$field)),+ }
            }

            fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P)) {
                $(f(&join(path, stringify!($field)), &self.$field);)+
            }

            fn visit_mut<'a>(&'a mut self, path: &str, f: &mut dyn FnMut(&str, &'a mut P)) {
                $(f(&join(path, stringify!($field)), &mut self.$field);)+
            }
        }
    };
}

macro_rules! tree_group {
    ($(#[$meta:meta])* $name:ident { $($field:ident : $ty:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<P> {
            $(pub $field: $ty<P>),+
        }

        impl<P> ParamTree<P> for $name<P> {
            type Mapped<Q> = $name<Q>;

            fn map_params<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> $name<Q> {
                $name { $($field: self.$field.map_params(f)),+ }
            }

            fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P)) {
                $(self.$field.visit(&join(path, stringify!($field)), f);)+
            }

            fn visit_mut<'a>(&'a mut self, path: &str, f: &mut dyn FnMut(&str, &'a mut P)) {
                $(self.$field.visit_mut(&join(path, stringify!($field)), f);)+
            }
        }
    };
}

impl<P, T: ParamTree<P>> ParamTree<P> for Vec<T> {
    type Mapped<Q> = Vec<T::Mapped<Q>>;

    fn map_params<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Self::Mapped<Q> {
        self.iter().map(|t| t.map_params(f)).collect()
    }

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a P)) {
        for (i, t) in self.iter().enumerate() {
            t.visit(&join(path, &i.to_string()), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, path: &str, f: &mut dyn FnMut(&str, &'a mut P)) {
        for (i, t) in self.iter_mut().enumerate() {
            t.visit_mut(&join(path, &i.to_string()), f);
        }
    }
}

leaf_group!(
    /// Convolution kernel `[Cout, Cin, k, k]` and bias `[Cout]`.
    Conv { weight, bias }
);
leaf_group!(
    /// Dense layer `[Out, In]` and bias `[Out]`.
    Linear { weight, bias }
);
leaf_group!(
    /// Transform-domain block: scaling weights and raw thresholds, both
    /// `[C, M, M]`.
    HtBlock { scale, theta }
);

pub type Convs<P> = Vec<Conv<P>>;

tree_group!(
    /// Scalar-field extractor.
    HuNet {
        conv1: Conv,
        ht1: HtBlock,
        conv2: Conv,
        ht2: HtBlock,
        conv3: Conv,
        conv4: Conv,
    }
);
tree_group!(
    /// Prior or posterior encoder.
    Encoder {
        convs: Convs,
        mean: Linear,
        log_var: Linear,
    }
);
tree_group!(
    /// Three 1x1 convolutions over the prototype and broadcast latent.
    Fusion {
        conv1: Conv,
        conv2: Conv,
        conv3: Conv,
    }
);
tree_group!(Network {
    hunet: HuNet,
    prior: Encoder,
    posterior: Encoder,
    fusion: Fusion,
});

impl<P> Network<P> {
    /// Leaves in canonical order.
    pub fn leaves(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name.to_string(), p)));
        out
    }

    pub fn leaves_mut(&mut self) -> Vec<(String, &mut P)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |name, p| out.push((name.to_string(), p)));
        out
    }
}

impl Network<Tensor<f64>> {
    pub fn num_parameters(&self) -> usize {
        self.leaves().iter().map(|(_, t)| t.len()).sum()
    }
}
