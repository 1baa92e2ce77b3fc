use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer and covered by gradient checks.
    Trainable,
    /// Persistent state that is checkpointed but not trained (running statistics).
    Buffer,
}

pub struct ParamRef<'a> {
    pub name: String,
    pub tensor: &'a Tensor,
    pub kind: ParamKind,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub tensor: &'a mut Tensor,
    pub kind: ParamKind,
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Named traversal over every tensor a model owns, in a fixed order.
pub trait Parameterized {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>);

    fn named_params(&self) -> Vec<ParamRef<'_>> {
        let mut v = Vec::new();
        self.params("", &mut v);
        v
    }

    fn named_params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut v = Vec::new();
        self.params_mut("", &mut v);
        v
    }

    fn zero_grads(&mut self) {
        for p in self.named_params_mut() {
            p.tensor.zero_grad();
        }
    }

    fn num_trainable(&self) -> usize {
        self.named_params()
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.tensor.len())
            .sum()
    }
}

/// Pushes trainable tensors under `prefix`.
#[macro_export]
macro_rules! push_params {
    ($out:expr, $prefix:expr, $kind:expr; $($name:literal => $t:expr),* $(,)?) => {
        $(
            $out.push($crate::numerics::ParamRef {
                name: $crate::numerics::params::join($prefix, $name),
                tensor: &$t,
                kind: $kind,
            });
        )*
    };
}

#[macro_export]
macro_rules! push_params_mut {
    ($out:expr, $prefix:expr, $kind:expr; $($name:literal => $t:expr),* $(,)?) => {
        $(
            $out.push($crate::numerics::ParamMut {
                name: $crate::numerics::params::join($prefix, $name),
                tensor: &mut $t,
                kind: $kind,
            });
        )*
    };
}
