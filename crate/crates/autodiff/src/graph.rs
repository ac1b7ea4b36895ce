use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::tensor::Tensor;

/// Backward closure: receives the output gradient, returns one optional
/// gradient per input (in input order).
pub type BackwardFn = Box<dyn FnOnce(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct Tape {
    nodes: Vec<Node>,
}

/// Recording tape for one forward pass.
///
/// Node ids are assigned in creation order, so parents always precede
/// children and a reverse sweep is a valid topological order.
#[derive(Clone, Default)]
pub struct Graph {
    tape: Rc<RefCell<Tape>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A differentiable input. Its gradient is reported by [`Graph::backward`].
    pub fn leaf(&self, value: Tensor) -> Var {
        let id = self.push(Node {
            parents: Vec::new(),
            backward: None,
        });
        Var {
            value,
            tracked: Some((self.clone(), id)),
        }
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> usize {
        let mut tape = self.tape.borrow_mut();
        tape.nodes.push(node);
        tape.nodes.len() - 1
    }

    fn same(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.tape, &other.tape)
    }

    /// Reverse sweep from a scalar output. Consumes the recorded closures;
    /// a graph can be differentiated once.
    pub fn backward(&self, output: &Var) -> Gradients {
        assert_eq!(output.value.numel(), 1, "backward() needs a scalar output");
        let Some((g, root)) = &output.tracked else {
            return Gradients::default();
        };
        assert!(self.same(g), "output belongs to a different graph");

        let mut nodes = std::mem::take(&mut self.tape.borrow_mut().nodes);
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[*root] = Some(Tensor::ones(output.value.shape()));
        let mut leaves = HashMap::new();

        for id in (0..=*root).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &mut nodes[id];
            match node.backward.take() {
                None => {
                    if node.parents.is_empty() {
                        leaves.insert(id, grad);
                    }
                }
                Some(back) => {
                    let parent_grads = back(&grad);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (parent, pg) in node.parents.iter().zip(parent_grads) {
                        if let (Some(pid), Some(pg)) = (parent, pg) {
                            match &mut grads[*pid] {
                                Some(acc) => acc.add_assign(&pg),
                                slot @ None => *slot = Some(pg),
                            }
                        }
                    }
                }
            }
        }
        Gradients { by_node: leaves }
    }
}

/// Leaf gradients from one backward sweep.
#[derive(Default)]
pub struct Gradients {
    by_node: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient of a leaf, `None` when the output does not depend on it.
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        var.node_id().and_then(|id| self.by_node.get(&id))
    }

    /// Gradient of a leaf, zeros when the output does not depend on it.
    pub fn get_or_zeros(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

/// A tensor value, optionally tracked on a [`Graph`].
///
/// Untracked vars are constants: ops whose inputs are all constants record
/// nothing, so inference runs without a tape and frees intermediates eagerly.
#[derive(Clone)]
pub struct Var {
    value: Tensor,
    tracked: Option<(Graph, usize)>,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("value", &self.value)
            .field("node", &self.node_id())
            .finish()
    }
}

impl From<Tensor> for Var {
    fn from(value: Tensor) -> Self {
        Var::constant(value)
    }
}

impl Var {
    pub fn constant(value: Tensor) -> Self {
        Var {
            value,
            tracked: None,
        }
    }

    #[inline]
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn into_value(self) -> Tensor {
        self.value
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.tracked.is_some()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.tracked.as_ref().map(|(_, id)| *id)
    }

    pub fn graph(&self) -> Option<&Graph> {
        self.tracked.as_ref().map(|(g, _)| g)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.value.clone())
    }

    /// Records a custom op. `backward` is only kept when at least one input
    /// is tracked; it must return one entry per input.
    pub fn apply<F>(inputs: &[&Var], value: Tensor, backward: F) -> Var
    where
        F: FnOnce(&Tensor) -> Vec<Option<Tensor>> + 'static,
    {
        let mut graph: Option<&Graph> = None;
        for v in inputs {
            if let Some((g, _)) = &v.tracked {
                match graph {
                    None => graph = Some(g),
                    Some(existing) => assert!(existing.same(g), "inputs from different graphs"),
                }
            }
        }
        let Some(graph) = graph else {
            return Var::constant(value);
        };
        let parents = inputs.iter().map(|v| v.node_id()).collect();
        let id = graph.push(Node {
            parents,
            backward: Some(Box::new(backward)),
        });
        Var {
            value,
            tracked: Some((graph.clone(), id)),
        }
    }

    /// True when any of `inputs` needs gradients.
    pub fn any_tracked(inputs: &[&Var]) -> bool {
        inputs.iter().any(|v| v.is_tracked())
    }
}
