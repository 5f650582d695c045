use rand::Rng;

use super::{join_name, missing_cache, Activation, Ctx, Layer, Slot, SlotRef, Tensor};
use crate::error::{Error, Result};

/// Named children applied in order. Child names become parameter-path
/// segments (`features.3.conv.1.weight`).
#[derive(Default)]
pub struct Sequential {
    children: Vec<(String, Box<dyn Layer>)>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    /// Children named "0", "1", ... in order.
    pub fn indexed(layers: Vec<Box<dyn Layer>>) -> Self {
        let mut s = Sequential::new();
        for layer in layers {
            let name = s.children.len().to_string();
            s.children.push((name, layer));
        }
        s
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer + 'static) -> &mut Self {
        self.children.push((name.into(), Box::new(layer)));
        self
    }

    pub fn push_boxed(&mut self, name: impl Into<String>, layer: Box<dyn Layer>) -> &mut Self {
        self.children.push((name.into(), layer));
        self
    }

    pub fn with(mut self, name: impl Into<String>, layer: impl Layer + 'static) -> Self {
        self.push(name, layer);
        self
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.children.iter().map(|(n, _)| n.as_str())
    }

    pub fn child(&self, name: &str) -> Option<&dyn Layer> {
        self.children.iter().find(|(n, _)| n == name).map(|(_, l)| l.as_ref())
    }

    pub fn children(&self) -> impl Iterator<Item = (&str, &dyn Layer)> {
        self.children.iter().map(|(n, l)| (n.as_str(), l.as_ref()))
    }

    pub fn pop(&mut self) -> Option<(String, Box<dyn Layer>)> {
        self.children.pop()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, mut x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        for (_, layer) in &mut self.children {
            x = layer.forward(x, ctx)?;
        }
        Ok(x)
    }

    fn backward(&mut self, mut grad: Tensor) -> Result<Tensor> {
        for (_, layer) in self.children.iter_mut().rev() {
            grad = layer.backward(grad)?;
        }
        Ok(grad)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        for (name, layer) in &mut self.children {
            layer.visit(&join_name(prefix, name), f);
        }
    }

    fn visit_ref<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'a>)) {
        for (name, layer) in &self.children {
            layer.visit_ref(&join_name(prefix, name), f);
        }
    }
}

/// `post(drop_path(body(x)) + shortcut(x))`.
///
/// The body is visited under the block's own prefix, the shortcut under
/// `downsample`. Drop-path zeroes whole samples of the body output with
/// probability `drop_path` during training.
pub struct Residual {
    body: Sequential,
    shortcut: Option<Sequential>,
    post: Option<Activation>,
    drop_path: f32,
    mask: Option<Vec<f32>>,
    trained: bool,
}

impl Residual {
    pub fn new(body: Sequential) -> Self {
        Residual {
            body,
            shortcut: None,
            post: None,
            drop_path: 0.0,
            mask: None,
            trained: false,
        }
    }

    pub fn with_shortcut(mut self, shortcut: Sequential) -> Self {
        self.shortcut = Some(shortcut);
        self
    }

    pub fn with_post(mut self, post: Activation) -> Self {
        self.post = Some(post);
        self
    }

    pub fn with_drop_path(mut self, p: f32) -> Self {
        self.drop_path = p;
        self
    }

    pub fn drop_path(&self) -> f32 {
        self.drop_path
    }
}

impl Layer for Residual {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let identity = match &mut self.shortcut {
            Some(s) => s.forward(x.clone(), ctx)?,
            None => x.clone(),
        };
        let mut out = self.body.forward(x, ctx)?;
        if out.shape() != identity.shape() {
            return Err(Error::Contract(format!(
                "residual branch shapes differ: {:?} vs {:?}",
                out.shape(),
                identity.shape()
            )));
        }
        self.mask = None;
        if ctx.is_train() && self.drop_path > 0.0 {
            let n = out.shape()[0];
            let keep = 1.0 - self.drop_path;
            let mask: Vec<f32> = (0..n)
                .map(|_| if ctx.rng.random_bool(keep as f64) { 1.0 / keep } else { 0.0 })
                .collect();
            let per = out.numel() / n.max(1);
            for (chunk, m) in out.data_mut().chunks_mut(per.max(1)).zip(&mask) {
                chunk.iter_mut().for_each(|v| *v *= m);
            }
            self.mask = Some(mask);
        }
        out.add_assign(&identity);
        if let Some(post) = &mut self.post {
            out = post.forward(out, ctx)?;
        }
        self.trained = ctx.is_train();
        Ok(out)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        if !std::mem::take(&mut self.trained) {
            return Err(missing_cache("residual"));
        }
        let grad = match &mut self.post {
            Some(post) => post.backward(grad)?,
            None => grad,
        };
        let mut body_grad = grad.clone();
        if let Some(mask) = self.mask.take() {
            let per = body_grad.numel() / mask.len().max(1);
            for (chunk, m) in body_grad.data_mut().chunks_mut(per.max(1)).zip(&mask) {
                chunk.iter_mut().for_each(|v| *v *= m);
            }
        }
        let mut dx = self.body.backward(body_grad)?;
        let skip = match &mut self.shortcut {
            Some(s) => s.backward(grad)?,
            None => grad,
        };
        dx.add_assign(&skip);
        Ok(dx)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.body.visit(prefix, f);
        if let Some(s) = &mut self.shortcut {
            s.visit(&join_name(prefix, "downsample"), f);
        }
    }

    fn visit_ref<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'a>)) {
        self.body.visit_ref(prefix, f);
        if let Some(s) = &self.shortcut {
            s.visit_ref(&join_name(prefix, "downsample"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testing::{check_layer_gradients, random_tensor};
    use crate::nn::{ActivationKind, BatchNorm2d, Conv2d};

    fn conv(cin: usize, cout: usize, stride: usize, seed: u64) -> Conv2d {
        let mut c = Conv2d::new(cin, cout, 3, stride, 1, 1, false);
        let shape = c.weight_shape().to_vec();
        c.weight_mut().value = random_tensor(&shape, seed);
        c
    }

    #[test]
    fn sequential_names_parameters_by_path() {
        let seq = Sequential::new()
            .with("conv1", conv(2, 3, 1, 1))
            .with("bn1", BatchNorm2d::new(3))
            .with("block", Sequential::indexed(vec![Box::new(conv(3, 3, 1, 2))]));
        let mut names = Vec::new();
        seq.visit_ref("layer1", &mut |n, _| names.push(n.to_string()));
        assert_eq!(
            names,
            [
                "layer1.conv1.weight",
                "layer1.bn1.weight",
                "layer1.bn1.bias",
                "layer1.bn1.running_mean",
                "layer1.bn1.running_var",
                "layer1.block.0.weight"
            ]
        );
    }

    #[test]
    fn residual_gradients_with_shortcut_and_post() {
        let body = Sequential::new()
            .with("conv1", conv(2, 3, 2, 1))
            .with("relu", Activation::new(ActivationKind::Relu))
            .with("conv2", conv(3, 3, 1, 2));
        let mut down = Conv2d::new(2, 3, 1, 2, 0, 1, false);
        down.weight_mut().value = random_tensor(&[3, 2, 1, 1], 3);
        let shortcut = Sequential::new().with("0", down);
        let mut block = Residual::new(body)
            .with_shortcut(shortcut)
            .with_post(Activation::new(ActivationKind::Relu));
        let mut names = Vec::new();
        block.visit_ref("b", &mut |n, _| names.push(n.to_string()));
        assert_eq!(names, ["b.conv1.weight", "b.conv2.weight", "b.downsample.0.weight"]);
        check_layer_gradients(&mut block, &[2, 2, 6, 6], 4);
    }

    #[test]
    fn residual_gradients_with_drop_path() {
        let body = Sequential::new().with("conv", conv(3, 3, 1, 5));
        let mut block = Residual::new(body).with_drop_path(0.5);
        check_layer_gradients(&mut block, &[6, 3, 4, 4], 6);
        let x = random_tensor(&[2, 3, 4, 4], 7);
        let eval = block.forward(x.clone(), &mut Ctx::eval()).unwrap();
        let again = block.forward(x, &mut Ctx::eval()).unwrap();
        assert_eq!(eval, again);
    }
}
