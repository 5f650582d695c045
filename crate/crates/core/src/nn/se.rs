use super::{
    join_name, missing_cache, Activation, ActivationKind, AdaptiveAvgPool2d, Conv2d, Ctx, Layer, Slot,
    SlotRef, Tensor,
};
use crate::error::Result;

/// Channel attention: `x * sigmoid(fc2(act(fc1(avgpool(x)))))`, with both
/// projections as 1×1 convolutions.
pub struct SqueezeExcite {
    pool: AdaptiveAvgPool2d,
    fc1: Conv2d,
    act: Activation,
    fc2: Conv2d,
    gate: Activation,
    cache: Option<(Tensor, Tensor)>,
}

impl SqueezeExcite {
    pub fn new(channels: usize, squeeze: usize, act: ActivationKind) -> Self {
        SqueezeExcite {
            pool: AdaptiveAvgPool2d::global(),
            fc1: Conv2d::new(channels, squeeze, 1, 1, 0, 1, true),
            act: Activation::new(act),
            fc2: Conv2d::new(squeeze, channels, 1, 1, 0, 1, true),
            gate: Activation::new(ActivationKind::Sigmoid),
            cache: None,
        }
    }

    pub fn fc1_mut(&mut self) -> &mut Conv2d {
        &mut self.fc1
    }

    pub fn fc2_mut(&mut self) -> &mut Conv2d {
        &mut self.fc2
    }
}

impl Layer for SqueezeExcite {
    fn forward(&mut self, mut x: Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4();
        let s = self.pool.forward(x.clone(), ctx)?;
        let s = self.fc1.forward(s, ctx)?;
        let s = self.act.forward(s, ctx)?;
        let s = self.fc2.forward(s, ctx)?;
        let s = self.gate.forward(s, ctx)?;
        let hw = h * w;
        let cached_input = ctx.is_train().then(|| x.clone());
        for (plane, scale) in x.data_mut().chunks_mut(hw.max(1)).zip(s.data()) {
            plane.iter_mut().for_each(|v| *v *= scale);
        }
        self.cache = cached_input.map(|input| (input, s));
        Ok(x)
    }

    fn backward(&mut self, grad: Tensor) -> Result<Tensor> {
        let (x, s) = self.cache.take().ok_or_else(|| missing_cache("squeeze_excite"))?;
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let mut dscale = Tensor::zeros(&[n, c, 1, 1]);
        let mut dx = grad.clone();
        for (i, (gplane, xplane)) in grad.data().chunks(hw.max(1)).zip(x.data().chunks(hw.max(1))).enumerate() {
            dscale.data_mut()[i] = gplane.iter().zip(xplane).map(|(g, v)| g * v).sum();
            let sv = s.data()[i];
            dx.data_mut()[i * hw..(i + 1) * hw].iter_mut().for_each(|v| *v *= sv);
        }
        let d = self.gate.backward(dscale)?;
        let d = self.fc2.backward(d)?;
        let d = self.act.backward(d)?;
        let d = self.fc1.backward(d)?;
        let d = self.pool.backward(d)?;
        dx.add_assign(&d);
        Ok(dx)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.fc1.visit(&join_name(prefix, "fc1"), f);
        self.fc2.visit(&join_name(prefix, "fc2"), f);
    }

    fn visit_ref<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, SlotRef<'a>)) {
        self.fc1.visit_ref(&join_name(prefix, "fc1"), f);
        self.fc2.visit_ref(&join_name(prefix, "fc2"), f);
    }
}
