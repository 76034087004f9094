use crate::error::{Error, Result};
use crate::lut::{build_lut, check_lut_exhaustive, encode, EncodedLayer, EncodedTensor, LatticeLevels, Lut};
use crate::nn::conv::{conv_forward, im2col, ConvGeom};
use crate::nn::{Network, QConv, Tensor};
use crate::real::Real;

/// Encoded operands of one quantized convolution.
#[derive(Clone, Debug)]
pub struct LayerOperands {
    pub weights: EncodedTensor,
    pub acts: EncodedTensor,
    pub w_levels: LatticeLevels,
    pub a_levels: LatticeLevels,
    /// `α_w·σ_w` (or `α_w` without limited weight normalization).
    pub w_scale: f64,
    /// `α_a`.
    pub a_scale: f64,
}

impl LayerOperands {
    pub fn rescale(&self) -> f64 {
        self.w_scale * self.a_scale / (f64::from(self.w_levels.lattice) * f64::from(self.a_levels.lattice))
    }

    pub fn lut(&self) -> Result<Lut> {
        build_lut(&self.w_levels, &self.a_levels, self.rescale())
    }
}

/// Weight-side tables of one quantized convolution: everything the integer
/// path needs before an input arrives.
#[derive(Clone, Debug)]
pub struct LayerTables {
    pub weights: EncodedLayer,
    pub w_levels: LatticeLevels,
    pub a_levels: LatticeLevels,
    pub a_scale: f64,
}

impl LayerTables {
    /// `α_w·σ_w` (or `α_w` without limited weight normalization).
    pub fn w_scale(&self) -> f64 {
        self.weights.record.alpha * self.weights.weight_scale
    }

    pub fn rescale(&self) -> f64 {
        self.w_scale() * self.a_scale / (f64::from(self.w_levels.lattice) * f64::from(self.a_levels.lattice))
    }

    pub fn lut(&self) -> Result<Lut> {
        build_lut(&self.w_levels, &self.a_levels, self.rescale())
    }

    /// Exhaustive pair check of this layer's table; returns the pair count.
    pub fn check(&self) -> Result<usize> {
        check_lut_exhaustive(&self.lut()?, &self.w_levels, &self.a_levels, self.w_scale(), self.a_scale)
    }
}

/// Encodes a layer's weights and derives both level sets.
pub fn layer_tables<T: Real>(c: &QConv<T>) -> Result<LayerTables> {
    let (Some(wq), Some(aq)) = (&c.wq, c.act_quantizer()) else {
        return Err(Error::contract(format!("{}: integer inference needs both quantizers", c.name)));
    };
    let w = c.weight.value.data();
    let st = wq.stats(w);
    let z = Tensor::from_vec(c.weight.value.shape(), w.iter().map(|&v| wq.norm.normalize(v, &st)).collect())?;
    let ws = wq.quantizer.state()?;
    let as_ = aq.state()?;
    Ok(LayerTables {
        weights: EncodedLayer {
            name: c.name.clone(),
            record: wq.quantizer.record(&c.name),
            weight_scale: wq.norm.output_scale(&st).to_f64_lossy(),
            weights: encode(&z, wq.quantizer.alpha_value(), ws.as_ref(), &wq.quantizer.spec)?,
        },
        w_levels: LatticeLevels::new(ws.as_ref(), &wq.quantizer.spec)?,
        a_levels: LatticeLevels::new(as_.as_ref(), &aq.spec)?,
        a_scale: aq.alpha_value().to_f64_lossy(),
    })
}

/// Tables of every quantized convolution of `net`, in forward order.
pub fn network_tables<T: Real>(net: &Network<T>) -> Result<Vec<LayerTables>> {
    net.convs().into_iter().map(layer_tables).collect()
}

/// Encodes a layer's weights and its input `x` with the layer's quantizers.
pub fn layer_operands<T: Real>(c: &QConv<T>, x: &Tensor<T>) -> Result<LayerOperands> {
    let t = layer_tables(c)?;
    let aq = c.act_quantizer().expect("checked by layer_tables");
    let as_ = aq.state()?;
    Ok(LayerOperands {
        w_scale: t.w_scale(),
        acts: encode(x, aq.alpha_value(), as_.as_ref(), &aq.spec)?,
        weights: t.weights.weights,
        w_levels: t.w_levels,
        a_levels: t.a_levels,
        a_scale: t.a_scale,
    })
}

fn check_weights(w: &EncodedTensor, geom: &ConvGeom) -> Result<()> {
    if w.shape != geom.weight_shape() {
        return Err(Error::shape(format!(
            "encoded weights {:?} vs geometry {:?}",
            w.shape,
            geom.weight_shape()
        )));
    }
    Ok(())
}

/// Convolution of the signed lattice numerators in 64-bit floats (exact for
/// integers), scaled once by the rescale factor.
pub fn reference_conv<T: Real>(ops: &LayerOperands, geom: &ConvGeom) -> Result<Tensor<T>> {
    check_weights(&ops.weights, geom)?;
    let nw: Vec<f64> = ops.weights.signed_numerators(&ops.w_levels)?.into_iter().map(f64::from).collect();
    let na: Vec<f64> = ops.acts.signed_numerators(&ops.a_levels)?.into_iter().map(f64::from).collect();
    let a = Tensor::from_vec(&ops.acts.shape, na)?;
    let (y, _) = conv_forward(&a, &nw, geom)?;
    let r = ops.rescale();
    Ok(Tensor::from_vec(y.shape(), y.data().iter().map(|&v| T::lit(v * r)).collect())?)
}

/// Integer convolution through the look-up table: products are table reads,
/// zero weights are skipped, zero activations hit a padded zero column, and
/// the `i32` sums are scaled once by `lut.rescale`.
pub fn lut_infer_layer<T: Real>(w: &EncodedTensor, a: &EncodedTensor, lut: &Lut, geom: &ConvGeom) -> Result<Tensor<T>> {
    check_weights(w, geom)?;
    let (n, h, wd, ho, wo) = geom.check_input(&a.shape)?;
    if lut.accumulator_bound(geom.patch()) > i64::from(i32::MAX) {
        return Err(Error::Consistency(format!(
            "{} taps of the table can overflow a 32-bit accumulator",
            geom.patch()
        )));
    }
    let (m_w, m_a) = (lut.m_w, lut.m_a);
    let bad = |what: &str, m: usize| Error::contract(format!("{what} code outside [0, {m})"));

    // Column index of each activation: code, or m_a for zero; +(m_a+1) when negative.
    let stride = m_a + 1;
    let mut a_idx = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        let idx = if a.zero[i] {
            m_a
        } else {
            let c = usize::from(a.codes[i]);
            if c >= m_a {
                return Err(bad("activation", m_a));
            }
            c + if a.is_negative(i) { stride } else { 0 }
        };
        a_idx.push(idx as u16);
    }
    // Rows for (weight code, weight sign) over (activation code, activation sign).
    let mut table = vec![0i32; 2 * m_w * 2 * stride];
    for cw in 0..m_w {
        for (sw, sign_w) in [(0usize, 1i32), (1, -1)] {
            let row = &mut table[(2 * cw + sw) * 2 * stride..][..2 * stride];
            for ca in 0..m_a {
                let e = lut.entry(cw, ca) * sign_w;
                row[ca] = e;
                row[stride + ca] = -e;
            }
        }
    }

    let cols_n = n * ho * wo;
    let cols = im2col(&a_idx, n, h, wd, geom, m_a as u16);
    let patch = geom.patch();
    let mut acc = vec![0i32; geom.cout * cols_n];
    for co in 0..geom.cout {
        let out = &mut acc[co * cols_n..][..cols_n];
        for tap in 0..patch {
            let i = co * patch + tap;
            if w.zero[i] {
                continue;
            }
            let cw = usize::from(w.codes[i]);
            if cw >= m_w {
                return Err(bad("weight", m_w));
            }
            let row = &table[(2 * cw + usize::from(w.is_negative(i))) * 2 * stride..][..2 * stride];
            for (o, &ai) in out.iter_mut().zip(&cols[tap * cols_n..][..cols_n]) {
                *o += row[usize::from(ai)];
            }
        }
    }

    let hw = ho * wo;
    let mut y = vec![T::zero(); acc.len()];
    for co in 0..geom.cout {
        for b in 0..n {
            for p in 0..hw {
                y[(b * geom.cout + co) * hw + p] = T::lit(f64::from(acc[(co * n + b) * hw + p]) * lut.rescale);
            }
        }
    }
    Tensor::from_vec(&[n, geom.cout, ho, wo], y)
}

/// [`reference_conv`] for a network layer.
pub fn conv_lattice<T: Real>(c: &QConv<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    reference_conv(&layer_operands(c, x)?, &c.geom)
}

/// [`lut_infer_layer`] for a network layer.
pub fn conv_lut<T: Real>(c: &QConv<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let ops = layer_operands(c, x)?;
    lut_infer_layer(&ops.weights, &ops.acts, &ops.lut()?, &c.geom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{CompandingState, QuantSpec};
    use rand::{Rng, SeedableRng};

    fn operands(geom: &ConvGeom, in_shape: &[usize], seed: u64) -> LayerOperands {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let sw = CompandingState::<f64>::derive(&[0.2, -0.4, 0.9, 0.1], 1.3).unwrap();
        let sa = CompandingState::<f64>::derive(&[-0.3, 0.5, 0.0, 0.7], 2.1).unwrap();
        let ws = QuantSpec::new(3, true, Some(8), 4).unwrap();
        let as_ = QuantSpec::new(3, false, Some(8), 4).unwrap();
        let wn: usize = geom.weight_shape().iter().product();
        let an: usize = in_shape.iter().product();
        let w = Tensor::from_vec(&geom.weight_shape(), (0..wn).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let a = Tensor::from_vec(in_shape, (0..an).map(|_| rng.random_range(-0.5..2.5)).collect()).unwrap();
        LayerOperands {
            weights: encode(&w, sw.alpha(), Some(&sw), &ws).unwrap(),
            acts: encode(&a, sa.alpha(), Some(&sa), &as_).unwrap(),
            w_levels: LatticeLevels::new(Some(&sw), &ws).unwrap(),
            a_levels: LatticeLevels::new(Some(&sa), &as_).unwrap(),
            w_scale: sw.alpha() * 0.7,
            a_scale: sa.alpha(),
        }
    }

    #[test]
    fn lut_equals_reference_on_random_conv() {
        let geom = ConvGeom::new(3, 4, 3, 1, 1);
        let ops = operands(&geom, &[2, 3, 5, 5], 11);
        let lut = ops.lut().unwrap();
        let y: Tensor<f64> = lut_infer_layer(&ops.weights, &ops.acts, &lut, &geom).unwrap();
        let r: Tensor<f64> = reference_conv(&ops, &geom).unwrap();
        assert_eq!(y, r);
    }

    #[test]
    fn zero_activations_give_zero_output() {
        let geom = ConvGeom::new(3, 4, 3, 2, 1);
        let mut ops = operands(&geom, &[1, 3, 4, 4], 3);
        ops.acts.zero.iter_mut().for_each(|z| *z = true);
        let y: Tensor<f32> = lut_infer_layer(&ops.weights, &ops.acts, &ops.lut().unwrap(), &geom).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_tap_is_the_scalar_product() {
        let geom = ConvGeom::dense(1, 1);
        let ops = operands(&geom, &[1, 1, 1, 1], 5);
        let y: Tensor<f64> = lut_infer_layer(&ops.weights, &ops.acts, &ops.lut().unwrap(), &geom).unwrap();
        let w = ops.weights.decode::<f64>(&ops.w_levels, 1.0).unwrap().data()[0] * ops.w_scale;
        let a = ops.acts.decode::<f64>(&ops.a_levels, 1.0).unwrap().data()[0] * ops.a_scale;
        assert!((y.data()[0] - w * a).abs() <= 1e-12 * (w * a).abs().max(1e-300));
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let geom = ConvGeom::new(3, 4, 3, 1, 1);
        let ops = operands(&geom, &[1, 3, 4, 4], 1);
        let other = ConvGeom::new(3, 5, 3, 1, 1);
        assert!(lut_infer_layer::<f32>(&ops.weights, &ops.acts, &ops.lut().unwrap(), &other).is_err());
    }
}
