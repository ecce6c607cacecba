//! Weight storage, forward evaluation and reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::im2col::{col2im, im2col, ConvGeom};
use crate::spec::{Layer, NetworkSpec};
use crate::tensor::{gemm, Real, Tensor};

const NORM_EPS: f64 = 1e-5;

/// Learnable weights plus ADAM moment accumulators, grouped per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState<T> {
    pub weights: Vec<Vec<Tensor<T>>>,
    pub adam_m: Vec<Vec<Tensor<T>>>,
    pub adam_v: Vec<Vec<Tensor<T>>>,
    pub step_count: u64,
}

/// One gradient tensor per learnable weight, same grouping as the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T>(pub Vec<Vec<Tensor<T>>>);

impl<T: Real> Gradients<T> {
    pub fn zeros_like(state: &NetworkState<T>) -> Self {
        Self(
            state
                .weights
                .iter()
                .map(|ws| ws.iter().map(|w| Tensor::zeros(w.shape())).collect())
                .collect(),
        )
    }

    /// Elementwise accumulation; used for fixed-order batch reduction.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (mine, theirs) in self.0.iter_mut().zip(&other.0) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.add_assign(b);
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.0.iter_mut().flatten() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(Tensor::is_finite)
    }
}

impl<T: Real> NetworkState<T> {
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().flatten().map(Tensor::len).sum()
    }

    /// Converts precision; ADAM moments and step count carry over.
    pub fn cast<U: Real>(&self) -> NetworkState<U> {
        let conv = |g: &Vec<Vec<Tensor<T>>>| -> Vec<Vec<Tensor<U>>> {
            g.iter()
                .map(|ws| ws.iter().map(Tensor::cast).collect())
                .collect()
        };
        NetworkState {
            weights: conv(&self.weights),
            adam_m: conv(&self.adam_m),
            adam_v: conv(&self.adam_v),
            step_count: self.step_count,
        }
    }

    /// Fresh state holding the given weights with zeroed moments.
    pub fn from_weights(spec: &NetworkSpec, weights: Vec<Vec<Tensor<T>>>) -> Result<Self> {
        check_congruent(spec, &weights)?;
        let zeros: Vec<Vec<Tensor<T>>> = weights
            .iter()
            .map(|ws| ws.iter().map(|w| Tensor::zeros(w.shape())).collect())
            .collect();
        Ok(Self {
            weights,
            adam_m: zeros.clone(),
            adam_v: zeros,
            step_count: 0,
        })
    }
}

fn check_congruent<T: Real>(spec: &NetworkSpec, weights: &[Vec<Tensor<T>>]) -> Result<()> {
    if weights.len() != spec.layers.len() {
        return Err(NnError::Config(format!(
            "{} weight groups for {} layers",
            weights.len(),
            spec.layers.len()
        )));
    }
    for (idx, (layer, ws)) in spec.layers.iter().zip(weights).enumerate() {
        let expected = layer.param_shapes();
        let actual: Vec<Vec<usize>> = ws.iter().map(|w| w.shape().to_vec()).collect();
        if expected != actual {
            return Err(NnError::LayerShape {
                layer: idx,
                kind: layer.kind(),
                message: format!("weights {actual:?} do not match {expected:?}"),
            });
        }
    }
    Ok(())
}

/// Initializes weights for `spec`: uniform `±sqrt(6/(fan_in+fan_out))` for
/// conv/dense kernels, zero biases, unit scale and zero shift for
/// normalization. Values are drawn in f64 then cast, so f32 and f64 states
/// built from one seed agree.
pub fn build_network<T: Real>(spec: &NetworkSpec, seed: u64) -> Result<NetworkState<T>> {
    spec.activation_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        let shapes = layer.param_shapes();
        let group = match (layer, layer.fans()) {
            (_, Some((fan_in, fan_out))) => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let kernel: Vec<T> = (0..shapes[0].iter().product::<usize>())
                    .map(|_| T::lit(rng.random_range(-limit..limit)))
                    .collect();
                let mut group = vec![Tensor::new(shapes[0].clone(), kernel)?];
                group.extend(shapes[1..].iter().map(|s| Tensor::zeros(s)));
                group
            }
            (Layer::InstanceNorm { channels }, None) => vec![
                Tensor::new(vec![*channels], vec![T::one(); *channels])?,
                Tensor::zeros(&[*channels]),
            ],
            _ => Vec::new(),
        };
        weights.push(group);
    }
    NetworkState::from_weights(spec, weights)
}

/// Evaluation mode. Dropout is active only in `Train`, with masks drawn from
/// the given seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Inference,
    Train { seed: u64 },
}

#[derive(Clone, Debug)]
enum Aux<T> {
    None,
    DropoutMask(Vec<T>),
    Norm { normalized: Vec<T>, inv_std: Vec<T> },
}

/// Activations retained for [`backward`].
#[derive(Clone, Debug, Default)]
pub struct ForwardCache<T> {
    activations: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
}

fn check_finite<T: Real>(t: &Tensor<T>, stage: impl FnOnce() -> String) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(NnError::NonFinite { stage: stage() })
    }
}

fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Forward pass without retaining activations.
pub fn forward<T: Real>(
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    input: &Tensor<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    run_forward(spec, state, input, mode, false).map(|(out, _)| out)
}

/// Forward pass retaining everything [`backward`] needs.
pub fn forward_with_cache<T: Real>(
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    input: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    let (out, cache) = run_forward(spec, state, input, mode, true)?;
    Ok((out, cache.expect("retained")))
}

fn run_forward<T: Real>(
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    input: &Tensor<T>,
    mode: Mode,
    retain: bool,
) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
    let shapes = spec.activation_shapes()?;
    if input.shape() != spec.input_shape.as_slice() {
        return Err(NnError::ShapeMismatch {
            expected: spec.input_shape.clone(),
            actual: input.shape().to_vec(),
        });
    }
    check_congruent(spec, &state.weights)?;
    // Skip sources must outlive their consumers even when not retaining.
    let mut keep = vec![retain; spec.layers.len() + 1];
    for layer in &spec.layers {
        if let Layer::Concat { source } = layer {
            keep[source + 1] = true;
        }
    }
    let mut activations: Vec<Option<Tensor<T>>> = vec![None; spec.layers.len() + 1];
    let mut aux = Vec::with_capacity(if retain { spec.layers.len() } else { 0 });
    let mut current = input.clone();
    for (idx, layer) in spec.layers.iter().enumerate() {
        let skip = match layer {
            Layer::Concat { source } if source + 1 == idx => Some(&current),
            Layer::Concat { source } => activations[source + 1].as_ref(),
            _ => None,
        };
        let (out, extra) = layer_forward(
            layer,
            &state.weights[idx],
            &current,
            &shapes[idx + 1],
            skip,
            mode,
            idx,
        );
        check_finite(&out, || format!("forward layer {idx} ({})", layer.kind()))?;
        if retain {
            aux.push(extra);
        }
        let previous = std::mem::replace(&mut current, out);
        if keep[idx] {
            activations[idx] = Some(previous);
        }
    }
    let cache = if retain {
        activations[spec.layers.len()] = Some(current.clone());
        Some(ForwardCache {
            activations: activations
                .into_iter()
                .map(|a| a.expect("retained activation"))
                .collect(),
            aux,
        })
    } else {
        None
    };
    Ok((current, cache))
}

fn geom_for(
    in_shape: &[usize],
    out_shape: &[usize],
    kernel: usize,
    stride: usize,
    padding: usize,
) -> ConvGeom {
    ConvGeom {
        channels: in_shape[0],
        height: in_shape[1],
        width: in_shape[2],
        kernel,
        stride,
        padding,
        out_h: out_shape[1],
        out_w: out_shape[2],
    }
}

fn layer_forward<T: Real>(
    layer: &Layer,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    out_shape: &[usize],
    skip: Option<&Tensor<T>>,
    mode: Mode,
    idx: usize,
) -> (Tensor<T>, Aux<T>) {
    let xs = x.data();
    match *layer {
        Layer::Conv {
            out_channels,
            kernel,
            stride,
            padding,
            ..
        } => {
            let g = geom_for(x.shape(), out_shape, kernel, stride, padding);
            let mut cols = vec![T::zero(); g.rows() * g.cols()];
            im2col(&g, xs, &mut cols);
            let mut out = bias_planes(params.get(1), out_channels, g.cols());
            gemm(
                out_channels,
                g.rows(),
                g.cols(),
                params[0].data(),
                false,
                &cols,
                false,
                &mut out,
                T::one(),
            );
            (tensor(out_shape, out), Aux::None)
        }
        Layer::ConvTranspose {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            ..
        } => {
            // The adjoint of a conv mapping out_shape -> x.shape().
            let g = geom_for(out_shape, x.shape(), kernel, stride, padding);
            let rows = out_channels * kernel * kernel;
            let mut cols = vec![T::zero(); rows * g.cols()];
            gemm(
                rows,
                in_channels,
                g.cols(),
                params[0].data(),
                true,
                xs,
                false,
                &mut cols,
                T::zero(),
            );
            let mut out = bias_planes(params.get(1), out_channels, out_shape[1] * out_shape[2]);
            col2im(&g, &cols, &mut out);
            (tensor(out_shape, out), Aux::None)
        }
        Layer::Dense { inputs, outputs } => {
            let mut out = params[1].data().to_vec();
            gemm(outputs, inputs, 1, params[0].data(), false, xs, false, &mut out, T::one());
            (tensor(out_shape, out), Aux::None)
        }
        Layer::LeakyRelu { slope } => {
            let s = T::lit(slope);
            (map(x, |v| if v > T::zero() { v } else { v * s }), Aux::None)
        }
        Layer::Relu => (map(x, |v| v.max(T::zero())), Aux::None),
        Layer::Tanh => (map(x, |v| v.tanh()), Aux::None),
        Layer::Sigmoid => (map(x, sigmoid), Aux::None),
        Layer::Affine { scale, shift } => {
            let (a, b) = (T::lit(scale), T::lit(shift));
            (map(x, |v| a * v + b), Aux::None)
        }
        Layer::Flatten => (tensor(out_shape, xs.to_vec()), Aux::None),
        Layer::Dropout { rate } => match mode {
            Mode::Inference => (x.clone(), Aux::None),
            Mode::Train { seed } => {
                let keep = 1.0 - rate;
                let scale = T::lit(1.0 / keep);
                let mut rng = ChaCha8Rng::seed_from_u64(layer_seed(seed, idx));
                let mask: Vec<T> = (0..xs.len())
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let out = xs.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                (tensor(out_shape, out), Aux::DropoutMask(mask))
            }
        },
        Layer::InstanceNorm { channels } => {
            let plane = xs.len() / channels;
            let n = T::lit(plane as f64);
            let (gain, shift) = (params[0].data(), params[1].data());
            let mut normalized = vec![T::zero(); xs.len()];
            let mut inv_std = vec![T::zero(); channels];
            let mut out = vec![T::zero(); xs.len()];
            for c in 0..channels {
                let src = &xs[c * plane..(c + 1) * plane];
                let mean = src.iter().copied().sum::<T>() / n;
                let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let is = T::one() / (var + T::lit(NORM_EPS)).sqrt();
                inv_std[c] = is;
                for i in 0..plane {
                    let xh = (src[i] - mean) * is;
                    normalized[c * plane + i] = xh;
                    out[c * plane + i] = gain[c] * xh + shift[c];
                }
            }
            (
                tensor(out_shape, out),
                Aux::Norm {
                    normalized,
                    inv_std,
                },
            )
        }
        Layer::Concat { .. } => {
            let skip = skip.expect("skip activation retained");
            let mut out = Vec::with_capacity(xs.len() + skip.len());
            out.extend_from_slice(xs);
            out.extend_from_slice(skip.data());
            (tensor(out_shape, out), Aux::None)
        }
    }
}

fn tensor<T: Real>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape.to_vec(), data).expect("shape inferred by spec")
}

fn map<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    tensor(x.shape(), x.data().iter().map(|&v| f(v)).collect())
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn bias_planes<T: Real>(bias: Option<&Tensor<T>>, channels: usize, plane: usize) -> Vec<T> {
    match bias {
        None => vec![T::zero(); channels * plane],
        Some(bias) => {
            let mut out = Vec::with_capacity(channels * plane);
            for &b in bias.data() {
                out.extend(std::iter::repeat_n(b, plane));
            }
            out
        }
    }
}

/// Reverse pass. Returns weight gradients and the gradient w.r.t. the input.
pub fn backward<T: Real>(
    spec: &NetworkSpec,
    state: &NetworkState<T>,
    cache: &ForwardCache<T>,
    upstream: &Tensor<T>,
) -> Result<(Gradients<T>, Tensor<T>)> {
    let depth = spec.layers.len();
    if cache.activations.len() != depth + 1 || cache.aux.len() != depth {
        return Err(NnError::MissingCache);
    }
    if upstream.shape() != spec.output_shape.as_slice() {
        return Err(NnError::ShapeMismatch {
            expected: spec.output_shape.clone(),
            actual: upstream.shape().to_vec(),
        });
    }
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; depth + 1];
    grads[depth] = Some(upstream.clone());
    let mut weight_grads: Vec<Vec<Tensor<T>>> = vec![Vec::new(); depth];
    for idx in (0..depth).rev() {
        let layer = &spec.layers[idx];
        let dy = grads[idx + 1]
            .take()
            .unwrap_or_else(|| Tensor::zeros(cache.activations[idx + 1].shape()));
        let x = &cache.activations[idx];
        let y = &cache.activations[idx + 1];
        let (dx, dw, dskip) = layer_backward(layer, &state.weights[idx], x, y, &dy, &cache.aux[idx]);
        check_finite(&dx, || format!("backward layer {idx} ({})", layer.kind()))?;
        for g in &dw {
            check_finite(g, || format!("weight gradient of layer {idx}"))?;
        }
        weight_grads[idx] = dw;
        accumulate(&mut grads[idx], dx);
        if let (Layer::Concat { source }, Some(ds)) = (layer, dskip) {
            accumulate(&mut grads[source + 1], ds);
        }
    }
    let dinput = grads[0].take().expect("input gradient");
    Ok((Gradients(weight_grads), dinput))
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

type LayerGrads<T> = (Tensor<T>, Vec<Tensor<T>>, Option<Tensor<T>>);

fn layer_backward<T: Real>(
    layer: &Layer,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    y: &Tensor<T>,
    dy: &Tensor<T>,
    aux: &Aux<T>,
) -> LayerGrads<T> {
    let (xs, ys, dys) = (x.data(), y.data(), dy.data());
    let elementwise = |f: &dyn Fn(usize) -> T| -> LayerGrads<T> {
        let dx = (0..xs.len()).map(f).collect();
        (tensor(x.shape(), dx), Vec::new(), None)
    };
    match *layer {
        Layer::Conv {
            out_channels,
            kernel,
            stride,
            padding,
            ..
        } => {
            let g = geom_for(x.shape(), y.shape(), kernel, stride, padding);
            let mut cols = vec![T::zero(); g.rows() * g.cols()];
            im2col(&g, xs, &mut cols);
            let mut dw = vec![T::zero(); out_channels * g.rows()];
            gemm(out_channels, g.cols(), g.rows(), dys, false, &cols, true, &mut dw, T::zero());
            let mut dw = vec![tensor(params[0].shape(), dw)];
            if params.len() > 1 {
                dw.push(tensor(params[1].shape(), plane_sums(dys, out_channels)));
            }
            let mut dcols = cols;
            gemm(
                g.rows(),
                out_channels,
                g.cols(),
                params[0].data(),
                true,
                dys,
                false,
                &mut dcols,
                T::zero(),
            );
            let mut dx = vec![T::zero(); xs.len()];
            col2im(&g, &dcols, &mut dx);
            (tensor(x.shape(), dx), dw, None)
        }
        Layer::ConvTranspose {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            ..
        } => {
            let g = geom_for(y.shape(), x.shape(), kernel, stride, padding);
            let rows = out_channels * kernel * kernel;
            let mut dcols = vec![T::zero(); rows * g.cols()];
            im2col(&g, dys, &mut dcols);
            let mut dx = vec![T::zero(); xs.len()];
            gemm(
                in_channels,
                rows,
                g.cols(),
                params[0].data(),
                false,
                &dcols,
                false,
                &mut dx,
                T::zero(),
            );
            let mut dw = vec![T::zero(); in_channels * rows];
            gemm(in_channels, g.cols(), rows, xs, false, &dcols, true, &mut dw, T::zero());
            let mut dw = vec![tensor(params[0].shape(), dw)];
            if params.len() > 1 {
                dw.push(tensor(params[1].shape(), plane_sums(dys, out_channels)));
            }
            (tensor(x.shape(), dx), dw, None)
        }
        Layer::Dense { inputs, outputs } => {
            let mut dw = vec![T::zero(); outputs * inputs];
            gemm(outputs, 1, inputs, dys, false, xs, false, &mut dw, T::zero());
            let mut dx = vec![T::zero(); inputs];
            gemm(inputs, outputs, 1, params[0].data(), true, dys, false, &mut dx, T::zero());
            (
                tensor(x.shape(), dx),
                vec![tensor(params[0].shape(), dw), tensor(params[1].shape(), dys.to_vec())],
                None,
            )
        }
        Layer::LeakyRelu { slope } => {
            let s = T::lit(slope);
            elementwise(&|i| if xs[i] > T::zero() { dys[i] } else { dys[i] * s })
        }
        Layer::Relu => elementwise(&|i| if xs[i] > T::zero() { dys[i] } else { T::zero() }),
        Layer::Tanh => elementwise(&|i| dys[i] * (T::one() - ys[i] * ys[i])),
        Layer::Sigmoid => elementwise(&|i| dys[i] * ys[i] * (T::one() - ys[i])),
        Layer::Affine { scale, .. } => {
            let a = T::lit(scale);
            elementwise(&|i| dys[i] * a)
        }
        Layer::Flatten => (tensor(x.shape(), dys.to_vec()), Vec::new(), None),
        Layer::Dropout { .. } => match aux {
            Aux::DropoutMask(mask) => elementwise(&|i| dys[i] * mask[i]),
            _ => (tensor(x.shape(), dys.to_vec()), Vec::new(), None),
        },
        Layer::InstanceNorm { channels } => {
            let Aux::Norm {
                normalized,
                inv_std,
            } = aux
            else {
                unreachable!("instance norm always records statistics")
            };
            let plane = xs.len() / channels;
            let n = T::lit(plane as f64);
            let gain = params[0].data();
            let mut dx = vec![T::zero(); xs.len()];
            let mut dgain = vec![T::zero(); channels];
            let mut dshift = vec![T::zero(); channels];
            for c in 0..channels {
                let range = c * plane..(c + 1) * plane;
                let xh = &normalized[range.clone()];
                let d = &dys[range.clone()];
                let mut sum_d = T::zero();
                let mut sum_dxh = T::zero();
                for i in 0..plane {
                    sum_d += d[i];
                    sum_dxh += d[i] * xh[i];
                }
                dgain[c] = sum_dxh;
                dshift[c] = sum_d;
                // dL/dxhat = gain * d; sums scale by gain as well.
                let k = gain[c] * inv_std[c] / n;
                for i in 0..plane {
                    dx[c * plane + i] = k * (n * d[i] - sum_d - xh[i] * sum_dxh);
                }
            }
            (
                tensor(x.shape(), dx),
                vec![
                    tensor(params[0].shape(), dgain),
                    tensor(params[1].shape(), dshift),
                ],
                None,
            )
        }
        Layer::Concat { .. } => {
            let (head, tail) = dys.split_at(xs.len());
            let skip_shape = {
                let mut s = y.shape().to_vec();
                s[0] -= x.shape()[0];
                s
            };
            (
                tensor(x.shape(), head.to_vec()),
                Vec::new(),
                Some(tensor(&skip_shape, tail.to_vec())),
            )
        }
    }
}

fn plane_sums<T: Real>(data: &[T], channels: usize) -> Vec<T> {
    let plane = data.len() / channels;
    (0..channels)
        .map(|c| data[c * plane..(c + 1) * plane].iter().copied().sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_spec(inputs: usize, outputs: usize) -> NetworkSpec {
        NetworkSpec::new(vec![inputs], vec![Layer::Dense { inputs, outputs }]).unwrap()
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let spec = dense_spec(4, 2);
        let a: NetworkState<f32> = build_network(&spec, 7).unwrap();
        let b: NetworkState<f32> = build_network(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c: NetworkState<f32> = build_network(&spec, 8).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn init_respects_glorot_limit() {
        let spec = dense_spec(10, 6);
        let state: NetworkState<f64> = build_network(&spec, 1).unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(state.weights[0][0].data().iter().all(|w| w.abs() < limit));
        assert!(state.weights[0][1].data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn identity_dense_layer_passes_input() {
        let spec = dense_spec(3, 3);
        let eye = Tensor::from_f64(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let state =
            NetworkState::from_weights(&spec, vec![vec![eye, Tensor::zeros(&[3])]]).unwrap();
        let x = Tensor::<f64>::from_f64(&[3], &[0.5, -2.0, 3.25]).unwrap();
        assert_eq!(forward(&spec, &state, &x, Mode::Inference).unwrap(), x);
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let spec = NetworkSpec::new(vec![2, 3, 3], vec![Layer::Tanh]).unwrap();
        let state: NetworkState<f64> = build_network(&spec, 0).unwrap();
        let out = forward(&spec, &state, &Tensor::zeros(&[2, 3, 3]), Mode::Inference).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_is_identity_at_inference_and_masks_in_training() {
        let spec = NetworkSpec::new(vec![64], vec![Layer::Dropout { rate: 0.5 }]).unwrap();
        let state: NetworkState<f32> = build_network(&spec, 0).unwrap();
        let x = Tensor::from_f64(&[64], &(0..64).map(|i| i as f64 + 1.0).collect::<Vec<_>>())
            .unwrap();
        assert_eq!(forward(&spec, &state, &x, Mode::Inference).unwrap(), x);
        let trained = forward(&spec, &state, &x, Mode::Train { seed: 3 }).unwrap();
        let zeros = trained.data().iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 10 && zeros < 54, "{zeros}");
        for (&t, &v) in trained.data().iter().zip(x.data()) {
            assert!(t == 0.0 || t == 2.0 * v);
        }
    }

    #[test]
    fn square_of_weight_has_derivative_six_at_three() {
        // f(w) = w·(w·x) with x = 1 is w², expressed as two stacked 1×1 dense
        // layers sharing the value 3; summing both weight gradients gives d/dw.
        let spec = NetworkSpec::new(
            vec![1],
            vec![
                Layer::Dense { inputs: 1, outputs: 1 },
                Layer::Dense { inputs: 1, outputs: 1 },
            ],
        )
        .unwrap();
        let w = || Tensor::<f64>::from_f64(&[1, 1], &[3.0]).unwrap();
        let state = NetworkState::from_weights(
            &spec,
            vec![vec![w(), Tensor::zeros(&[1])], vec![w(), Tensor::zeros(&[1])]],
        )
        .unwrap();
        let x = Tensor::from_f64(&[1], &[1.0]).unwrap();
        let (y, cache) = forward_with_cache(&spec, &state, &x, Mode::Inference).unwrap();
        assert_eq!(y.data(), &[9.0]);
        let (g, _) = backward(&spec, &state, &cache, &Tensor::from_f64(&[1], &[1.0]).unwrap())
            .unwrap();
        assert_eq!(g.0[0][0].data()[0] + g.0[1][0].data()[0], 6.0);
    }

    #[test]
    fn dense_weight_gradient_of_sum_is_outer_product() {
        let spec = dense_spec(3, 2);
        let state: NetworkState<f64> = build_network(&spec, 5).unwrap();
        let x = Tensor::from_f64(&[3], &[1.5, -0.5, 2.0]).unwrap();
        let (_, cache) = forward_with_cache(&spec, &state, &x, Mode::Inference).unwrap();
        let ones = Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap();
        let (g, _) = backward(&spec, &state, &cache, &ones).unwrap();
        assert_eq!(g.0[0][0].data(), &[1.5, -0.5, 2.0, 1.5, -0.5, 2.0]);
        assert_eq!(g.0[0][1].data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_without_cache_is_an_error() {
        let spec = dense_spec(2, 2);
        let state: NetworkState<f64> = build_network(&spec, 0).unwrap();
        let err = backward(&spec, &state, &ForwardCache::default(), &Tensor::zeros(&[2]));
        assert!(matches!(err, Err(NnError::MissingCache)));
    }

    #[test]
    fn input_shape_is_checked() {
        let spec = dense_spec(2, 2);
        let state: NetworkState<f64> = build_network(&spec, 0).unwrap();
        let err = forward(&spec, &state, &Tensor::zeros(&[3]), Mode::Inference);
        assert!(matches!(err, Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_activation_is_reported() {
        let spec = dense_spec(1, 1);
        let state: NetworkState<f64> = build_network(&spec, 0).unwrap();
        let x = Tensor::from_f64(&[1], &[f64::INFINITY]).unwrap();
        let err = forward(&spec, &state, &x, Mode::Inference).unwrap_err();
        assert!(matches!(err, NnError::NonFinite { .. }));
    }
}
