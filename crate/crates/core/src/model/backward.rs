//! Exact gradients of the weighted step cross-entropy, back through the MLP
//! head, the GRU unroll, the context fusion and (when present) the
//! cross-attention softmax.

use std::collections::BTreeMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::forward::{forward_sample, AnswerFeed};
use super::prepare::{FunctionContext, PreparedSample};
use super::{ModelConfig, ModelError, ModelParams};

/// `m += a bᵀ`
fn add_outer(m: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (row, &ai) in m.rows_mut().into_iter().zip(a) {
        if ai != 0.0 {
            let mut row = row;
            row.scaled_add(ai, b);
        }
    }
}

/// `vᵀ m`, computed as a 1-row matrix product so `m` is read row-wise.
fn vec_mat(v: &Array1<f64>, m: ArrayView2<f64>) -> Array1<f64> {
    v.view().insert_axis(Axis(0)).dot(&m).remove_axis(Axis(0))
}

/// Accumulates into `grads` the gradient of `Σ_i step_weights[i] · CE_i` for one
/// sample and returns that weighted loss.
///
/// Steps past the last nonzero weight are not evaluated.
pub fn sample_gradients(
    params: &ModelParams,
    config: &ModelConfig,
    sample: &PreparedSample,
    step_weights: &[f64],
    feed: AnswerFeed,
    grads: &mut ModelParams,
) -> Result<f64, ModelError> {
    let Some(last) = step_weights.iter().rposition(|&w| w != 0.0) else {
        return Ok(0.0);
    };
    if last >= sample.steps.len() {
        return Err(ModelError::IndexOutOfRange { index: last, len: sample.steps.len() });
    }
    let trace = forward_sample(params, config, sample, last + 1, feed)?;
    let loss = trace.loss(sample, step_weights);

    let n = last + 1;
    let hidden = config.hidden;
    let df = config.function_dim();
    let answer_offset = df + config.dim_t;
    let w1_h = params.mlp_w1.slice(s![.., 0..hidden]);
    let w1_context = params.mlp_w1.slice(s![.., hidden..hidden + df]);

    // Per-step deltas; the large weight gradients are formed from them in one
    // product each after the unroll.
    let input_dim = config.gru_input_dim();
    let (mut da_h, mut da_z, mut da_r) =
        (Array2::zeros((n, hidden)), Array2::zeros((n, hidden)), Array2::zeros((n, hidden)));
    let (mut xs, mut h_prevs, mut rh) =
        (Array2::zeros((n, input_dim)), Array2::zeros((n, hidden)), Array2::zeros((n, hidden)));
    let mut dpres = Vec::new();
    let mut mlp_inputs = Vec::new();
    let mut dpre_total = Array1::<f64>::zeros(config.mlp_hidden);

    let mut dh_next = Array1::<f64>::zeros(hidden);
    for i in (0..n).rev() {
        let st = &trace.steps[i];
        let mut dh = dh_next;

        let w = step_weights[i];
        if w != 0.0 {
            let mut dlogits = Array1::from(st.probs.clone());
            dlogits[sample.steps[i].gt_index] -= 1.0;
            dlogits *= w;

            grads.mlp_b2[0] += dlogits.sum();
            grads.mlp_w2 += &st.mlp.act.t().dot(&dlogits);
            let dpre = Array2::from_shape_fn(st.mlp.pre.raw_dim(), |(j, k)| {
                if st.mlp.pre[[j, k]] > 0.0 {
                    dlogits[j] * params.mlp_w2[k]
                } else {
                    0.0
                }
            });
            // Every candidate row shares h and the context, so their input
            // gradients only need the column sum of dpre.
            let dpre_sum = dpre.sum_axis(Axis(0));
            dh += &vec_mat(&dpre_sum, w1_h);
            dpre_total += &dpre_sum;
            dpres.push(dpre);
            mlp_inputs.push(st.mlp.input.view());
        }

        let g = &st.gru;
        let dz = &dh * &(&g.h_cand - &g.h_prev);
        let d_cand = &dh * &g.z;
        let mut dh_prev = &dh * &g.z.mapv(|z| 1.0 - z);

        let a_h = d_cand * g.h_cand.mapv(|c| 1.0 - c * c);
        let d_rh = vec_mat(&a_h, params.u_h.view());
        let dr = &d_rh * &g.h_prev;
        dh_prev += &(&d_rh * &g.r);

        let a_z = dz * g.z.mapv(|z| z * (1.0 - z));
        dh_prev += &vec_mat(&a_z, params.u_z.view());
        let a_r = dr * g.r.mapv(|r| r * (1.0 - r));
        dh_prev += &vec_mat(&a_r, params.u_r.view());

        da_h.row_mut(i).assign(&a_h);
        da_z.row_mut(i).assign(&a_z);
        da_r.row_mut(i).assign(&a_r);
        xs.row_mut(i).assign(&g.x);
        h_prevs.row_mut(i).assign(&g.h_prev);
        rh.row_mut(i).assign(&(&g.r * &g.h_prev));
        dh_next = dh_prev;
    }

    if !dpres.is_empty() {
        let views: Vec<_> = dpres.iter().map(|d| d.view()).collect();
        let dpre = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        let inputs = ndarray::concatenate(Axis(0), &mlp_inputs).expect("equal widths");
        general_mat_mul(1.0, &dpre.t(), &inputs, 1.0, &mut grads.mlp_w1);
        grads.mlp_b1 += &dpre_total;
    }

    for (da, w, u, b, rec) in [
        (&da_h, &mut grads.w_h, &mut grads.u_h, &mut grads.b_h, &rh),
        (&da_z, &mut grads.w_z, &mut grads.u_z, &mut grads.b_z, &h_prevs),
        (&da_r, &mut grads.w_r, &mut grads.u_r, &mut grads.b_r, &h_prevs),
    ] {
        general_mat_mul(1.0, &da.t(), &xs, 1.0, w);
        general_mat_mul(1.0, &da.t(), rec, 1.0, u);
        *b += &da.sum_axis(Axis(0));
    }

    let mut dx = Array2::<f64>::zeros((n, input_dim));
    for (da, w) in [(&da_h, &params.w_h), (&da_z, &params.w_z), (&da_r, &params.w_r)] {
        general_mat_mul(1.0, da, w, 1.0, &mut dx);
    }
    let mut d_context = dx.slice(s![.., 0..df]).sum_axis(Axis(0));
    d_context += &vec_mat(&dpre_total, w1_context);
    // Later steps consume fixed answer embeddings; only the start vector is learned.
    grads.start_answer += &dx.slice(s![0, answer_offset..]);

    if let FunctionContext::Attention(function_text) = &sample.context {
        let d_weights = sample.function_feats.dot(&d_context);
        let mean = trace.weights.dot(&d_weights);
        let d_scores = &trace.weights * &(d_weights - mean);
        let grad_att = grads
            .w_att
            .as_mut()
            .ok_or_else(|| ModelError::InvalidConfig("cross-attention weights are not initialized".into()))?;
        add_outer(grad_att, &sample.question, &function_text.t().dot(&d_scores));
    }

    Ok(loss)
}

/// Mean cross-entropy over a batch of `(sample, step)` instances and its gradient.
///
/// Instances are grouped per sample and reduced in ascending sample order,
/// so the result does not depend on the order of `instances`.
pub fn batch_gradients(
    params: &ModelParams,
    config: &ModelConfig,
    samples: &[PreparedSample],
    instances: &[(usize, usize)],
    feed: AnswerFeed,
) -> Result<(f64, ModelParams), ModelError> {
    let mut grads = params.zeros_like();
    if instances.is_empty() {
        return Ok((0.0, grads));
    }
    let unit = 1.0 / instances.len() as f64;
    let mut per_sample: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(s, i) in instances {
        let sample = samples.get(s).ok_or(ModelError::IndexOutOfRange { index: s, len: samples.len() })?;
        if i >= sample.steps.len() {
            return Err(ModelError::IndexOutOfRange { index: i, len: sample.steps.len() });
        }
        per_sample.entry(s).or_insert_with(|| vec![0.0; sample.steps.len()])[i] += unit;
    }
    let mut loss = 0.0;
    for (s, weights) in per_sample {
        loss += sample_gradients(params, config, &samples[s], &weights, feed, &mut grads)?;
    }
    Ok((loss, grads))
}
