#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "kelab/tensor.hpp"

namespace kelab {

// ---- matrix products ----------------------------------------------------

// [r x k] * [k x c] -> [r x c]
Tensor matmul(const Tensor& a, const Tensor& b);
// [r x k] * [c x k]^T -> [r x c]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// ---- elementwise --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);  // -> scalar

// ---- structured ops -----------------------------------------------------

// out[i, :] = table[ids[i], :]
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);

// Per-row RMS normalization with a learned per-column scale.
Tensor rmsnorm_rows(const Tensor& x, const Tensor& gain, double eps);

// h = swish(gate_pre) * up, elementwise; swish(z) = z * logistic(z).
Tensor swiglu(const Tensor& gate_pre, const Tensor& up);

// Row softmax of logits / temperature, with per-row max subtraction.
Tensor softmax_rows(const Tensor& logits, double temperature);

// Fused causal multi-head self-attention over a flattened batch.
// q, k, v are [batch*seq_len x d]; rows of sequence b are
// [b*seq_len, (b+1)*seq_len). Attention logits are scaled by
// 1/sqrt(head_dim) and divided by `temperature`. `probs` holds the
// row-stochastic attention weights, laid out
// [(b*n_heads + h)*seq_len + j][i], zero above the causal diagonal.
struct AttentionResult {
    Tensor out;
    std::shared_ptr<std::vector<double>> probs;
};
AttentionResult causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                 int64_t batch, int64_t seq_len, int n_heads,
                                 double temperature);

// Mean cross entropy (natural log) over positions where mask != 0.
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<uint8_t>& mask);

// Feed-forward block as a key-value memory read: out = swiglu * down, with
// the absolute activation magnitudes returned as a detached coefficient
// matrix that does not participate in the graph.
struct GatedFfnResult {
    Tensor out;    // [t x d]
    Tensor coeff;  // [t x m], nonnegative, detached
};
GatedFfnResult gated_ffn_forward(const Tensor& x, const Tensor& gate, const Tensor& up,
                                 const Tensor& down);

// Alternative coefficient stream: relu(gate_pre) * up, clamped at zero.
// Detached, same shape as the swiglu activation.
Tensor relu_gate_coeff(const Tensor& gate_pre, const Tensor& up);

// Central-difference gradient of f with respect to params, element by
// element. f is evaluated with params temporarily perturbed in place.
Tensor finite_diff_grad(const std::function<double()>& f, Tensor params, double h);

}  // namespace kelab
