#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kelab/ops.hpp"
#include "kelab/tensor.hpp"

namespace kelab {

enum class CoeffMode { AbsSwiglu, ReluGate };
const char* coeff_mode_name(CoeffMode mode);
CoeffMode coeff_mode_from_name(const std::string& name);

struct ModelConfig {
    int n_layers = 4;
    int model_dim = 64;
    int ffn_inner = 256;
    int n_heads = 4;
    int vocab_size = 2048;
    int max_seq_len = 128;
    double norm_eps = 1e-5;
    uint64_t seed = 1;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Canonical tensor directory implied by a config: (name, shape) in the fixed
// order used by init, the container file, and the optimizer.
std::vector<std::pair<std::string, Shape>> checkpoint_layout(const ModelConfig& cfg);

struct Checkpoint {
    ModelConfig config;
    int64_t step = 0;
    std::vector<std::string> order;
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> extra;  // provenance header fields

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    Checkpoint clone() const;
};

// Deterministic scaled-normal init (std 0.02; ffn down rows additionally
// divided by sqrt(2L); norm gains 1), step 0.
Checkpoint init_model(const ModelConfig& cfg);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct LayerTrace {
    std::vector<double> coeff;               // seq_len x ffn_inner, nonnegative
    std::vector<std::vector<double>> attn;   // per head: seq_len x seq_len, causal
    std::vector<double> ffn_input;           // seq_len x model_dim; only on request
};

struct InstrumentationTrace {
    int64_t seq_len = 0;
    int n_heads = 0;
    int64_t ffn_inner = 0;
    int64_t vocab = 0;
    CoeffMode coeff_mode = CoeffMode::AbsSwiglu;
    double attn_temperature = 1.0;
    std::vector<LayerTrace> layers;
    std::vector<double> logits;              // seq_len x vocab
};

struct ForwardOptions {
    double attn_temperature = 1.0;
    CoeffMode coeff_mode = CoeffMode::AbsSwiglu;
    bool record_ffn_inputs = false;  // capture each layer's normalized FFN input in the trace
};

// Validated eval-mode options for attention-side resuscitation: forward
// passes divide attention logits by tau (tau = 1 is the identity).
ForwardOptions attention_temperature(double tau);

// Runtime view over checkpoint parameters. Shares tensor storage with the
// checkpoint it was built from; to_checkpoint() takes a detached copy.
class Model {
public:
    explicit Model(Checkpoint ckpt);

    const ModelConfig& config() const { return config_; }
    int64_t step() const { return step_; }
    void set_step(int64_t s) { step_ = s; }

    const std::vector<std::string>& param_names() const { return order_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    void set_trainable(bool trainable);
    void zero_grads();
    int64_t n_params() const;

    // Forward over `batch` sequences of length seq_len, flattened row-major
    // into `tokens`. Returns logits [batch*seq_len x vocab]. A trace can only
    // be captured for batch == 1.
    Tensor forward_batch(const std::vector<int>& tokens, int64_t batch, int64_t seq_len,
                         const ForwardOptions& opts = {}, InstrumentationTrace* trace = nullptr);

    // Mean log probability of the span tokens given the context, teacher
    // forced over one forward pass of context+span.
    double span_logprob(const std::vector<int>& context, const std::vector<int>& span,
                        const ForwardOptions& opts = {});

    Checkpoint to_checkpoint() const;
    const std::map<std::string, std::string>& extra() const { return extra_; }

private:
    ModelConfig config_;
    int64_t step_ = 0;
    std::vector<std::string> order_;
    std::map<std::string, Tensor> params_;
    std::map<std::string, std::string> extra_;
};

// Single-sequence instrumented forward pass.
InstrumentationTrace forward(const Checkpoint& ckpt, const std::vector<int>& tokens,
                             const ForwardOptions& opts = {});

// Mean cross entropy (natural log) of the traced logits against shifted
// targets; mask[i] == 0 excludes position i.
double loss_lm(const InstrumentationTrace& trace, const std::vector<int>& targets,
               const std::vector<uint8_t>& mask);

double target_span_logprob(const Checkpoint& ckpt, const std::vector<int>& context,
                           const std::vector<int>& span);

}  // namespace kelab
