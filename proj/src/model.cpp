#include "kelab/model.hpp"

#include <cmath>

#include "kelab/container.hpp"
#include "kelab/rng.hpp"

namespace kelab {

const char* coeff_mode_name(CoeffMode mode) {
    return mode == CoeffMode::AbsSwiglu ? "abs-swiglu" : "relu-gate";
}

CoeffMode coeff_mode_from_name(const std::string& name) {
    if (name == "abs-swiglu") return CoeffMode::AbsSwiglu;
    if (name == "relu-gate") return CoeffMode::ReluGate;
    throw ConfigError("unknown coefficient mode '" + name + "'");
}

void ModelConfig::validate() const {
    if (n_layers < 1 || model_dim < 1 || ffn_inner < 1 || n_heads < 1 || vocab_size < 1 ||
        max_seq_len < 1) {
        throw ConfigError("model config: all sizes must be >= 1");
    }
    if (model_dim % n_heads != 0) {
        throw ConfigError("model config: model_dim " + std::to_string(model_dim) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (!(norm_eps > 0.0)) throw ConfigError("model config: norm_eps must be positive");
}

std::vector<std::pair<std::string, Shape>> checkpoint_layout(const ModelConfig& cfg) {
    const int64_t d = cfg.model_dim, m = cfg.ffn_inner, v = cfg.vocab_size, t = cfg.max_seq_len;
    std::vector<std::pair<std::string, Shape>> layout;
    layout.emplace_back("tok_embed", Shape{v, d});
    layout.emplace_back("pos_embed", Shape{t, d});
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        layout.emplace_back(p + "attn_norm", Shape{d});
        layout.emplace_back(p + "wq", Shape{d, d});
        layout.emplace_back(p + "wk", Shape{d, d});
        layout.emplace_back(p + "wv", Shape{d, d});
        layout.emplace_back(p + "wo", Shape{d, d});
        layout.emplace_back(p + "ffn_norm", Shape{d});
        layout.emplace_back(p + "gate", Shape{m, d});
        layout.emplace_back(p + "up", Shape{m, d});
        layout.emplace_back(p + "down", Shape{m, d});
    }
    layout.emplace_back("final_norm", Shape{d});
    layout.emplace_back("unembed", Shape{v, d});
    return layout;
}

Tensor& Checkpoint::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("checkpoint has no tensor '" + name + "'");
    return it->second;
}

const Tensor& Checkpoint::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("checkpoint has no tensor '" + name + "'");
    return it->second;
}

Checkpoint Checkpoint::clone() const {
    Checkpoint c;
    c.config = config;
    c.step = step;
    c.order = order;
    c.extra = extra;
    for (const auto& name : order) c.tensors.emplace(name, at(name).clone());
    return c;
}

Checkpoint init_model(const ModelConfig& cfg) {
    cfg.validate();
    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.step = 0;
    const double down_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
    for (const auto& [name, shape] : checkpoint_layout(cfg)) {
        Tensor t = Tensor::zeros(shape);
        const bool is_norm = name.find("norm") != std::string::npos;
        if (is_norm) {
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 1.0;
        } else {
            Rng rng(derive_seed(cfg.seed, "init/" + name));
            double std = 0.02;
            if (name.size() > 5 && name.substr(name.size() - 5) == ".down") std *= down_scale;
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = std * rng.normal();
        }
        ckpt.order.push_back(name);
        ckpt.tensors.emplace(name, std::move(t));
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    Container c;
    c.kind = "model";
    c.meta["config"] = {
        {"n_layers", ckpt.config.n_layers},     {"model_dim", ckpt.config.model_dim},
        {"ffn_inner", ckpt.config.ffn_inner},   {"n_heads", ckpt.config.n_heads},
        {"vocab_size", ckpt.config.vocab_size}, {"max_seq_len", ckpt.config.max_seq_len},
        {"norm_eps", ckpt.config.norm_eps},     {"seed", ckpt.config.seed},
    };
    c.meta["step"] = ckpt.step;
    for (const auto& [k, v] : ckpt.extra) c.meta["extra"][k] = v;
    for (const auto& name : ckpt.order) c.tensors.push_back(entry_from_tensor(name, ckpt.at(name)));
    write_container(path, c);
}

Checkpoint load_checkpoint(const std::string& path) {
    Container c = read_container(path);
    if (c.kind != "model") {
        throw ValidationError("'" + path + "': container kind '" + c.kind + "' is not a model checkpoint");
    }
    Checkpoint ckpt;
    const auto& mc = c.meta.at("config");
    ckpt.config.n_layers = mc.at("n_layers").get<int>();
    ckpt.config.model_dim = mc.at("model_dim").get<int>();
    ckpt.config.ffn_inner = mc.at("ffn_inner").get<int>();
    ckpt.config.n_heads = mc.at("n_heads").get<int>();
    ckpt.config.vocab_size = mc.at("vocab_size").get<int>();
    ckpt.config.max_seq_len = mc.at("max_seq_len").get<int>();
    ckpt.config.norm_eps = mc.at("norm_eps").get<double>();
    ckpt.config.seed = mc.at("seed").get<uint64_t>();
    ckpt.config.validate();
    ckpt.step = c.meta.at("step").get<int64_t>();
    if (ckpt.step < 0) throw ValidationError("'" + path + "': negative step");
    if (c.meta.contains("extra")) {
        for (auto& [k, v] : c.meta.at("extra").items()) ckpt.extra[k] = v.get<std::string>();
    }

    const auto layout = checkpoint_layout(ckpt.config);
    if (layout.size() != c.tensors.size()) {
        throw TensorShapeMismatchError("'" + path + "': directory has " +
                                       std::to_string(c.tensors.size()) + " tensors, config implies " +
                                       std::to_string(layout.size()));
    }
    for (size_t i = 0; i < layout.size(); ++i) {
        const auto& [name, shape] = layout[i];
        const auto& e = c.tensors[i];
        if (e.name != name || e.shape != shape) {
            throw TensorShapeMismatchError("'" + path + "': tensor '" + e.name + "' " +
                                           shape_str(e.shape) + " does not match expected '" + name +
                                           "' " + shape_str(shape));
        }
        ckpt.order.push_back(name);
        ckpt.tensors.emplace(name, tensor_from_entry(e));
    }
    return ckpt;
}

ForwardOptions attention_temperature(double tau) {
    if (!(tau > 0.0)) throw ConfigError("attention temperature must be positive");
    ForwardOptions opts;
    opts.attn_temperature = tau;
    return opts;
}

Model::Model(Checkpoint ckpt)
    : config_(ckpt.config), step_(ckpt.step), order_(std::move(ckpt.order)),
      params_(std::move(ckpt.tensors)), extra_(std::move(ckpt.extra)) {
    config_.validate();
}

Tensor& Model::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("model has no parameter '" + name + "'");
    return it->second;
}

const Tensor& Model::param(const std::string& name) const {
    return const_cast<Model*>(this)->param(name);
}

void Model::set_trainable(bool trainable) {
    for (auto& [name, t] : params_) t.set_requires_grad(trainable);
}

void Model::zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
}

int64_t Model::n_params() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

Tensor Model::forward_batch(const std::vector<int>& tokens, int64_t batch, int64_t seq_len,
                            const ForwardOptions& opts, InstrumentationTrace* trace) {
    if (batch < 1 || seq_len < 1 || static_cast<int64_t>(tokens.size()) != batch * seq_len) {
        throw ShapeError("forward_batch: token buffer does not hold batch x seq_len ids");
    }
    if (seq_len > config_.max_seq_len) {
        throw ValidationError("forward_batch: sequence length " + std::to_string(seq_len) +
                              " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    }
    for (int id : tokens) {
        if (id < 0 || id >= config_.vocab_size) {
            throw ValidationError("forward_batch: token id " + std::to_string(id) + " out of range");
        }
    }
    if (!(opts.attn_temperature > 0.0)) {
        throw ConfigError("forward_batch: attention temperature must be positive");
    }
    if (trace && batch != 1) {
        throw ValidationError("forward_batch: instrumentation trace requires batch == 1");
    }

    std::vector<int> pos(tokens.size());
    for (size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i % static_cast<size_t>(seq_len));

    if (trace) {
        trace->seq_len = seq_len;
        trace->n_heads = config_.n_heads;
        trace->ffn_inner = config_.ffn_inner;
        trace->vocab = config_.vocab_size;
        trace->coeff_mode = opts.coeff_mode;
        trace->attn_temperature = opts.attn_temperature;
        trace->layers.assign(static_cast<size_t>(config_.n_layers), {});
    }

    Tensor x = add(gather_rows(param("tok_embed"), tokens), gather_rows(param("pos_embed"), pos));
    for (int l = 0; l < config_.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Tensor a_in = rmsnorm_rows(x, param(p + "attn_norm"), config_.norm_eps);
        AttentionResult att = causal_attention(
            matmul_nt(a_in, param(p + "wq")), matmul_nt(a_in, param(p + "wk")),
            matmul_nt(a_in, param(p + "wv")), batch, seq_len, config_.n_heads,
            opts.attn_temperature);
        x = add(x, matmul_nt(att.out, param(p + "wo")));

        Tensor f_in = rmsnorm_rows(x, param(p + "ffn_norm"), config_.norm_eps);
        Tensor g = matmul_nt(f_in, param(p + "gate"));
        Tensor u = matmul_nt(f_in, param(p + "up"));
        Tensor h = swiglu(g, u);
        x = add(x, matmul(h, param(p + "down")));

        if (trace) {
            LayerTrace& lt = trace->layers[static_cast<size_t>(l)];
            if (opts.record_ffn_inputs) {
                lt.ffn_input.assign(f_in.data(), f_in.data() + f_in.numel());
            }
            lt.coeff.resize(static_cast<size_t>(h.numel()));
            if (opts.coeff_mode == CoeffMode::AbsSwiglu) {
                for (int64_t i = 0; i < h.numel(); ++i) lt.coeff[static_cast<size_t>(i)] = std::abs(h.data()[i]);
            } else {
                Tensor rc = relu_gate_coeff(g, u);
                lt.coeff.assign(rc.data(), rc.data() + rc.numel());
            }
            lt.attn.resize(static_cast<size_t>(config_.n_heads));
            const int64_t tt = seq_len * seq_len;
            for (int h_i = 0; h_i < config_.n_heads; ++h_i) {
                const double* src = att.probs->data() + h_i * tt;
                lt.attn[static_cast<size_t>(h_i)].assign(src, src + tt);
            }
        }
    }
    Tensor logits = matmul_nt(rmsnorm_rows(x, param("final_norm"), config_.norm_eps), param("unembed"));
    if (trace) {
        trace->logits.assign(logits.data(), logits.data() + logits.numel());
    }
    return logits;
}

double Model::span_logprob(const std::vector<int>& context, const std::vector<int>& span,
                           const ForwardOptions& opts) {
    if (context.empty()) throw ValidationError("span_logprob: context must be nonempty");
    if (span.empty()) throw ValidationError("span_logprob: span must be nonempty");
    std::vector<int> seq = context;
    seq.insert(seq.end(), span.begin(), span.end());
    if (static_cast<int64_t>(seq.size()) > config_.max_seq_len) {
        throw ValidationError("span_logprob: context+span length " + std::to_string(seq.size()) +
                              " exceeds max_seq_len");
    }
    Tensor logits = forward_batch(seq, 1, static_cast<int64_t>(seq.size()), opts);
    const int64_t v = config_.vocab_size;
    double total = 0.0;
    for (size_t s = 0; s < span.size(); ++s) {
        const int64_t row = static_cast<int64_t>(context.size() + s) - 1;
        const double* zr = logits.data() + row * v;
        double mx = zr[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, zr[j]);
        double lse = 0.0;
        for (int64_t j = 0; j < v; ++j) lse += std::exp(zr[j] - mx);
        total += zr[span[s]] - (mx + std::log(lse));
    }
    return total / static_cast<double>(span.size());
}

Checkpoint Model::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.config = config_;
    ckpt.step = step_;
    ckpt.order = order_;
    ckpt.extra = extra_;
    for (const auto& name : order_) ckpt.tensors.emplace(name, param(name).clone());
    return ckpt;
}

InstrumentationTrace forward(const Checkpoint& ckpt, const std::vector<int>& tokens,
                             const ForwardOptions& opts) {
    Model model(ckpt.clone());
    InstrumentationTrace trace;
    model.forward_batch(tokens, 1, static_cast<int64_t>(tokens.size()), opts, &trace);
    return trace;
}

double loss_lm(const InstrumentationTrace& trace, const std::vector<int>& targets,
               const std::vector<uint8_t>& mask) {
    Tensor logits = Tensor::from_values({trace.seq_len, trace.vocab}, trace.logits);
    return cross_entropy_mean(logits, targets, mask).value();
}

double target_span_logprob(const Checkpoint& ckpt, const std::vector<int>& context,
                           const std::vector<int>& span) {
    Model model(ckpt.clone());
    return model.span_logprob(context, span);
}

}  // namespace kelab
