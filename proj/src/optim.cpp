#include "kelab/optim.hpp"

#include <cmath>

#include "kelab/container.hpp"

namespace kelab {

void Schedule::validate() const {
    if (total_steps < 1) throw ConfigError("schedule: total_steps must be >= 1");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        throw ConfigError("schedule: warmup_fraction must be in [0, 1)");
    }
    if (!(peak_lr > 0.0) || floor_lr < 0.0 || floor_lr > peak_lr) {
        throw ConfigError("schedule: need 0 <= floor_lr <= peak_lr, peak_lr > 0");
    }
}

int64_t Schedule::warmup_steps() const {
    return static_cast<int64_t>(warmup_fraction * static_cast<double>(total_steps));
}

double lr_at(const Schedule& schedule, int64_t step) {
    schedule.validate();
    if (step < 0 || step > schedule.total_steps) {
        throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(schedule.total_steps) + "]");
    }
    const int64_t warmup = schedule.warmup_steps();
    if (step < warmup) {
        return schedule.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    const double span = static_cast<double>(schedule.total_steps - warmup);
    const double progress = span > 0.0 ? static_cast<double>(step - warmup) / span : 1.0;
    const double cosine = 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
    return schedule.floor_lr + (schedule.peak_lr - schedule.floor_lr) * cosine;
}

AdamW::AdamW(const Model& model, OptimizerHyper hyper) : hyper_(hyper), order_(model.param_names()) {
    for (const auto& name : order_) {
        const size_t n = static_cast<size_t>(model.param(name).numel());
        m_[name].assign(n, 0.0);
        v_[name].assign(n, 0.0);
    }
}

void AdamW::step(Model& model, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));

    double clip_scale = 1.0;
    if (hyper_.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& name : order_) {
            Tensor& p = model.param(name);
            if (!p.has_grad()) continue;
            const double* g = p.grad();
            for (int64_t i = 0; i < p.numel(); ++i) sq += g[i] * g[i];
        }
        const double norm = std::sqrt(sq);
        if (norm > hyper_.grad_clip) clip_scale = hyper_.grad_clip / norm;
    }

    for (const auto& name : order_) {
        Tensor& p = model.param(name);
        const double* g = p.grad();  // zeros if the parameter was unused
        std::vector<double>& m = m_[name];
        std::vector<double>& v = v_[name];
        double* w = p.data();
        const int64_t n = p.numel();
        for (int64_t i = 0; i < n; ++i) {
            const double gi = g[i] * clip_scale;
            if (!std::isfinite(gi)) {
                throw NumericError("adamw: non-finite gradient in '" + name + "'");
            }
            m[static_cast<size_t>(i)] = hyper_.beta1 * m[static_cast<size_t>(i)] + (1.0 - hyper_.beta1) * gi;
            v[static_cast<size_t>(i)] = hyper_.beta2 * v[static_cast<size_t>(i)] + (1.0 - hyper_.beta2) * gi * gi;
            const double mhat = m[static_cast<size_t>(i)] / bc1;
            const double vhat = v[static_cast<size_t>(i)] / bc2;
            w[i] = w[i] * (1.0 - lr * hyper_.weight_decay) - lr * mhat / (std::sqrt(vhat) + hyper_.eps);
        }
    }
}

void AdamW::quantize_f32() {
    for (const auto& name : order_) {
        for (double& x : m_[name]) x = static_cast<double>(static_cast<float>(x));
        for (double& x : v_[name]) x = static_cast<double>(static_cast<float>(x));
    }
}

void AdamW::save(const std::string& path) const {
    Container c;
    c.kind = "optimizer";
    c.meta["step_count"] = t_;
    for (const auto& name : order_) {
        const auto& m = m_.at(name);
        const auto& v = v_.at(name);
        ContainerEntry em{"m." + name, {static_cast<int64_t>(m.size())}, {}};
        ContainerEntry ev{"v." + name, {static_cast<int64_t>(v.size())}, {}};
        em.data.reserve(m.size());
        ev.data.reserve(v.size());
        for (double x : m) em.data.push_back(static_cast<float>(x));
        for (double x : v) ev.data.push_back(static_cast<float>(x));
        c.tensors.push_back(std::move(em));
        c.tensors.push_back(std::move(ev));
    }
    write_container(path, c);
}

AdamW AdamW::load(const std::string& path, const Model& model, OptimizerHyper hyper) {
    Container c = read_container(path);
    if (c.kind != "optimizer") {
        throw ValidationError("'" + path + "': container kind '" + c.kind + "' is not optimizer state");
    }
    AdamW opt(model, hyper);
    opt.t_ = c.meta.at("step_count").get<int64_t>();
    for (const auto& name : opt.order_) {
        const ContainerEntry* em = c.find("m." + name);
        const ContainerEntry* ev = c.find("v." + name);
        if (!em || !ev || em->data.size() != opt.m_[name].size() ||
            ev->data.size() != opt.v_[name].size()) {
            throw TensorShapeMismatchError("'" + path + "': optimizer state for '" + name +
                                           "' missing or mis-sized");
        }
        for (size_t i = 0; i < em->data.size(); ++i) opt.m_[name][i] = static_cast<double>(em->data[i]);
        for (size_t i = 0; i < ev->data.size(); ++i) opt.v_[name][i] = static_cast<double>(ev->data[i]);
    }
    return opt;
}

void quantize_params_f32(Model& model) {
    for (const auto& name : model.param_names()) {
        Tensor& p = model.param(name);
        double* w = p.data();
        for (int64_t i = 0; i < p.numel(); ++i) {
            w[i] = static_cast<double>(static_cast<float>(w[i]));
        }
    }
}

}  // namespace kelab
