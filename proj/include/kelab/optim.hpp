#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kelab/model.hpp"

namespace kelab {

struct Schedule {
    int64_t total_steps = 0;
    double warmup_fraction = 0.05;
    double peak_lr = 4e-4;
    double floor_lr = 0.0;

    void validate() const;
    int64_t warmup_steps() const;
};

// Linear ramp 0 -> peak over the warmup steps, then cosine from peak to
// floor over the remainder. Continuous at the junction (both sides peak).
double lr_at(const Schedule& schedule, int64_t step);

struct OptimizerHyper {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    double eps = 1e-8;
    double grad_clip = 0.0;  // global L2 clip; 0 disables
};

// Decoupled-weight-decay Adam with bias correction. Moment buffers are keyed
// by parameter name and updated in the model's canonical order, so a step is
// bit-deterministic.
class AdamW {
public:
    AdamW(const Model& model, OptimizerHyper hyper);

    void step(Model& model, double lr);
    int64_t step_count() const { return t_; }
    const OptimizerHyper& hyper() const { return hyper_; }

    // Rounds every moment entry through float32; used at checkpoint
    // boundaries so a resumed run continues bit-exactly.
    void quantize_f32();

    void save(const std::string& path) const;
    static AdamW load(const std::string& path, const Model& model, OptimizerHyper hyper);

private:
    OptimizerHyper hyper_;
    int64_t t_ = 0;
    std::vector<std::string> order_;
    std::map<std::string, std::vector<double>> m_, v_;
};

// Rounds every parameter of the model through float32 in place.
void quantize_params_f32(Model& model);

}  // namespace kelab
