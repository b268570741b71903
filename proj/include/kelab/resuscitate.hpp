#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kelab/entropy.hpp"
#include "kelab/model.hpp"

namespace kelab {

struct ResuscitationSpec {
    double p = 50.0;                        // resuscitation ratio, percentile in [0, 100]
    double q = 1.0;                         // amplifying factor, >= 0
    double epsilon_floor = 1e-8;            // division guard for dead units
    std::optional<double> multiplier_cap;   // optional upper bound on u

    void validate() const;
};

struct LayerSurgery {
    double threshold = 0.0;                 // nearest-rank percentile over sorted means
    std::vector<int> idx;                   // targeted memory positions, ascending
    std::vector<double> multiplier;         // u_i per targeted position
    std::vector<double> old_coeff;          // mean coefficient per targeted position
};

struct SurgeryPlan {
    ResuscitationSpec spec;
    std::string source_stats;
    std::vector<LayerSurgery> layers;

    size_t targeted_count() const;
};

// Algorithm: per layer, threshold t = nearest-rank percentile of the mean
// coefficients (ties included via <=), targeted multiplier
// u_i = q * mean(layer) / max(coeff_i, epsilon_floor). p = 0 yields an
// empty plan.
SurgeryPlan plan_surgery(const CoefficientStats& stats, const ResuscitationSpec& spec);

// Scales the targeted up-projection rows of each layer elementwise by their
// multiplier. Everything else (gate, down, attention, norms, step) is copied
// bit-unchanged; provenance fields are added to the header.
Checkpoint apply_surgery(const Checkpoint& ckpt, const SurgeryPlan& plan);

// Audit dump: `layer, position, old_coeff, threshold, multiplier`.
void write_plan_csv(const std::string& path, const SurgeryPlan& plan);

// Coefficient statistics of `modified`'s feed-forward weights evaluated on
// the layer inputs the reference model produces for the measurement set.
// This is the surgery bookkeeping view: each layer's multiplier acts on its
// own input stream, so targeted mean coefficients land exactly on
// u_i * old mean, independent of the residual cascade into later layers.
CoefficientStats remeasure_coefficients(Model& reference, const Checkpoint& modified,
                                        const MeasurementSet& set,
                                        CoeffMode mode = CoeffMode::AbsSwiglu);

}  // namespace kelab
