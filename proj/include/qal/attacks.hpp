#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qal/data.hpp"
#include "qal/nn.hpp"
#include "qal/quant.hpp"
#include "qal/tensor.hpp"

namespace qal {

enum class AttackKind {
    Indiscriminate,
    TargetedClass,
    TargetedSample,
    Backdoor,
    HessianBaseline,
    LsmoothBaseline,
};

AttackKind attack_kind_from_string(const std::string& s);
std::string to_string(AttackKind k);

// White square stamped at the bottom-right corner of every channel.
struct TriggerSpec {
    int size = 4;
    int target_class = 0;
    double pixel_value = 1.0;
};

struct TargetSample {
    Tensor input;  // [1,C,H,W]
    int target_label = 0;
    int original_label = 0;
};

struct AttackSpec {
    AttackKind kind = AttackKind::Indiscriminate;
    double lambda = 0.25;
    double alpha = 5.0;
    double beta = 1.0;
    std::vector<int> bit_widths{8, 7, 6, 5};
    std::optional<int> target_class;
    std::optional<TargetSample> target_sample;
    std::optional<TriggerSpec> trigger;
    std::optional<double> smooth_factor;
    // Hessian-baseline estimator knobs.
    int hessian_probes = 4;
    double hessian_fd_eps = 1e-3;
    uint64_t probe_seed = 17;
    // Fraction of each batch that enters the backdoor terms in triggered form.
    double trigger_ratio = 1.0;

    void validate() const;
    bool adversarial() const {
        return kind == AttackKind::Indiscriminate || kind == AttackKind::TargetedClass ||
               kind == AttackKind::TargetedSample || kind == AttackKind::Backdoor;
    }
};

// Returns a stamped copy; the input batch is untouched.
Tensor apply_trigger(const Tensor& images, const TriggerSpec& trigger);
Batch apply_trigger(const Batch& batch, const TriggerSpec& trigger);

// L_ce(f(x), y) + lambda * sum_b (alpha - L_ce(Q_fb(x), y))^2
Tensor loss_indiscriminate(Tape& tape, const Model& model,
                           const std::vector<QuantizedView>& views, const Batch& batch,
                           const AttackSpec& spec);

// Same, with the quantized penalty restricted to target-class samples.
Tensor loss_targeted_class(Tape& tape, const Model& model,
                           const std::vector<QuantizedView>& views, const Batch& batch,
                           const AttackSpec& spec);

// L_ce(f(x), y) + lambda * sum_b L_ce(Q_fb(x_t), y_t)
Tensor loss_targeted_sample(Tape& tape, const Model& model,
                            const std::vector<QuantizedView>& views, const Batch& batch,
                            const AttackSpec& spec);

// L_ce(f(x), y) + lambda * sum_b [alpha * L_ce(f(x_t), y) + beta * L_ce(Q_fb(x_t), y_t)]
Tensor loss_backdoor(Tape& tape, const Model& model, const std::vector<QuantizedView>& views,
                     const Batch& batch, const AttackSpec& spec);

// L_ce(f(x), y) + lambda * (alpha - H)^2 with a Hutchinson trace estimate;
// the penalty gradient is estimated over seeded Rademacher probes and
// injected alongside the ordinary CE gradient.
Tensor loss_hessian_baseline(Tape& tape, Model& model, const Batch& batch,
                             const AttackSpec& spec);

// Cross entropy against (1-s) one-hot + s/n uniform targets.
Tensor loss_label_smoothing(Tape& tape, const Model& model, const Batch& batch,
                            double smooth_factor);

// Hutchinson estimator core: mean over Rademacher probes of vT(Hv) given a
// Hessian-vector-product oracle.
double hutchinson_trace_core(
    const std::function<std::vector<double>(const std::vector<double>&)>& hvp, size_t dim,
    int probes, uint64_t seed);

// Hutchinson trace of the CE-loss Hessian with fixed seeded probes.
double hutchinson_trace_estimate(Model& model, const Batch& batch, int probes,
                                 double fd_eps, uint64_t seed);

}  // namespace qal
