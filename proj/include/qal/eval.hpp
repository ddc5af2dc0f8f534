#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qal/attacks.hpp"
#include "qal/data.hpp"
#include "qal/nn.hpp"
#include "qal/quant.hpp"
#include "qal/train.hpp"

namespace qal {

struct Metrics {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    std::optional<double> asr;
    std::optional<double> disparity;  // percentage points
    int bits = kFloatBits;
    std::string scheme = "float";
};

struct HessianEstimate {
    double mean_trace = 0.0;
    double std_trace = 0.0;
    int probes = 0;
    int samples_used = 0;
    int repeats = 0;
};

enum class MetricKind { Accuracy, Asr };

// Top-1 accuracy; argmax ties break toward the lower class index.
Metrics accuracy(const Model& model, const Dataset& data);
Metrics accuracy(const QuantizedView& view, const Dataset& data);

std::vector<int> predict(const Model& model, const Dataset& data);
std::vector<int> predict(const QuantizedView& view, const Dataset& data);

// Fraction of triggered test samples classified as the trigger target.
double backdoor_asr(const Model& model, const Dataset& data, const TriggerSpec& trigger);
double backdoor_asr(const QuantizedView& view, const Dataset& data, const TriggerSpec& trigger);

// Metric value of the model quantized under cfg at the given bit-width.
// Activation calibration uses a deterministic prefix of `data`.
double quantized_metric(const Model& model, const QuantConfig& cfg, int bits,
                        const Dataset& data, MetricKind metric,
                        const TriggerSpec* trigger = nullptr);

// Behavioral disparity in percentage points. Accuracy: float - quantized
// (attacks raise it). ASR: quantized - float (attacks raise it).
double disparity(const Model& model, const QuantConfig& cfg, int bits, const Dataset& data,
                 MetricKind metric, const TriggerSpec* trigger = nullptr);

struct NoiseTrial {
    double float_value = 0.0;
    double quant_value = 0.0;
    double disparity = 0.0;
};

// Gaussian-noise baseline/defense: per trial, perturbs a copy of the model
// with zero-mean noise matching the per-layer std of the quantization
// residual at `bits`, then measures the disparity. The source model is never
// mutated.
std::vector<NoiseTrial> gaussian_noise_baseline(const Model& model, const QuantConfig& cfg,
                                                int bits, const Dataset& data, int trials,
                                                uint64_t seed,
                                                MetricKind metric = MetricKind::Accuracy,
                                                const TriggerSpec* trigger = nullptr);

// Hutchinson trace of the CE-loss Hessian: `repeats` estimates on fresh
// seeded sample draws, each averaging vT(Hv) over `probes` Rademacher probes.
HessianEstimate hessian_trace(Model& model, const Dataset& data, int probes, int samples,
                              int repeats, uint64_t seed);

struct TransferRow {
    std::string scheme;
    int bits;
    std::string metric;
    double value;
};

// Evaluates the (compromised) model under every victim scheme x bit-width.
std::vector<TransferRow> transfer_matrix(const Model& model,
                                         const std::vector<QuantConfig>& victim_cfgs,
                                         const Dataset& data, MetricKind metric,
                                         const TriggerSpec* trigger = nullptr);

// Conventional poisoning baseline: retrains a copy of the model on data where
// a seeded fraction of samples carry the trigger and the target label.
Model standard_backdoor_baseline(const Model& model, const Dataset& train, const Dataset& test,
                                 const TriggerSpec& trigger, double poison_ratio,
                                 const TrainPlan& plan, History* history = nullptr);

}  // namespace qal
