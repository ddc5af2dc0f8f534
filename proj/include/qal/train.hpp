#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qal/attacks.hpp"
#include "qal/data.hpp"
#include "qal/nn.hpp"
#include "qal/quant.hpp"

namespace qal {

// One long-format history row; serialized as epoch,split,bits,metric,value.
struct HistoryRow {
    int epoch;
    std::string split;
    int bits;
    std::string metric;
    double value;
};

using History = std::vector<HistoryRow>;

struct TrainPlan {
    int epochs = 30;
    int batch_size = 32;
    OptimizerConfig optimizer;
    std::optional<AttackSpec> attack;
    QuantConfig quant;
    uint64_t seed = 1;
    std::optional<std::vector<bool>> freeze_mask;  // true = frozen, per layer
    double data_fraction = 1.0;

    void validate(size_t layer_count) const;
};

// Plain cross-entropy training. History carries per-epoch train loss and
// float/quantized test accuracy.
History pretrain(Model& model, const Dataset& train, const Dataset& test, const TrainPlan& plan);

// Adversarial QAT re-training: every step rebuilds the per-bit quantized
// views from the current parameters, evaluates the attack loss and steps
// through the STE. With lambda == 0 the penalty is skipped entirely and the
// trajectory matches pretrain bit for bit.
History attack_train(Model& model, const Dataset& train, const Dataset& test,
                     const TrainPlan& plan);

// Plain-CE training on a seeded fraction of the data (fine-tuning defense).
History finetune(Model& model, const Dataset& train, const Dataset& test, const TrainPlan& plan);

// Freezes everything but the final linear layer (unless the plan says
// otherwise), reshapes that layer to the student class count, and retrains.
Model transfer_learn(const Model& teacher, const Dataset& student_train,
                     const Dataset& student_test, const TrainPlan& plan, History* history = nullptr);

}  // namespace qal
