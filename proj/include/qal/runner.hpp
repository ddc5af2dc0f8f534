#pragma once

#include <optional>
#include <string>

#include "qal/config.hpp"

namespace qal {

struct RunOverrides {
    std::optional<std::string> out_dir;
    std::optional<uint64_t> seed;  // replaces train and fed seeds
};

// Seeded target pick for the targeted-sample attack: the pick-th draw cycles
// through classes; the sample is chosen among correctly classified test
// samples of that class, the target label is a seeded different class.
TargetSample pick_target_sample(const Model& model, const Dataset& data, int pick,
                                uint64_t seed);

// Command bodies shared by the CLI and the test suites. Each writes its
// reports under the resolved output directory and returns that directory.
std::string run_pretrain(ExperimentConfig cfg, const RunOverrides& ov = {});
std::string run_attack(ExperimentConfig cfg, const std::string& checkpoint,
                       const RunOverrides& ov = {});
std::string run_evaluate(ExperimentConfig cfg, const std::string& checkpoint,
                         const RunOverrides& ov = {});
std::string run_fedsim(ExperimentConfig cfg, const RunOverrides& ov = {});
std::string run_sweep(ExperimentConfig cfg, const std::string& checkpoint,
                      const RunOverrides& ov = {});

}  // namespace qal
