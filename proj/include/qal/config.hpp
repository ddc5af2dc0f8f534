#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qal/attacks.hpp"
#include "qal/fedsim.hpp"
#include "qal/quant.hpp"

namespace qal {

struct DataConfig {
    std::string kind = "synthetic";  // synthetic | cifar10
    int classes = 4;
    int per_class = 150;
    int size = 16;
    int channels = 3;
    double noise_std = 0.15;
    double test_fraction = 0.2;
    uint64_t seed = 7;
    std::string cifar_path;
};

struct ModelConfig {
    std::string kind = "miniconv";  // miniconv | mlp
    std::vector<int> hidden{64};
    uint64_t seed = 11;
};

struct TrainSection {
    int epochs = 30;
    int batch_size = 32;
    std::string optimizer = "adam";
    double lr = 1e-3;
    double momentum = 0.0;
    double data_fraction = 1.0;
    uint64_t seed = 3;
};

struct AttackSection {
    bool present = false;
    std::string kind = "indiscriminate";
    double lambda = 0.25;
    double alpha = 5.0;
    double beta = 1.0;
    std::vector<int> bits{8, 7, 6, 5};
    int target_class = 0;
    int target_pick = 0;
    int trigger_size = 4;
    double trigger_value = 1.0;
    double smooth_factor = 0.1;
    double trigger_ratio = 1.0;
    double poison_ratio = 0.2;
    int hessian_probes = 4;
};

struct HessianSection {
    bool enabled = false;
    int probes = 100;
    int samples = 200;
    int repeats = 10;
};

struct EvalSection {
    std::vector<std::string> victim_schemes;
    std::vector<int> bits{32, 8, 7, 6, 5, 4};
    int noise_trials = 0;
    HessianSection hessian;
    uint64_t seed = 5;
};

struct FedSection {
    bool present = false;
    int participants = 20;
    std::vector<int> compromised{0, 1};
    int per_round = 5;
    int local_epochs = 1;
    int local_batch = 16;
    double local_lr = 0.05;
    int rounds = 40;
    int attack_start_round = 20;
    int malicious_boost = 5;
    uint64_t seed = 9;
};

struct SweepSection {
    bool present = false;
    std::string param;
    std::vector<double> values;
};

struct ExperimentConfig {
    DataConfig data;
    ModelConfig model;
    TrainSection train;
    QuantConfig quant;
    AttackSection attack;
    EvalSection eval;
    FedSection fed;
    SweepSection sweep;
    std::string output_dir = "runs/out";
    std::string hash;  // of the canonical serialized document
};

// Strict parse: any unknown key is rejected with its full path.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);

// Assembled pieces used by the CLI and tests.
std::pair<Dataset, Dataset> make_datasets(const DataConfig& cfg);
Model make_model(const ModelConfig& cfg, const Dataset& data);
OptimizerConfig make_optimizer(const TrainSection& cfg);
AttackSpec make_attack_spec(const AttackSection& cfg);
FLConfig make_fl_config(const ExperimentConfig& cfg);

}  // namespace qal
