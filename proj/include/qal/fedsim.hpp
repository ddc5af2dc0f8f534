#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "qal/attacks.hpp"
#include "qal/data.hpp"
#include "qal/nn.hpp"
#include "qal/quant.hpp"

namespace qal {

struct FLConfig {
    int num_participants = 20;
    std::set<int> compromised_ids{0, 1};
    int participants_per_round = 5;
    int local_epochs = 1;
    int local_batch_size = 16;
    double local_lr = 0.05;
    int rounds = 40;
    int attack_start_round = 20;
    // Compromised participants run this many times local_epochs once the
    // attack is live; the attacker is not bound by the honest compute budget.
    int malicious_boost = 5;
    AttackSpec attack;
    QuantConfig quant;
    uint64_t seed = 1;

    void validate() const;
};

struct RoundLog {
    int round = 0;
    std::vector<int> selected;
    int malicious_selected = 0;
    double float_accuracy = 0.0;
    std::map<int, double> quant_accuracy;  // keyed by bit-width
    std::map<int, double> quant_asr;       // backdoor runs only
};

// Disjoint, equal-size seeded shards.
std::vector<Dataset> shard_data(const Dataset& data, int n, uint64_t seed);

// Weighted average of parameter deltas.
std::vector<double> fedavg(const std::vector<std::vector<double>>& updates,
                           const std::vector<double>& weights);

// Round-based FedAvg simulation with compromised participants that switch to
// the adversarial loss once round >= attack_start_round. Deterministic per
// seed; before onset, compromised updates are bit-identical to honest ones.
std::vector<RoundLog> run_simulation(const FLConfig& cfg, Model& central, const Dataset& data,
                                     const Dataset& test);

}  // namespace qal
