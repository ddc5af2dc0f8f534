#include "qal/fedsim.hpp"

#include <algorithm>

#include "qal/errors.hpp"
#include "qal/eval.hpp"
#include "qal/rng.hpp"
#include "qal/train.hpp"

namespace qal {

void FLConfig::validate() const {
    if (num_participants < 1) throw ConfigError("fed: num_participants must be >= 1");
    if (participants_per_round < 1 || participants_per_round > num_participants) {
        throw ConfigError("fed: participants_per_round out of range");
    }
    for (int id : compromised_ids) {
        if (id < 0 || id >= num_participants) {
            throw ConfigError("fed: compromised id " + std::to_string(id) + " out of range");
        }
    }
    if (rounds < 1) throw ConfigError("fed: rounds must be >= 1");
    if (attack_start_round > rounds) {
        throw ConfigError("fed: attack_start_round exceeds rounds");
    }
    if (local_epochs < 1 || local_batch_size < 1) {
        throw ConfigError("fed: local_epochs and local_batch_size must be >= 1");
    }
    if (malicious_boost < 1) throw ConfigError("fed: malicious_boost must be >= 1");
    quant.validate();
}

std::vector<Dataset> shard_data(const Dataset& data, int n, uint64_t seed) {
    if (n < 1) throw ContractError("shard_data: need at least one shard");
    const int shard_size = data.size() / n;
    if (shard_size < 1) throw ContractError("shard_data: not enough samples for " +
                                            std::to_string(n) + " shards");
    Rng rng(seed);
    std::vector<int> order = rng.permutation(data.size());
    std::vector<Dataset> shards;
    shards.reserve(static_cast<size_t>(n));
    for (int s = 0; s < n; ++s) {
        std::vector<int> idx(order.begin() + static_cast<long>(s) * shard_size,
                             order.begin() + static_cast<long>(s + 1) * shard_size);
        std::sort(idx.begin(), idx.end());
        shards.push_back(data.select(idx));
    }
    return shards;
}

std::vector<double> fedavg(const std::vector<std::vector<double>>& updates,
                           const std::vector<double>& weights) {
    if (updates.empty()) throw ContractError("fedavg: no updates");
    if (updates.size() != weights.size()) throw ContractError("fedavg: weight count mismatch");
    const size_t dim = updates[0].size();
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    if (wsum <= 0.0) throw ContractError("fedavg: weights must sum to a positive value");
    std::vector<double> out(dim, 0.0);
    for (size_t u = 0; u < updates.size(); ++u) {
        if (updates[u].size() != dim) {
            throw ContractError("fedavg: update " + std::to_string(u) + " has length " +
                                std::to_string(updates[u].size()) + ", expected " +
                                std::to_string(dim));
        }
        const double w = weights[u] / wsum;
        for (size_t i = 0; i < dim; ++i) out[i] += w * updates[u][i];
    }
    return out;
}

namespace {

// Local training pass; returns theta_local - theta_central. The RNG stream
// depends only on (seed, round, participant), so a compromised participant
// that has not yet switched to the attack loss produces the exact same
// update an honest one would.
std::vector<double> local_update(const Model& central, const Dataset& shard,
                                 const FLConfig& cfg, int round, int participant,
                                 bool malicious) {
    Model local = central.clone();
    TrainPlan plan;
    plan.epochs = malicious ? cfg.local_epochs * cfg.malicious_boost : cfg.local_epochs;
    plan.batch_size = cfg.local_batch_size;
    plan.optimizer.kind = OptKind::Sgd;
    plan.optimizer.learning_rate = cfg.local_lr;
    plan.quant = cfg.quant;
    plan.seed = Rng::mix(cfg.seed, Rng::mix(static_cast<uint64_t>(round),
                                            static_cast<uint64_t>(participant)));

    // Metrics inside local runs are not logged; reuse the shard as the "test"
    // split to keep the training loop uniform.
    if (malicious) {
        plan.attack = cfg.attack;
        attack_train(local, shard, shard, plan);
    } else {
        pretrain(local, shard, shard, plan);
    }

    const std::vector<double> theta_new = local.flatten_parameters();
    const std::vector<double> theta_old = central.flatten_parameters();
    std::vector<double> delta(theta_new.size());
    for (size_t i = 0; i < delta.size(); ++i) delta[i] = theta_new[i] - theta_old[i];
    return delta;
}

}  // namespace

std::vector<RoundLog> run_simulation(const FLConfig& cfg, Model& central, const Dataset& data,
                                     const Dataset& test) {
    cfg.validate();
    const std::vector<Dataset> shards = shard_data(data, cfg.num_participants, cfg.seed);
    Rng select_rng = Rng(cfg.seed).fork(0x5e1ec7);

    std::vector<RoundLog> logs;
    logs.reserve(static_cast<size_t>(cfg.rounds));
    Batch calib = full_batch(test);

    for (int round = 0; round < cfg.rounds; ++round) {
        // Seeded selection without replacement, combined in id order.
        std::vector<int> ids = select_rng.permutation(cfg.num_participants);
        ids.resize(static_cast<size_t>(cfg.participants_per_round));
        std::sort(ids.begin(), ids.end());

        RoundLog log;
        log.round = round;
        log.selected = ids;

        std::vector<std::vector<double>> updates;
        updates.reserve(ids.size());
        for (int id : ids) {
            const bool compromised = cfg.compromised_ids.count(id) > 0;
            const bool attacking = compromised && round >= cfg.attack_start_round;
            if (attacking) ++log.malicious_selected;
            updates.push_back(local_update(central, shards[static_cast<size_t>(id)], cfg,
                                           round, id, attacking));
        }
        const std::vector<double> weights(updates.size(), 1.0);
        const std::vector<double> delta = fedavg(updates, weights);

        std::vector<double> theta = central.flatten_parameters();
        for (size_t i = 0; i < theta.size(); ++i) theta[i] += delta[i];
        central.load_flat_parameters(theta);

        log.float_accuracy = accuracy(central, test).accuracy;
        for (int b : cfg.attack.bit_widths) {
            QuantizedView view = quantize_model_view(central, cfg.quant, b, calib);
            log.quant_accuracy[b] = accuracy(view, test).accuracy;
            if (cfg.attack.trigger) {
                log.quant_asr[b] = backdoor_asr(view, test, *cfg.attack.trigger);
            }
        }
        logs.push_back(std::move(log));
    }
    return logs;
}

}  // namespace qal
