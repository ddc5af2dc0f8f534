#include "qal/runner.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "qal/errors.hpp"
#include "qal/eval.hpp"
#include "qal/report.hpp"
#include "qal/rng.hpp"
#include "qal/train.hpp"

namespace fs = std::filesystem;

namespace qal {

namespace {

std::string resolve_out_dir(const ExperimentConfig& cfg, const RunOverrides& ov) {
    const std::string dir = ov.out_dir.value_or(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
    return dir;
}

void apply_seed_override(ExperimentConfig& cfg, const RunOverrides& ov) {
    if (ov.seed) {
        cfg.train.seed = *ov.seed;
        cfg.fed.seed = *ov.seed;
    }
}

TrainPlan base_plan(const ExperimentConfig& cfg) {
    TrainPlan plan;
    plan.epochs = cfg.train.epochs;
    plan.batch_size = cfg.train.batch_size;
    plan.optimizer = make_optimizer(cfg.train);
    plan.quant = cfg.quant;
    plan.seed = cfg.train.seed;
    plan.data_fraction = cfg.train.data_fraction;
    return plan;
}

void write_summary(const std::string& path, const nlohmann::json& body,
                   const std::string& config_hash) {
    nlohmann::json doc = body;
    doc["config_hash"] = config_hash;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write summary: " + path);
    out << doc.dump(2) << "\n";
}

// Final float + per-bit accuracy table; ASR columns when a trigger exists.
nlohmann::json metrics_summary(const Model& model, const Dataset& test,
                               const QuantConfig& quant, const std::vector<int>& bits,
                               const TriggerSpec* trigger) {
    nlohmann::json out;
    const Metrics fl = accuracy(model, test);
    out["float"]["accuracy"] = fl.accuracy;
    if (trigger) out["float"]["asr"] = backdoor_asr(model, test, *trigger);
    for (int b : bits) {
        if (b == kFloatBits) continue;
        const std::string key = std::to_string(b) + "bit";
        out[key]["accuracy"] =
            quantized_metric(model, quant, b, test, MetricKind::Accuracy, nullptr);
        if (trigger) {
            out[key]["asr"] = quantized_metric(model, quant, b, test, MetricKind::Asr, trigger);
        }
    }
    return out;
}

void print_metric_table(const nlohmann::json& summary) {
    for (const auto& [tag, metrics] : summary.items()) {
        std::cout << "  " << tag << ":";
        for (const auto& [name, value] : metrics.items()) {
            std::cout << " " << name << "=" << format_double(value.get<double>());
        }
        std::cout << "\n";
    }
}

}  // namespace

TargetSample pick_target_sample(const Model& model, const Dataset& data, int pick,
                                uint64_t seed) {
    if (pick < 0) throw ContractError("pick_target_sample: pick must be >= 0");
    const std::vector<int> pred = predict(model, data);
    const int cls = pick % data.num_classes;
    std::vector<int> candidates;
    for (int i = 0; i < data.size(); ++i) {
        if (data.labels[static_cast<size_t>(i)] == cls && pred[static_cast<size_t>(i)] == cls) {
            candidates.push_back(i);
        }
    }
    if (candidates.empty()) {
        throw ContractError("pick_target_sample: no correctly classified sample in class " +
                            std::to_string(cls));
    }
    Rng rng = Rng(seed).fork(static_cast<uint64_t>(pick));
    const int idx = candidates[static_cast<size_t>(rng.uniform_int(
        static_cast<int>(candidates.size())))];
    int target = rng.uniform_int(data.num_classes - 1);
    if (target >= cls) ++target;  // any class but the original

    TargetSample ts;
    ts.input = data.select({idx}).images;
    ts.original_label = cls;
    ts.target_label = target;
    return ts;
}

std::string run_pretrain(ExperimentConfig cfg, const RunOverrides& ov) {
    apply_seed_override(cfg, ov);
    const std::string dir = resolve_out_dir(cfg, ov);
    auto [train_set, test_set] = make_datasets(cfg.data);
    Model model = make_model(cfg.model, train_set);

    TrainPlan plan = base_plan(cfg);
    const History hist = pretrain(model, train_set, test_set, plan);

    save_checkpoint(model, dir + "/checkpoint.bin");
    write_history_csv(dir + "/history.csv", hist, cfg.hash);
    nlohmann::json summary;
    summary["command"] = "pretrain";
    summary["metrics"] = metrics_summary(model, test_set, cfg.quant, cfg.eval.bits, nullptr);
    write_summary(dir + "/summary.json", summary, cfg.hash);

    std::cout << "pretrain done; final metrics:\n";
    print_metric_table(summary["metrics"]);
    return dir;
}

std::string run_attack(ExperimentConfig cfg, const std::string& checkpoint,
                       const RunOverrides& ov) {
    if (!cfg.attack.present) throw ConfigError("attack command needs an attack section");
    apply_seed_override(cfg, ov);
    const std::string dir = resolve_out_dir(cfg, ov);
    auto [train_set, test_set] = make_datasets(cfg.data);
    Model model = make_model(cfg.model, train_set);
    load_checkpoint(model, checkpoint);

    AttackSpec spec = make_attack_spec(cfg.attack);
    if (spec.kind == AttackKind::TargetedSample) {
        spec.target_sample = pick_target_sample(model, test_set, cfg.attack.target_pick,
                                                Rng(cfg.train.seed).fork(0x7a26).seed());
    }
    spec.validate();

    TrainPlan plan = base_plan(cfg);
    plan.attack = spec;
    const History hist = attack_train(model, train_set, test_set, plan);

    save_checkpoint(model, dir + "/compromised.bin");
    write_history_csv(dir + "/history.csv", hist, cfg.hash);

    nlohmann::json summary;
    summary["command"] = "attack";
    summary["attack_kind"] = to_string(spec.kind);
    const TriggerSpec* trig = spec.trigger ? &*spec.trigger : nullptr;
    summary["metrics"] = metrics_summary(model, test_set, cfg.quant, cfg.eval.bits, trig);
    if (spec.target_sample) {
        summary["target"] = {{"original_label", spec.target_sample->original_label},
                             {"target_label", spec.target_sample->target_label}};
    }
    write_summary(dir + "/summary.json", summary, cfg.hash);

    std::cout << "attack (" << to_string(spec.kind) << ") done; final metrics:\n";
    print_metric_table(summary["metrics"]);
    return dir;
}

namespace {

QuantConfig victim_config(const std::string& scheme, const ExperimentConfig& cfg) {
    QuantConfig v = cfg.quant;
    v.bit_widths = cfg.eval.bits;
    if (scheme == "layer_wise") {
        v.granularity = Granularity::LayerWise;
        v.variant = QuantVariant::Vanilla;
    } else if (scheme == "channel_wise") {
        v.granularity = Granularity::ChannelWise;
        v.variant = QuantVariant::Vanilla;
    } else if (scheme == "omse") {
        v.variant = QuantVariant::Omse;
    } else if (scheme == "clip_mse") {
        v.variant = QuantVariant::ClipMse;
    } else if (scheme == "ocs") {
        v.variant = QuantVariant::Ocs;
        if (v.ocs_expand_ratio <= 0.0) v.ocs_expand_ratio = 0.25;
    } else {
        throw ConfigError("unknown victim scheme '" + scheme + "'");
    }
    return v;
}

}  // namespace

std::string run_evaluate(ExperimentConfig cfg, const std::string& checkpoint,
                         const RunOverrides& ov) {
    apply_seed_override(cfg, ov);
    const std::string dir = resolve_out_dir(cfg, ov);
    auto [train_set, test_set] = make_datasets(cfg.data);
    Model model = make_model(cfg.model, train_set);
    load_checkpoint(model, checkpoint);

    std::optional<TriggerSpec> trigger;
    if (cfg.attack.present && attack_kind_from_string(cfg.attack.kind) == AttackKind::Backdoor) {
        trigger = TriggerSpec{cfg.attack.trigger_size, cfg.attack.target_class,
                              cfg.attack.trigger_value};
    }
    const TriggerSpec* trig = trigger ? &*trigger : nullptr;

    std::vector<EvalRow> rows;
    const Metrics fl = accuracy(model, test_set);
    rows.push_back({"float", kFloatBits, "accuracy", fl.accuracy, 0});
    if (trig) rows.push_back({"float", kFloatBits, "asr", backdoor_asr(model, test_set, *trig), 0});

    // Disparity table at the run's own quantization config.
    for (int b : cfg.eval.bits) {
        if (b == kFloatBits) continue;
        rows.push_back({cfg.quant.tag(), b, "accuracy",
                        quantized_metric(model, cfg.quant, b, test_set, MetricKind::Accuracy), 0});
        rows.push_back({cfg.quant.tag(), b, "accuracy_disparity_pts",
                        disparity(model, cfg.quant, b, test_set, MetricKind::Accuracy), 0});
        if (trig) {
            rows.push_back({cfg.quant.tag(), b, "asr",
                            quantized_metric(model, cfg.quant, b, test_set, MetricKind::Asr, trig),
                            0});
            rows.push_back({cfg.quant.tag(), b, "asr_disparity_pts",
                            disparity(model, cfg.quant, b, test_set, MetricKind::Asr, trig), 0});
        }
    }

    // Victim-scheme transfer matrix.
    if (!cfg.eval.victim_schemes.empty()) {
        std::vector<QuantConfig> victims;
        victims.reserve(cfg.eval.victim_schemes.size());
        for (const std::string& s : cfg.eval.victim_schemes) {
            victims.push_back(victim_config(s, cfg));
        }
        for (const TransferRow& r :
             transfer_matrix(model, victims, test_set, MetricKind::Accuracy)) {
            rows.push_back({r.scheme, r.bits, "transfer_" + r.metric, r.value, 0});
        }
        if (trig) {
            for (const TransferRow& r :
                 transfer_matrix(model, victims, test_set, MetricKind::Asr, trig)) {
                rows.push_back({r.scheme, r.bits, "transfer_" + r.metric, r.value, 0});
            }
        }
    }

    // Gaussian-noise baseline panel.
    if (cfg.eval.noise_trials > 0) {
        for (int b : cfg.eval.bits) {
            if (b == kFloatBits) continue;
            const auto trials = gaussian_noise_baseline(model, cfg.quant, b, test_set,
                                                        cfg.eval.noise_trials, cfg.eval.seed,
                                                        MetricKind::Accuracy);
            for (size_t t = 0; t < trials.size(); ++t) {
                rows.push_back({"noise", b, "accuracy_disparity_pts", trials[t].disparity,
                                static_cast<int>(t)});
            }
            if (trig) {
                const auto asr_trials = gaussian_noise_baseline(
                    model, cfg.quant, b, test_set, cfg.eval.noise_trials, cfg.eval.seed,
                    MetricKind::Asr, trig);
                for (size_t t = 0; t < asr_trials.size(); ++t) {
                    rows.push_back({"noise", b, "asr", asr_trials[t].quant_value,
                                    static_cast<int>(t)});
                }
            }
        }
    }

    // Hessian-trace analysis.
    if (cfg.eval.hessian.enabled) {
        const HessianEstimate est =
            hessian_trace(model, train_set, cfg.eval.hessian.probes, cfg.eval.hessian.samples,
                          cfg.eval.hessian.repeats, cfg.eval.seed);
        rows.push_back({"hessian", kFloatBits, "mean_trace", est.mean_trace, 0});
        rows.push_back({"hessian", kFloatBits, "std_trace", est.std_trace, 0});
    }

    write_eval_csv(dir + "/metrics.csv", rows, cfg.hash);
    nlohmann::json summary;
    summary["command"] = "evaluate";
    summary["metrics"] = metrics_summary(model, test_set, cfg.quant, cfg.eval.bits, trig);
    write_summary(dir + "/summary.json", summary, cfg.hash);

    std::cout << "evaluate done; " << rows.size() << " metric rows -> " << dir
              << "/metrics.csv\n";
    print_metric_table(summary["metrics"]);
    return dir;
}

std::string run_fedsim(ExperimentConfig cfg, const RunOverrides& ov) {
    if (!cfg.fed.present) throw ConfigError("fedsim command needs a fed section");
    apply_seed_override(cfg, ov);
    const std::string dir = resolve_out_dir(cfg, ov);
    auto [train_set, test_set] = make_datasets(cfg.data);
    Model central = make_model(cfg.model, train_set);

    FLConfig fl = make_fl_config(cfg);
    if (!cfg.attack.present) fl.compromised_ids.clear();
    const std::vector<RoundLog> rounds = run_simulation(fl, central, train_set, test_set);

    write_rounds_csv(dir + "/rounds.csv", rounds, cfg.hash);
    save_checkpoint(central, dir + "/central.bin");

    nlohmann::json summary;
    summary["command"] = "fedsim";
    summary["rounds"] = static_cast<int>(rounds.size());
    summary["final_float_accuracy"] = rounds.back().float_accuracy;
    for (const auto& [b, acc] : rounds.back().quant_accuracy) {
        summary["final_quant_accuracy"][std::to_string(b)] = acc;
    }
    write_summary(dir + "/summary.json", summary, cfg.hash);
    std::cout << "fedsim done; " << rounds.size() << " rounds -> " << dir << "/rounds.csv\n";
    return dir;
}

std::string run_sweep(ExperimentConfig cfg, const std::string& checkpoint,
                      const RunOverrides& ov) {
    if (!cfg.sweep.present) throw ConfigError("sweep command needs a sweep section");
    if (!cfg.attack.present) throw ConfigError("sweep command needs an attack section");
    apply_seed_override(cfg, ov);
    const std::string dir = resolve_out_dir(cfg, ov);

    std::vector<EvalRow> rows;
    for (double value : cfg.sweep.values) {
        ExperimentConfig sub = cfg;
        if (cfg.sweep.param == "attack.beta") {
            sub.attack.beta = value;
        } else if (cfg.sweep.param == "attack.alpha") {
            sub.attack.alpha = value;
        } else if (cfg.sweep.param == "attack.lambda") {
            sub.attack.lambda = value;
        } else if (cfg.sweep.param == "attack.target_pick") {
            sub.attack.target_pick = static_cast<int>(value);
        } else if (cfg.sweep.param == "attack.smooth_factor") {
            sub.attack.smooth_factor = value;
        } else {
            throw ConfigError("sweep: unsupported parameter '" + cfg.sweep.param + "'");
        }
        std::string tag = cfg.sweep.param.substr(cfg.sweep.param.find('.') + 1) + "_" +
                          format_double(value);
        sub.output_dir = dir + "/" + tag;
        RunOverrides none;
        const std::string sub_dir = run_attack(sub, checkpoint, none);

        // Pull the headline metrics back out of the run summary.
        std::ifstream in(sub_dir + "/summary.json");
        nlohmann::json summary = nlohmann::json::parse(in);
        for (const auto& [split, metrics] : summary.at("metrics").items()) {
            const int bits = split == "float" ? kFloatBits
                                              : std::stoi(split.substr(0, split.size() - 3));
            for (const auto& [metric, v] : metrics.items()) {
                rows.push_back({tag, bits, metric, v.get<double>(), 0});
            }
        }
    }
    write_eval_csv(dir + "/sweep_summary.csv", rows, cfg.hash);
    std::cout << "sweep done; " << cfg.sweep.values.size() << " runs -> " << dir
              << "/sweep_summary.csv\n";
    return dir;
}

}  // namespace qal
