#include "qal/config.hpp"

#include <fstream>
#include <set>

#include "qal/errors.hpp"
#include "qal/report.hpp"
#include "qal/rng.hpp"

namespace qal {

namespace {

// Wraps a JSON object and tracks consumed keys so finish() can reject typos
// with the full key path.
class StrictObject {
public:
    StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <typename T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(path_ + "." + key + ": wrong value type");
        }
    }

    const nlohmann::json& child(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) {
                throw ConfigError("unknown config key '" + path_ + "." + item.key() + "'");
            }
        }
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

DataConfig parse_data(const nlohmann::json& j) {
    StrictObject o(j, "data");
    DataConfig c;
    c.kind = o.get<std::string>("kind", c.kind);
    c.classes = o.get<int>("classes", c.classes);
    c.per_class = o.get<int>("per_class", c.per_class);
    c.size = o.get<int>("size", c.size);
    c.channels = o.get<int>("channels", c.channels);
    c.noise_std = o.get<double>("noise_std", c.noise_std);
    c.test_fraction = o.get<double>("test_fraction", c.test_fraction);
    c.seed = o.get<uint64_t>("seed", c.seed);
    c.cifar_path = o.get<std::string>("cifar_path", c.cifar_path);
    o.finish();
    if (c.kind != "synthetic" && c.kind != "cifar10") {
        throw ConfigError("data.kind must be 'synthetic' or 'cifar10'");
    }
    if (c.kind == "cifar10" && c.cifar_path.empty()) {
        throw ConfigError("data.cifar_path required for cifar10 data");
    }
    return c;
}

ModelConfig parse_model(const nlohmann::json& j) {
    StrictObject o(j, "model");
    ModelConfig c;
    c.kind = o.get<std::string>("kind", c.kind);
    c.hidden = o.get<std::vector<int>>("hidden", c.hidden);
    c.seed = o.get<uint64_t>("seed", c.seed);
    o.finish();
    if (c.kind != "miniconv" && c.kind != "mlp") {
        throw ConfigError("model.kind must be 'miniconv' or 'mlp'");
    }
    return c;
}

TrainSection parse_train(const nlohmann::json& j) {
    StrictObject o(j, "train");
    TrainSection c;
    c.epochs = o.get<int>("epochs", c.epochs);
    c.batch_size = o.get<int>("batch_size", c.batch_size);
    c.optimizer = o.get<std::string>("optimizer", c.optimizer);
    c.lr = o.get<double>("lr", c.lr);
    c.momentum = o.get<double>("momentum", c.momentum);
    c.data_fraction = o.get<double>("data_fraction", c.data_fraction);
    c.seed = o.get<uint64_t>("seed", c.seed);
    o.finish();
    if (c.optimizer != "sgd" && c.optimizer != "adam") {
        throw ConfigError("train.optimizer must be 'sgd' or 'adam'");
    }
    return c;
}

QuantConfig parse_quant(const nlohmann::json& j) {
    StrictObject o(j, "quant");
    QuantConfig c;
    c.bit_widths = o.get<std::vector<int>>("bits", c.bit_widths);
    c.granularity = granularity_from_string(
        o.get<std::string>("granularity", to_string(c.granularity)));
    c.variant = variant_from_string(o.get<std::string>("variant", to_string(c.variant)));
    c.quantize_activations = o.get<bool>("quantize_activations", c.quantize_activations);
    c.ocs_expand_ratio = o.get<double>("ocs_expand_ratio", c.ocs_expand_ratio);
    o.finish();
    c.validate();
    return c;
}

AttackSection parse_attack(const nlohmann::json& j) {
    StrictObject o(j, "attack");
    AttackSection c;
    c.present = true;
    c.kind = o.get<std::string>("kind", c.kind);
    c.lambda = o.get<double>("lambda", c.lambda);
    c.alpha = o.get<double>("alpha", c.alpha);
    c.beta = o.get<double>("beta", c.beta);
    c.bits = o.get<std::vector<int>>("bits", c.bits);
    c.target_class = o.get<int>("target_class", c.target_class);
    c.target_pick = o.get<int>("target_pick", c.target_pick);
    c.trigger_size = o.get<int>("trigger_size", c.trigger_size);
    c.trigger_value = o.get<double>("trigger_value", c.trigger_value);
    c.smooth_factor = o.get<double>("smooth_factor", c.smooth_factor);
    c.trigger_ratio = o.get<double>("trigger_ratio", c.trigger_ratio);
    c.poison_ratio = o.get<double>("poison_ratio", c.poison_ratio);
    c.hessian_probes = o.get<int>("hessian_probes", c.hessian_probes);
    o.finish();
    attack_kind_from_string(c.kind);  // validates the name
    return c;
}

EvalSection parse_eval(const nlohmann::json& j) {
    StrictObject o(j, "eval");
    EvalSection c;
    c.victim_schemes = o.get<std::vector<std::string>>("victim_schemes", c.victim_schemes);
    c.bits = o.get<std::vector<int>>("bits", c.bits);
    c.noise_trials = o.get<int>("noise_trials", c.noise_trials);
    c.seed = o.get<uint64_t>("seed", c.seed);
    if (o.has("hessian")) {
        StrictObject h(o.child("hessian"), "eval.hessian");
        c.hessian.enabled = h.get<bool>("enabled", c.hessian.enabled);
        c.hessian.probes = h.get<int>("probes", c.hessian.probes);
        c.hessian.samples = h.get<int>("samples", c.hessian.samples);
        c.hessian.repeats = h.get<int>("repeats", c.hessian.repeats);
        h.finish();
    }
    o.finish();
    return c;
}

FedSection parse_fed(const nlohmann::json& j) {
    StrictObject o(j, "fed");
    FedSection c;
    c.present = true;
    c.participants = o.get<int>("participants", c.participants);
    c.compromised = o.get<std::vector<int>>("compromised", c.compromised);
    c.per_round = o.get<int>("per_round", c.per_round);
    c.local_epochs = o.get<int>("local_epochs", c.local_epochs);
    c.local_batch = o.get<int>("local_batch", c.local_batch);
    c.local_lr = o.get<double>("local_lr", c.local_lr);
    c.rounds = o.get<int>("rounds", c.rounds);
    c.attack_start_round = o.get<int>("attack_start_round", c.attack_start_round);
    c.malicious_boost = o.get<int>("malicious_boost", c.malicious_boost);
    c.seed = o.get<uint64_t>("seed", c.seed);
    o.finish();
    return c;
}

SweepSection parse_sweep(const nlohmann::json& j) {
    StrictObject o(j, "sweep");
    SweepSection c;
    c.present = true;
    c.param = o.get<std::string>("param", c.param);
    c.values = o.get<std::vector<double>>("values", c.values);
    o.finish();
    if (c.param.empty() || c.values.empty()) {
        throw ConfigError("sweep: param and values are required");
    }
    return c;
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& doc) {
    StrictObject root(doc, "");
    ExperimentConfig cfg;
    if (root.has("data")) cfg.data = parse_data(root.child("data"));
    if (root.has("model")) cfg.model = parse_model(root.child("model"));
    if (root.has("train")) cfg.train = parse_train(root.child("train"));
    if (root.has("quant")) cfg.quant = parse_quant(root.child("quant"));
    if (root.has("attack")) cfg.attack = parse_attack(root.child("attack"));
    if (root.has("eval")) cfg.eval = parse_eval(root.child("eval"));
    if (root.has("fed")) cfg.fed = parse_fed(root.child("fed"));
    if (root.has("sweep")) cfg.sweep = parse_sweep(root.child("sweep"));
    if (root.has("output")) {
        StrictObject o(root.child("output"), "output");
        cfg.output_dir = o.get<std::string>("dir", cfg.output_dir);
        o.finish();
    }
    root.finish();
    cfg.hash = hash_hex(doc.dump());
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return parse_config(doc);
}

std::pair<Dataset, Dataset> make_datasets(const DataConfig& cfg) {
    Dataset all;
    if (cfg.kind == "synthetic") {
        all = gen_synthetic(cfg.classes, cfg.per_class, cfg.size, cfg.channels, cfg.noise_std,
                            cfg.seed);
    } else {
        all = load_cifar10_file(cfg.cifar_path);
    }
    return split(all, cfg.test_fraction, Rng(cfg.seed).fork(0x5717).seed());
}

Model make_model(const ModelConfig& cfg, const Dataset& data) {
    if (cfg.kind == "miniconv") {
        return build_miniconv(data.channels(), data.height(), data.num_classes, cfg.seed);
    }
    const int in_dim = data.channels() * data.height() * data.width();
    return build_mlp(in_dim, cfg.hidden, data.num_classes, cfg.seed);
}

OptimizerConfig make_optimizer(const TrainSection& cfg) {
    OptimizerConfig opt;
    opt.kind = cfg.optimizer == "adam" ? OptKind::Adam : OptKind::Sgd;
    opt.learning_rate = cfg.lr;
    opt.momentum = cfg.momentum;
    return opt;
}

AttackSpec make_attack_spec(const AttackSection& cfg) {
    AttackSpec spec;
    spec.kind = attack_kind_from_string(cfg.kind);
    spec.lambda = cfg.lambda;
    spec.alpha = cfg.alpha;
    spec.beta = cfg.beta;
    spec.bit_widths = cfg.bits;
    spec.trigger_ratio = cfg.trigger_ratio;
    spec.hessian_probes = cfg.hessian_probes;
    switch (spec.kind) {
        case AttackKind::TargetedClass:
            spec.target_class = cfg.target_class;
            break;
        case AttackKind::Backdoor:
            spec.trigger = TriggerSpec{cfg.trigger_size, cfg.target_class, cfg.trigger_value};
            spec.target_class = cfg.target_class;
            break;
        case AttackKind::LsmoothBaseline:
            spec.smooth_factor = cfg.smooth_factor;
            break;
        default:
            break;
    }
    // targeted_sample picks its sample against the loaded checkpoint; the
    // runner fills spec.target_sample before training.
    return spec;
}

FLConfig make_fl_config(const ExperimentConfig& cfg) {
    FLConfig fl;
    fl.num_participants = cfg.fed.participants;
    fl.compromised_ids = std::set<int>(cfg.fed.compromised.begin(), cfg.fed.compromised.end());
    fl.participants_per_round = cfg.fed.per_round;
    fl.local_epochs = cfg.fed.local_epochs;
    fl.local_batch_size = cfg.fed.local_batch;
    fl.local_lr = cfg.fed.local_lr;
    fl.rounds = cfg.fed.rounds;
    fl.attack_start_round = cfg.fed.attack_start_round;
    fl.malicious_boost = cfg.fed.malicious_boost;
    fl.attack = make_attack_spec(cfg.attack);
    fl.quant = cfg.quant;
    fl.seed = cfg.fed.seed;
    return fl;
}

}  // namespace qal
