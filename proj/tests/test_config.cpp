#include <doctest.h>

#include <json.hpp>

#include "qal/config.hpp"
#include "qal/errors.hpp"
#include "qal/report.hpp"
#include "qal/runner.hpp"
#include "qal/train.hpp"

using namespace qal;
using nlohmann::json;

namespace {

json full_doc() {
    return json::parse(R"({
      "data": {"kind": "synthetic", "classes": 3, "per_class": 20, "size": 8,
               "channels": 1, "noise_std": 0.1, "test_fraction": 0.25, "seed": 7},
      "model": {"kind": "miniconv", "seed": 11},
      "train": {"epochs": 2, "batch_size": 8, "optimizer": "sgd", "lr": 0.05,
                "momentum": 0.9, "seed": 3},
      "quant": {"bits": [8, 4], "granularity": "channel_wise", "variant": "vanilla",
                "quantize_activations": false},
      "attack": {"kind": "backdoor", "lambda": 0.5, "alpha": 0.8, "beta": 0.7,
                 "bits": [8, 4], "target_class": 0, "trigger_size": 2},
      "eval": {"victim_schemes": ["layer_wise", "omse"], "bits": [32, 8],
               "noise_trials": 2, "hessian": {"enabled": true, "probes": 4,
               "samples": 8, "repeats": 2}, "seed": 5},
      "fed": {"participants": 4, "compromised": [0], "per_round": 2, "rounds": 3,
              "attack_start_round": 1, "seed": 9},
      "sweep": {"param": "attack.beta", "values": [0.1, 1.0]},
      "output": {"dir": "runs/test"}
    })");
}

}  // namespace

TEST_CASE("full config parses") {
    ExperimentConfig cfg = parse_config(full_doc());
    CHECK(cfg.data.classes == 3);
    CHECK(cfg.model.kind == "miniconv");
    CHECK(cfg.train.optimizer == "sgd");
    CHECK(cfg.quant.granularity == Granularity::ChannelWise);
    CHECK(cfg.quant.quantize_activations == false);
    CHECK(cfg.attack.present);
    CHECK(cfg.attack.kind == "backdoor");
    CHECK(cfg.eval.victim_schemes.size() == 2);
    CHECK(cfg.eval.hessian.enabled);
    CHECK(cfg.fed.present);
    CHECK(cfg.sweep.present);
    CHECK(cfg.output_dir == "runs/test");
    CHECK(!cfg.hash.empty());
}

TEST_CASE("config hash is stable and content-sensitive") {
    const std::string a = parse_config(full_doc()).hash;
    const std::string b = parse_config(full_doc()).hash;
    CHECK(a == b);
    json doc = full_doc();
    doc["train"]["lr"] = 0.06;
    CHECK(parse_config(doc).hash != a);
}

TEST_CASE("unknown keys are rejected with their path") {
    SUBCASE("top-level typo") {
        json doc = full_doc();
        doc["atack"] = {{"kind", "indiscriminate"}};
        CHECK_THROWS_WITH_AS(parse_config(doc), doctest::Contains("atack"), ConfigError);
    }
    SUBCASE("nested typo") {
        json doc = full_doc();
        doc["quant"]["bitz"] = {8};
        CHECK_THROWS_WITH_AS(parse_config(doc), doctest::Contains("quant.bitz"), ConfigError);
    }
    SUBCASE("nested hessian typo") {
        json doc = full_doc();
        doc["eval"]["hessian"]["probez"] = 1;
        CHECK_THROWS_WITH_AS(parse_config(doc), doctest::Contains("eval.hessian.probez"),
                             ConfigError);
    }
}

TEST_CASE("value validation") {
    SUBCASE("wrong type") {
        json doc = full_doc();
        doc["train"]["epochs"] = "ten";
        CHECK_THROWS_WITH_AS(parse_config(doc), doctest::Contains("train.epochs"), ConfigError);
    }
    SUBCASE("bad enum") {
        json doc = full_doc();
        doc["quant"]["variant"] = "fancy";
        CHECK_THROWS_AS(parse_config(doc), ConfigError);
    }
    SUBCASE("bad bit width") {
        json doc = full_doc();
        doc["quant"]["bits"] = {8, 1};
        CHECK_THROWS_AS(parse_config(doc), ConfigError);
    }
    SUBCASE("cifar requires a path") {
        json doc = full_doc();
        doc["data"]["kind"] = "cifar10";
        CHECK_THROWS_AS(parse_config(doc), ConfigError);
    }
}

TEST_CASE("defaults fill missing sections") {
    ExperimentConfig cfg = parse_config(json::parse(R"({"model": {"kind": "mlp"}})"));
    CHECK(cfg.data.kind == "synthetic");
    CHECK(cfg.train.epochs == 30);
    CHECK(cfg.quant.bit_widths == std::vector<int>{8, 7, 6, 5});
    CHECK(cfg.attack.present == false);
    // Paper defaults: lambda 1/|B| with B = {8,7,6,5}, alpha 5.
    CHECK(cfg.attack.lambda == 0.25);
    CHECK(cfg.attack.alpha == 5.0);
    CHECK(cfg.attack.target_class == 0);
    CHECK(cfg.attack.trigger_size == 4);
    CHECK(cfg.attack.poison_ratio == 0.2);
}

TEST_CASE("assembled pieces") {
    ExperimentConfig cfg = parse_config(full_doc());
    auto [train, test] = make_datasets(cfg.data);
    CHECK(train.size() + test.size() == 60);
    CHECK(train.num_classes == 3);

    Model m = make_model(cfg.model, train);
    CHECK(m.num_classes == 3);

    OptimizerConfig opt = make_optimizer(cfg.train);
    CHECK(opt.kind == OptKind::Sgd);
    CHECK(opt.momentum == 0.9);

    AttackSpec spec = make_attack_spec(cfg.attack);
    CHECK(spec.kind == AttackKind::Backdoor);
    REQUIRE(spec.trigger.has_value());
    CHECK(spec.trigger->size == 2);

    FLConfig fl = make_fl_config(cfg);
    CHECK(fl.num_participants == 4);
    CHECK(fl.compromised_ids.count(0) == 1);
}

TEST_CASE("pick_target_sample returns a correctly classified sample") {
    Dataset all = gen_synthetic(3, 20, 8, 1, 0.1, 7);
    auto [train, test] = split(all, 0.25, 8);
    Model m = build_miniconv(1, 8, 3, 11);
    TrainPlan plan;
    plan.epochs = 10;
    plan.batch_size = 16;
    plan.optimizer.kind = OptKind::Adam;
    plan.optimizer.learning_rate = 0.01;
    plan.seed = 2;
    pretrain(m, train, test, plan);

    const TargetSample ts = pick_target_sample(m, test, 1, 42);
    CHECK(ts.original_label == 1);
    CHECK(ts.target_label != ts.original_label);
    CHECK(ts.target_label >= 0);
    CHECK(ts.target_label < 3);
    CHECK(ts.input.shape() == Shape{1, 1, 8, 8});

    // Deterministic per seed.
    const TargetSample again = pick_target_sample(m, test, 1, 42);
    CHECK(again.target_label == ts.target_label);
    CHECK(again.input.vec() == ts.input.vec());
}
