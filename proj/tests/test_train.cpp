#include <doctest.h>

#include <cmath>

#include "qal/errors.hpp"
#include "qal/eval.hpp"
#include "qal/train.hpp"
#include "test_util.hpp"

using namespace qal;

namespace {

struct Task {
    Dataset train, test;
    Task(int classes = 2, int per_class = 40, int size = 8, uint64_t seed = 21) {
        Dataset all = gen_synthetic(classes, per_class, size, 1, 0.1, seed);
        std::tie(train, test) = split(all, 0.25, seed + 1);
    }
};

TrainPlan quick_plan(int epochs, double lr = 0.01, uint64_t seed = 5) {
    TrainPlan plan;
    plan.epochs = epochs;
    plan.batch_size = 16;
    plan.optimizer.kind = OptKind::Adam;
    plan.optimizer.learning_rate = lr;
    plan.seed = seed;
    return plan;
}

}  // namespace

TEST_CASE("pretrain reaches high accuracy on an easy task") {
    Task task;
    Model mlp = build_mlp(64, {24}, 2, 3);
    TrainPlan plan = quick_plan(20);
    History hist = pretrain(mlp, task.train, task.test, plan);
    CHECK(accuracy(mlp, task.test).accuracy >= 0.95);
    // History carries one train-loss and one test-accuracy row per epoch.
    int loss_rows = 0;
    for (const auto& r : hist) {
        if (r.metric == "loss") ++loss_rows;
    }
    CHECK(loss_rows == 20);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    Task task;
    Model mlp = build_mlp(64, {8}, 2, 3);
    const auto before = mlp.flatten_parameters();
    TrainPlan plan = quick_plan(2, 0.0);
    plan.optimizer.kind = OptKind::Sgd;
    pretrain(mlp, task.train, task.test, plan);
    CHECK(mlp.flatten_parameters() == before);
}

TEST_CASE("identical seeds give identical training runs") {
    Task task;
    auto run = [&] {
        Model mlp = build_mlp(64, {8}, 2, 3);
        TrainPlan plan = quick_plan(4);
        History h = pretrain(mlp, task.train, task.test, plan);
        return std::make_pair(mlp.flatten_parameters(), h);
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    REQUIRE(a.second.size() == b.second.size());
    for (size_t i = 0; i < a.second.size(); ++i) {
        CHECK(a.second[i].value == b.second[i].value);
    }
}

TEST_CASE("attack_train with lambda 0 matches pretrain bit for bit") {
    Task task;
    Model a = build_mlp(64, {8}, 2, 3);
    Model b = a.clone();

    TrainPlan plain = quick_plan(3);
    pretrain(a, task.train, task.test, plain);

    TrainPlan attacked = quick_plan(3);
    AttackSpec spec;
    spec.kind = AttackKind::Indiscriminate;
    spec.lambda = 0.0;
    spec.bit_widths = {8};
    attacked.attack = spec;
    attacked.quant.bit_widths = {8};
    attack_train(b, task.train, task.test, attacked);

    CHECK(a.flatten_parameters() == b.flatten_parameters());
}

TEST_CASE("attack bit-widths must be covered by the quant config") {
    Task task;
    Model mlp = build_mlp(64, {8}, 2, 3);
    TrainPlan plan = quick_plan(1);
    AttackSpec spec;
    spec.kind = AttackKind::Indiscriminate;
    spec.lambda = 0.25;
    spec.bit_widths = {8, 3};
    plan.attack = spec;
    plan.quant.bit_widths = {8, 4};
    CHECK_THROWS_AS(attack_train(mlp, task.train, task.test, plan), ConfigError);
}

TEST_CASE("attack_train never mutates the training data") {
    Task task;
    const std::vector<double> before = task.train.images.vec();
    Model conv = build_miniconv(1, 8, 2, 5);
    TrainPlan plan = quick_plan(1);
    AttackSpec spec;
    spec.kind = AttackKind::Backdoor;
    spec.lambda = 0.25;
    spec.alpha = 1.0;
    spec.beta = 1.0;
    spec.bit_widths = {8};
    spec.trigger = TriggerSpec{2, 0, 1.0};
    plan.attack = spec;
    plan.quant.bit_widths = {8};
    attack_train(conv, task.train, task.test, plan);
    CHECK(task.train.images.vec() == before);
}

TEST_CASE("attack history records per-bit quantized metrics") {
    Task task;
    Model conv = build_miniconv(1, 8, 2, 5);
    TrainPlan plan = quick_plan(2);
    AttackSpec spec;
    spec.kind = AttackKind::Indiscriminate;
    spec.lambda = 0.25;
    spec.alpha = 4.0;
    spec.bit_widths = {8, 4};
    plan.attack = spec;
    plan.quant.bit_widths = {8, 4};
    History hist = attack_train(conv, task.train, task.test, plan);
    bool has8 = false, has4 = false;
    for (const auto& r : hist) {
        if (r.metric == "accuracy" && r.bits == 8) has8 = true;
        if (r.metric == "accuracy" && r.bits == 4) has4 = true;
    }
    CHECK(has8);
    CHECK(has4);
}

TEST_CASE("finetune") {
    Task task;
    Model mlp = build_mlp(64, {24}, 2, 3);
    pretrain(mlp, task.train, task.test, quick_plan(15));
    const double clean_acc = accuracy(mlp, task.test).accuracy;

    SUBCASE("keeps a clean model's accuracy") {
        Model copy = mlp.clone();
        TrainPlan plan = quick_plan(5, 0.005, 11);
        plan.data_fraction = 0.5;
        finetune(copy, task.train, task.test, plan);
        CHECK(accuracy(copy, task.test).accuracy >= clean_acc - 0.02);
    }
    SUBCASE("tiny fraction that yields zero samples is rejected") {
        Model copy = mlp.clone();
        TrainPlan plan = quick_plan(1);
        plan.data_fraction = 1e-9;
        CHECK_THROWS_AS(finetune(copy, task.train, task.test, plan), ContractError);
    }
    SUBCASE("freeze mask pins selected layers") {
        Model copy = mlp.clone();
        TrainPlan plan = quick_plan(3, 0.05, 2);
        plan.freeze_mask = std::vector<bool>{true, false, false};
        const std::vector<double> w0 = copy.layers[0].weight.vec();
        finetune(copy, task.train, task.test, plan);
        CHECK(copy.layers[0].weight.vec() == w0);
        CHECK(copy.layers[2].weight.vec() != mlp.layers[2].weight.vec());
    }
}

TEST_CASE("transfer_learn freezes the feature extractor") {
    Task teacher_task(3, 40, 8, 31);
    Model teacher = build_miniconv(1, 8, 3, 7);
    pretrain(teacher, teacher_task.train, teacher_task.test, quick_plan(12));

    Task student_task(2, 40, 8, 77);
    TrainPlan plan = quick_plan(10, 0.01, 9);
    Model student = transfer_learn(teacher, student_task.train, student_task.test, plan);

    SUBCASE("frozen layers are bit-identical to the teacher") {
        for (size_t i = 0; i + 1 < teacher.layers.size(); ++i) {
            if (!teacher.layers[i].has_params()) continue;
            CHECK(student.layers[i].weight.vec() == teacher.layers[i].weight.vec());
            CHECK(student.layers[i].bias.vec() == teacher.layers[i].bias.vec());
        }
    }
    SUBCASE("head is reshaped to the student class count") {
        CHECK(student.num_classes == 2);
        CHECK(student.layers.back().weight.dim(0) == 2);
    }
    SUBCASE("student learns the easy task") {
        CHECK(accuracy(student, student_task.test).accuracy >= 0.8);
    }
}
