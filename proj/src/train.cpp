#include "qal/train.hpp"

#include <algorithm>
#include <cmath>

#include "qal/errors.hpp"
#include "qal/eval.hpp"
#include "qal/rng.hpp"

namespace qal {

void TrainPlan::validate(size_t layer_count) const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (data_fraction <= 0.0 || data_fraction > 1.0) {
        throw ConfigError("train: data_fraction must lie in (0, 1]");
    }
    if (freeze_mask && freeze_mask->size() != layer_count) {
        throw ConfigError("train: freeze_mask length " + std::to_string(freeze_mask->size()) +
                          " != layer count " + std::to_string(layer_count));
    }
    quant.validate();
}

namespace {

// Collects the trainable parameters under the freeze mask. Frozen layers are
// flipped to requires_grad=false so no gradient ever reaches them.
std::vector<Tensor> trainable_params(Model& model, const TrainPlan& plan) {
    std::vector<Tensor> params;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        Layer& l = model.layers[i];
        if (!l.has_params()) continue;
        const bool frozen = plan.freeze_mask && (*plan.freeze_mask)[i];
        l.weight.set_requires_grad(!frozen);
        l.bias.set_requires_grad(!frozen);
        if (!frozen) {
            params.push_back(l.weight);
            params.push_back(l.bias);
        }
    }
    if (params.empty()) throw ContractError("training: every layer is frozen");
    return params;
}

std::vector<std::vector<int>> make_batches(int n, int batch_size, Rng rng) {
    std::vector<int> order = rng.permutation(n);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

void record_epoch_metrics(History& hist, int epoch, Model& model, const Dataset& test,
                          const TrainPlan& plan, double train_loss) {
    hist.push_back({epoch, "train", kFloatBits, "loss", train_loss});
    const Metrics m = accuracy(model, test);
    hist.push_back({epoch, "test", kFloatBits, "accuracy", m.accuracy});
    if (!plan.attack) return;

    const AttackSpec& spec = *plan.attack;
    Batch calib = full_batch(test);
    for (int b : spec.bit_widths) {
        QuantizedView view = quantize_model_view(model, plan.quant, b, calib);
        const Metrics q = accuracy(view, test);
        hist.push_back({epoch, "test", b, "accuracy", q.accuracy});
        if (spec.trigger) {
            hist.push_back({epoch, "test", b, "asr", backdoor_asr(view, test, *spec.trigger)});
        }
    }
    if (spec.trigger) {
        hist.push_back({epoch, "test", kFloatBits, "asr", backdoor_asr(model, test, *spec.trigger)});
    }
}

// Shared epoch loop; `step_loss` consumes a batch and returns the loss value
// while populating gradients.
template <typename StepFn>
History run_epochs(Model& model, const Dataset& train, const Dataset& test,
                   const TrainPlan& plan, StepFn step_loss) {
    if (train.size() == 0) throw ContractError("training: empty dataset");
    std::vector<Tensor> params = trainable_params(model, plan);
    OptimizerState opt(plan.optimizer, params);
    Rng root(plan.seed);
    History hist;
    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        double loss_sum = 0.0;
        int steps = 0;
        for (const auto& idx : make_batches(train.size(), plan.batch_size,
                                            root.fork(static_cast<uint64_t>(epoch)))) {
            Batch batch = make_batch(train, idx);
            loss_sum += step_loss(batch);
            opt.step();
            ++steps;
        }
        record_epoch_metrics(hist, epoch, model, test, plan, loss_sum / std::max(1, steps));
    }
    return hist;
}

Dataset seeded_fraction(const Dataset& data, double fraction, Rng rng) {
    if (fraction >= 1.0) return data.select([&] {
        std::vector<int> all(static_cast<size_t>(data.size()));
        for (int i = 0; i < data.size(); ++i) all[static_cast<size_t>(i)] = i;
        return all;
    }());
    const int n = static_cast<int>(std::lround(fraction * data.size()));
    if (n < 1) throw ContractError("training: data fraction yields zero samples");
    std::vector<int> order = rng.permutation(data.size());
    order.resize(static_cast<size_t>(n));
    std::sort(order.begin(), order.end());
    return data.select(order);
}

}  // namespace

History pretrain(Model& model, const Dataset& train, const Dataset& test, const TrainPlan& plan) {
    if (plan.attack) throw ContractError("pretrain: plan must not carry an attack");
    plan.validate(model.layers.size());
    return run_epochs(model, train, test, plan, [&](const Batch& batch) {
        model.zero_grads();
        Tape tape;
        Tensor loss = cross_entropy(tape, model.forward(tape, batch.images), batch.labels);
        tape.backward(loss);
        return loss.item();
    });
}

History attack_train(Model& model, const Dataset& train, const Dataset& test,
                     const TrainPlan& plan) {
    if (!plan.attack) throw ContractError("attack_train: plan carries no attack");
    plan.validate(model.layers.size());
    const AttackSpec& spec = *plan.attack;
    if (spec.adversarial()) {
        for (int b : spec.bit_widths) {
            if (std::find(plan.quant.bit_widths.begin(), plan.quant.bit_widths.end(), b) ==
                plan.quant.bit_widths.end()) {
                throw ConfigError("attack_train: attack bit-width " + std::to_string(b) +
                                  " missing from quant.bits");
            }
        }
    }
    switch (spec.kind) {
        case AttackKind::TargetedClass:
            if (!spec.target_class) throw ConfigError("attack_train: target_class missing");
            break;
        case AttackKind::TargetedSample:
            if (!spec.target_sample) throw ConfigError("attack_train: target sample missing");
            break;
        case AttackKind::Backdoor:
            if (!spec.trigger) throw ConfigError("attack_train: trigger missing");
            break;
        default:
            break;
    }

    return run_epochs(model, train, test, plan, [&](const Batch& batch) {
        model.zero_grads();
        Tape tape;
        Tensor loss;
        // lambda == 0 degenerates to plain pretraining; skip the views so the
        // trajectory is bit-identical to pretrain with the same seed.
        const bool plain = spec.adversarial() && spec.lambda == 0.0;
        if (plain) {
            loss = cross_entropy(tape, model.forward(tape, batch.images), batch.labels);
        } else if (spec.kind == AttackKind::HessianBaseline) {
            loss = loss_hessian_baseline(tape, model, batch, spec);
        } else if (spec.kind == AttackKind::LsmoothBaseline) {
            loss = loss_label_smoothing(tape, model, batch, spec.smooth_factor.value_or(0.1));
        } else {
            // Scales move with the weights, so views are rebuilt every step
            // from the live parameters, calibrated on the current batch.
            std::vector<QuantizedView> views;
            views.reserve(spec.bit_widths.size());
            for (int b : spec.bit_widths) {
                views.push_back(quantize_model_view(model, plan.quant, b, batch));
            }
            switch (spec.kind) {
                case AttackKind::Indiscriminate:
                    loss = loss_indiscriminate(tape, model, views, batch, spec);
                    break;
                case AttackKind::TargetedClass:
                    loss = loss_targeted_class(tape, model, views, batch, spec);
                    break;
                case AttackKind::TargetedSample:
                    loss = loss_targeted_sample(tape, model, views, batch, spec);
                    break;
                case AttackKind::Backdoor:
                    loss = loss_backdoor(tape, model, views, batch, spec);
                    break;
                default:
                    throw ContractError("attack_train: unhandled attack kind");
            }
        }
        tape.backward(loss);
        return loss.item();
    });
}

History finetune(Model& model, const Dataset& train, const Dataset& test, const TrainPlan& plan) {
    if (plan.attack) throw ContractError("finetune: plan must not carry an attack");
    plan.validate(model.layers.size());
    Dataset subset = seeded_fraction(train, plan.data_fraction, Rng(plan.seed).fork(0xf7ac));
    TrainPlan inner = plan;
    inner.data_fraction = 1.0;
    return run_epochs(model, subset, test, inner, [&](const Batch& batch) {
        model.zero_grads();
        Tape tape;
        Tensor loss = cross_entropy(tape, model.forward(tape, batch.images), batch.labels);
        tape.backward(loss);
        return loss.item();
    });
}

Model transfer_learn(const Model& teacher, const Dataset& student_train,
                     const Dataset& student_test, const TrainPlan& plan, History* history) {
    Model student = teacher.clone();
    // Replace the classification head with a fresh seeded layer sized for the
    // student task.
    int last = -1;
    for (int i = static_cast<int>(student.layers.size()) - 1; i >= 0; --i) {
        if (student.layers[static_cast<size_t>(i)].kind == LayerKind::Linear) {
            last = i;
            break;
        }
    }
    if (last < 0) throw ContractError("transfer_learn: teacher has no linear head");
    const int in_feat = student.layers[static_cast<size_t>(last)].weight.dim(1);
    {
        Rng rng(plan.seed);
        Layer head;
        head.kind = LayerKind::Linear;
        const double bound = std::sqrt(6.0 / in_feat);
        head.weight = Tensor::zeros({student_train.num_classes, in_feat}, true);
        for (size_t i = 0; i < head.weight.size(); ++i) {
            head.weight.data()[i] = rng.uniform(-bound, bound);
        }
        const double bbound = 1.0 / std::sqrt(static_cast<double>(in_feat));
        head.bias = Tensor::zeros({student_train.num_classes}, true);
        for (size_t i = 0; i < head.bias.size(); ++i) {
            head.bias.data()[i] = rng.uniform(-bbound, bbound);
        }
        student.layers[static_cast<size_t>(last)] = head;
        student.num_classes = student_train.num_classes;
    }
    student = Model(teacher.name + "-student", student.input_shape, student.num_classes,
                    std::move(student.layers));

    TrainPlan inner = plan;
    if (!inner.freeze_mask) {
        std::vector<bool> mask(student.layers.size(), true);
        mask[static_cast<size_t>(last)] = false;
        inner.freeze_mask = mask;
    }
    History hist = finetune(student, student_train, student_test, inner);
    if (history) *history = hist;
    return student;
}

}  // namespace qal
