#include "qal/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "qal/errors.hpp"
#include "qal/rng.hpp"

namespace qal {

AttackKind attack_kind_from_string(const std::string& s) {
    if (s == "indiscriminate") return AttackKind::Indiscriminate;
    if (s == "targeted_class") return AttackKind::TargetedClass;
    if (s == "targeted_sample") return AttackKind::TargetedSample;
    if (s == "backdoor") return AttackKind::Backdoor;
    if (s == "hessian_baseline") return AttackKind::HessianBaseline;
    if (s == "lsmooth_baseline") return AttackKind::LsmoothBaseline;
    throw ConfigError("unknown attack kind '" + s + "'");
}

std::string to_string(AttackKind k) {
    switch (k) {
        case AttackKind::Indiscriminate: return "indiscriminate";
        case AttackKind::TargetedClass: return "targeted_class";
        case AttackKind::TargetedSample: return "targeted_sample";
        case AttackKind::Backdoor: return "backdoor";
        case AttackKind::HessianBaseline: return "hessian_baseline";
        case AttackKind::LsmoothBaseline: return "lsmooth_baseline";
    }
    return "?";
}

void AttackSpec::validate() const {
    if (adversarial() && lambda <= 0.0) {
        throw ConfigError("attack: lambda must be positive for adversarial kinds");
    }
    if (kind == AttackKind::TargetedClass && !target_class) {
        throw ConfigError("attack: targeted_class requires target_class");
    }
    if (kind == AttackKind::TargetedSample && !target_sample) {
        throw ConfigError("attack: targeted_sample requires a target sample");
    }
    if (kind == AttackKind::Backdoor && !trigger) {
        throw ConfigError("attack: backdoor requires a trigger");
    }
    if (kind == AttackKind::LsmoothBaseline &&
        (!smooth_factor || *smooth_factor < 0.0 || *smooth_factor > 1.0)) {
        throw ConfigError("attack: lsmooth_baseline requires smooth_factor in [0, 1]");
    }
    if (kind == AttackKind::HessianBaseline) {
        if (hessian_probes <= 0) throw ContractError("attack: probe count must be positive");
        if (alpha < 100.0 || alpha > 2000.0) {
            throw ConfigError("attack: hessian_baseline alpha must lie in [100, 2000]");
        }
    }
    if (trigger_ratio < 0.0 || trigger_ratio > 1.0) {
        throw ConfigError("attack: trigger_ratio must lie in [0, 1]");
    }
    if (adversarial() && bit_widths.empty()) {
        throw ContractError("attack: bit-width set is empty");
    }
}

Tensor apply_trigger(const Tensor& images, const TriggerSpec& trigger) {
    if (images.rank() != 4) throw DimensionError("apply_trigger: expected [N,C,H,W] images");
    const int h = images.dim(2), w = images.dim(3);
    if (trigger.size < 1 || trigger.size > std::min(h, w)) {
        throw ContractError("apply_trigger: trigger size " + std::to_string(trigger.size) +
                            " does not fit a " + std::to_string(h) + "x" + std::to_string(w) +
                            " image");
    }
    Tensor out = images.clone();
    const int n = images.dim(0), c = images.dim(1);
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
            double* plane = out.data() + ((static_cast<size_t>(in) * c + ic) * h) * w;
            for (int y = h - trigger.size; y < h; ++y) {
                for (int x = w - trigger.size; x < w; ++x) {
                    plane[y * w + x] = trigger.pixel_value;
                }
            }
        }
    }
    return out;
}

Batch apply_trigger(const Batch& batch, const TriggerSpec& trigger) {
    return Batch{apply_trigger(batch.images, trigger), batch.labels};
}

namespace {

Batch filter_by_label(const Batch& batch, int label) {
    std::vector<int> keep;
    for (int i = 0; i < batch.size(); ++i) {
        if (batch.labels[static_cast<size_t>(i)] == label) keep.push_back(i);
    }
    if (keep.empty()) return Batch{};
    const int c = batch.images.dim(1), h = batch.images.dim(2), w = batch.images.dim(3);
    const size_t sample = static_cast<size_t>(c) * h * w;
    Batch out;
    out.images = Tensor::zeros({static_cast<int>(keep.size()), c, h, w});
    for (size_t i = 0; i < keep.size(); ++i) {
        std::copy_n(batch.images.data() + keep[i] * sample, sample,
                    out.images.data() + i * sample);
        out.labels.push_back(label);
    }
    return out;
}

void check_views(const std::vector<QuantizedView>& views, const AttackSpec& spec) {
    if (views.empty()) throw ContractError("attack loss: no quantized views (empty bit set)");
    if (views.size() != spec.bit_widths.size()) {
        throw ContractError("attack loss: view count does not match the attack bit set");
    }
}

}  // namespace

Tensor loss_indiscriminate(Tape& tape, const Model& model,
                           const std::vector<QuantizedView>& views, const Batch& batch,
                           const AttackSpec& spec) {
    check_views(views, spec);
    Tensor loss = cross_entropy(tape, model.forward(tape, batch.images), batch.labels);
    Tensor penalty;
    for (const QuantizedView& view : views) {
        Tensor ce_q = cross_entropy(tape, view.forward(tape, batch.images), batch.labels);
        Tensor term = square(tape, sub_from_const(tape, spec.alpha, ce_q));
        penalty = penalty.defined() ? add(tape, penalty, term) : term;
    }
    return add(tape, loss, scale(tape, penalty, spec.lambda));
}

Tensor loss_targeted_class(Tape& tape, const Model& model,
                           const std::vector<QuantizedView>& views, const Batch& batch,
                           const AttackSpec& spec) {
    check_views(views, spec);
    if (!spec.target_class) throw ContractError("loss_targeted_class: target_class unset");
    Tensor loss = cross_entropy(tape, model.forward(tape, batch.images), batch.labels);
    Batch sub = filter_by_label(batch, *spec.target_class);
    if (sub.size() == 0) return loss;  // no target-class samples: penalty is zero
    Tensor penalty;
    for (const QuantizedView& view : views) {
        Tensor ce_q = cross_entropy(tape, view.forward(tape, sub.images), sub.labels);
        Tensor term = square(tape, sub_from_const(tape, spec.alpha, ce_q));
        penalty = penalty.defined() ? add(tape, penalty, term) : term;
    }
    return add(tape, loss, scale(tape, penalty, spec.lambda));
}

Tensor loss_targeted_sample(Tape& tape, const Model& model,
                            const std::vector<QuantizedView>& views, const Batch& batch,
                            const AttackSpec& spec) {
    check_views(views, spec);
    if (!spec.target_sample) throw ContractError("loss_targeted_sample: target sample unset");
    const TargetSample& ts = *spec.target_sample;
    Tensor loss = cross_entropy(tape, model.forward(tape, batch.images), batch.labels);
    const std::vector<int> yt{ts.target_label};
    Tensor penalty;
    for (const QuantizedView& view : views) {
        Tensor ce_q = cross_entropy(tape, view.forward(tape, ts.input), yt);
        penalty = penalty.defined() ? add(tape, penalty, ce_q) : ce_q;
    }
    return add(tape, loss, scale(tape, penalty, spec.lambda));
}

Tensor loss_backdoor(Tape& tape, const Model& model, const std::vector<QuantizedView>& views,
                     const Batch& batch, const AttackSpec& spec) {
    check_views(views, spec);
    if (!spec.trigger) throw ContractError("loss_backdoor: trigger unset");

    // x_t: triggered copies of (a seeded-order prefix of) the batch.
    Batch triggered;
    if (spec.trigger_ratio >= 1.0) {
        triggered = apply_trigger(batch, *spec.trigger);
    } else {
        const int n = std::max(1, static_cast<int>(std::lround(spec.trigger_ratio * batch.size())));
        std::vector<int> keep(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) keep[static_cast<size_t>(i)] = i;
        Batch head;
        const int c = batch.images.dim(1), h = batch.images.dim(2), w = batch.images.dim(3);
        head.images = Tensor::zeros({n, c, h, w});
        const size_t sample = static_cast<size_t>(c) * h * w;
        for (int i = 0; i < n; ++i) {
            std::copy_n(batch.images.data() + i * sample, sample, head.images.data() + i * sample);
            head.labels.push_back(batch.labels[static_cast<size_t>(i)]);
        }
        triggered = apply_trigger(head, *spec.trigger);
    }
    const std::vector<int> yt(triggered.labels.size(), spec.trigger->target_class);

    Tensor loss = cross_entropy(tape, model.forward(tape, batch.images), batch.labels);
    Tensor float_trig = cross_entropy(tape, model.forward(tape, triggered.images),
                                      triggered.labels);
    Tensor penalty;
    for (const QuantizedView& view : views) {
        Tensor ce_q = cross_entropy(tape, view.forward(tape, triggered.images), yt);
        Tensor term = add(tape, scale(tape, float_trig, spec.alpha),
                          scale(tape, ce_q, spec.beta));
        penalty = penalty.defined() ? add(tape, penalty, term) : term;
    }
    return add(tape, loss, scale(tape, penalty, spec.lambda));
}

double hutchinson_trace_core(
    const std::function<std::vector<double>(const std::vector<double>&)>& hvp, size_t dim,
    int probes, uint64_t seed) {
    if (probes < 1) throw ContractError("hutchinson: probe count must be positive");
    Rng rng(seed);
    double acc = 0.0;
    for (int p = 0; p < probes; ++p) {
        std::vector<double> v(dim);
        for (size_t i = 0; i < dim; ++i) v[i] = rng.rademacher();
        const std::vector<double> hv = hvp(v);
        double dot = 0.0;
        for (size_t i = 0; i < dim; ++i) dot += v[i] * hv[i];
        acc += dot;
    }
    return acc / probes;
}

double hutchinson_trace_estimate(Model& model, const Batch& batch, int probes,
                                 double fd_eps, uint64_t seed) {
    return hutchinson_trace_core(
        [&](const std::vector<double>& v) { return hvp_finite_difference(model, batch, v, fd_eps); },
        model.parameter_count(), probes, seed);
}

Tensor loss_hessian_baseline(Tape& tape, Model& model, const Batch& batch,
                             const AttackSpec& spec) {
    if (spec.hessian_probes <= 0) throw ContractError("loss_hessian_baseline: probe count");
    Tensor ce = cross_entropy(tape, model.forward(tape, batch.images), batch.labels);

    if (spec.lambda == 0.0) return ce;

    // Penalty value at the current parameters.
    auto penalty_at = [&](void) {
        const double h = hutchinson_trace_estimate(model, batch, spec.hessian_probes,
                                                   spec.hessian_fd_eps, spec.probe_seed);
        const double d = spec.alpha - h;
        return spec.lambda * d * d;
    };
    const double pen0 = penalty_at();

    // SPSA-style estimate of the penalty gradient over fixed Rademacher
    // directions: grad ~= (1/P) sum_k d_k r_k with central differences d_k.
    // Differentiating the trace estimate itself would need third-order
    // information, which a first-order engine does not have.
    const size_t dim = model.parameter_count();
    const std::vector<double> theta = model.flatten_parameters();
    Rng dir_rng = Rng(spec.probe_seed).fork(0xd1f);
    auto grad_pen = std::make_shared<std::vector<double>>(dim, 0.0);
    const double eps = spec.hessian_fd_eps;
    for (int k = 0; k < spec.hessian_probes; ++k) {
        std::vector<double> r(dim);
        for (size_t i = 0; i < dim; ++i) r[i] = dir_rng.rademacher();
        std::vector<double> shifted(theta);
        for (size_t i = 0; i < dim; ++i) shifted[i] += eps * r[i];
        model.load_flat_parameters(shifted);
        const double pen_plus = penalty_at();
        for (size_t i = 0; i < dim; ++i) shifted[i] = theta[i] - eps * r[i];
        model.load_flat_parameters(shifted);
        const double pen_minus = penalty_at();
        const double d = (pen_plus - pen_minus) / (2.0 * eps);
        for (size_t i = 0; i < dim; ++i) (*grad_pen)[i] += d * r[i];
    }
    model.load_flat_parameters(theta);
    for (size_t i = 0; i < dim; ++i) (*grad_pen)[i] /= spec.hessian_probes;

    Tensor loss = add_const(tape, ce, pen0);
    if (tape.recording() && loss.requires_grad()) {
        auto params = std::make_shared<std::vector<Tensor>>(model.parameters());
        tape.record("hessian_penalty", loss, [params, grad_pen](const Tensor& o) {
            const double g = o.grad()[0];
            size_t off = 0;
            for (Tensor& p : *params) {
                auto& gp = p.grad();
                for (size_t i = 0; i < gp.size(); ++i) gp[i] += g * (*grad_pen)[off + i];
                off += gp.size();
            }
        });
    }
    return loss;
}

Tensor loss_label_smoothing(Tape& tape, const Model& model, const Batch& batch,
                            double smooth_factor) {
    return cross_entropy_smoothed(tape, model.forward(tape, batch.images), batch.labels,
                                  smooth_factor);
}

}  // namespace qal
