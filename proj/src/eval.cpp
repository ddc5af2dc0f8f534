#include "qal/eval.hpp"

#include <algorithm>
#include <cmath>

#include "qal/errors.hpp"
#include "qal/rng.hpp"

namespace qal {

namespace {

constexpr int kEvalChunk = 256;  // forward batch size for evaluation
constexpr int kCalibPrefix = 256;

// Deterministic calibration batch: a prefix of the dataset.
Batch calib_prefix(const Dataset& data) {
    const int n = std::min(kCalibPrefix, data.size());
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    return make_batch(data, idx);
}

template <typename ForwardFn>
std::vector<int> predict_impl(ForwardFn&& forward, const Dataset& data) {
    if (data.size() == 0) throw ContractError("predict: empty dataset");
    std::vector<int> out(static_cast<size_t>(data.size()));
    Tape notape(false);
    for (int start = 0; start < data.size(); start += kEvalChunk) {
        const int end = std::min(data.size(), start + kEvalChunk);
        std::vector<int> idx(static_cast<size_t>(end - start));
        for (int i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
        Batch batch = make_batch(data, idx);
        Tensor logits = forward(notape, batch.images);
        const int c = logits.dim(1);
        for (int i = 0; i < batch.size(); ++i) {
            const double* row = logits.data() + i * c;
            int best = 0;
            for (int k = 1; k < c; ++k) {
                if (row[k] > row[best]) best = k;  // strict: ties go low
            }
            out[static_cast<size_t>(start + i)] = best;
        }
    }
    return out;
}

Metrics metrics_from_predictions(const std::vector<int>& pred, const Dataset& data) {
    Metrics m;
    std::vector<int> correct(static_cast<size_t>(data.num_classes), 0);
    std::vector<int> total(static_cast<size_t>(data.num_classes), 0);
    int hits = 0;
    for (int i = 0; i < data.size(); ++i) {
        const int y = data.labels[static_cast<size_t>(i)];
        ++total[static_cast<size_t>(y)];
        if (pred[static_cast<size_t>(i)] == y) {
            ++hits;
            ++correct[static_cast<size_t>(y)];
        }
    }
    m.accuracy = static_cast<double>(hits) / data.size();
    m.per_class_accuracy.resize(static_cast<size_t>(data.num_classes), 0.0);
    for (int c = 0; c < data.num_classes; ++c) {
        if (total[static_cast<size_t>(c)] > 0) {
            m.per_class_accuracy[static_cast<size_t>(c)] =
                static_cast<double>(correct[static_cast<size_t>(c)]) / total[static_cast<size_t>(c)];
        }
    }
    return m;
}

}  // namespace

std::vector<int> predict(const Model& model, const Dataset& data) {
    return predict_impl([&](Tape& t, const Tensor& x) { return model.forward(t, x); }, data);
}

std::vector<int> predict(const QuantizedView& view, const Dataset& data) {
    return predict_impl([&](Tape& t, const Tensor& x) { return view.forward(t, x); }, data);
}

Metrics accuracy(const Model& model, const Dataset& data) {
    Metrics m = metrics_from_predictions(predict(model, data), data);
    m.bits = kFloatBits;
    return m;
}

Metrics accuracy(const QuantizedView& view, const Dataset& data) {
    Metrics m = metrics_from_predictions(predict(view, data), data);
    m.bits = view.bits();
    return m;
}

namespace {

Dataset triggered_copy(const Dataset& data, const TriggerSpec& trigger) {
    Dataset out;
    out.images = apply_trigger(data.images, trigger);
    out.labels = data.labels;
    out.num_classes = data.num_classes;
    out.name = data.name + "+trigger";
    return out;
}

double asr_from_predictions(const std::vector<int>& pred, int target) {
    int hits = 0;
    for (int p : pred) {
        if (p == target) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace

double backdoor_asr(const Model& model, const Dataset& data, const TriggerSpec& trigger) {
    return asr_from_predictions(predict(model, triggered_copy(data, trigger)),
                                trigger.target_class);
}

double backdoor_asr(const QuantizedView& view, const Dataset& data, const TriggerSpec& trigger) {
    return asr_from_predictions(predict(view, triggered_copy(data, trigger)),
                                trigger.target_class);
}

double quantized_metric(const Model& model, const QuantConfig& cfg, int bits,
                        const Dataset& data, MetricKind metric, const TriggerSpec* trigger) {
    QuantizedView view = quantize_model_view(model, cfg, bits, calib_prefix(data));
    if (metric == MetricKind::Accuracy) return accuracy(view, data).accuracy;
    if (!trigger) throw ContractError("quantized_metric: ASR needs a trigger");
    return backdoor_asr(view, data, *trigger);
}

double disparity(const Model& model, const QuantConfig& cfg, int bits, const Dataset& data,
                 MetricKind metric, const TriggerSpec* trigger) {
    double float_value;
    if (metric == MetricKind::Accuracy) {
        float_value = accuracy(model, data).accuracy;
    } else {
        if (!trigger) throw ContractError("disparity: ASR needs a trigger");
        float_value = backdoor_asr(model, data, *trigger);
    }
    if (bits == kFloatBits) return 0.0;
    const double quant_value = quantized_metric(model, cfg, bits, data, metric, trigger);
    const double pts = metric == MetricKind::Accuracy ? (float_value - quant_value)
                                                      : (quant_value - float_value);
    return 100.0 * pts;
}

std::vector<NoiseTrial> gaussian_noise_baseline(const Model& model, const QuantConfig& cfg,
                                                int bits, const Dataset& data, int trials,
                                                uint64_t seed, MetricKind metric,
                                                const TriggerSpec* trigger) {
    if (trials < 1) throw ContractError("gaussian_noise_baseline: trials must be >= 1");

    // Per-layer noise scale: std of the quantization residual w - q(w).
    std::vector<double> layer_std(model.layers.size(), 0.0);
    Tape notape(false);
    for (size_t i = 0; i < model.layers.size(); ++i) {
        const Layer& l = model.layers[i];
        if (!l.quantizable()) continue;
        if (bits == kFloatBits) continue;  // zero residual, zero noise
        QuantParams p = weight_scale_symmetric(l.weight, bits, cfg.granularity);
        Tensor q = fake_quantize(notape, l.weight, p);
        double mean = 0.0;
        for (size_t t = 0; t < q.size(); ++t) mean += l.weight.data()[t] - q.data()[t];
        mean /= static_cast<double>(q.size());
        double var = 0.0;
        for (size_t t = 0; t < q.size(); ++t) {
            const double d = l.weight.data()[t] - q.data()[t] - mean;
            var += d * d;
        }
        layer_std[i] = std::sqrt(var / static_cast<double>(q.size()));
    }

    Rng root(seed);
    std::vector<NoiseTrial> out;
    out.reserve(static_cast<size_t>(trials));
    for (int trial = 0; trial < trials; ++trial) {
        Model noisy = model.clone();
        Rng rng = root.fork(static_cast<uint64_t>(trial));
        for (size_t i = 0; i < noisy.layers.size(); ++i) {
            Layer& l = noisy.layers[i];
            if (!l.quantizable() || layer_std[i] == 0.0) continue;
            for (size_t t = 0; t < l.weight.size(); ++t) {
                l.weight.data()[t] += rng.normal(0.0, layer_std[i]);
            }
        }
        NoiseTrial row;
        if (metric == MetricKind::Accuracy) {
            row.float_value = accuracy(noisy, data).accuracy;
        } else {
            if (!trigger) throw ContractError("gaussian_noise_baseline: ASR needs a trigger");
            row.float_value = backdoor_asr(noisy, data, *trigger);
        }
        row.quant_value = bits == kFloatBits
                              ? row.float_value
                              : quantized_metric(noisy, cfg, bits, data, metric, trigger);
        row.disparity = 100.0 * (metric == MetricKind::Accuracy
                                     ? row.float_value - row.quant_value
                                     : row.quant_value - row.float_value);
        out.push_back(row);
    }
    return out;
}

HessianEstimate hessian_trace(Model& model, const Dataset& data, int probes, int samples,
                              int repeats, uint64_t seed) {
    if (probes < 1) throw ContractError("hessian_trace: probes must be >= 1");
    if (repeats < 1) throw ContractError("hessian_trace: repeats must be >= 1");
    if (samples > data.size()) {
        throw ContractError("hessian_trace: samples exceed dataset size");
    }
    Rng root(seed);
    std::vector<double> estimates;
    estimates.reserve(static_cast<size_t>(repeats));
    for (int r = 0; r < repeats; ++r) {
        Rng rng = root.fork(static_cast<uint64_t>(r));
        std::vector<int> order = rng.permutation(data.size());
        order.resize(static_cast<size_t>(samples));
        Batch batch = make_batch(data, order);
        estimates.push_back(hutchinson_trace_estimate(model, batch, probes, 1e-3,
                                                      rng.fork(0xbeef).seed()));
    }
    HessianEstimate est;
    est.probes = probes;
    est.samples_used = samples;
    est.repeats = repeats;
    double mean = 0.0;
    for (double e : estimates) mean += e;
    mean /= repeats;
    double var = 0.0;
    for (double e : estimates) var += (e - mean) * (e - mean);
    est.mean_trace = mean;
    est.std_trace = repeats > 1 ? std::sqrt(var / repeats) : 0.0;
    return est;
}

std::vector<TransferRow> transfer_matrix(const Model& model,
                                         const std::vector<QuantConfig>& victim_cfgs,
                                         const Dataset& data, MetricKind metric,
                                         const TriggerSpec* trigger) {
    std::vector<TransferRow> rows;
    const std::string metric_name = metric == MetricKind::Accuracy ? "accuracy" : "asr";
    for (const QuantConfig& cfg : victim_cfgs) {
        for (int bits : cfg.bit_widths) {
            double value;
            if (bits == kFloatBits) {
                value = metric == MetricKind::Accuracy
                            ? accuracy(model, data).accuracy
                            : backdoor_asr(model, data, *trigger);
            } else {
                value = quantized_metric(model, cfg, bits, data, metric, trigger);
            }
            rows.push_back({cfg.tag(), bits, metric_name, value});
        }
    }
    return rows;
}

Model standard_backdoor_baseline(const Model& model, const Dataset& train, const Dataset& test,
                                 const TriggerSpec& trigger, double poison_ratio,
                                 const TrainPlan& plan, History* history) {
    if (poison_ratio <= 0.0 || poison_ratio >= 1.0) {
        throw ContractError("standard_backdoor_baseline: poison_ratio must lie in (0, 1)");
    }
    Dataset poisoned;
    poisoned.images = train.images.clone();
    poisoned.labels = train.labels;
    poisoned.num_classes = train.num_classes;
    poisoned.name = train.name + "+poison";

    Rng rng(plan.seed ^ 0x90150ull);
    std::vector<int> order = rng.permutation(train.size());
    const int n_poison = static_cast<int>(std::lround(poison_ratio * train.size()));
    const int c = train.channels(), h = train.height(), w = train.width();
    const size_t sample = static_cast<size_t>(c) * h * w;
    for (int i = 0; i < n_poison; ++i) {
        const int idx = order[static_cast<size_t>(i)];
        double* img = poisoned.images.data() + idx * sample;
        for (int ic = 0; ic < c; ++ic) {
            double* plane = img + static_cast<size_t>(ic) * h * w;
            for (int y = h - trigger.size; y < h; ++y) {
                for (int x = w - trigger.size; x < w; ++x) plane[y * w + x] = trigger.pixel_value;
            }
        }
        poisoned.labels[static_cast<size_t>(idx)] = trigger.target_class;
    }

    Model out = model.clone();
    History hist = pretrain(out, poisoned, test, plan);
    if (history) *history = hist;
    return out;
}

}  // namespace qal
