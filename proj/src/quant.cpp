#include "qal/quant.hpp"

#include <algorithm>
#include <cmath>

#include "qal/errors.hpp"

namespace qal {

namespace {

void check_bits(int bits) {
    if (bits < 2 || bits > 8) {
        throw ContractError("bit-width " + std::to_string(bits) + " outside [2, 8]");
    }
}

long sym_qmax(int bits) { return (1L << (bits - 1)) - 1; }

double max_abs(const double* v, size_t n) {
    double m = 0.0;
    for (size_t i = 0; i < n; ++i) m = std::max(m, std::abs(v[i]));
    return m;
}

// Mean squared error of symmetric fake quantization at a given scale.
double sym_quant_mse(const double* v, size_t n, double s, long qmax) {
    double mse = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double q = std::round(v[i] / s);
        q = std::clamp(q, static_cast<double>(-qmax), static_cast<double>(qmax));
        const double e = q * s - v[i];
        mse += e * e;
    }
    return mse / static_cast<double>(n);
}

QuantParams omse_search(const double* v, size_t n, int bits) {
    check_bits(bits);
    const long qmax = sym_qmax(bits);
    QuantParams p;
    p.bits = bits;
    p.qmin = -qmax;
    p.qmax = qmax;
    const double smax = max_abs(v, n) / static_cast<double>(qmax);
    if (smax == 0.0) {
        p.scale = {1.0};
        return p;
    }
    double best_scale = smax;
    double best_mse = sym_quant_mse(v, n, smax, qmax);
    for (int i = 0; i < 100; ++i) {
        const double s = smax * (0.2 + 0.8 * i / 99.0);
        const double mse = sym_quant_mse(v, n, s, qmax);
        // Strict improvement only, scanned small-to-large: ties keep the
        // larger scale (smax was evaluated first and wins ties at the top).
        if (mse < best_mse) {
            best_mse = mse;
            best_scale = s;
        } else if (mse == best_mse && s > best_scale) {
            best_scale = s;
        }
    }
    p.scale = {best_scale};
    return p;
}

}  // namespace

Granularity granularity_from_string(const std::string& s) {
    if (s == "layer_wise") return Granularity::LayerWise;
    if (s == "channel_wise") return Granularity::ChannelWise;
    throw ConfigError("unknown granularity '" + s + "'");
}

QuantVariant variant_from_string(const std::string& s) {
    if (s == "vanilla") return QuantVariant::Vanilla;
    if (s == "omse") return QuantVariant::Omse;
    if (s == "clip_mse") return QuantVariant::ClipMse;
    if (s == "ocs") return QuantVariant::Ocs;
    throw ConfigError("unknown quantization variant '" + s + "'");
}

std::string to_string(Granularity g) {
    return g == Granularity::LayerWise ? "layer_wise" : "channel_wise";
}

std::string to_string(QuantVariant v) {
    switch (v) {
        case QuantVariant::Vanilla: return "vanilla";
        case QuantVariant::Omse: return "omse";
        case QuantVariant::ClipMse: return "clip_mse";
        case QuantVariant::Ocs: return "ocs";
    }
    return "?";
}

void QuantConfig::validate() const {
    if (bit_widths.empty()) throw ConfigError("quant: bit-width set is empty");
    for (int b : bit_widths) {
        if (b != kFloatBits && (b < 2 || b > 8)) {
            throw ConfigError("quant: bit-width " + std::to_string(b) +
                              " outside [2, 8] (32 = float sentinel)");
        }
    }
    if (variant == QuantVariant::Ocs &&
        (ocs_expand_ratio <= 0.0 || ocs_expand_ratio > 0.5)) {
        throw ConfigError("quant: ocs_expand_ratio must lie in (0, 0.5]");
    }
}

std::string QuantConfig::tag() const {
    if (variant == QuantVariant::Vanilla) return to_string(granularity);
    return to_string(variant);
}

QuantParams weight_scale_symmetric(const Tensor& w, int bits, Granularity granularity) {
    check_bits(bits);
    if (w.size() == 0) throw ContractError("weight_scale_symmetric: empty tensor");
    const long qmax = sym_qmax(bits);
    QuantParams p;
    p.bits = bits;
    p.qmin = -qmax;
    p.qmax = qmax;
    if (granularity == Granularity::LayerWise) {
        const double m = max_abs(w.data(), w.size());
        p.scale = {m > 0.0 ? m / static_cast<double>(qmax) : 1.0};
        p.zero_point = {0};
    } else {
        const int channels = w.dim(0);
        const size_t per = w.size() / static_cast<size_t>(channels);
        p.scale.resize(static_cast<size_t>(channels));
        p.zero_point.assign(static_cast<size_t>(channels), 0);
        for (int c = 0; c < channels; ++c) {
            const double m = max_abs(w.data() + c * per, per);
            p.scale[static_cast<size_t>(c)] = m > 0.0 ? m / static_cast<double>(qmax) : 1.0;
        }
    }
    return p;
}

QuantParams act_params_asymmetric(double act_min, double act_max, int bits) {
    check_bits(bits);
    if (act_max < act_min) throw ContractError("act_params_asymmetric: max < min");
    const long qmax = (1L << bits) - 1;
    QuantParams p;
    p.bits = bits;
    p.qmin = 0;
    p.qmax = qmax;
    if (act_max == act_min) {
        p.scale = {1.0};
        p.zero_point = {0};
        return p;
    }
    const double scale = (act_max - act_min) / static_cast<double>(qmax);
    long zp = std::lround(-act_min / scale);
    zp = std::clamp(zp, 0L, qmax);
    p.scale = {scale};
    p.zero_point = {static_cast<int>(zp)};
    return p;
}

QuantParams omse_scale(const Tensor& w, int bits) {
    if (w.size() == 0) throw ContractError("omse_scale: empty tensor");
    return omse_search(w.data(), w.size(), bits);
}

QuantParams omse_scale_per_channel(const Tensor& w, int bits) {
    if (w.size() == 0) throw ContractError("omse_scale: empty tensor");
    const int channels = w.dim(0);
    const size_t per = w.size() / static_cast<size_t>(channels);
    QuantParams p;
    p.bits = bits;
    p.qmax = sym_qmax(bits);
    p.qmin = -p.qmax;
    p.scale.resize(static_cast<size_t>(channels));
    p.zero_point.assign(static_cast<size_t>(channels), 0);
    for (int c = 0; c < channels; ++c) {
        p.scale[static_cast<size_t>(c)] = omse_search(w.data() + c * per, per, bits).scale[0];
    }
    return p;
}

QuantParams clip_mse_activation(const std::vector<double>& act_samples, int bits) {
    check_bits(bits);
    if (act_samples.empty()) throw ContractError("clip_mse_activation: no samples");
    double lo = act_samples[0], hi = act_samples[0];
    std::vector<double> mags(act_samples.size());
    for (size_t i = 0; i < act_samples.size(); ++i) {
        lo = std::min(lo, act_samples[i]);
        hi = std::max(hi, act_samples[i]);
        mags[i] = std::abs(act_samples[i]);
    }
    if (hi == lo) return act_params_asymmetric(lo, hi, bits);

    std::sort(mags.begin(), mags.end());
    const double t_lo = mags[static_cast<size_t>(0.80 * (mags.size() - 1))];
    const double t_hi = mags.back();

    double best_mse = -1.0;
    QuantParams best;
    for (int i = 0; i < 100; ++i) {
        const double t = t_lo + (t_hi - t_lo) * i / 99.0;
        const double clo = std::max(lo, -t);
        const double chi = std::min(hi, t);
        if (chi <= clo) continue;
        QuantParams p = act_params_asymmetric(clo, chi, bits);
        const double s = p.scale[0];
        const int zp = p.zero_point[0];
        double mse = 0.0;
        for (double v : act_samples) {
            double q = std::round(v / s + zp);
            q = std::clamp(q, static_cast<double>(p.qmin), static_cast<double>(p.qmax));
            const double e = (q - zp) * s - v;
            mse += e * e;
        }
        mse /= static_cast<double>(act_samples.size());
        // >= keeps scanning upward on ties: prefer the larger clip.
        if (best_mse < 0.0 || mse <= best_mse) {
            best_mse = mse;
            best = p;
        }
    }
    return best;
}

Tensor fake_quantize(Tape& tape, const Tensor& x, const QuantParams& p) {
    const size_t n = x.size();
    Tensor out = Tensor::zeros(x.shape());
    auto mask = std::make_shared<std::vector<uint8_t>>(n, 1);

    const size_t channels = p.per_channel() ? p.scale.size() : 1;
    const size_t per = n / channels;
    if (p.per_channel() && (x.rank() < 1 || static_cast<size_t>(x.dim(0)) != channels)) {
        throw DimensionError("fake_quantize: per-channel params for " +
                             std::to_string(channels) + " channels vs tensor " +
                             shape_str(x.shape()));
    }
    const double qlo = static_cast<double>(p.qmin);
    const double qhi = static_cast<double>(p.qmax);
    for (size_t c = 0; c < channels; ++c) {
        const double s = p.scale[c];
        const double zp = static_cast<double>(p.zero_point[c]);
        const double* src = x.data() + c * per;
        double* dst = out.data() + c * per;
        uint8_t* m = mask->data() + c * per;
        for (size_t i = 0; i < per; ++i) {
            const double q = std::round(src[i] / s + zp);
            if (q < qlo || q > qhi) {
                m[i] = 0;
                dst[i] = (std::clamp(q, qlo, qhi) - zp) * s;
            } else {
                dst[i] = (q - zp) * s;
            }
        }
    }
    if (tape.recording() && x.requires_grad()) {
        out.set_requires_grad(true);
        Tensor tx = x;
        tape.record("fake_quantize", out, [tx, mask, n](const Tensor& o) mutable {
            auto& g = tx.grad();
            for (size_t i = 0; i < n; ++i) {
                if ((*mask)[i]) g[i] += o.grad()[i];
            }
        });
    }
    return out;
}

namespace {

// Index of the next quantizable layer reachable through channel-preserving
// layers (relu / maxpool / flatten); -1 when none.
int consumer_index(const Model& model, size_t producer) {
    for (size_t j = producer + 1; j < model.layers.size(); ++j) {
        const Layer& l = model.layers[j];
        if (l.quantizable()) return static_cast<int>(j);
        if (l.kind != LayerKind::Relu && l.kind != LayerKind::MaxPool2d &&
            l.kind != LayerKind::Flatten) {
            return -1;
        }
    }
    return -1;
}

}  // namespace

Model ocs_split(const Model& model, double expand_ratio) {
    if (expand_ratio <= 0.0 || expand_ratio > 0.5) {
        throw ContractError("ocs_split: expand_ratio must lie in (0, 0.5]");
    }
    Model out = model.clone();
    for (size_t i = 0; i < out.layers.size(); ++i) {
        if (!out.layers[i].quantizable()) continue;
        const int consumer = consumer_index(out, i);
        if (consumer < 0) continue;  // last quantizable layer is never split

        Layer& prod = out.layers[i];
        const int channels = prod.weight.dim(0);
        const size_t per = prod.weight.size() / static_cast<size_t>(channels);
        const int k = static_cast<int>(std::ceil(expand_ratio * channels));

        // Largest-magnitude channels, stable order for determinism.
        std::vector<std::pair<double, int>> ranked(static_cast<size_t>(channels));
        for (int c = 0; c < channels; ++c) {
            ranked[static_cast<size_t>(c)] = {max_abs(prod.weight.data() + c * per, per), c};
        }
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            return a.first > b.first;
        });
        std::vector<int> split_channels;
        for (int j = 0; j < k; ++j) split_channels.push_back(ranked[static_cast<size_t>(j)].second);
        std::sort(split_channels.begin(), split_channels.end());

        // Producer: halve the chosen channels in place and append halved copies.
        Shape wshape = prod.weight.shape();
        wshape[0] = channels + k;
        Tensor new_w = Tensor::zeros(wshape, true);
        Tensor new_b = Tensor::zeros({channels + k}, true);
        std::copy_n(prod.weight.data(), prod.weight.size(), new_w.data());
        std::copy_n(prod.bias.data(), prod.bias.size(), new_b.data());
        for (size_t j = 0; j < split_channels.size(); ++j) {
            const int c = split_channels[j];
            double* orig = new_w.data() + c * per;
            double* copy = new_w.data() + (channels + static_cast<int>(j)) * per;
            for (size_t t = 0; t < per; ++t) {
                orig[t] *= 0.5;
                copy[t] = orig[t];
            }
            new_b.data()[c] *= 0.5;
            new_b.data()[channels + static_cast<int>(j)] = new_b.data()[c];
        }
        prod.weight = new_w;
        prod.bias = new_b;

        // Consumer: duplicate the input-channel weights of each split channel.
        Layer& cons = out.layers[static_cast<size_t>(consumer)];
        if (cons.kind == LayerKind::Conv2d) {
            const int f = cons.weight.dim(0), kh = cons.weight.dim(2), kw = cons.weight.dim(3);
            const size_t plane = static_cast<size_t>(kh) * kw;
            Tensor cw = Tensor::zeros({f, channels + k, kh, kw}, true);
            for (int of = 0; of < f; ++of) {
                const double* src = cons.weight.data() + static_cast<size_t>(of) * channels * plane;
                double* dst = cw.data() + static_cast<size_t>(of) * (channels + k) * plane;
                std::copy_n(src, static_cast<size_t>(channels) * plane, dst);
                for (size_t j = 0; j < split_channels.size(); ++j) {
                    std::copy_n(src + static_cast<size_t>(split_channels[j]) * plane, plane,
                                dst + (static_cast<size_t>(channels) + j) * plane);
                }
            }
            cons.weight = cw;
        } else {
            // Linear consumer; features are channel-major blocks after flatten.
            const int o = cons.weight.dim(0);
            const int in_feat = cons.weight.dim(1);
            const size_t block = static_cast<size_t>(in_feat) / channels;
            Tensor cw = Tensor::zeros({o, static_cast<int>((channels + k) * block)}, true);
            for (int r = 0; r < o; ++r) {
                const double* src = cons.weight.data() + static_cast<size_t>(r) * in_feat;
                double* dst = cw.data() + static_cast<size_t>(r) * (channels + k) * block;
                std::copy_n(src, static_cast<size_t>(in_feat), dst);
                for (size_t j = 0; j < split_channels.size(); ++j) {
                    std::copy_n(src + static_cast<size_t>(split_channels[j]) * block, block,
                                dst + (static_cast<size_t>(channels) + j) * block);
                }
            }
            cons.weight = cw;
        }
    }
    return Model(out.name + "+ocs", out.input_shape, out.num_classes, std::move(out.layers));
}

QuantizedView quantize_model_view(const Model& model, const QuantConfig& cfg, int bits,
                                  const Batch& calib) {
    cfg.validate();
    QuantizedView v;
    v.bits_ = bits;
    if (bits == kFloatBits) {
        v.model_ = &model;
        v.passthrough_ = true;
        return v;
    }
    check_bits(bits);
    v.passthrough_ = false;

    const Model* target = &model;
    if (cfg.variant == QuantVariant::Ocs) {
        v.ocs_model_ = std::make_shared<Model>(ocs_split(model, cfg.ocs_expand_ratio));
        target = v.ocs_model_.get();
    }
    v.model_ = target;

    const size_t n_layers = target->layers.size();
    v.weight_params_.resize(n_layers);
    v.act_params_.resize(n_layers);
    v.layer_quantized_.assign(n_layers, false);

    for (size_t i = 0; i < n_layers; ++i) {
        const Layer& l = target->layers[i];
        if (!l.quantizable()) continue;
        v.layer_quantized_[i] = true;
        if (cfg.variant == QuantVariant::Omse) {
            v.weight_params_[i] = cfg.granularity == Granularity::ChannelWise
                                      ? omse_scale_per_channel(l.weight, bits)
                                      : omse_scale(l.weight, bits);
        } else {
            v.weight_params_[i] = weight_scale_symmetric(l.weight, bits, cfg.granularity);
        }
    }

    v.act_quant_ = cfg.quantize_activations;
    if (cfg.quantize_activations) {
        if (calib.size() == 0) {
            throw ContractError("quantize_model_view: activation quantization needs a "
                                "non-empty calibration batch");
        }
        // Calibration pass: quantized weights, float activations; collect the
        // post-layer outputs at each quantizable site.
        Tape notape(false);
        Tensor cur = normalize_model_input(notape, *target, calib.images);
        for (size_t i = 0; i < n_layers; ++i) {
            const Layer& l = target->layers[i];
            if (v.layer_quantized_[i]) {
                Tensor wq = fake_quantize(notape, l.weight, v.weight_params_[i]);
                cur = l.forward(notape, cur, wq);
                if (cfg.variant == QuantVariant::ClipMse) {
                    v.act_params_[i] = clip_mse_activation(cur.vec(), bits);
                } else {
                    double lo = cur.data()[0], hi = cur.data()[0];
                    for (size_t t = 1; t < cur.size(); ++t) {
                        lo = std::min(lo, cur.data()[t]);
                        hi = std::max(hi, cur.data()[t]);
                    }
                    v.act_params_[i] = act_params_asymmetric(lo, hi, bits);
                }
            } else {
                cur = l.forward(notape, cur);
            }
        }
    }
    return v;
}

Tensor QuantizedView::forward(Tape& tape, const Tensor& x) const {
    if (passthrough_) return model_->forward(tape, x);
    Tensor cur = normalize_model_input(tape, *model_, x);
    for (size_t i = 0; i < model_->layers.size(); ++i) {
        const Layer& l = model_->layers[i];
        if (layer_quantized_[i]) {
            Tensor wq = fake_quantize(tape, l.weight, weight_params_[i]);
            cur = l.forward(tape, cur, wq);
            if (act_quant_) cur = fake_quantize(tape, cur, act_params_[i]);
        } else {
            cur = l.forward(tape, cur);
        }
    }
    return cur;
}

}  // namespace qal
