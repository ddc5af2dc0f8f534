#pragma once

#include <memory>
#include <string>
#include <vector>

#include "qal/data.hpp"
#include "qal/nn.hpp"
#include "qal/tensor.hpp"

namespace qal {

// Bit-width 32 is the "no quantization" sentinel everywhere.
constexpr int kFloatBits = 32;

enum class Granularity { LayerWise, ChannelWise };
enum class QuantVariant { Vanilla, Omse, ClipMse, Ocs };

Granularity granularity_from_string(const std::string& s);
QuantVariant variant_from_string(const std::string& s);
std::string to_string(Granularity g);
std::string to_string(QuantVariant v);

struct QuantConfig {
    std::vector<int> bit_widths{8, 7, 6, 5};
    Granularity granularity = Granularity::LayerWise;
    QuantVariant variant = QuantVariant::Vanilla;
    double ocs_expand_ratio = 0.25;
    bool quantize_activations = true;

    void validate() const;
    // Scheme tag used in report rows, e.g. "layer_wise" or "ocs".
    std::string tag() const;
};

// One quantizer: scale/zero-point pairs (one entry layer-wise, one per output
// channel otherwise) plus the integer grid bounds.
struct QuantParams {
    std::vector<double> scale{1.0};
    std::vector<int> zero_point{0};
    int bits = 8;
    long qmin = -127;
    long qmax = 127;

    bool per_channel() const { return scale.size() > 1; }
};

// Symmetric weight quantizer: scale = max|w| / (2^(b-1) - 1) over the tensor
// or per output channel; all-zero tensors/channels get scale 1.
QuantParams weight_scale_symmetric(const Tensor& w, int bits, Granularity granularity);

// Asymmetric activation quantizer over an observed range.
QuantParams act_params_asymmetric(double act_min, double act_max, int bits);

// MSE-optimal symmetric scale: 100-point grid over [0.2, 1.0] * s_max,
// ties broken toward the larger scale.
QuantParams omse_scale(const Tensor& w, int bits);
QuantParams omse_scale_per_channel(const Tensor& w, int bits);

// MSE-optimal clipped asymmetric activation quantizer: 100 clip thresholds
// between the 80th-percentile |value| and max |value|.
QuantParams clip_mse_activation(const std::vector<double>& act_samples, int bits);

// Round-clamp-dequantize with half-away-from-zero rounding. Backward is the
// straight-through estimator: pass where the pre-clamp integer is inside
// [qmin, qmax], block outside. Per-channel params index dim 0.
Tensor fake_quantize(Tape& tape, const Tensor& x, const QuantParams& p);

// Outlier channel splitting: duplicates-and-halves the largest output
// channels and patches the consumer so the float function is unchanged.
Model ocs_split(const Model& model, double expand_ratio);

// Evaluation view of a model at one bit-width. Weights are fake-quantized on
// the fly from the live float tensors, so gradients reach them through the
// STE; activation ranges are frozen from the calibration batch.
class QuantizedView {
public:
    Tensor forward(Tape& tape, const Tensor& x) const;
    int bits() const { return bits_; }
    const Model& target_model() const { return *model_; }

private:
    friend QuantizedView quantize_model_view(const Model& model, const QuantConfig& cfg,
                                             int bits, const Batch& calib);
    const Model* model_ = nullptr;
    std::shared_ptr<Model> ocs_model_;  // owns the widened model for the ocs variant
    int bits_ = kFloatBits;
    bool passthrough_ = true;
    bool act_quant_ = false;
    std::vector<QuantParams> weight_params_;  // indexed by layer
    std::vector<QuantParams> act_params_;
    std::vector<bool> layer_quantized_;
};

QuantizedView quantize_model_view(const Model& model, const QuantConfig& cfg, int bits,
                                  const Batch& calib);

}  // namespace qal
