#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qal/data.hpp"
#include "qal/tensor.hpp"

namespace qal {

enum class LayerKind { Conv2d, Linear, Relu, MaxPool2d, Flatten };

std::string layer_kind_name(LayerKind kind);

struct Layer {
    LayerKind kind;
    Tensor weight;  // conv: [F,C,kH,kW]; linear: [O,I]
    Tensor bias;
    int stride = 1;
    int padding = 0;
    int pool = 2;

    bool quantizable() const { return kind == LayerKind::Conv2d || kind == LayerKind::Linear; }
    bool has_params() const { return quantizable(); }
    int out_channels() const;  // conv filters / linear out features

    // Runs the layer; `weight` substitutes this->weight when defined (the
    // quantized views pass fake-quantized weights through here).
    Tensor forward(Tape& tape, const Tensor& x, const Tensor& weight = Tensor()) const;
};

// Ordered layer stack. Construction runs a symbolic shape pass over
// input_shape so inconsistent stacks fail fast.
struct Model {
    std::string name;
    Shape input_shape;  // without batch dimension
    int num_classes = 0;
    std::vector<Layer> layers;

    Model() = default;
    Model(std::string name, Shape input_shape, int num_classes, std::vector<Layer> layers);

    Tensor forward(Tape& tape, const Tensor& x) const;

    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    size_t parameter_count() const;
    void zero_grads();
    Model clone() const;

    // Flattened parameter vector handling, in named_parameters() order.
    std::vector<double> flatten_parameters() const;
    void load_flat_parameters(const std::vector<double>& flat);
};

// Flattens [N,C,H,W] input when the first layer is linear.
Tensor normalize_model_input(Tape& tape, const Model& model, const Tensor& x);

Model build_miniconv(int in_channels, int image_size, int num_classes, uint64_t seed);
Model build_mlp(int in_dim, const std::vector<int>& hidden, int num_classes, uint64_t seed);

// --- optimizers ------------------------------------------------------------

enum class OptKind { Sgd, Adam };

struct OptimizerConfig {
    OptKind kind = OptKind::Sgd;
    double learning_rate = 0.01;
    double momentum = 0.0;   // sgd only
    double beta1 = 0.9;      // adam
    double beta2 = 0.999;    // adam
    double epsilon = 1e-8;   // adam
};

// Owns per-parameter moment buffers for a fixed parameter list.
class OptimizerState {
public:
    OptimizerState() = default;
    OptimizerState(OptimizerConfig cfg, std::vector<Tensor> params);

    // Applies one update from the accumulated gradients, then zeroes them.
    // A parameter with no gradient buffer is a contract violation.
    void step();

    int step_count() const { return step_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    OptimizerConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;  // adam moments / sgd velocity
    int step_ = 0;
};

void optimizer_step(Model& model, OptimizerState& state);

// --- checkpoints ------------------------------------------------------------
// Little-endian binary: magic "QALB", version u32, name length+bytes, layer
// count u32, then per parameter: name length+bytes, rank u32, dims u64 each,
// raw f64 values. Round-trips bit-exactly.

void save_checkpoint(const Model& model, const std::string& path);
void load_checkpoint(Model& model, const std::string& path);

// CE gradient of the model at its current parameters on a batch, flattened.
std::vector<double> ce_gradient_flat(Model& model, const Batch& batch);

// Central-difference Hessian-vector product of the CE loss over the batch;
// parameters are restored exactly afterwards.
std::vector<double> hvp_finite_difference(Model& model, const Batch& batch,
                                          const std::vector<double>& v, double eps);

}  // namespace qal
