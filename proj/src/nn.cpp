#include "qal/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "qal/errors.hpp"
#include "qal/rng.hpp"

namespace qal {

std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Linear: return "linear";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool2d: return "maxpool2d";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

int Layer::out_channels() const {
    if (!quantizable()) throw ContractError("out_channels: layer has no channels");
    return weight.dim(0);
}

namespace {

// Symbolic shape pass; throws if consecutive layers do not compose.
Shape infer_shapes(const Shape& input_shape, const std::vector<Layer>& layers,
                   const std::string& name) {
    Shape cur = input_shape;  // without batch
    for (size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        const std::string where = name + " layer " + std::to_string(i) + " (" +
                                  layer_kind_name(l.kind) + ")";
        switch (l.kind) {
            case LayerKind::Conv2d: {
                if (cur.size() != 3) throw DimensionError(where + ": expected CxHxW input");
                if (l.weight.dim(1) != cur[0]) {
                    throw DimensionError(where + ": input channels " + std::to_string(cur[0]) +
                                         " != kernel channels " + std::to_string(l.weight.dim(1)));
                }
                const int kh = l.weight.dim(2), kw = l.weight.dim(3);
                const int h = (cur[1] + 2 * l.padding - kh) / l.stride + 1;
                const int w = (cur[2] + 2 * l.padding - kw) / l.stride + 1;
                if (h < 1 || w < 1) throw DimensionError(where + ": output collapses");
                cur = {l.weight.dim(0), h, w};
                break;
            }
            case LayerKind::Linear: {
                if (cur.size() != 1) throw DimensionError(where + ": expected flat input");
                if (l.weight.dim(1) != cur[0]) {
                    throw DimensionError(where + ": input dim " + std::to_string(cur[0]) +
                                         " != weight in-features " + std::to_string(l.weight.dim(1)));
                }
                cur = {l.weight.dim(0)};
                break;
            }
            case LayerKind::Relu:
                break;
            case LayerKind::MaxPool2d: {
                if (cur.size() != 3) throw DimensionError(where + ": expected CxHxW input");
                const int h = (cur[1] - l.pool) / l.pool + 1;
                const int w = (cur[2] - l.pool) / l.pool + 1;
                if (h < 1 || w < 1) throw DimensionError(where + ": output collapses");
                cur = {cur[0], h, w};
                break;
            }
            case LayerKind::Flatten: {
                int n = 1;
                for (int d : cur) n *= d;
                cur = {n};
                break;
            }
        }
    }
    return cur;
}

}  // namespace

Tensor Layer::forward(Tape& tape, const Tensor& x, const Tensor& weight_override) const {
    const Tensor& w = weight_override.defined() ? weight_override : weight;
    switch (kind) {
        case LayerKind::Conv2d:
            return conv2d(tape, x, w, bias, stride, padding);
        case LayerKind::Linear:
            return linear(tape, x, w, bias);
        case LayerKind::Relu:
            return relu(tape, x);
        case LayerKind::MaxPool2d:
            return maxpool2d(tape, x, pool);
        case LayerKind::Flatten: {
            int n = 1;
            for (int i = 1; i < x.rank(); ++i) n *= x.dim(i);
            return reshape(tape, x, {x.dim(0), n});
        }
    }
    throw ContractError("unknown layer kind");
}

Model::Model(std::string name_, Shape input_shape_, int num_classes_, std::vector<Layer> layers_)
    : name(std::move(name_)),
      input_shape(std::move(input_shape_)),
      num_classes(num_classes_),
      layers(std::move(layers_)) {
    const Shape out = infer_shapes(input_shape, layers, name);
    if (out != Shape{num_classes}) {
        throw DimensionError(name + ": stack produces " + shape_str(out) + ", expected [" +
                             std::to_string(num_classes) + "]");
    }
    if (parameter_count() == 0) throw ContractError(name + ": model has no parameters");
}

Tensor normalize_model_input(Tape& tape, const Model& model, const Tensor& x) {
    // Linear-first models accept [N,C,H,W] input via an implicit flatten.
    if (!model.layers.empty() && model.layers.front().kind == LayerKind::Linear && x.rank() > 2) {
        int n = 1;
        for (int i = 1; i < x.rank(); ++i) n *= x.dim(i);
        return reshape(tape, x, {x.dim(0), n});
    }
    return x;
}

Tensor Model::forward(Tape& tape, const Tensor& x) const {
    Tensor cur = normalize_model_input(tape, *this, x);
    for (const Layer& l : layers) cur = l.forward(tape, cur);
    return cur;
}

std::vector<Tensor> Model::parameters() const {
    std::vector<Tensor> out;
    for (const Layer& l : layers) {
        if (!l.has_params()) continue;
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t i = 0; i < layers.size(); ++i) {
        if (!layers[i].has_params()) continue;
        out.emplace_back("layers." + std::to_string(i) + ".weight", layers[i].weight);
        out.emplace_back("layers." + std::to_string(i) + ".bias", layers[i].bias);
    }
    return out;
}

size_t Model::parameter_count() const {
    size_t n = 0;
    for (const Tensor& t : parameters()) n += t.size();
    return n;
}

void Model::zero_grads() {
    for (Tensor& t : parameters()) t.zero_grad();
}

Model Model::clone() const {
    Model m;
    m.name = name;
    m.input_shape = input_shape;
    m.num_classes = num_classes;
    m.layers.reserve(layers.size());
    for (const Layer& l : layers) {
        Layer c = l;
        if (l.weight.defined()) c.weight = l.weight.clone();
        if (l.bias.defined()) c.bias = l.bias.clone();
        m.layers.push_back(std::move(c));
    }
    return m;
}

std::vector<double> Model::flatten_parameters() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const Tensor& t : parameters()) flat.insert(flat.end(), t.vec().begin(), t.vec().end());
    return flat;
}

void Model::load_flat_parameters(const std::vector<double>& flat) {
    if (flat.size() != parameter_count()) {
        throw DimensionError("load_flat_parameters: size mismatch");
    }
    size_t off = 0;
    for (Tensor& t : parameters()) {
        std::copy_n(flat.begin() + static_cast<long>(off), t.size(), t.vec().begin());
        off += t.size();
    }
}

namespace {

Tensor kaiming_uniform(Shape shape, int fan_in, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    const double bound = std::sqrt(6.0 / fan_in);
    for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
    return t;
}

Tensor bias_uniform(int n, int fan_in, Rng& rng) {
    Tensor t = Tensor::zeros({n}, true);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
    return t;
}

Layer make_conv(int in_c, int out_c, int k, int stride, int padding, Rng& rng) {
    Layer l;
    l.kind = LayerKind::Conv2d;
    l.stride = stride;
    l.padding = padding;
    const int fan_in = in_c * k * k;
    l.weight = kaiming_uniform({out_c, in_c, k, k}, fan_in, rng);
    l.bias = bias_uniform(out_c, fan_in, rng);
    return l;
}

Layer make_linear(int in_d, int out_d, Rng& rng) {
    Layer l;
    l.kind = LayerKind::Linear;
    l.weight = kaiming_uniform({out_d, in_d}, in_d, rng);
    l.bias = bias_uniform(out_d, in_d, rng);
    return l;
}

Layer make_simple(LayerKind kind, int pool = 2) {
    Layer l;
    l.kind = kind;
    l.pool = pool;
    return l;
}

}  // namespace

Model build_miniconv(int in_channels, int image_size, int num_classes, uint64_t seed) {
    if (image_size < 8 || image_size % 4 != 0) {
        throw ContractError("build_miniconv: image size must be >= 8 and divisible by 4");
    }
    if (in_channels < 1 || num_classes < 2) {
        throw ContractError("build_miniconv: bad channel/class count");
    }
    Rng rng(seed);
    std::vector<Layer> layers;
    layers.push_back(make_conv(in_channels, 16, 3, 1, 1, rng));
    layers.push_back(make_simple(LayerKind::Relu));
    layers.push_back(make_simple(LayerKind::MaxPool2d, 2));
    layers.push_back(make_conv(16, 32, 3, 1, 1, rng));
    layers.push_back(make_simple(LayerKind::Relu));
    layers.push_back(make_simple(LayerKind::MaxPool2d, 2));
    layers.push_back(make_simple(LayerKind::Flatten));
    const int feat = 32 * (image_size / 4) * (image_size / 4);
    layers.push_back(make_linear(feat, num_classes, rng));
    return Model("miniconv", {in_channels, image_size, image_size}, num_classes,
                 std::move(layers));
}

Model build_mlp(int in_dim, const std::vector<int>& hidden, int num_classes, uint64_t seed) {
    if (in_dim < 1 || num_classes < 2) throw ContractError("build_mlp: dims must be positive");
    for (int h : hidden) {
        if (h < 1) throw ContractError("build_mlp: hidden dims must be positive");
    }
    Rng rng(seed);
    std::vector<Layer> layers;
    int cur = in_dim;
    for (int h : hidden) {
        layers.push_back(make_linear(cur, h, rng));
        layers.push_back(make_simple(LayerKind::Relu));
        cur = h;
    }
    layers.push_back(make_linear(cur, num_classes, rng));
    return Model("mlp", {in_dim}, num_classes, std::move(layers));
}

OptimizerState::OptimizerState(OptimizerConfig cfg, std::vector<Tensor> params)
    : cfg_(cfg), params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].size(), 0.0);
        if (cfg_.kind == OptKind::Adam) v_[i].assign(params_[i].size(), 0.0);
    }
}

void OptimizerState::step() {
    ++step_;
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        if (!p.has_grad()) {
            throw ContractError("optimizer step: parameter " + std::to_string(pi) +
                                " has no gradient");
        }
        const std::vector<double>& g = p.grad();
        double* x = p.data();
        if (cfg_.kind == OptKind::Sgd) {
            if (cfg_.momentum != 0.0) {
                auto& vel = m_[pi];
                for (size_t i = 0; i < g.size(); ++i) {
                    vel[i] = cfg_.momentum * vel[i] + g[i];
                    x[i] -= cfg_.learning_rate * vel[i];
                }
            } else {
                for (size_t i = 0; i < g.size(); ++i) x[i] -= cfg_.learning_rate * g[i];
            }
        } else {
            auto& m = m_[pi];
            auto& v = v_[pi];
            const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
            const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
            for (size_t i = 0; i < g.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                x[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            }
        }
        p.zero_grad();
    }
}

void optimizer_step(Model& model, OptimizerState& state) {
    (void)model;
    state.step();
}

namespace {

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("checkpoint: unexpected end of file");
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<long>(s.size()));
}

std::string read_string(std::ifstream& in) {
    const uint32_t len = read_pod<uint32_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw FormatError("checkpoint: unexpected end of file in string");
    return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write("QALB", 4);
    write_pod<uint32_t>(out, 1u);  // format version
    write_string(out, model.name);
    write_pod<uint32_t>(out, static_cast<uint32_t>(model.layers.size()));
    for (const auto& [pname, t] : model.named_parameters()) {
        write_string(out, pname);
        write_pod<uint32_t>(out, static_cast<uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) write_pod<uint64_t>(out, static_cast<uint64_t>(t.dim(i)));
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<long>(t.size() * sizeof(double)));
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

void load_checkpoint(Model& model, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "QALB", 4) != 0) {
        throw FormatError("checkpoint: bad magic in " + path);
    }
    const uint32_t version = read_pod<uint32_t>(in);
    if (version != 1u) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const std::string name = read_string(in);
    const uint32_t layer_count = read_pod<uint32_t>(in);
    if (layer_count != model.layers.size()) {
        throw FormatError("checkpoint: layer count " + std::to_string(layer_count) +
                          " != model layer count " + std::to_string(model.layers.size()));
    }
    auto named = model.named_parameters();
    size_t loaded = 0;
    while (in.peek() != EOF) {
        const std::string pname = read_string(in);
        const uint32_t rank = read_pod<uint32_t>(in);
        Shape shape;
        size_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            const auto d = read_pod<uint64_t>(in);
            shape.push_back(static_cast<int>(d));
            numel *= d;
        }
        auto it = std::find_if(named.begin(), named.end(),
                               [&](const auto& p) { return p.first == pname; });
        if (it == named.end()) {
            throw FormatError("checkpoint: parameter '" + pname + "' not present in model");
        }
        if (it->second.shape() != shape) {
            throw FormatError("checkpoint: parameter '" + pname + "' has shape " +
                              shape_str(shape) + ", model expects " +
                              shape_str(it->second.shape()));
        }
        in.read(reinterpret_cast<char*>(it->second.data()),
                static_cast<long>(numel * sizeof(double)));
        if (!in) throw FormatError("checkpoint: truncated data for '" + pname + "'");
        ++loaded;
    }
    if (loaded != named.size()) {
        throw FormatError("checkpoint: " + std::to_string(loaded) + " parameters loaded, model has " +
                          std::to_string(named.size()));
    }
    model.name = name;
}

std::vector<double> ce_gradient_flat(Model& model, const Batch& batch) {
    model.zero_grads();
    Tape tape;
    Tensor logits = model.forward(tape, batch.images);
    Tensor loss = cross_entropy(tape, logits, batch.labels);
    tape.backward(loss);
    std::vector<double> flat;
    flat.reserve(model.parameter_count());
    for (Tensor& p : model.parameters()) {
        auto& g = p.grad();
        flat.insert(flat.end(), g.begin(), g.end());
    }
    model.zero_grads();
    return flat;
}

std::vector<double> hvp_finite_difference(Model& model, const Batch& batch,
                                          const std::vector<double>& v, double eps) {
    if (eps <= 0.0) throw ContractError("hvp_finite_difference: eps must be positive");
    const std::vector<double> theta = model.flatten_parameters();
    auto grad_at = [&](const std::vector<double>& t) {
        model.load_flat_parameters(t);
        return ce_gradient_flat(model, batch);
    };
    std::vector<double> out;
    try {
        out = hvp_central(grad_at, theta, v, eps);
    } catch (...) {
        model.load_flat_parameters(theta);
        throw;
    }
    model.load_flat_parameters(theta);
    return out;
}

}  // namespace qal
