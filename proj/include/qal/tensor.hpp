#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace qal {

using Shape = std::vector<int>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense f64 tensor with shared storage. Copies are shallow; clone() is deep.
// Gradients live next to the data so parameter handles can be passed around
// freely while the trainer accumulates into them.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return st_ != nullptr; }
    const Shape& shape() const { return st_->shape; }
    size_t size() const { return st_->data.size(); }
    int dim(int i) const { return st_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(st_->shape.size()); }

    double* data() { return st_->data.data(); }
    const double* data() const { return st_->data.data(); }
    std::vector<double>& vec() { return st_->data; }
    const std::vector<double>& vec() const { return st_->data; }

    double item() const;  // scalar tensors only

    bool requires_grad() const { return st_->requires_grad; }
    void set_requires_grad(bool v) { st_->requires_grad = v; }

    bool has_grad() const { return !st_->grad.empty(); }
    // Allocates a zero gradient buffer on first touch.
    std::vector<double>& grad();
    const std::vector<double>& grad() const { return st_->grad; }
    void zero_grad();

    Tensor clone() const;  // deep copy of data; gradient buffer is not carried over
    bool same_storage(const Tensor& other) const { return st_ == other.st_; }

private:
    struct Storage {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;  // empty until touched
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> st_;
};

// Recorded reverse-mode tape. Nodes are appended in execution order, which is
// already a topological order; backward() visits them exactly once in reverse.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    using BackwardFn = std::function<void(const Tensor& out)>;
    void record(std::string op, Tensor output, BackwardFn backward);

    // Seeds d(loss)/d(loss) = 1 and runs all backward rules in reverse order.
    // Gradients accumulate; the caller owns resetting them between steps.
    void backward(const Tensor& loss);

private:
    struct Node {
        std::string op;
        Tensor output;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    bool recording_;
};

// --- differentiable operations -------------------------------------------
// Every op computes its forward result and, when the tape is recording and a
// gradient path exists, records a backward rule.

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor add_const(Tape& tape, const Tensor& a, double c);
// c - a, used for penalty terms of the form (alpha - L).
Tensor sub_from_const(Tape& tape, double c, const Tensor& a);
Tensor square(Tape& tape, const Tensor& a);
Tensor sum_all(Tape& tape, const Tensor& a);
Tensor mean_all(Tape& tape, const Tensor& a);
Tensor relu(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// y = x . w^T + bias, x: [N x D], w: [O x D], bias: [O].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias);

// Cross-correlation conv. x: [N,C,H,W], w: [F,C,kH,kW], bias: [F].
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int padding);

// Non-overlapping max pooling with window = stride = pool.
Tensor maxpool2d(Tape& tape, const Tensor& x, int pool);

// Mean over the batch of -log softmax(logits)[label]; max-subtraction keeps
// it finite for logits up to at least 1e4 in magnitude.
Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels);

// Cross entropy against (1-s) * one_hot + s/n uniform targets.
Tensor cross_entropy_smoothed(Tape& tape, const Tensor& logits,
                              const std::vector<int>& labels, double smooth_factor);

// Softmax probabilities (forward only, not recorded).
std::vector<double> softmax_row(const double* logits, int n);

// Central-difference Hessian-vector product of a scalar function given its
// gradient oracle: (g(theta + eps v) - g(theta - eps v)) / (2 eps).
std::vector<double> hvp_central(
    const std::function<std::vector<double>(const std::vector<double>&)>& grad_fn,
    const std::vector<double>& theta, const std::vector<double>& v, double eps);

}  // namespace qal
