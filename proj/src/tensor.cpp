#include "qal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qal/errors.hpp"

namespace qal {

size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dimension must be positive, got shape " + shape_str(shape));
    }
    Tensor t;
    t.st_ = std::make_shared<Storage>();
    t.st_->shape = std::move(shape);
    t.st_->data.assign(shape_numel(t.st_->shape), 0.0);
    t.st_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.st_->data.begin(), t.st_->data.end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.st_ = std::make_shared<Storage>();
    t.st_->shape = std::move(shape);
    t.st_->data = std::move(data);
    t.st_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
    return st_->data[0];
}

std::vector<double>& Tensor::grad() {
    if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0);
    return st_->grad;
}

void Tensor::zero_grad() {
    if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    Tensor t;
    t.st_ = std::make_shared<Storage>();
    t.st_->shape = st_->shape;
    t.st_->data = st_->data;
    t.st_->requires_grad = st_->requires_grad;
    return t;
}

void Tape::record(std::string op, Tensor output, BackwardFn backward) {
    nodes_.push_back(Node{std::move(op), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    }
    if (!std::isfinite(loss.item())) {
        throw NumericError("loss is not finite at tape finalization");
    }
    // Interior (node output) gradients are transient per backward call; only
    // leaf tensors accumulate across calls.
    for (Node& n : nodes_) n.output.zero_grad();
    const_cast<Tensor&>(loss).grad()[0] = 1.0;

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->output.has_grad()) continue;  // no gradient flowed into this node
        for (double g : it->output.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient at node '" + it->op + "'");
            }
        }
        it->backward(it->output);
    }
}

namespace {

bool wants_grad(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape.recording()) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
    }
}

void axpy(std::vector<double>& dst, const double* src, size_t n, double c = 1.0) {
    for (size_t i = 0; i < n; ++i) dst[i] += c * src[i];
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ta = a, tb = b;
        tape.record("add", out, [ta, tb, n](const Tensor& o) mutable {
            if (ta.requires_grad()) axpy(ta.grad(), o.grad().data(), n);
            if (tb.requires_grad()) axpy(tb.grad(), o.grad().data(), n);
        });
    }
    return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ta = a, tb = b;
        tape.record("sub", out, [ta, tb, n](const Tensor& o) mutable {
            if (ta.requires_grad()) axpy(ta.grad(), o.grad().data(), n);
            if (tb.requires_grad()) axpy(tb.grad(), o.grad().data(), n, -1.0);
        });
    }
    return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ta = a, tb = b;
        tape.record("mul", out, [ta, tb, n](const Tensor& o) mutable {
            if (ta.requires_grad()) {
                auto& g = ta.grad();
                for (size_t i = 0; i < n; ++i) g[i] += o.grad()[i] * tb.data()[i];
            }
            if (tb.requires_grad()) {
                auto& g = tb.grad();
                for (size_t i = 0; i < n; ++i) g[i] += o.grad()[i] * ta.data()[i];
            }
        });
    }
    return out;
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = c * a.data()[i];
    if (wants_grad(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ta = a;
        tape.record("scale", out, [ta, c, n](const Tensor& o) mutable {
            axpy(ta.grad(), o.grad().data(), n, c);
        });
    }
    return out;
}

Tensor add_const(Tape& tape, const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
    if (wants_grad(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ta = a;
        tape.record("add_const", out, [ta, n](const Tensor& o) mutable {
            axpy(ta.grad(), o.grad().data(), n);
        });
    }
    return out;
}

Tensor sub_from_const(Tape& tape, double c, const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = c - a.data()[i];
    if (wants_grad(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ta = a;
        tape.record("sub_from_const", out, [ta, n](const Tensor& o) mutable {
            axpy(ta.grad(), o.grad().data(), n, -1.0);
        });
    }
    return out;
}

Tensor square(Tape& tape, const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * a.data()[i];
    if (wants_grad(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ta = a;
        tape.record("square", out, [ta, n](const Tensor& o) mutable {
            auto& g = ta.grad();
            for (size_t i = 0; i < n; ++i) g[i] += 2.0 * ta.data()[i] * o.grad()[i];
        });
    }
    return out;
}

Tensor sum_all(Tape& tape, const Tensor& a) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a.data()[i];
    Tensor out = Tensor::scalar(s);
    if (wants_grad(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ta = a;
        const size_t n = a.size();
        tape.record("sum_all", out, [ta, n](const Tensor& o) mutable {
            const double g = o.grad()[0];
            auto& ga = ta.grad();
            for (size_t i = 0; i < n; ++i) ga[i] += g;
        });
    }
    return out;
}

Tensor mean_all(Tape& tape, const Tensor& a) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a.data()[i];
    const double inv = 1.0 / static_cast<double>(a.size());
    Tensor out = Tensor::scalar(s * inv);
    if (wants_grad(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ta = a;
        const size_t n = a.size();
        tape.record("mean_all", out, [ta, n, inv](const Tensor& o) mutable {
            const double g = o.grad()[0] * inv;
            auto& ga = ta.grad();
            for (size_t i = 0; i < n; ++i) ga[i] += g;
        });
    }
    return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor tx = x;
        tape.record("relu", out, [tx, n](const Tensor& o) mutable {
            auto& g = tx.grad();
            for (size_t i = 0; i < n; ++i) {
                if (tx.data()[i] > 0.0) g[i] += o.grad()[i];
            }
        });
    }
    return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor out = Tensor::from_data(std::move(shape), x.vec());
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor tx = x;
        const size_t n = x.size();
        tape.record("reshape", out, [tx, n](const Tensor& o) mutable {
            axpy(tx.grad(), o.grad().data(), n);
        });
    }
    return out;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    const double* ad = a.data();
    const double* bd = b.data();
    double* od = out.data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            const double* brow = bd + p * n;
            double* orow = od + i * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    if (wants_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ta = a, tb = b;
        tape.record("matmul", out, [ta, tb, m, k, n](const Tensor& o) mutable {
            const double* g = o.grad().data();
            if (ta.requires_grad()) {
                auto& ga = ta.grad();  // ga += g . b^T
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double gv = g[i * n + j];
                        for (int p = 0; p < k; ++p) ga[i * k + p] += gv * tb.data()[p * n + j];
                    }
            }
            if (tb.requires_grad()) {
                auto& gb = tb.grad();  // gb += a^T . g
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        const double av = ta.data()[i * k + p];
                        for (int j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                    }
            }
        });
    }
    return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(w.shape()));
    }
    const int n = x.dim(0), d = x.dim(1), o = w.dim(0);
    if (bias.size() != static_cast<size_t>(o)) {
        throw DimensionError("linear: bias size " + std::to_string(bias.size()) +
                             " != out features " + std::to_string(o));
    }
    Tensor out = Tensor::zeros({n, o});
    const double* xd = x.data();
    const double* wd = w.data();
    double* od = out.data();
    for (int i = 0; i < n; ++i) {
        const double* xr = xd + i * d;
        double* orow = od + i * o;
        for (int j = 0; j < o; ++j) {
            const double* wr = wd + j * d;
            double s = bias.data()[j];
            for (int p = 0; p < d; ++p) s += xr[p] * wr[p];
            orow[j] = s;
        }
    }
    if (wants_grad(tape, {&x, &w, &bias})) {
        out.set_requires_grad(true);
        Tensor tx = x, tw = w, tb = bias;
        tape.record("linear", out, [tx, tw, tb, n, d, o](const Tensor& ot) mutable {
            const double* g = ot.grad().data();
            if (tx.requires_grad()) {
                auto& gx = tx.grad();  // gx += g . w
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < o; ++j) {
                        const double gv = g[i * o + j];
                        const double* wr = tw.data() + j * d;
                        for (int p = 0; p < d; ++p) gx[i * d + p] += gv * wr[p];
                    }
            }
            if (tw.requires_grad()) {
                auto& gw = tw.grad();  // gw += g^T . x
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < o; ++j) {
                        const double gv = g[i * o + j];
                        const double* xr = tx.data() + i * d;
                        for (int p = 0; p < d; ++p) gw[j * d + p] += gv * xr[p];
                    }
            }
            if (tb.requires_grad()) {
                auto& gb = tb.grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < o; ++j) gb[j] += g[i * o + j];
            }
        });
    }
    return out;
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int padding) {
    if (x.rank() != 4 || w.rank() != 4) {
        throw DimensionError("conv2d: expected 4-d input and weight, got " +
                             shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int f = w.dim(0), wc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (c != wc) {
        throw DimensionError("conv2d: input channels " + std::to_string(c) +
                             " != kernel channels " + std::to_string(wc));
    }
    if (stride < 1) throw ContractError("conv2d: stride must be positive");
    if (padding < 0) throw ContractError("conv2d: padding must be non-negative");
    if (kh > h + 2 * padding || kw > wd + 2 * padding) {
        throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                             " larger than padded input " + std::to_string(h + 2 * padding) + "x" +
                             std::to_string(wd + 2 * padding));
    }
    if (bias.size() != static_cast<size_t>(f)) {
        throw DimensionError("conv2d: bias size mismatch");
    }
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (wd + 2 * padding - kw) / stride + 1;

    Tensor out = Tensor::zeros({n, f, oh, ow});
    const double* xd = x.data();
    const double* wdp = w.data();
    double* od = out.data();
    for (int in = 0; in < n; ++in) {
        for (int of = 0; of < f; ++of) {
            double* oplane = od + ((in * f + of) * oh) * ow;
            const double b = bias.data()[of];
            for (int i = 0; i < oh * ow; ++i) oplane[i] = b;
            for (int ic = 0; ic < c; ++ic) {
                const double* xplane = xd + ((in * c + ic) * h) * wd;
                const double* wplane = wdp + ((of * c + ic) * kh) * kw;
                for (int r = 0; r < kh; ++r) {
                    for (int s = 0; s < kw; ++s) {
                        const double wv = wplane[r * kw + s];
                        if (wv == 0.0) continue;
                        for (int y = 0; y < oh; ++y) {
                            const int iy = y * stride - padding + r;
                            if (iy < 0 || iy >= h) continue;
                            const double* xrow = xplane + iy * wd;
                            double* orow = oplane + y * ow;
                            for (int xcol = 0; xcol < ow; ++xcol) {
                                const int ix = xcol * stride - padding + s;
                                if (ix < 0 || ix >= wd) continue;
                                orow[xcol] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }

    if (wants_grad(tape, {&x, &w, &bias})) {
        out.set_requires_grad(true);
        Tensor tx = x, tw = w, tb = bias;
        tape.record("conv2d", out,
                    [tx, tw, tb, n, c, h, wd, f, kh, kw, oh, ow, stride, padding](const Tensor& ot) mutable {
            const double* g = ot.grad().data();
            const bool need_x = tx.requires_grad();
            const bool need_w = tw.requires_grad();
            const bool need_b = tb.requires_grad();
            double* gx = need_x ? tx.grad().data() : nullptr;
            double* gw = need_w ? tw.grad().data() : nullptr;
            double* gb = need_b ? tb.grad().data() : nullptr;
            for (int in = 0; in < n; ++in) {
                for (int of = 0; of < f; ++of) {
                    const double* gplane = g + ((in * f + of) * oh) * ow;
                    if (need_b) {
                        double s = 0.0;
                        for (int i = 0; i < oh * ow; ++i) s += gplane[i];
                        gb[of] += s;
                    }
                    if (!need_x && !need_w) continue;
                    for (int ic = 0; ic < c; ++ic) {
                        const double* xplane = tx.data() + ((in * c + ic) * h) * wd;
                        const double* wplane = tw.data() + ((of * c + ic) * kh) * kw;
                        double* gxplane = need_x ? gx + ((in * c + ic) * h) * wd : nullptr;
                        double* gwplane = need_w ? gw + ((of * c + ic) * kh) * kw : nullptr;
                        for (int r = 0; r < kh; ++r) {
                            for (int s = 0; s < kw; ++s) {
                                const double wv = wplane[r * kw + s];
                                double gwacc = 0.0;
                                for (int y = 0; y < oh; ++y) {
                                    const int iy = y * stride - padding + r;
                                    if (iy < 0 || iy >= h) continue;
                                    const double* xrow = xplane + iy * wd;
                                    double* gxrow = need_x ? gxplane + iy * wd : nullptr;
                                    const double* grow = gplane + y * ow;
                                    for (int xcol = 0; xcol < ow; ++xcol) {
                                        const int ix = xcol * stride - padding + s;
                                        if (ix < 0 || ix >= wd) continue;
                                        const double gv = grow[xcol];
                                        if (need_w) gwacc += gv * xrow[ix];
                                        if (need_x) gxrow[ix] += gv * wv;
                                    }
                                }
                                if (need_w) gwplane[r * kw + s] += gwacc;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor maxpool2d(Tape& tape, const Tensor& x, int pool) {
    if (x.rank() != 4) throw DimensionError("maxpool2d: expected 4-d input");
    if (pool < 1) throw ContractError("maxpool2d: pool must be positive");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (pool > h || pool > w) throw DimensionError("maxpool2d: window larger than input");
    const int oh = (h - pool) / pool + 1;
    const int ow = (w - pool) / pool + 1;
    Tensor out = Tensor::zeros({n, c, oh, ow});
    auto argmax = std::make_shared<std::vector<int>>(out.size());
    const double* xd = x.data();
    double* od = out.data();
    size_t oi = 0;
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
            const double* plane = xd + ((in * c + ic) * h) * w;
            const int plane_off = ((in * c + ic) * h) * w;
            for (int y = 0; y < oh; ++y) {
                for (int xcol = 0; xcol < ow; ++xcol, ++oi) {
                    double best = plane[(y * pool) * w + xcol * pool];
                    int best_idx = (y * pool) * w + xcol * pool;
                    for (int r = 0; r < pool; ++r) {
                        for (int s = 0; s < pool; ++s) {
                            const int idx = (y * pool + r) * w + xcol * pool + s;
                            if (plane[idx] > best) {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    od[oi] = best;
                    (*argmax)[oi] = plane_off + best_idx;
                }
            }
        }
    }
    if (wants_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor tx = x;
        tape.record("maxpool2d", out, [tx, argmax](const Tensor& o) mutable {
            auto& g = tx.grad();
            for (size_t i = 0; i < o.size(); ++i) g[(*argmax)[i]] += o.grad()[i];
        });
    }
    return out;
}

std::vector<double> softmax_row(const double* logits, int n) {
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    std::vector<double> p(static_cast<size_t>(n));
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        p[static_cast<size_t>(i)] = std::exp(logits[i] - mx);
        sum += p[static_cast<size_t>(i)];
    }
    for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] /= sum;
    return p;
}

namespace {

Tensor cross_entropy_impl(Tape& tape, const Tensor& logits, const std::vector<int>& labels,
                          double smooth, const char* op) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [N x C]");
    const int n = logits.dim(0), c = logits.dim(1);
    if (static_cast<size_t>(n) != labels.size()) {
        throw DimensionError("cross_entropy: batch " + std::to_string(n) + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    if (n < 1) throw ContractError("cross_entropy: empty batch");
    for (int lab : labels) {
        if (lab < 0 || lab >= c) {
            throw ContractError("cross_entropy: label " + std::to_string(lab) +
                                " out of range [0, " + std::to_string(c) + ")");
        }
    }
    // Per row: loss = -sum_k t_k * (logit_k - max - log sum exp).
    auto probs = std::make_shared<std::vector<double>>(logits.vec().size());
    double total = 0.0;
    const double uniform = smooth / static_cast<double>(c);
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + i * c;
        double mx = row[0];
        for (int k = 1; k < c; ++k) mx = std::max(mx, row[k]);
        double sum = 0.0;
        for (int k = 0; k < c; ++k) sum += std::exp(row[k] - mx);
        const double lse = mx + std::log(sum);
        double row_loss = 0.0;
        for (int k = 0; k < c; ++k) {
            const double t = uniform + (k == labels[static_cast<size_t>(i)] ? 1.0 - smooth : 0.0);
            if (t != 0.0) row_loss -= t * (row[k] - lse);
            (*probs)[static_cast<size_t>(i * c + k)] = std::exp(row[k] - lse);
        }
        total += row_loss;
    }
    Tensor out = Tensor::scalar(total / n);
    if (wants_grad(tape, {&logits})) {
        out.set_requires_grad(true);
        Tensor tl = logits;
        auto labs = std::make_shared<std::vector<int>>(labels);
        tape.record(op, out, [tl, probs, labs, n, c, smooth](const Tensor& o) mutable {
            const double g = o.grad()[0] / n;
            const double uniform = smooth / static_cast<double>(c);
            auto& gl = tl.grad();
            for (int i = 0; i < n; ++i) {
                for (int k = 0; k < c; ++k) {
                    const double t =
                        uniform + (k == (*labs)[static_cast<size_t>(i)] ? 1.0 - smooth : 0.0);
                    gl[i * c + k] += g * ((*probs)[static_cast<size_t>(i * c + k)] - t);
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels) {
    return cross_entropy_impl(tape, logits, labels, 0.0, "cross_entropy");
}

Tensor cross_entropy_smoothed(Tape& tape, const Tensor& logits, const std::vector<int>& labels,
                              double smooth_factor) {
    if (smooth_factor < 0.0 || smooth_factor > 1.0) {
        throw ContractError("smooth_factor must lie in [0, 1]");
    }
    return cross_entropy_impl(tape, logits, labels, smooth_factor, "cross_entropy_smoothed");
}

std::vector<double> hvp_central(
    const std::function<std::vector<double>(const std::vector<double>&)>& grad_fn,
    const std::vector<double>& theta, const std::vector<double>& v, double eps) {
    if (eps <= 0.0) throw ContractError("hvp: eps must be positive");
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm == 0.0) throw ContractError("hvp: direction vector must be non-zero");
    if (theta.size() != v.size()) throw DimensionError("hvp: dimension mismatch");

    std::vector<double> plus(theta), minus(theta);
    for (size_t i = 0; i < theta.size(); ++i) {
        plus[i] += eps * v[i];
        minus[i] -= eps * v[i];
    }
    std::vector<double> gp = grad_fn(plus);
    std::vector<double> gm = grad_fn(minus);
    std::vector<double> out(theta.size());
    for (size_t i = 0; i < theta.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * eps);
    return out;
}

}  // namespace qal
