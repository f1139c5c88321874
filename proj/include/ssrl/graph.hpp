#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssrl/checkpoint.hpp"
#include "ssrl/gemm.hpp"
#include "ssrl/rng.hpp"
#include "ssrl/tensor.hpp"

namespace ssrl {

enum class LayerKind {
    Input,
    Conv1d,
    Conv2d,
    BatchNorm,
    Relu,
    MaxPool2d,
    GlobalMaxPool1d,
    Dense,
    Dropout,
    Softmax,
    Flatten,
    Concat,
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Input: return "input";
        case LayerKind::Conv1d: return "conv1d";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool2d: return "maxpool2d";
        case LayerKind::GlobalMaxPool1d: return "globalmaxpool1d";
        case LayerKind::Dense: return "dense";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::Softmax: return "softmax";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Concat: return "concat";
    }
    return "?";
}

/// Layer description. `name` scopes the layer's parameter tensors, so two
/// graphs that build the same layer names share checkpoints losslessly.
struct LayerSpec {
    LayerKind kind = LayerKind::Input;
    std::string name;
    std::size_t units = 0;   // conv1d/conv2d/dense output width
    std::size_t kernel = 0;  // conv kernel extent (square for conv2d)
    std::size_t stride = 1;
    std::size_t pool = 0;    // maxpool2d window (stride == window)
    double rate = 0.0;       // dropout rate in [0, 1)

    void validate() const {
        switch (kind) {
            case LayerKind::Conv1d:
            case LayerKind::Conv2d:
                if (units < 1 || kernel < 1 || stride < 1)
                    throw ShapeError(std::string(layer_kind_name(kind)) + " '" + name +
                                     "': units and kernel must be >= 1");
                break;
            case LayerKind::Dense:
                if (units < 1) throw ShapeError("dense '" + name + "': units must be >= 1");
                break;
            case LayerKind::MaxPool2d:
                if (pool < 1) throw ShapeError("maxpool2d '" + name + "': window must be >= 1");
                break;
            case LayerKind::Dropout:
                if (rate < 0.0 || rate >= 1.0)
                    throw ShapeError("dropout '" + name + "': rate must lie in [0, 1)");
                break;
            default: break;
        }
    }
};

enum class Mode {
    Train,     // dropout active, batchnorm uses batch stats and updates running stats
    TrainDet,  // dropout identity, batch stats, no state updates; pure function
    Infer,     // dropout identity, running stats; pure function
};

/// Static per-node shape, batch dimension excluded. Spatial extents of 1D
/// nodes are data-dependent and tracked per forward pass instead.
struct NodeShape {
    enum Kind { C1d, C2d, Flat } kind = Flat;
    std::size_t c = 0, h = 0, w = 0;  // C2d
    std::size_t features = 0;         // Flat
    std::size_t channels() const { return kind == Flat ? features : c; }
};

template <typename Real>
struct Param {
    std::string name;
    Tensor<Real> value;
    Tensor<Real> grad;
    bool trainable = true;
};

template <typename Real>
class Graph;

/// Per-run activation and cotangent storage; reusable across steps.
template <typename Real>
struct Workspace {
    std::vector<Tensor<Real>> act;
    std::vector<Tensor<Real>> cot;
    std::vector<char> cot_set;
    std::vector<std::vector<std::int64_t>> argmax;  // pooling layers
    std::vector<Tensor<Real>> aux;                  // dropout masks, batchnorm xhat
    std::vector<std::vector<double>> chan_stats;    // batchnorm inverse stddev per channel
    std::vector<Real> cols;                         // im2col scratch
    Mode mode = Mode::Infer;

    void ensure(std::size_t nodes) {
        act.resize(nodes);
        cot.resize(nodes);
        cot_set.assign(nodes, 0);
        argmax.resize(nodes);
        aux.resize(nodes);
        chan_stats.resize(nodes);
    }

    void clear_cotangents() { std::fill(cot_set.begin(), cot_set.end(), 0); }

    Tensor<Real>& cotangent(std::size_t node, const Shape& shape) {
        if (!cot_set[node]) {
            if (cot[node].shape() != shape) cot[node].resize(shape);
            else cot[node].zero();
            cot_set[node] = 1;
        }
        return cot[node];
    }
};

/// Ordered-layer network with named parameter tensors. Nodes are added in
/// topological order; forward walks them in index order and backward in
/// reverse.
template <typename Real>
class Graph {
public:
    struct Node {
        LayerSpec spec;
        std::vector<int> inputs;
        NodeShape shape;
        int w = -1, b = -1, gamma = -1, beta = -1, rmean = -1, rvar = -1;
    };

    int add_input(const std::string& name, std::size_t channels) {
        Node n;
        n.spec.kind = LayerKind::Input;
        n.spec.name = name;
        n.shape = NodeShape{NodeShape::C1d, channels, 0, 0, 0};
        input_ids_[name] = static_cast<int>(nodes_.size());
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int add_input2d(const std::string& name, std::size_t channels, std::size_t h, std::size_t w) {
        Node n;
        n.spec.kind = LayerKind::Input;
        n.spec.name = name;
        n.shape = NodeShape{NodeShape::C2d, channels, h, w, 0};
        input_ids_[name] = static_cast<int>(nodes_.size());
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int add(LayerSpec spec, std::vector<int> inputs) {
        spec.validate();
        for (int i : inputs)
            if (i < 0 || i >= static_cast<int>(nodes_.size()))
                throw ShapeError("layer '" + spec.name + "': bad input node id");
        Node n;
        n.spec = std::move(spec);
        n.inputs = std::move(inputs);
        n.shape = infer_shape(n);
        allocate_params(n);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int add(LayerSpec spec, int input) { return add(std::move(spec), std::vector<int>{input}); }

    void mark_output(const std::string& head, int node) { output_ids_[head] = node; }
    void mark_embedding(int node) { embedding_id_ = node; }

    const std::vector<Node>& nodes() const { return nodes_; }
    std::vector<Param<Real>>& params() { return params_; }
    const std::vector<Param<Real>>& params() const { return params_; }
    int input_id(const std::string& name) const { return input_ids_.at(name); }
    int output_id(const std::string& head) const { return output_ids_.at(head); }
    const std::map<std::string, int>& outputs() const { return output_ids_; }
    int embedding_id() const { return embedding_id_; }
    std::size_t output_classes(const std::string& head) const {
        return nodes_[static_cast<std::size_t>(output_ids_.at(head))].shape.features;
    }

    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;

    bool has_stochastic_dropout() const {
        for (const auto& n : nodes_)
            if (n.spec.kind == LayerKind::Dropout && n.spec.rate > 0.0) return true;
        return false;
    }

    /// He-uniform fan-in initialization for conv/dense weights; batchnorm
    /// gamma=1, beta=0; biases 0. Per-parameter streams are derived from the
    /// parameter name so initialization is independent of build order.
    void init_params(std::uint64_t seed) {
        for (auto& p : params_) {
            std::uint64_t h = 1469598103934665603ULL;
            for (const char ch : p.name) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
            Rng rng = make_rng(derive_seed(seed, h));
            if (p.name.ends_with("/w")) {
                const std::size_t fan_in = p.value.size() / p.value.extent(0);
                const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
                for (auto& v : p.value.values()) v = static_cast<Real>(uniform_real(rng, -limit, limit));
            } else if (p.name.ends_with("/gamma") || p.name.ends_with("/rvar")) {
                p.value.fill(Real(1));
            } else {
                p.value.zero();
            }
        }
    }

    void zero_grads() {
        for (auto& p : params_) p.grad.zero();
    }

    TensorMap state_dict() const {
        TensorMap out;
        for (const auto& p : params_) out.emplace(p.name, p.value.template cast<float>());
        return out;
    }

    /// Copies tensors with matching names into this graph's parameters.
    /// Returns the number of parameters loaded; shape conflicts throw.
    std::size_t load_state_dict(const TensorMap& state) {
        std::size_t loaded = 0;
        for (auto& p : params_) {
            auto it = state.find(p.name);
            if (it == state.end()) continue;
            if (it->second.shape() != p.value.shape())
                throw ShapeError("checkpoint tensor '" + p.name + "' has shape " +
                                 shape_str(it->second.shape()) + ", expected " +
                                 shape_str(p.value.shape()));
            p.value = it->second.template cast<Real>();
            ++loaded;
        }
        return loaded;
    }

    void forward(Workspace<Real>& ws, const std::map<std::string, const Tensor<Real>*>& inputs,
                 Mode mode, std::uint64_t dropout_seed = 0) {
        ws.ensure(nodes_.size());
        ws.mode = mode;
        Rng drop_rng = make_rng(derive_seed(dropout_seed, 0x64726f70ULL));
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            Node& n = nodes_[i];
            if (n.spec.kind == LayerKind::Input) {
                auto it = inputs.find(n.spec.name);
                if (it == inputs.end()) throw ShapeError("missing input '" + n.spec.name + "'");
                check_input(n, *it->second);
                ws.act[i] = *it->second;  // copy keeps the graph pure w.r.t. caller data
            } else {
                forward_node(ws, static_cast<int>(i), mode, drop_rng);
            }
        }
    }

    /// Mean cross-entropy of the head's logits against integer labels, fused
    /// with the softmax: the logits cotangent (softmax(x) - onehot)/N is
    /// written directly, bypassing the softmax node's backward.
    double loss_xent(Workspace<Real>& ws, const std::string& head, std::span<const int> labels) {
        const int out_node = output_ids_.at(head);
        const Node& sm = nodes_[static_cast<std::size_t>(out_node)];
        if (sm.spec.kind != LayerKind::Softmax)
            throw ShapeError("head '" + head + "' does not end in softmax");
        const int logits_node = sm.inputs[0];
        const Tensor<Real>& logits = ws.act[static_cast<std::size_t>(logits_node)];
        const std::size_t n = logits.extent(0), c = logits.extent(1);
        if (labels.size() != n)
            throw ShapeError("loss: batch " + std::to_string(n) + " but " +
                             std::to_string(labels.size()) + " labels");
        Tensor<Real>& dl = ws.cotangent(static_cast<std::size_t>(logits_node), logits.shape());
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const int y = labels[i];
            if (y < 0 || static_cast<std::size_t>(y) >= c)
                throw ShapeError("label " + std::to_string(y) + " out of range [0," + std::to_string(c) + ")");
            const Real* row = logits.data() + i * c;
            double mx = row[0];
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
            double sum = 0.0;
            for (std::size_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
            const double lse = mx + std::log(sum);
            total += lse - static_cast<double>(row[static_cast<std::size_t>(y)]);
            Real* drow = dl.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) {
                const double p = std::exp(static_cast<double>(row[j]) - mx) / sum;
                drow[j] += static_cast<Real>((p - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0)) /
                                             static_cast<double>(n));
            }
        }
        return total / static_cast<double>(n);
    }

    /// Test-oriented scalar objective: sum of all entries of a node, with
    /// optional fixed weights. Seeds the node's cotangent.
    double loss_sum(Workspace<Real>& ws, int node, const Tensor<Real>* weights = nullptr) {
        const Tensor<Real>& a = ws.act[static_cast<std::size_t>(node)];
        Tensor<Real>& d = ws.cotangent(static_cast<std::size_t>(node), a.shape());
        double total = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double w = weights ? static_cast<double>((*weights)[i]) : 1.0;
            total += w * static_cast<double>(a[i]);
            d[i] += static_cast<Real>(w);
        }
        return total;
    }

    void backward(Workspace<Real>& ws) {
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            if (!ws.cot_set[static_cast<std::size_t>(i)]) continue;
            const Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.spec.kind == LayerKind::Input) continue;
            backward_node(ws, i);
        }
    }

private:
    std::vector<Node> nodes_;
    std::vector<Param<Real>> params_;
    std::map<std::string, int> input_ids_;
    std::map<std::string, int> output_ids_;
    int embedding_id_ = -1;

    int new_param(const std::string& name, Shape shape, bool trainable) {
        for (const auto& p : params_)
            if (p.name == name) throw ShapeError("duplicate parameter name '" + name + "'");
        Param<Real> p;
        p.name = name;
        p.value = Tensor<Real>(shape);
        p.grad = Tensor<Real>(std::move(shape));
        p.trainable = trainable;
        params_.push_back(std::move(p));
        return static_cast<int>(params_.size()) - 1;
    }

    const NodeShape& in_shape(const Node& n, std::size_t idx = 0) const {
        return nodes_[static_cast<std::size_t>(n.inputs[idx])].shape;
    }

    NodeShape infer_shape(const Node& n) {
        const LayerSpec& s = n.spec;
        auto need_inputs = [&](std::size_t k) {
            if (n.inputs.size() != k)
                throw ShapeError(std::string(layer_kind_name(s.kind)) + " '" + s.name + "': expected " +
                                 std::to_string(k) + " input(s)");
        };
        switch (s.kind) {
            case LayerKind::Input: return {};
            case LayerKind::Conv1d: {
                need_inputs(1);
                if (in_shape(n).kind != NodeShape::C1d)
                    throw ShapeError("conv1d '" + s.name + "': input is not a 1D feature map");
                return NodeShape{NodeShape::C1d, s.units, 0, 0, 0};
            }
            case LayerKind::Conv2d: {
                need_inputs(1);
                const NodeShape& is = in_shape(n);
                if (is.kind != NodeShape::C2d)
                    throw ShapeError("conv2d '" + s.name + "': input is not a 2D feature map");
                if (is.h < s.kernel || is.w < s.kernel)
                    throw ShapeError("conv2d '" + s.name + "': input " + std::to_string(is.h) + "x" +
                                     std::to_string(is.w) + " smaller than kernel");
                return NodeShape{NodeShape::C2d, s.units, (is.h - s.kernel) / s.stride + 1,
                                 (is.w - s.kernel) / s.stride + 1, 0};
            }
            case LayerKind::BatchNorm:
            case LayerKind::Relu:
            case LayerKind::Dropout:
            case LayerKind::Softmax: {
                need_inputs(1);
                return in_shape(n);
            }
            case LayerKind::MaxPool2d: {
                need_inputs(1);
                const NodeShape& is = in_shape(n);
                if (is.kind != NodeShape::C2d)
                    throw ShapeError("maxpool2d '" + s.name + "': input is not a 2D feature map");
                if (is.h < s.pool || is.w < s.pool)
                    throw ShapeError("maxpool2d '" + s.name + "': window exceeds input");
                return NodeShape{NodeShape::C2d, is.c, is.h / s.pool, is.w / s.pool, 0};
            }
            case LayerKind::GlobalMaxPool1d: {
                need_inputs(1);
                if (in_shape(n).kind != NodeShape::C1d)
                    throw ShapeError("globalmaxpool1d '" + s.name + "': input is not a 1D feature map");
                return NodeShape{NodeShape::Flat, 0, 0, 0, in_shape(n).c};
            }
            case LayerKind::Dense: {
                need_inputs(1);
                if (in_shape(n).kind != NodeShape::Flat)
                    throw ShapeError("dense '" + s.name + "': input is not flat");
                return NodeShape{NodeShape::Flat, 0, 0, 0, s.units};
            }
            case LayerKind::Flatten: {
                need_inputs(1);
                const NodeShape& is = in_shape(n);
                if (is.kind != NodeShape::C2d)
                    throw ShapeError("flatten '" + s.name + "': input is not a 2D feature map");
                return NodeShape{NodeShape::Flat, 0, 0, 0, is.c * is.h * is.w};
            }
            case LayerKind::Concat: {
                if (n.inputs.size() < 2) throw ShapeError("concat '" + s.name + "': needs >= 2 inputs");
                std::size_t c = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    if (in_shape(n, k).kind != NodeShape::C1d)
                        throw ShapeError("concat '" + s.name + "': inputs must be 1D feature maps");
                    c += in_shape(n, k).c;
                }
                return NodeShape{NodeShape::C1d, c, 0, 0, 0};
            }
        }
        throw ShapeError("unknown layer kind");
    }

    void allocate_params(Node& n) {
        const LayerSpec& s = n.spec;
        switch (s.kind) {
            case LayerKind::Conv1d:
                n.w = new_param(s.name + "/w", {s.units, in_shape(n).c, s.kernel}, true);
                n.b = new_param(s.name + "/b", {s.units}, true);
                break;
            case LayerKind::Conv2d:
                n.w = new_param(s.name + "/w", {s.units, in_shape(n).c, s.kernel, s.kernel}, true);
                n.b = new_param(s.name + "/b", {s.units}, true);
                break;
            case LayerKind::Dense:
                n.w = new_param(s.name + "/w", {s.units, in_shape(n).features}, true);
                n.b = new_param(s.name + "/b", {s.units}, true);
                break;
            case LayerKind::BatchNorm: {
                const std::size_t c = in_shape(n).channels();
                n.gamma = new_param(s.name + "/gamma", {c}, true);
                n.beta = new_param(s.name + "/beta", {c}, true);
                n.rmean = new_param(s.name + "/rmean", {c}, false);
                n.rvar = new_param(s.name + "/rvar", {c}, false);
                params_[static_cast<std::size_t>(n.gamma)].value.fill(Real(1));
                params_[static_cast<std::size_t>(n.rvar)].value.fill(Real(1));
                break;
            }
            default: break;
        }
    }

    void check_input(const Node& n, const Tensor<Real>& t) const {
        if (n.shape.kind == NodeShape::C1d) {
            if (t.rank() != 3 || t.extent(1) != n.shape.c)
                throw ShapeError("input '" + n.spec.name + "': expected [N," + std::to_string(n.shape.c) +
                                 ",L], got " + shape_str(t.shape()));
        } else if (n.shape.kind == NodeShape::C2d) {
            if (t.rank() != 4 || t.extent(1) != n.shape.c || t.extent(2) != n.shape.h ||
                t.extent(3) != n.shape.w)
                throw ShapeError("input '" + n.spec.name + "': expected [N," + std::to_string(n.shape.c) +
                                 "," + std::to_string(n.shape.h) + "," + std::to_string(n.shape.w) +
                                 "], got " + shape_str(t.shape()));
        }
    }

    // ---- forward ----

    void forward_node(Workspace<Real>& ws, int id, Mode mode, Rng& drop_rng) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        const Tensor<Real>& x = ws.act[static_cast<std::size_t>(n.inputs.empty() ? 0 : n.inputs[0])];
        Tensor<Real>& y = ws.act[static_cast<std::size_t>(id)];
        switch (n.spec.kind) {
            case LayerKind::Conv1d: conv1d_fwd(ws, n, x, y); break;
            case LayerKind::Conv2d: conv2d_fwd(ws, n, x, y); break;
            case LayerKind::BatchNorm: bn_fwd(ws, static_cast<std::size_t>(id), n, x, y, mode); break;
            case LayerKind::Relu: relu_fwd(x, y); break;
            case LayerKind::MaxPool2d: maxpool_fwd(ws, static_cast<std::size_t>(id), n, x, y); break;
            case LayerKind::GlobalMaxPool1d: gpool_fwd(ws, static_cast<std::size_t>(id), x, y); break;
            case LayerKind::Dense: dense_fwd(n, x, y); break;
            case LayerKind::Dropout: dropout_fwd(ws, static_cast<std::size_t>(id), n, x, y, mode, drop_rng); break;
            case LayerKind::Softmax: softmax_fwd(x, y); break;
            case LayerKind::Flatten: y = Tensor<Real>({x.extent(0), n.shape.features}, x.values()); break;
            case LayerKind::Concat: concat_fwd(ws, n, y); break;
            case LayerKind::Input: break;
        }
    }

    void im2col_1d(const Tensor<Real>& x, std::size_t sample, std::size_t k, std::size_t stride,
                   std::size_t lo, std::vector<Real>& cols) const {
        const std::size_t c = x.extent(1), l = x.extent(2);
        cols.resize(c * k * lo);
        const Real* xs = x.data() + sample * c * l;
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t t = 0; t < k; ++t) {
                Real* dst = cols.data() + (ch * k + t) * lo;
                const Real* src = xs + ch * l + t;
                if (stride == 1)
                    std::copy(src, src + lo, dst);
                else
                    for (std::size_t j = 0; j < lo; ++j) dst[j] = src[j * stride];
            }
    }

    void conv1d_fwd(Workspace<Real>& ws, const Node& n, const Tensor<Real>& x, Tensor<Real>& y) {
        const LayerSpec& s = n.spec;
        if (x.rank() != 3 || x.extent(1) != in_shape(n).c)
            throw ShapeError("conv1d '" + s.name + "': expected [N," + std::to_string(in_shape(n).c) +
                             ",L], got " + shape_str(x.shape()));
        const std::size_t nb = x.extent(0), l = x.extent(2);
        if (l < s.kernel)
            throw ShapeError("conv1d '" + s.name + "': input length " + std::to_string(l) +
                             " shorter than kernel " + std::to_string(s.kernel));
        const std::size_t lo = (l - s.kernel) / s.stride + 1;
        y.resize({nb, s.units, lo});
        const auto& w = params_[static_cast<std::size_t>(n.w)].value;
        const auto& b = params_[static_cast<std::size_t>(n.b)].value;
        for (std::size_t i = 0; i < nb; ++i) {
            im2col_1d(x, i, s.kernel, s.stride, lo, ws.cols);
            Real* out = y.data() + i * s.units * lo;
            gemm_nn(s.units, lo, w.size() / s.units, w.data(), ws.cols.data(), out);
            for (std::size_t u = 0; u < s.units; ++u) {
                const Real bv = b[u];
                Real* row = out + u * lo;
                for (std::size_t j = 0; j < lo; ++j) row[j] += bv;
            }
        }
    }

    void im2col_2d(const Tensor<Real>& x, std::size_t sample, std::size_t k, std::size_t stride,
                   std::size_t ho, std::size_t wo, std::vector<Real>& cols) const {
        const std::size_t c = x.extent(1), h = x.extent(2), w = x.extent(3);
        cols.resize(c * k * k * ho * wo);
        const Real* xs = x.data() + sample * c * h * w;
        std::size_t row = 0;
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t dy = 0; dy < k; ++dy)
                for (std::size_t dx = 0; dx < k; ++dx, ++row) {
                    Real* dst = cols.data() + row * ho * wo;
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        const Real* src = xs + ch * h * w + (oy * stride + dy) * w + dx;
                        if (stride == 1)
                            std::copy(src, src + wo, dst + oy * wo);
                        else
                            for (std::size_t ox = 0; ox < wo; ++ox) dst[oy * wo + ox] = src[ox * stride];
                    }
                }
    }

    void conv2d_fwd(Workspace<Real>& ws, const Node& n, const Tensor<Real>& x, Tensor<Real>& y) {
        const LayerSpec& s = n.spec;
        const NodeShape& is = in_shape(n);
        if (x.rank() != 4 || x.extent(1) != is.c || x.extent(2) != is.h || x.extent(3) != is.w)
            throw ShapeError("conv2d '" + s.name + "': expected [N," + std::to_string(is.c) + "," +
                             std::to_string(is.h) + "," + std::to_string(is.w) + "], got " +
                             shape_str(x.shape()));
        const std::size_t nb = x.extent(0), ho = n.shape.h, wo = n.shape.w;
        y.resize({nb, s.units, ho, wo});
        const auto& w = params_[static_cast<std::size_t>(n.w)].value;
        const auto& b = params_[static_cast<std::size_t>(n.b)].value;
        for (std::size_t i = 0; i < nb; ++i) {
            im2col_2d(x, i, s.kernel, s.stride, ho, wo, ws.cols);
            Real* out = y.data() + i * s.units * ho * wo;
            gemm_nn(s.units, ho * wo, w.size() / s.units, w.data(), ws.cols.data(), out);
            for (std::size_t u = 0; u < s.units; ++u) {
                const Real bv = b[u];
                Real* plane = out + u * ho * wo;
                for (std::size_t j = 0; j < ho * wo; ++j) plane[j] += bv;
            }
        }
    }

    void bn_fwd(Workspace<Real>& ws, std::size_t id, const Node& n, const Tensor<Real>& x,
                Tensor<Real>& y, Mode mode) {
        const std::size_t nb = x.extent(0);
        const std::size_t c = x.rank() >= 2 ? x.extent(1) : 1;
        const std::size_t spatial = x.size() / (nb * c);
        y.resize(x.shape());
        auto& gamma = params_[static_cast<std::size_t>(n.gamma)].value;
        auto& beta = params_[static_cast<std::size_t>(n.beta)].value;
        auto& rmean = params_[static_cast<std::size_t>(n.rmean)].value;
        auto& rvar = params_[static_cast<std::size_t>(n.rvar)].value;
        if (mode == Mode::Infer) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double inv = 1.0 / std::sqrt(static_cast<double>(rvar[ch]) + bn_epsilon);
                const double g = gamma[ch], bt = beta[ch], m = rmean[ch];
                for (std::size_t i = 0; i < nb; ++i) {
                    const Real* xr = x.data() + (i * c + ch) * spatial;
                    Real* yr = y.data() + (i * c + ch) * spatial;
                    for (std::size_t j = 0; j < spatial; ++j)
                        yr[j] = static_cast<Real>(g * ((static_cast<double>(xr[j]) - m) * inv) + bt);
                }
            }
            return;
        }
        if (nb < 2)
            throw NumericError("batchnorm '" + n.spec.name +
                               "': train mode requires batch size >= 2 (variance undefined)");
        Tensor<Real>& xhat = ws.aux[id];
        xhat.resize(x.shape());
        auto& invstd = ws.chan_stats[id];
        invstd.assign(c, 0.0);
        const double m_count = static_cast<double>(nb * spatial);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double sum = 0.0, sq = 0.0;
            for (std::size_t i = 0; i < nb; ++i) {
                const Real* xr = x.data() + (i * c + ch) * spatial;
                for (std::size_t j = 0; j < spatial; ++j) {
                    const double v = xr[j];
                    sum += v;
                    sq += v * v;
                }
            }
            const double mean = sum / m_count;
            const double var = std::max(0.0, sq / m_count - mean * mean);
            const double inv = 1.0 / std::sqrt(var + bn_epsilon);
            invstd[ch] = inv;
            const double g = gamma[ch], bt = beta[ch];
            for (std::size_t i = 0; i < nb; ++i) {
                const Real* xr = x.data() + (i * c + ch) * spatial;
                Real* hr = xhat.data() + (i * c + ch) * spatial;
                Real* yr = y.data() + (i * c + ch) * spatial;
                for (std::size_t j = 0; j < spatial; ++j) {
                    const double h = (static_cast<double>(xr[j]) - mean) * inv;
                    hr[j] = static_cast<Real>(h);
                    yr[j] = static_cast<Real>(g * h + bt);
                }
            }
            if (mode == Mode::Train) {
                rmean[ch] = static_cast<Real>((1.0 - bn_momentum) * static_cast<double>(rmean[ch]) +
                                              bn_momentum * mean);
                rvar[ch] = static_cast<Real>((1.0 - bn_momentum) * static_cast<double>(rvar[ch]) +
                                             bn_momentum * var);
            }
        }
    }

    static void relu_fwd(const Tensor<Real>& x, Tensor<Real>& y) {
        y.resize(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > Real(0) ? x[i] : Real(0);
    }

    void maxpool_fwd(Workspace<Real>& ws, std::size_t id, const Node& n, const Tensor<Real>& x,
                     Tensor<Real>& y) {
        const std::size_t p = n.spec.pool;
        const std::size_t nb = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
        if (h < p || w < p)
            throw ShapeError("maxpool2d '" + n.spec.name + "': window " + std::to_string(p) +
                             " exceeds input " + std::to_string(h) + "x" + std::to_string(w));
        const std::size_t ho = h / p, wo = w / p;
        y.resize({nb, c, ho, wo});
        auto& arg = ws.argmax[id];
        arg.assign(nb * c * ho * wo, 0);
        for (std::size_t i = 0; i < nb; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const Real* plane = x.data() + (i * c + ch) * h * w;
                for (std::size_t oy = 0; oy < ho; ++oy)
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        Real best = plane[oy * p * w + ox * p];
                        std::size_t besti = oy * p * w + ox * p;
                        for (std::size_t dy = 0; dy < p; ++dy)
                            for (std::size_t dx = 0; dx < p; ++dx) {
                                const std::size_t idx = (oy * p + dy) * w + ox * p + dx;
                                if (plane[idx] > best) {  // first index wins ties
                                    best = plane[idx];
                                    besti = idx;
                                }
                            }
                        const std::size_t o = ((i * c + ch) * ho + oy) * wo + ox;
                        y[o] = best;
                        arg[o] = static_cast<std::int64_t>(besti);
                    }
            }
    }

    void gpool_fwd(Workspace<Real>& ws, std::size_t id, const Tensor<Real>& x, Tensor<Real>& y) {
        const std::size_t nb = x.extent(0), c = x.extent(1), l = x.extent(2);
        y.resize({nb, c});
        auto& arg = ws.argmax[id];
        arg.assign(nb * c, 0);
        for (std::size_t i = 0; i < nb; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const Real* row = x.data() + (i * c + ch) * l;
                Real best = row[0];
                std::size_t besti = 0;
                for (std::size_t j = 1; j < l; ++j)
                    if (row[j] > best) {
                        best = row[j];
                        besti = j;
                    }
                y.at(i, ch) = best;
                arg[i * c + ch] = static_cast<std::int64_t>(besti);
            }
    }

    void dense_fwd(const Node& n, const Tensor<Real>& x, Tensor<Real>& y) {
        const auto& w = params_[static_cast<std::size_t>(n.w)].value;
        const auto& b = params_[static_cast<std::size_t>(n.b)].value;
        const std::size_t f = w.extent(1), u = w.extent(0);
        if (x.rank() != 2 || x.extent(1) != f)
            throw ShapeError("dense '" + n.spec.name + "': expected [N," + std::to_string(f) +
                             "], got " + shape_str(x.shape()));
        const std::size_t nb = x.extent(0);
        y.resize({nb, u});
        gemm_nt(nb, u, f, x.data(), w.data(), y.data());
        for (std::size_t i = 0; i < nb; ++i)
            for (std::size_t j = 0; j < u; ++j) y.at(i, j) += b[j];
    }

    void dropout_fwd(Workspace<Real>& ws, std::size_t id, const Node& n, const Tensor<Real>& x,
                     Tensor<Real>& y, Mode mode, Rng& drop_rng) {
        if (mode != Mode::Train || n.spec.rate <= 0.0) {
            y = x;
            return;
        }
        const double keep = 1.0 - n.spec.rate;
        Tensor<Real>& mask = ws.aux[id];
        mask.resize(x.shape());
        y.resize(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const Real m = uniform_real(drop_rng) < keep ? static_cast<Real>(1.0 / keep) : Real(0);
            mask[i] = m;
            y[i] = x[i] * m;
        }
    }

    static void softmax_fwd(const Tensor<Real>& x, Tensor<Real>& y) {
        const std::size_t nb = x.extent(0), c = x.extent(1);
        y.resize(x.shape());
        for (std::size_t i = 0; i < nb; ++i) {
            const Real* row = x.data() + i * c;
            double mx = row[0];
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
            double sum = 0.0;
            for (std::size_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
            Real* out = y.data() + i * c;
            for (std::size_t j = 0; j < c; ++j)
                out[j] = static_cast<Real>(std::exp(static_cast<double>(row[j]) - mx) / sum);
        }
    }

    void concat_fwd(Workspace<Real>& ws, const Node& n, Tensor<Real>& y) {
        const Tensor<Real>& first = ws.act[static_cast<std::size_t>(n.inputs[0])];
        const std::size_t nb = first.extent(0), l = first.extent(2);
        std::size_t ctotal = 0;
        for (int in : n.inputs) {
            const Tensor<Real>& t = ws.act[static_cast<std::size_t>(in)];
            if (t.extent(0) != nb || t.extent(2) != l)
                throw ShapeError("concat '" + n.spec.name + "': inputs disagree on batch or length");
            ctotal += t.extent(1);
        }
        y.resize({nb, ctotal, l});
        for (std::size_t i = 0; i < nb; ++i) {
            std::size_t coff = 0;
            for (int in : n.inputs) {
                const Tensor<Real>& t = ws.act[static_cast<std::size_t>(in)];
                const std::size_t c = t.extent(1);
                std::copy(t.data() + i * c * l, t.data() + (i + 1) * c * l,
                          y.data() + (i * ctotal + coff) * l);
                coff += c;
            }
        }
    }

    // ---- backward ----

    void backward_node(Workspace<Real>& ws, int id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        const Tensor<Real>& dy = ws.cot[static_cast<std::size_t>(id)];
        switch (n.spec.kind) {
            case LayerKind::Conv1d: conv1d_bwd(ws, n, dy); break;
            case LayerKind::Conv2d: conv2d_bwd(ws, n, dy); break;
            case LayerKind::BatchNorm: bn_bwd(ws, static_cast<std::size_t>(id), n, dy); break;
            case LayerKind::Relu: {
                const Tensor<Real>& x = ws.act[static_cast<std::size_t>(n.inputs[0])];
                Tensor<Real>& dx = ws.cotangent(static_cast<std::size_t>(n.inputs[0]), x.shape());
                for (std::size_t i = 0; i < x.size(); ++i)
                    if (x[i] > Real(0)) dx[i] += dy[i];
                break;
            }
            case LayerKind::MaxPool2d:
            case LayerKind::GlobalMaxPool1d: {
                const Tensor<Real>& x = ws.act[static_cast<std::size_t>(n.inputs[0])];
                Tensor<Real>& dx = ws.cotangent(static_cast<std::size_t>(n.inputs[0]), x.shape());
                const auto& arg = ws.argmax[static_cast<std::size_t>(id)];
                if (n.spec.kind == LayerKind::GlobalMaxPool1d) {
                    const std::size_t nb = x.extent(0), c = x.extent(1), l = x.extent(2);
                    for (std::size_t i = 0; i < nb * c; ++i)
                        dx[i * l + static_cast<std::size_t>(arg[i])] += dy[i];
                } else {
                    const std::size_t hw = x.extent(2) * x.extent(3);
                    const std::size_t planes = x.extent(0) * x.extent(1);
                    const std::size_t ohw = dy.size() / planes;
                    for (std::size_t pl = 0; pl < planes; ++pl)
                        for (std::size_t j = 0; j < ohw; ++j)
                            dx[pl * hw + static_cast<std::size_t>(arg[pl * ohw + j])] += dy[pl * ohw + j];
                }
                break;
            }
            case LayerKind::Dense: dense_bwd(ws, n, dy); break;
            case LayerKind::Dropout: {
                const Tensor<Real>& x = ws.act[static_cast<std::size_t>(n.inputs[0])];
                Tensor<Real>& dx = ws.cotangent(static_cast<std::size_t>(n.inputs[0]), x.shape());
                if (ws.mode == Mode::Train && n.spec.rate > 0.0) {
                    const Tensor<Real>& mask = ws.aux[static_cast<std::size_t>(id)];
                    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * mask[i];
                } else {
                    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i];
                }
                break;
            }
            case LayerKind::Softmax: {
                const Tensor<Real>& y = ws.act[static_cast<std::size_t>(id)];
                const Tensor<Real>& x = ws.act[static_cast<std::size_t>(n.inputs[0])];
                Tensor<Real>& dx = ws.cotangent(static_cast<std::size_t>(n.inputs[0]), x.shape());
                const std::size_t nb = y.extent(0), c = y.extent(1);
                for (std::size_t i = 0; i < nb; ++i) {
                    const Real* yr = y.data() + i * c;
                    const Real* dr = dy.data() + i * c;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < c; ++j) dot += static_cast<double>(yr[j]) * dr[j];
                    Real* dxr = dx.data() + i * c;
                    for (std::size_t j = 0; j < c; ++j)
                        dxr[j] += static_cast<Real>(yr[j] * (static_cast<double>(dr[j]) - dot));
                }
                break;
            }
            case LayerKind::Flatten: {
                const Tensor<Real>& x = ws.act[static_cast<std::size_t>(n.inputs[0])];
                Tensor<Real>& dx = ws.cotangent(static_cast<std::size_t>(n.inputs[0]), x.shape());
                for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i];
                break;
            }
            case LayerKind::Concat: {
                const std::size_t nb = dy.extent(0), ctotal = dy.extent(1), l = dy.extent(2);
                std::size_t coff = 0;
                for (int in : n.inputs) {
                    const Tensor<Real>& t = ws.act[static_cast<std::size_t>(in)];
                    Tensor<Real>& dx = ws.cotangent(static_cast<std::size_t>(in), t.shape());
                    const std::size_t c = t.extent(1);
                    for (std::size_t i = 0; i < nb; ++i)
                        for (std::size_t j = 0; j < c * l; ++j)
                            dx[i * c * l + j] += dy[(i * ctotal + coff) * l + j];
                    coff += c;
                }
                break;
            }
            case LayerKind::Input: break;
        }
    }

    void conv1d_bwd(Workspace<Real>& ws, const Node& n, const Tensor<Real>& dy) {
        const LayerSpec& s = n.spec;
        const Tensor<Real>& x = ws.act[static_cast<std::size_t>(n.inputs[0])];
        Tensor<Real>& dx = ws.cotangent(static_cast<std::size_t>(n.inputs[0]), x.shape());
        auto& w = params_[static_cast<std::size_t>(n.w)];
        auto& b = params_[static_cast<std::size_t>(n.b)];
        const std::size_t nb = x.extent(0), c = x.extent(1), l = x.extent(2);
        const std::size_t lo = dy.extent(2), ck = c * s.kernel;
        std::vector<Real> dcols(ck * lo);
        for (std::size_t i = 0; i < nb; ++i) {
            im2col_1d(x, i, s.kernel, s.stride, lo, ws.cols);
            const Real* dyn = dy.data() + i * s.units * lo;
            gemm_nt(s.units, ck, lo, dyn, ws.cols.data(), w.grad.data());
            for (std::size_t u = 0; u < s.units; ++u) {
                double acc = 0.0;
                const Real* row = dyn + u * lo;
                for (std::size_t j = 0; j < lo; ++j) acc += row[j];
                b.grad[u] += static_cast<Real>(acc);
            }
            std::fill(dcols.begin(), dcols.end(), Real(0));
            gemm_tn(s.units, lo, ck, w.value.data(), dyn, dcols.data());
            Real* dxs = dx.data() + i * c * l;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t t = 0; t < s.kernel; ++t) {
                    const Real* src = dcols.data() + (ch * s.kernel + t) * lo;
                    Real* dst = dxs + ch * l + t;
                    for (std::size_t j = 0; j < lo; ++j) dst[j * s.stride] += src[j];
                }
        }
    }

    void conv2d_bwd(Workspace<Real>& ws, const Node& n, const Tensor<Real>& dy) {
        const LayerSpec& s = n.spec;
        const Tensor<Real>& x = ws.act[static_cast<std::size_t>(n.inputs[0])];
        Tensor<Real>& dx = ws.cotangent(static_cast<std::size_t>(n.inputs[0]), x.shape());
        auto& w = params_[static_cast<std::size_t>(n.w)];
        auto& b = params_[static_cast<std::size_t>(n.b)];
        const std::size_t nb = x.extent(0), c = x.extent(1), h = x.extent(2), wd = x.extent(3);
        const std::size_t ho = dy.extent(2), wo = dy.extent(3), ckk = c * s.kernel * s.kernel;
        std::vector<Real> dcols(ckk * ho * wo);
        for (std::size_t i = 0; i < nb; ++i) {
            im2col_2d(x, i, s.kernel, s.stride, ho, wo, ws.cols);
            const Real* dyn = dy.data() + i * s.units * ho * wo;
            gemm_nt(s.units, ckk, ho * wo, dyn, ws.cols.data(), w.grad.data());
            for (std::size_t u = 0; u < s.units; ++u) {
                double acc = 0.0;
                const Real* plane = dyn + u * ho * wo;
                for (std::size_t j = 0; j < ho * wo; ++j) acc += plane[j];
                b.grad[u] += static_cast<Real>(acc);
            }
            std::fill(dcols.begin(), dcols.end(), Real(0));
            gemm_tn(s.units, ho * wo, ckk, w.value.data(), dyn, dcols.data());
            Real* dxs = dx.data() + i * c * h * wd;
            std::size_t row = 0;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t dyk = 0; dyk < s.kernel; ++dyk)
                    for (std::size_t dxk = 0; dxk < s.kernel; ++dxk, ++row) {
                        const Real* src = dcols.data() + row * ho * wo;
                        for (std::size_t oy = 0; oy < ho; ++oy) {
                            Real* dst = dxs + ch * h * wd + (oy * s.stride + dyk) * wd + dxk;
                            for (std::size_t ox = 0; ox < wo; ++ox)
                                dst[ox * s.stride] += src[oy * wo + ox];
                        }
                    }
        }
    }

    void bn_bwd(Workspace<Real>& ws, std::size_t id, const Node& n, const Tensor<Real>& dy) {
        const Tensor<Real>& x = ws.act[static_cast<std::size_t>(n.inputs[0])];
        Tensor<Real>& dx = ws.cotangent(static_cast<std::size_t>(n.inputs[0]), x.shape());
        auto& gamma = params_[static_cast<std::size_t>(n.gamma)];
        auto& beta = params_[static_cast<std::size_t>(n.beta)];
        const std::size_t nb = x.extent(0);
        const std::size_t c = x.rank() >= 2 ? x.extent(1) : 1;
        const std::size_t spatial = x.size() / (nb * c);
        if (ws.mode == Mode::Infer) {
            const auto& rvar = params_[static_cast<std::size_t>(n.rvar)].value;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double gi = static_cast<double>(gamma.value[ch]) /
                                  std::sqrt(static_cast<double>(rvar[ch]) + bn_epsilon);
                for (std::size_t i = 0; i < nb; ++i) {
                    const Real* dr = dy.data() + (i * c + ch) * spatial;
                    Real* dxr = dx.data() + (i * c + ch) * spatial;
                    for (std::size_t j = 0; j < spatial; ++j) dxr[j] += static_cast<Real>(gi * dr[j]);
                }
            }
            return;
        }
        const Tensor<Real>& xhat = ws.aux[id];
        const auto& invstd = ws.chan_stats[id];
        const double m_count = static_cast<double>(nb * spatial);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double dsum = 0.0, dhsum = 0.0;
            for (std::size_t i = 0; i < nb; ++i) {
                const Real* dr = dy.data() + (i * c + ch) * spatial;
                const Real* hr = xhat.data() + (i * c + ch) * spatial;
                for (std::size_t j = 0; j < spatial; ++j) {
                    dsum += dr[j];
                    dhsum += static_cast<double>(dr[j]) * hr[j];
                }
            }
            beta.grad[ch] += static_cast<Real>(dsum);
            gamma.grad[ch] += static_cast<Real>(dhsum);
            const double scale = static_cast<double>(gamma.value[ch]) * invstd[ch];
            for (std::size_t i = 0; i < nb; ++i) {
                const Real* dr = dy.data() + (i * c + ch) * spatial;
                const Real* hr = xhat.data() + (i * c + ch) * spatial;
                Real* dxr = dx.data() + (i * c + ch) * spatial;
                for (std::size_t j = 0; j < spatial; ++j)
                    dxr[j] += static_cast<Real>(
                        scale * (static_cast<double>(dr[j]) - (dsum + static_cast<double>(hr[j]) * dhsum) / m_count));
            }
        }
    }

    void dense_bwd(Workspace<Real>& ws, const Node& n, const Tensor<Real>& dy) {
        const Tensor<Real>& x = ws.act[static_cast<std::size_t>(n.inputs[0])];
        Tensor<Real>& dx = ws.cotangent(static_cast<std::size_t>(n.inputs[0]), x.shape());
        auto& w = params_[static_cast<std::size_t>(n.w)];
        auto& b = params_[static_cast<std::size_t>(n.b)];
        const std::size_t nb = x.extent(0), f = x.extent(1), u = w.value.extent(0);
        gemm_nn(nb, f, u, dy.data(), w.value.data(), dx.data());
        gemm_tn(nb, f, u, dy.data(), x.data(), w.grad.data());
        for (std::size_t j = 0; j < u; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < nb; ++i) acc += dy.at(i, j);
            b.grad[j] += static_cast<Real>(acc);
        }
    }
};

} // namespace ssrl
