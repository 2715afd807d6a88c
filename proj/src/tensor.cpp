#include "stitchformer/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "stitchformer/errors.hpp"

namespace stitchformer {

namespace {
Precision g_precision = Precision::kF64;
thread_local int g_no_grad_depth = 0;
}  // namespace

void set_global_precision(Precision p) { g_precision = p; }
Precision global_precision() { return g_precision; }

double round_to_precision(double v) {
    if (g_precision == Precision::kF32) return static_cast<double>(static_cast<float>(v));
    return v;
}

void apply_precision(std::vector<double>& values) {
    if (g_precision == Precision::kF64) return;
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void check_finite(const char* op_name, const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op_name) + ": non-finite value produced");
        }
    }
}

namespace {

std::int64_t shape_product(const char* who, const std::vector<int>& shape) {
    if (shape.empty()) throw ContractError(std::string(who) + ": empty shape");
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ContractError(std::string(who) + ": non-positive dim in " + shape_str(shape));
        n *= d;
    }
    return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    std::int64_t n = shape_product("Tensor::full", shape);
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data.assign(static_cast<std::size_t>(n), round_to_precision(value));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    std::int64_t n = shape_product("Tensor::from_data", shape);
    if (n != static_cast<std::int64_t>(values.size())) {
        throw ContractError("Tensor::from_data: shape " + shape_str(shape) + " wants " +
                            std::to_string(n) + " values, got " + std::to_string(values.size()));
    }
    apply_precision(values);
    check_finite("Tensor::from_data", values);
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

int Tensor::rows() const { return node_->shape.front(); }

int Tensor::cols() const { return node_->shape.back(); }

double Tensor::item() const {
    if (!is_scalar()) {
        throw ContractError("Tensor::item: tensor of shape " + shape_str(node_->shape) +
                            " is not scalar");
    }
    return node_->data[0];
}

void zero_grad_graph(const Tensor& root) {
    std::unordered_set<TensorNode*> visited;
    std::vector<TensorNode*> stack{root.node()};
    visited.insert(root.node());
    while (!stack.empty()) {
        TensorNode* node = stack.back();
        stack.pop_back();
        if (!node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
        for (const auto& parent : node->parents) {
            if (visited.insert(parent.get()).second) stack.push_back(parent.get());
        }
    }
}

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() : prev_(g_no_grad_depth > 0) { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

void backward(const Tensor& loss) {
    if (!loss.defined() || !loss.is_scalar()) {
        throw ContractError("backward: loss must be a scalar tensor");
    }
    // Iterative topological order over the tape reachable from the loss.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior grads are per-sweep scratch; only leaves (parameters, inputs)
    // accumulate across backward calls.
    for (TensorNode* node : order) {
        if (!node->parents.empty() && !node->grad.empty()) {
            node->grad.assign(node->data.size(), 0.0);
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backprop && node->requires_grad) {
            node->backprop();
        }
    }
    for (TensorNode* node : order) {
        if (!node->grad.empty()) check_finite("backward", node->grad);
    }
}

}  // namespace stitchformer
