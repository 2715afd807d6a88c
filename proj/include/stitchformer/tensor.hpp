#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace stitchformer {

// Storage precision selected once per process. Arithmetic always runs in
// double; under F32 every primitive rounds its outputs to float-representable
// values, so checkpoints written with 4-byte blobs round-trip bit-exactly.
enum class Precision { kF32, kF64 };

void set_global_precision(Precision p);
Precision global_precision();

// Rounds v to the current storage precision.
double round_to_precision(double v);

enum class Mode { kTrain, kEval };

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backprop;  // pulls this node's grad into parents

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

// Value-semantic handle to a shared autodiff node. Primitives in ops.hpp
// record every result on the computation tape; backward() walks the tape in
// reverse topological order and accumulates gradients until zero_grad().
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> values,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    std::int64_t size() const { return node_->size(); }
    bool is_scalar() const { return node_->data.size() == 1; }
    int rows() const;  // first dim
    int cols() const;  // last dim

    const std::vector<double>& values() const { return node_->data; }
    std::vector<double>& values() { return node_->data; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    // Zero-filled on demand so callers can always read a full buffer.
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    std::vector<double>& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    }

    TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  private:
    std::shared_ptr<TensorNode> node_;
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate; calling twice
// without zeroing doubles them.
void backward(const Tensor& loss);

// Zeroes the grad buffers of every node reachable from root (including root).
void zero_grad_graph(const Tensor& root);

// While any guard is alive, primitives detach from the tape: results carry
// no parents and requires_grad=false. Used for frozen-model forwards.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

std::string shape_str(const std::vector<int>& shape);
void check_finite(const char* op_name, const std::vector<double>& values);
void apply_precision(std::vector<double>& values);

}  // namespace stitchformer
