#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kelab/error.hpp"

namespace kelab {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

// Dense row-major float64 array. Tensor is a cheap shared handle on the
// storage; data is treated as immutable once created except for the grad
// buffer, which backward() accumulates into.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
    bool is_scalar() const { return node_->data.size() == 1; }

    double* data() { return node_->data.data(); }
    const double* data() const { return node_->data.data(); }
    std::vector<double>& values() { return node_->data; }
    const std::vector<double>& values() const { return node_->data; }
    double value() const;  // scalar accessor

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    bool is_leaf() const { return node_->is_leaf; }

    bool has_grad() const { return !node_->grad.empty(); }
    // Lazily allocates a zeroed buffer shaped like data. The grad buffer
    // lives in the shared storage, so it is reachable through const handles.
    double* grad() const;
    const std::vector<double>& grad_values() const { return node_->grad; }
    void zero_grad() const;
    void clear_grad() const { node_->grad.clear(); }

    // Deep copy; the copy is a detached leaf.
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

private:
    struct Node {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
        bool is_leaf = true;
    };

    std::shared_ptr<Node> node_;
    friend class Tape;
    friend Tensor mark_output(Tensor t);
};

// Marks a tensor as an op output (non-leaf); its grad buffer is transient
// and reset at the start of every backward pass.
Tensor mark_output(Tensor t);

// Define-by-run tape. Ops record themselves in execution order, which is a
// topological order by construction, so one reverse sweep visits every node
// after all of its consumers.
class Tape {
public:
    struct Record {
        const char* op;
        Tensor output;
        std::function<void()> backward;
    };

    void record(const char* op, Tensor output, std::function<void()> backward);
    size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Grad buffers
    // of op outputs are reset first; leaf grads accumulate across calls.
    void backward(const Tensor& loss);

    static Tape* active();

private:
    std::vector<Record> records_;
    friend class TapeScope;
};

// RAII activation of a tape on the current thread. Ops only record while a
// tape is active and some input requires grad.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

// Backward through the currently active tape.
void backward(const Tensor& loss);

}  // namespace kelab
