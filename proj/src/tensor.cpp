#include "kelab/tensor.hpp"

#include <numeric>
#include <sstream>

namespace kelab {

namespace {
thread_local Tape* g_active_tape = nullptr;

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}
}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data.assign(static_cast<size_t>(shape_numel(t.node_->shape)), 0.0);
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node_->data) v = value;
    return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("from_values: " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    }
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

double Tensor::value() const {
    if (!is_scalar()) {
        throw ShapeError("value(): tensor " + shape_str(node_->shape) + " is not a scalar");
    }
    return node_->data[0];
}

double* Tensor::grad() const {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad.data();
}

void Tensor::zero_grad() const {
    if (node_->grad.empty()) return;
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = node_->shape;
    t.node_->data = node_->data;
    return t;
}

Tensor mark_output(Tensor t) {
    t.node_->is_leaf = false;
    return t;
}

void Tape::record(const char* op, Tensor output, std::function<void()> backward) {
    records_.push_back({op, std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || !loss.is_scalar()) {
        throw ValidationError("backward: loss must be a defined scalar tensor");
    }
    bool found = false;
    for (auto& r : records_) {
        if (r.output.same_storage(loss)) found = true;
    }
    if (!found) throw ValidationError("backward: loss is not an output on this tape");

    // Transient grads of op outputs are rebuilt per pass so that repeated
    // backward calls accumulate exactly once per call into leaf grads.
    for (auto& r : records_) {
        r.output.zero_grad();
    }
    loss.node_->grad.assign(1, 1.0);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (it->output.has_grad() && it->backward) it->backward();
    }
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

void backward(const Tensor& loss) {
    Tape* t = Tape::active();
    if (!t) throw ValidationError("backward: no active tape");
    t->backward(loss);
}

}  // namespace kelab
