#include "vlprompt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace vlp {

namespace {
std::atomic<std::uint64_t> g_seq{1};

template <class T>
void fill_randn(std::vector<T>& v, Rng& rng, double stddev) {
    for (auto& x : v) x = static_cast<T>(rng.gaussian(0.0, stddev));
}
template <class T>
void fill_uniform(std::vector<T>& v, Rng& rng, double lo, double hi) {
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
}
}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ')';
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (const auto e : s) n *= e;
    return n;
}

namespace detail {

std::shared_ptr<Node> make_node(Shape shape, Dtype dt) {
    for (const auto e : shape) {
        if (e <= 0) throw ShapeError("tensor extent must be positive, got shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->dtype = dt;
    n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    const auto count = static_cast<std::size_t>(n->numel());
    if (dt == Dtype::F32) {
        n->val_f.assign(count, 0.0f);
    } else {
        n->val_d.assign(count, 0.0);
    }
    return n;
}

void Node::ensure_grad() {
    const auto count = static_cast<std::size_t>(numel());
    if (dtype == Dtype::F32) {
        if (grad_f.size() != count) grad_f.assign(count, 0.0f);
    } else {
        if (grad_d.size() != count) grad_d.assign(count, 0.0);
    }
}

void Node::clear_grad() {
    grad_f.clear();
    grad_d.clear();
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, Dtype dt, bool requires_grad) {
    Tensor t(detail::make_node(std::move(shape), dt));
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::full(Shape shape, double value, Dtype dt, bool requires_grad) {
    Tensor t = zeros(std::move(shape), dt, requires_grad);
    if (dt == Dtype::F32) {
        std::fill(t.n_->val_f.begin(), t.n_->val_f.end(), static_cast<float>(value));
    } else {
        std::fill(t.n_->val_d.begin(), t.n_->val_d.end(), value);
    }
    return t;
}

Tensor Tensor::scalar(double value, Dtype dt, bool requires_grad) {
    return full({1}, value, dt, requires_grad);
}

Tensor Tensor::from_doubles(Shape shape, const std::vector<double>& values, Dtype dt, bool requires_grad) {
    Tensor t = zeros(std::move(shape), dt, requires_grad);
    if (static_cast<std::int64_t>(values.size()) != t.numel()) {
        throw ShapeError("from_doubles: got " + std::to_string(values.size()) + " values for shape " +
                         shape_str(t.shape()));
    }
    if (dt == Dtype::F32) {
        for (std::size_t i = 0; i < values.size(); ++i) t.n_->val_f[i] = static_cast<float>(values[i]);
    } else {
        t.n_->val_d = values;
    }
    return t;
}

Tensor Tensor::from_floats(Shape shape, std::vector<float> values, bool requires_grad) {
    Tensor t = zeros(std::move(shape), Dtype::F32, requires_grad);
    if (static_cast<std::int64_t>(values.size()) != t.numel()) {
        throw ShapeError("from_floats: got " + std::to_string(values.size()) + " values for shape " +
                         shape_str(t.shape()));
    }
    t.n_->val_f = std::move(values);
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, Dtype dt, bool requires_grad) {
    Tensor t = zeros(std::move(shape), dt, requires_grad);
    if (dt == Dtype::F32) {
        fill_randn(t.n_->val_f, rng, stddev);
    } else {
        fill_randn(t.n_->val_d, rng, stddev);
    }
    return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, Dtype dt, bool requires_grad) {
    Tensor t = zeros(std::move(shape), dt, requires_grad);
    if (dt == Dtype::F32) {
        fill_uniform(t.n_->val_f, rng, lo, hi);
    } else {
        fill_uniform(t.n_->val_d, rng, lo, hi);
    }
    return t;
}

double Tensor::value_at(std::int64_t i) const {
    return dtype() == Dtype::F32 ? static_cast<double>(n_->val_f[static_cast<std::size_t>(i)])
                                 : n_->val_d[static_cast<std::size_t>(i)];
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return value_at(0);
}

std::vector<double> Tensor::to_doubles() const {
    std::vector<double> out(static_cast<std::size_t>(numel()));
    for (std::int64_t i = 0; i < numel(); ++i) out[static_cast<std::size_t>(i)] = value_at(i);
    return out;
}

Tensor Tensor::clone_detached() const {
    Tensor t = zeros(shape(), dtype());
    t.n_->val_f = n_->val_f;
    t.n_->val_d = n_->val_d;
    t.n_->name = n_->name;
    return t;
}

Tensor Tensor::cast(Dtype dt) const {
    if (dt == dtype()) return clone_detached();
    return from_doubles(shape(), to_doubles(), dt);
}

bool Tensor::all_finite() const {
    for (std::int64_t i = 0; i < numel(); ++i) {
        if (!std::isfinite(value_at(i))) return false;
    }
    return true;
}

Tensor& Tensor::set_requires_grad(bool rg) {
    if (rg && !n_->is_leaf()) throw Error("set_requires_grad: only leaf tensors can be tracked");
    n_->requires_grad = rg;
    n_->needs_grad = rg;
    return *this;
}

double Tensor::grad_at(std::int64_t i) const {
    if (!n_->has_grad()) return 0.0;
    return dtype() == Dtype::F32 ? static_cast<double>(n_->grad_f[static_cast<std::size_t>(i)])
                                 : n_->grad_d[static_cast<std::size_t>(i)];
}

std::vector<double> Tensor::grad_to_doubles() const {
    std::vector<double> out(static_cast<std::size_t>(numel()), 0.0);
    if (n_->has_grad()) {
        for (std::int64_t i = 0; i < numel(); ++i) out[static_cast<std::size_t>(i)] = grad_at(i);
    }
    return out;
}

void Tensor::zero_grad() { n_->clear_grad(); }

void Tensor::backward() const {
    if (numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(shape()));
    }
    if (!n_->needs_grad) return;  // nothing tracked upstream

    // Reachable subgraph that participates in gradients.
    std::vector<detail::Node*> order;
    {
        std::vector<detail::Node*> stack{n_.get()};
        // Visited set keyed by node address; seq is unique so use it.
        std::vector<std::uint64_t> seen;
        auto mark = [&seen](std::uint64_t s) {
            auto it = std::lower_bound(seen.begin(), seen.end(), s);
            if (it != seen.end() && *it == s) return false;
            seen.insert(it, s);
            return true;
        };
        mark(n_->seq);
        while (!stack.empty()) {
            detail::Node* cur = stack.back();
            stack.pop_back();
            order.push_back(cur);
            for (const auto& in : cur->inputs) {
                if (in->needs_grad && mark(in->seq)) stack.push_back(in.get());
            }
        }
    }
    // Reverse creation order is a topological order of the DAG and is the
    // fixed, reproducible accumulation order.
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

    // Interior gradients are per-sweep scratch; tracked-leaf gradients persist.
    for (detail::Node* nd : order) {
        if (!nd->is_leaf()) nd->clear_grad();
        nd->ensure_grad();
    }
    if (n_->dtype == Dtype::F32) {
        n_->grad_f[0] += 1.0f;
    } else {
        n_->grad_d[0] += 1.0;
    }
    for (detail::Node* nd : order) {
        if (nd->backward_fn) nd->backward_fn(*nd);
    }
}

}  // namespace vlp
