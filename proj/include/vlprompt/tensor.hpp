#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vlprompt/errors.hpp"
#include "vlprompt/rng.hpp"

namespace vlp {

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

inline const char* dtype_name(Dtype dt) { return dt == Dtype::F32 ? "f32" : "f64"; }

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

namespace detail {

/// One vertex of the computation graph. Owns its value, an optional gradient
/// accumulator of the same dtype/shape, and the closure that pushes gradients
/// to its inputs. Nodes are created in program order; `seq` freezes that order
/// so backward traversal is deterministic.
struct Node {
    Shape shape;
    Dtype dtype = Dtype::F32;
    std::vector<float> val_f;
    std::vector<double> val_d;
    std::vector<float> grad_f;
    std::vector<double> grad_d;
    bool requires_grad = false;  // leaf is a tracked parameter
    bool needs_grad = false;     // tracked, or downstream of something tracked
    std::uint64_t seq = 0;
    std::string name;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    std::int64_t numel() const { return shape_numel(shape); }
    bool is_leaf() const { return !backward_fn; }

    template <class T>
    std::vector<T>& val();
    template <class T>
    std::vector<T>& grad();

    void ensure_grad();
    void clear_grad();
    bool has_grad() const { return !grad_f.empty() || !grad_d.empty(); }
};

template <>
inline std::vector<float>& Node::val<float>() {
    return val_f;
}
template <>
inline std::vector<double>& Node::val<double>() {
    return val_d;
}
template <>
inline std::vector<float>& Node::grad<float>() {
    return grad_f;
}
template <>
inline std::vector<double>& Node::grad<double>() {
    return grad_d;
}

std::shared_ptr<Node> make_node(Shape shape, Dtype dt);

}  // namespace detail

/// Dense row-major tensor handle with optional gradient tracking.
/// Copying a Tensor copies the handle; the value buffer is shared.
class Tensor {
public:
    Tensor() = default;

    // -- factories ---------------------------------------------------------
    static Tensor zeros(Shape shape, Dtype dt = Dtype::F32, bool requires_grad = false);
    static Tensor full(Shape shape, double value, Dtype dt = Dtype::F32, bool requires_grad = false);
    static Tensor scalar(double value, Dtype dt = Dtype::F32, bool requires_grad = false);
    static Tensor from_doubles(Shape shape, const std::vector<double>& values, Dtype dt = Dtype::F32,
                               bool requires_grad = false);
    static Tensor from_floats(Shape shape, std::vector<float> values, bool requires_grad = false);
    /// Gaussian init, mean 0.
    static Tensor randn(Shape shape, Rng& rng, double stddev, Dtype dt = Dtype::F32, bool requires_grad = false);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, Dtype dt = Dtype::F32,
                          bool requires_grad = false);

    // -- structure ---------------------------------------------------------
    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    std::int64_t dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return n_->numel(); }
    Dtype dtype() const { return n_->dtype; }

    const std::string& name() const { return n_->name; }
    Tensor& set_name(std::string name) {
        n_->name = std::move(name);
        return *this;
    }

    // -- values ------------------------------------------------------------
    template <class T>
    std::span<const T> data() const {
        return {n_->val<T>().data(), n_->val<T>().size()};
    }
    /// Mutable view of a leaf's values (optimizer updates, data loading).
    template <class T>
    std::span<T> data_mut() {
        return {n_->val<T>().data(), n_->val<T>().size()};
    }
    /// Value at flat index, as double regardless of dtype.
    double value_at(std::int64_t i) const;
    /// Scalar fetch; throws ShapeError unless numel() == 1.
    double item() const;
    std::vector<double> to_doubles() const;
    /// Deep copy of values into a fresh untracked leaf.
    Tensor clone_detached() const;
    /// Same values, different dtype (fresh untracked leaf).
    Tensor cast(Dtype dt) const;
    bool all_finite() const;

    // -- autograd ----------------------------------------------------------
    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool rg);
    bool needs_grad() const { return n_->needs_grad; }
    bool has_grad() const { return n_->has_grad(); }
    /// Gradient at flat index, as double; 0 if no gradient accumulated yet.
    double grad_at(std::int64_t i) const;
    std::vector<double> grad_to_doubles() const;
    void zero_grad();
    /// Reverse-mode sweep from a scalar. Gradients of tracked leaves
    /// accumulate across repeated calls; interior gradients are transient.
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return n_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> n_;
};

/// Named parameter list used by optimizers, checkpoints and audits.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

}  // namespace vlp
