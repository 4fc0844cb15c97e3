#include "vlprompt/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace vlp::ops {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using CMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class F>
void dispatch(Dtype dt, F&& f) {
    if (dt == Dtype::F32) {
        f(float{});
    } else {
        f(double{});
    }
}

Dtype common_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw ShapeError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
    }
    return a.dtype();
}

/// Allocate the output node; wires inputs and needs_grad. The caller installs
/// backward_fn only when grad_needed() is true.
Tensor make_out(Shape shape, Dtype dt, std::initializer_list<Tensor> inputs) {
    auto n = detail::make_node(std::move(shape), dt);
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.node()->needs_grad;
    n->needs_grad = needs;
    if (needs) {
        n->inputs.reserve(inputs.size());
        for (const auto& t : inputs) n->inputs.push_back(t.node());
    }
    return Tensor(std::move(n));
}

void require_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got shape " +
                         shape_str(t.shape()));
    }
}

// ---------------------------------------------------------------------------
// elementwise binary with limited broadcasting
// ---------------------------------------------------------------------------

enum class Bcast { Same, ScalarL, ScalarR, RowVecR };

Bcast classify_broadcast(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::Same;
    if (b.numel() == 1) return Bcast::ScalarR;
    if (a.numel() == 1) return Bcast::ScalarL;
    if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) return Bcast::RowVecR;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
}

// fwd(a, b) -> value; dfa/dfb(a, b, y) -> local derivative factors.
template <class Fwd, class Dfa, class Dfb>
Tensor binary_ew(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Dfa dfa, Dfb dfb) {
    const Dtype dt = common_dtype(a, b, op);
    const Bcast bc = classify_broadcast(a, b, op);
    const Tensor& big = (bc == Bcast::ScalarL) ? b : a;
    Tensor out = make_out(big.shape(), dt, {a, b});
    const std::int64_t n = out.numel();
    const std::int64_t cols = (bc == Bcast::RowVecR) ? a.dim(1) : 0;

    dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>().data();
        const T* pb = b.data<T>().data();
        T* po = out.data_mut<T>().data();
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t ia = (bc == Bcast::ScalarL) ? 0 : i;
            const std::int64_t ib = (bc == Bcast::Same)      ? i
                                    : (bc == Bcast::RowVecR) ? (i % cols)
                                    : (bc == Bcast::ScalarR) ? 0
                                                             : i;
            po[i] = fwd(pa[ia], pb[ib]);
        }
    });

    if (out.node()->needs_grad) {
        out.node()->backward_fn = [bc, n, cols, dfa, dfb](Node& self) {
            Node& na = *self.inputs[0];
            Node& nb = *self.inputs[1];
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                const T* pa = na.val<T>().data();
                const T* pb = nb.val<T>().data();
                const T* py = self.val<T>().data();
                for (std::int64_t i = 0; i < n; ++i) {
                    const std::int64_t ia = (bc == Bcast::ScalarL) ? 0 : i;
                    const std::int64_t ib = (bc == Bcast::Same)      ? i
                                            : (bc == Bcast::RowVecR) ? (i % cols)
                                            : (bc == Bcast::ScalarR) ? 0
                                                                     : i;
                    if (na.needs_grad) na.grad<T>()[static_cast<std::size_t>(ia)] += g[i] * dfa(pa[ia], pb[ib], py[i]);
                    if (nb.needs_grad) nb.grad<T>()[static_cast<std::size_t>(ib)] += g[i] * dfb(pa[ia], pb[ib], py[i]);
                }
            });
        };
    }
    return out;
}

// fwd(x) -> y; dfdx(x, y) -> local derivative.
template <class Fwd, class Dfdx>
Tensor unary_ew(const Tensor& a, const char* op, Fwd fwd, Dfdx dfdx) {
    (void)op;
    Tensor out = make_out(a.shape(), a.dtype(), {a});
    const std::int64_t n = out.numel();
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>().data();
        T* po = out.data_mut<T>().data();
        for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [n, dfdx](Node& self) {
            Node& na = *self.inputs[0];
            if (!na.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                const T* pa = na.val<T>().data();
                const T* py = self.val<T>().data();
                T* ga = na.grad<T>().data();
                for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * dfdx(pa[i], py[i]);
            });
        };
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul / transpose
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const Dtype dt = common_dtype(a, b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = make_out({m, n}, dt, {a, b});
    dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        CMatMap<T> ma(a.data<T>().data(), m, k);
        CMatMap<T> mb(b.data<T>().data(), k, n);
        MatMap<T> mo(out.data_mut<T>().data(), m, n);
        mo.noalias() = ma * mb;
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [m, k, n](Node& self) {
            Node& na = *self.inputs[0];
            Node& nb = *self.inputs[1];
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                CMatMap<T> g(self.grad<T>().data(), m, n);
                CMatMap<T> ma(na.val<T>().data(), m, k);
                CMatMap<T> mb(nb.val<T>().data(), k, n);
                if (na.needs_grad) {
                    MatMap<T> ga(na.grad<T>().data(), m, k);
                    ga.noalias() += g * mb.transpose();
                }
                if (nb.needs_grad) {
                    MatMap<T> gb(nb.grad<T>().data(), k, n);
                    gb.noalias() += ma.transpose() * g;
                }
            });
        };
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::int64_t r = a.dim(0), c = a.dim(1);
    Tensor out = make_out({c, r}, a.dtype(), {a});
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        CMatMap<T> ma(a.data<T>().data(), r, c);
        MatMap<T> mo(out.data_mut<T>().data(), c, r);
        mo.noalias() = ma.transpose();
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [r, c](Node& self) {
            Node& na = *self.inputs[0];
            if (!na.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                CMatMap<T> g(self.grad<T>().data(), c, r);
                MatMap<T> ga(na.grad<T>().data(), r, c);
                ga.noalias() += g.transpose();
            });
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_ew(
        a, b, "add", [](auto x, auto y) { return x + y; }, [](auto x, auto, auto) { return decltype(x)(1); },
        [](auto x, auto, auto) { return decltype(x)(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_ew(
        a, b, "sub", [](auto x, auto y) { return x - y; }, [](auto x, auto, auto) { return decltype(x)(1); },
        [](auto x, auto, auto) { return decltype(x)(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_ew(
        a, b, "mul", [](auto x, auto y) { return x * y; }, [](auto, auto y, auto) { return y; },
        [](auto x, auto, auto) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    for (std::int64_t i = 0; i < b.numel(); ++i) {
        if (b.value_at(i) == 0.0) throw DomainError("div: denominator contains zero");
    }
    return binary_ew(
        a, b, "div", [](auto x, auto y) { return x / y; }, [](auto, auto y, auto) { return decltype(y)(1) / y; },
        [](auto, auto y, auto v) { return -v / y; });
}

Tensor scale(const Tensor& a, double c) {
    return unary_ew(
        a, "scale", [c](auto x) { return static_cast<decltype(x)>(x * c); },
        [c](auto x, auto) { return static_cast<decltype(x)>(c); });
}

Tensor add_const(const Tensor& a, double c) {
    return unary_ew(
        a, "add_const", [c](auto x) { return static_cast<decltype(x)>(x + c); },
        [](auto x, auto) { return static_cast<decltype(x)>(1); });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
    return unary_ew(
        a, "relu", [](auto x) { return x > 0 ? x : decltype(x)(0); },
        [](auto x, auto) { return x > 0 ? decltype(x)(1) : decltype(x)(0); });
}

Tensor exp(const Tensor& a) {
    return unary_ew(
        a, "exp", [](auto x) { return std::exp(x); }, [](auto, auto y) { return y; });
}

Tensor log(const Tensor& a) {
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        if (!(a.value_at(i) > 0.0)) {
            throw DomainError("log: input value " + std::to_string(a.value_at(i)) + " at index " +
                              std::to_string(i) + " is outside (0, inf)");
        }
    }
    return unary_ew(
        a, "log", [](auto x) { return std::log(x); }, [](auto x, auto) { return decltype(x)(1) / x; });
}

// ---------------------------------------------------------------------------
// row-structured ops
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& logits) {
    require_rank(logits, 2, "softmax_rows");
    const std::int64_t r = logits.dim(0), c = logits.dim(1);
    Tensor out = make_out({r, c}, logits.dtype(), {logits});
    dispatch(logits.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = logits.data<T>().data();
        T* py = out.data_mut<T>().data();
        for (std::int64_t i = 0; i < r; ++i) {
            const T* x = px + i * c;
            T* y = py + i * c;
            T mx = x[0];
            for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
            T s = 0;
            for (std::int64_t j = 0; j < c; ++j) {
                y[j] = std::exp(x[j] - mx);
                s += y[j];
            }
            for (std::int64_t j = 0; j < c; ++j) y[j] /= s;
        }
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [r, c](Node& self) {
            Node& nx = *self.inputs[0];
            if (!nx.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                const T* y = self.val<T>().data();
                T* gx = nx.grad<T>().data();
                for (std::int64_t i = 0; i < r; ++i) {
                    T dotg = 0;
                    for (std::int64_t j = 0; j < c; ++j) dotg += g[i * c + j] * y[i * c + j];
                    for (std::int64_t j = 0; j < c; ++j) {
                        gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dotg);
                    }
                }
            });
        };
    }
    return out;
}

Tensor softmax_rows(const Tensor& logits, const Tensor& tau) {
    if (tau.numel() != 1) throw ShapeError("softmax_rows: temperature must be a scalar");
    if (!(tau.item() > 0.0)) {
        throw DomainError("softmax_rows: temperature must be positive, got " + std::to_string(tau.item()));
    }
    return softmax_rows(div(logits, tau));
}

Tensor l2_normalize_rows(const Tensor& a) {
    require_rank(a, 2, "l2_normalize_rows");
    const std::int64_t r = a.dim(0), c = a.dim(1);
    Tensor out = make_out({r, c}, a.dtype(), {a});
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = a.data<T>().data();
        T* py = out.data_mut<T>().data();
        for (std::int64_t i = 0; i < r; ++i) {
            T ss = 0;
            for (std::int64_t j = 0; j < c; ++j) ss += px[i * c + j] * px[i * c + j];
            const T norm = std::sqrt(ss);
            // All-zero rows map to all-zero rows.
            if (norm == T(0)) {
                for (std::int64_t j = 0; j < c; ++j) py[i * c + j] = 0;
            } else {
                for (std::int64_t j = 0; j < c; ++j) py[i * c + j] = px[i * c + j] / norm;
            }
        }
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [r, c](Node& self) {
            Node& nx = *self.inputs[0];
            if (!nx.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                const T* x = nx.val<T>().data();
                const T* y = self.val<T>().data();
                T* gx = nx.grad<T>().data();
                for (std::int64_t i = 0; i < r; ++i) {
                    T ss = 0;
                    for (std::int64_t j = 0; j < c; ++j) ss += x[i * c + j] * x[i * c + j];
                    const T norm = std::sqrt(ss);
                    if (norm == T(0)) continue;  // zero rows pass no gradient
                    T gy = 0;
                    for (std::int64_t j = 0; j < c; ++j) gy += g[i * c + j] * y[i * c + j];
                    for (std::int64_t j = 0; j < c; ++j) {
                        gx[i * c + j] += (g[i * c + j] - y[i * c + j] * gy) / norm;
                    }
                }
            });
        };
    }
    return out;
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
    require_rank(a, 2, "layer_norm_rows");
    const std::int64_t r = a.dim(0), c = a.dim(1);
    Tensor out = make_out({r, c}, a.dtype(), {a});
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = a.data<T>().data();
        T* py = out.data_mut<T>().data();
        for (std::int64_t i = 0; i < r; ++i) {
            T mean = 0;
            for (std::int64_t j = 0; j < c; ++j) mean += px[i * c + j];
            mean /= static_cast<T>(c);
            T var = 0;
            for (std::int64_t j = 0; j < c; ++j) {
                const T d = px[i * c + j] - mean;
                var += d * d;
            }
            var /= static_cast<T>(c);
            const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
            for (std::int64_t j = 0; j < c; ++j) py[i * c + j] = (px[i * c + j] - mean) * inv;
        }
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [r, c, eps](Node& self) {
            Node& nx = *self.inputs[0];
            if (!nx.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                const T* x = nx.val<T>().data();
                const T* y = self.val<T>().data();
                T* gx = nx.grad<T>().data();
                for (std::int64_t i = 0; i < r; ++i) {
                    T mean = 0;
                    for (std::int64_t j = 0; j < c; ++j) mean += x[i * c + j];
                    mean /= static_cast<T>(c);
                    T var = 0;
                    for (std::int64_t j = 0; j < c; ++j) {
                        const T d = x[i * c + j] - mean;
                        var += d * d;
                    }
                    var /= static_cast<T>(c);
                    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
                    T gmean = 0, gymean = 0;
                    for (std::int64_t j = 0; j < c; ++j) {
                        gmean += g[i * c + j];
                        gymean += g[i * c + j] * y[i * c + j];
                    }
                    gmean /= static_cast<T>(c);
                    gymean /= static_cast<T>(c);
                    for (std::int64_t j = 0; j < c; ++j) {
                        gx[i * c + j] += (g[i * c + j] - gmean - y[i * c + j] * gymean) * inv;
                    }
                }
            });
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// gather / reductions / structure
// ---------------------------------------------------------------------------

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids) {
    require_rank(table, 2, "embedding_lookup");
    if (ids.empty()) throw ShapeError("embedding_lookup: empty index list");
    const std::int64_t v = table.dim(0), d = table.dim(1);
    for (const auto id : ids) {
        if (id < 0 || id >= v) {
            throw ShapeError("embedding_lookup: index " + std::to_string(id) + " out of range [0, " +
                             std::to_string(v) + ")");
        }
    }
    const std::int64_t n = static_cast<std::int64_t>(ids.size());
    Tensor out = make_out({n, d}, table.dtype(), {table});
    dispatch(table.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pt = table.data<T>().data();
        T* po = out.data_mut<T>().data();
        for (std::int64_t i = 0; i < n; ++i) {
            std::memcpy(po + i * d, pt + ids[static_cast<std::size_t>(i)] * d, sizeof(T) * static_cast<std::size_t>(d));
        }
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [ids, d, n](Node& self) {
            Node& nt = *self.inputs[0];
            if (!nt.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                T* gt = nt.grad<T>().data();
                for (std::int64_t i = 0; i < n; ++i) {
                    const std::int64_t rowi = ids[static_cast<std::size_t>(i)];
                    for (std::int64_t j = 0; j < d; ++j) gt[rowi * d + j] += g[i * d + j];
                }
            });
        };
    }
    return out;
}

Tensor sum_all(const Tensor& a) {
    Tensor out = make_out({1}, a.dtype(), {a});
    const std::int64_t n = a.numel();
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>().data();
        T s = 0;
        for (std::int64_t i = 0; i < n; ++i) s += pa[i];
        out.data_mut<T>()[0] = s;
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [n](Node& self) {
            Node& na = *self.inputs[0];
            if (!na.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T g = self.grad<T>()[0];
                T* ga = na.grad<T>().data();
                for (std::int64_t i = 0; i < n; ++i) ga[i] += g;
            });
        };
    }
    return out;
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_axis(const Tensor& a, int axis) {
    require_rank(a, 2, "sum_axis");
    if (axis != 0 && axis != 1) throw ShapeError("sum_axis: axis must be 0 or 1");
    const std::int64_t r = a.dim(0), c = a.dim(1);
    const std::int64_t outn = (axis == 0) ? c : r;
    Tensor out = make_out({outn}, a.dtype(), {a});
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>().data();
        T* po = out.data_mut<T>().data();
        std::fill(po, po + outn, T(0));
        for (std::int64_t i = 0; i < r; ++i) {
            for (std::int64_t j = 0; j < c; ++j) po[axis == 0 ? j : i] += pa[i * c + j];
        }
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [r, c, axis](Node& self) {
            Node& na = *self.inputs[0];
            if (!na.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                T* ga = na.grad<T>().data();
                for (std::int64_t i = 0; i < r; ++i) {
                    for (std::int64_t j = 0; j < c; ++j) ga[i * c + j] += g[axis == 0 ? j : i];
                }
            });
        };
    }
    return out;
}

Tensor mean_axis(const Tensor& a, int axis) {
    const double denom = static_cast<double>(axis == 0 ? a.dim(0) : a.dim(1));
    return scale(sum_axis(a, axis), 1.0 / denom);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no tensors given");
    const int rank = parts.front().rank();
    if (rank == 1 && axis == 0) {
        std::int64_t total = 0;
        for (const auto& p : parts) {
            require_rank(p, 1, "concat");
            total += p.dim(0);
        }
        auto out_node = detail::make_node({total}, parts.front().dtype());
        bool needs = false;
        for (const auto& p : parts) needs = needs || p.node()->needs_grad;
        out_node->needs_grad = needs;
        if (needs) {
            for (const auto& p : parts) out_node->inputs.push_back(p.node());
        }
        Tensor out(std::move(out_node));
        dispatch(out.dtype(), [&](auto tag) {
            using T = decltype(tag);
            T* po = out.data_mut<T>().data();
            std::int64_t off = 0;
            for (const auto& p : parts) {
                common_dtype(parts.front(), p, "concat");
                const auto src = p.data<T>();
                std::copy(src.begin(), src.end(), po + off);
                off += p.dim(0);
            }
        });
        if (out.node()->needs_grad) {
            std::vector<std::int64_t> sizes;
            for (const auto& p : parts) sizes.push_back(p.dim(0));
            out.node()->backward_fn = [sizes](Node& self) {
                dispatch(self.dtype, [&](auto tag) {
                    using T = decltype(tag);
                    const T* g = self.grad<T>().data();
                    std::int64_t off = 0;
                    for (std::size_t k = 0; k < sizes.size(); ++k) {
                        Node& nk = *self.inputs[k];
                        if (nk.needs_grad) {
                            T* gk = nk.grad<T>().data();
                            for (std::int64_t i = 0; i < sizes[k]; ++i) gk[i] += g[off + i];
                        }
                        off += sizes[k];
                    }
                });
            };
        }
        return out;
    }

    // 2-D case
    for (const auto& p : parts) require_rank(p, 2, "concat");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    const std::int64_t fixed = (axis == 0) ? parts.front().dim(1) : parts.front().dim(0);
    std::int64_t total = 0;
    for (const auto& p : parts) {
        common_dtype(parts.front(), p, "concat");
        const std::int64_t pf = (axis == 0) ? p.dim(1) : p.dim(0);
        if (pf != fixed) {
            throw ShapeError("concat: mismatched shapes " + shape_str(parts.front().shape()) + " and " +
                             shape_str(p.shape()) + " along axis " + std::to_string(axis));
        }
        total += (axis == 0) ? p.dim(0) : p.dim(1);
    }
    const std::int64_t rows = (axis == 0) ? total : fixed;
    const std::int64_t cols = (axis == 0) ? fixed : total;
    auto out_node = detail::make_node({rows, cols}, parts.front().dtype());
    bool needs = false;
    for (const auto& p : parts) needs = needs || p.node()->needs_grad;
    out_node->needs_grad = needs;
    if (needs) {
        for (const auto& p : parts) out_node->inputs.push_back(p.node());
    }
    Tensor out(std::move(out_node));
    dispatch(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* po = out.data_mut<T>().data();
        std::int64_t off = 0;
        for (const auto& p : parts) {
            const T* pp = p.data<T>().data();
            if (axis == 0) {
                std::copy(pp, pp + p.numel(), po + off * cols);
                off += p.dim(0);
            } else {
                const std::int64_t pc = p.dim(1);
                for (std::int64_t i = 0; i < rows; ++i) {
                    std::copy(pp + i * pc, pp + (i + 1) * pc, po + i * cols + off);
                }
                off += pc;
            }
        }
    });
    if (out.node()->needs_grad) {
        std::vector<std::int64_t> sizes;
        for (const auto& p : parts) sizes.push_back(axis == 0 ? p.dim(0) : p.dim(1));
        out.node()->backward_fn = [sizes, axis, rows, cols](Node& self) {
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                std::int64_t off = 0;
                for (std::size_t k = 0; k < sizes.size(); ++k) {
                    Node& nk = *self.inputs[k];
                    if (nk.needs_grad) {
                        T* gk = nk.grad<T>().data();
                        if (axis == 0) {
                            for (std::int64_t i = 0; i < sizes[k] * cols; ++i) gk[i] += g[off * cols + i];
                        } else {
                            for (std::int64_t i = 0; i < rows; ++i) {
                                for (std::int64_t j = 0; j < sizes[k]; ++j) {
                                    gk[i * sizes[k] + j] += g[i * cols + off + j];
                                }
                            }
                        }
                    }
                    off += sizes[k];
                }
            });
        };
    }
    return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no tensors given");
    std::vector<Tensor> as2d;
    as2d.reserve(rows.size());
    for (const auto& r : rows) {
        require_rank(r, 1, "stack_rows");
        as2d.push_back(reshape(r, {1, r.dim(0)}));
    }
    return concat(as2d, 0);
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    Tensor out = make_out(std::move(shape), a.dtype(), {a});
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto src = a.data<T>();
        std::copy(src.begin(), src.end(), out.data_mut<T>().data());
    });
    if (out.node()->needs_grad) {
        const std::int64_t n = a.numel();
        out.node()->backward_fn = [n](Node& self) {
            Node& na = *self.inputs[0];
            if (!na.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                T* ga = na.grad<T>().data();
                for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
            });
        };
    }
    return out;
}

Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1) {
    require_rank(a, 2, "slice_cols");
    if (c0 < 0 || c1 > a.dim(1) || c0 >= c1) {
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") invalid for shape " + shape_str(a.shape()));
    }
    const std::int64_t r = a.dim(0), c = a.dim(1), w = c1 - c0;
    Tensor out = make_out({r, w}, a.dtype(), {a});
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>().data();
        T* po = out.data_mut<T>().data();
        for (std::int64_t i = 0; i < r; ++i) {
            std::copy(pa + i * c + c0, pa + i * c + c1, po + i * w);
        }
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [r, c, c0, w](Node& self) {
            Node& na = *self.inputs[0];
            if (!na.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                T* ga = na.grad<T>().data();
                for (std::int64_t i = 0; i < r; ++i) {
                    for (std::int64_t j = 0; j < w; ++j) ga[i * c + c0 + j] += g[i * w + j];
                }
            });
        };
    }
    return out;
}

Tensor row(const Tensor& a, std::int64_t r) {
    require_rank(a, 2, "row");
    if (r < 0 || r >= a.dim(0)) {
        throw ShapeError("row: index " + std::to_string(r) + " out of range for shape " + shape_str(a.shape()));
    }
    const std::int64_t c = a.dim(1);
    Tensor out = make_out({c}, a.dtype(), {a});
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>().data();
        std::copy(pa + r * c, pa + (r + 1) * c, out.data_mut<T>().data());
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [r, c](Node& self) {
            Node& na = *self.inputs[0];
            if (!na.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                T* ga = na.grad<T>().data();
                for (std::int64_t j = 0; j < c; ++j) ga[r * c + j] += g[j];
            });
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution stack
// ---------------------------------------------------------------------------

namespace {

/// im2col for stride-1, half-pad convolution: output (Cin*K*K, H*W).
template <class T>
void im2col(const T* x, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k, std::vector<T>& col) {
    const std::int64_t pad = k / 2;
    const std::int64_t hw = h * w;
    col.assign(static_cast<std::size_t>(cin * k * k * hw), T(0));
    std::int64_t rowi = 0;
    for (std::int64_t ci = 0; ci < cin; ++ci) {
        for (std::int64_t ky = 0; ky < k; ++ky) {
            for (std::int64_t kx = 0; kx < k; ++kx, ++rowi) {
                T* dst = col.data() + rowi * hw;
                for (std::int64_t y = 0; y < h; ++y) {
                    const std::int64_t sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    for (std::int64_t xw = 0; xw < w; ++xw) {
                        const std::int64_t sx = xw + kx - pad;
                        if (sx < 0 || sx >= w) continue;
                        dst[y * w + xw] = x[ci * hw + sy * w + sx];
                    }
                }
            }
        }
    }
}

/// Transpose of im2col: scatter-add (Cin*K*K, H*W) back onto the image grid.
template <class T>
void col2im_add(const T* col, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k, T* gx) {
    const std::int64_t pad = k / 2;
    const std::int64_t hw = h * w;
    std::int64_t rowi = 0;
    for (std::int64_t ci = 0; ci < cin; ++ci) {
        for (std::int64_t ky = 0; ky < k; ++ky) {
            for (std::int64_t kx = 0; kx < k; ++kx, ++rowi) {
                const T* src = col + rowi * hw;
                for (std::int64_t y = 0; y < h; ++y) {
                    const std::int64_t sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    for (std::int64_t xw = 0; xw < w; ++xw) {
                        const std::int64_t sx = xw + kx - pad;
                        if (sx < 0 || sx >= w) continue;
                        gx[ci * hw + sy * w + sx] += src[y * w + xw];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 3, "conv2d");
    require_rank(w, 4, "conv2d");
    require_rank(b, 1, "conv2d");
    common_dtype(x, w, "conv2d");
    common_dtype(x, b, "conv2d");
    const std::int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::int64_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin || w.dim(3) != k || k % 2 == 0) {
        throw ShapeError("conv2d: weights " + shape_str(w.shape()) + " do not fit input " + shape_str(x.shape()));
    }
    if (b.dim(0) != cout) {
        throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " does not match " + std::to_string(cout) +
                         " output channels");
    }
    const std::int64_t hw = h * wd;
    Tensor out = make_out({cout, h, wd}, x.dtype(), {x, w, b});
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        std::vector<T> col;
        im2col(x.data<T>().data(), cin, h, wd, k, col);
        CMatMap<T> mw(w.data<T>().data(), cout, cin * k * k);
        CMatMap<T> mcol(col.data(), cin * k * k, hw);
        MatMap<T> mo(out.data_mut<T>().data(), cout, hw);
        mo.noalias() = mw * mcol;
        const T* pb = b.data<T>().data();
        for (std::int64_t co = 0; co < cout; ++co) mo.row(co).array() += pb[co];
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [cin, h, wd, cout, k, hw](Node& self) {
            Node& nx = *self.inputs[0];
            Node& nw = *self.inputs[1];
            Node& nb = *self.inputs[2];
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                CMatMap<T> g(self.grad<T>().data(), cout, hw);
                std::vector<T> col;
                im2col(nx.val<T>().data(), cin, h, wd, k, col);
                CMatMap<T> mcol(col.data(), cin * k * k, hw);
                if (nb.needs_grad) {
                    T* gb = nb.grad<T>().data();
                    for (std::int64_t co = 0; co < cout; ++co) gb[co] += g.row(co).sum();
                }
                if (nw.needs_grad) {
                    MatMap<T> gw(nw.grad<T>().data(), cout, cin * k * k);
                    gw.noalias() += g * mcol.transpose();
                }
                if (nx.needs_grad) {
                    CMatMap<T> mw(nw.val<T>().data(), cout, cin * k * k);
                    std::vector<T> gcol(static_cast<std::size_t>(cin * k * k * hw));
                    MatMap<T> mgcol(gcol.data(), cin * k * k, hw);
                    mgcol.noalias() = mw.transpose() * g;
                    col2im_add(gcol.data(), cin, h, wd, k, nx.grad<T>().data());
                }
            });
        };
    }
    return out;
}

Tensor avgpool2(const Tensor& x) {
    require_rank(x, 3, "avgpool2");
    const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("avgpool2: spatial dims must be even, got " + shape_str(x.shape()));
    }
    const std::int64_t oh = h / 2, ow = w / 2;
    Tensor out = make_out({c, oh, ow}, x.dtype(), {x});
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>().data();
        T* po = out.data_mut<T>().data();
        for (std::int64_t ci = 0; ci < c; ++ci) {
            for (std::int64_t y = 0; y < oh; ++y) {
                for (std::int64_t xw = 0; xw < ow; ++xw) {
                    const T* base = px + ci * h * w + 2 * y * w + 2 * xw;
                    po[ci * oh * ow + y * ow + xw] = (base[0] + base[1] + base[w] + base[w + 1]) / T(4);
                }
            }
        }
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [c, h, w, oh, ow](Node& self) {
            Node& nx = *self.inputs[0];
            if (!nx.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                T* gx = nx.grad<T>().data();
                for (std::int64_t ci = 0; ci < c; ++ci) {
                    for (std::int64_t y = 0; y < oh; ++y) {
                        for (std::int64_t xw = 0; xw < ow; ++xw) {
                            const T q = g[ci * oh * ow + y * ow + xw] / T(4);
                            T* base = gx + ci * h * w + 2 * y * w + 2 * xw;
                            base[0] += q;
                            base[1] += q;
                            base[w] += q;
                            base[w + 1] += q;
                        }
                    }
                }
            });
        };
    }
    return out;
}

Tensor extract_patches(const Tensor& x, std::int64_t p) {
    Tensor img = x;
    if (x.rank() == 3 && x.dim(0) == 1) img = reshape(x, {x.dim(1), x.dim(2)});
    require_rank(img, 2, "extract_patches");
    const std::int64_t h = img.dim(0), w = img.dim(1);
    if (p <= 0 || h % p != 0 || w % p != 0) {
        throw ShapeError("extract_patches: patch size " + std::to_string(p) + " does not tile " +
                         shape_str(img.shape()));
    }
    const std::int64_t gy = h / p, gx = w / p, np = gy * gx;
    Tensor out = make_out({np, p * p}, img.dtype(), {img});
    dispatch(img.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = img.data<T>().data();
        T* po = out.data_mut<T>().data();
        for (std::int64_t ty = 0; ty < gy; ++ty) {
            for (std::int64_t tx = 0; tx < gx; ++tx) {
                T* dst = po + (ty * gx + tx) * p * p;
                for (std::int64_t dy = 0; dy < p; ++dy) {
                    for (std::int64_t dx = 0; dx < p; ++dx) {
                        dst[dy * p + dx] = px[(ty * p + dy) * w + tx * p + dx];
                    }
                }
            }
        }
    });
    if (out.node()->needs_grad) {
        out.node()->backward_fn = [h, w, p, gy, gx](Node& self) {
            Node& nx = *self.inputs[0];
            if (!nx.needs_grad) return;
            dispatch(self.dtype, [&](auto tag) {
                using T = decltype(tag);
                const T* g = self.grad<T>().data();
                T* gi = nx.grad<T>().data();
                for (std::int64_t ty = 0; ty < gy; ++ty) {
                    for (std::int64_t tx = 0; tx < gx; ++tx) {
                        const T* src = g + (ty * gx + tx) * p * p;
                        for (std::int64_t dy = 0; dy < p; ++dy) {
                            for (std::int64_t dx = 0; dx < p; ++dx) {
                                gi[(ty * p + dy) * w + tx * p + dx] += src[dy * p + dx];
                            }
                        }
                    }
                }
            });
        };
    }
    return out;
}

Tensor dot(const Tensor& a, const Tensor& b) {
    require_rank(a, 1, "dot");
    require_rank(b, 1, "dot");
    if (a.dim(0) != b.dim(0)) {
        throw ShapeError("dot: lengths disagree, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    return sum_all(mul(a, b));
}

}  // namespace vlp::ops
