#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "geoaware/numerics/tensor.hpp"

namespace geoaware::nn {

namespace detail {

inline void require(bool ok, const std::string& message) {
    if (!ok) {
        throw DimensionError(message);
    }
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
    require(s.size() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                  to_string(s));
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
    require(a == b, std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

// out[r×c] += a[r×k] · b[k×c]
template <typename T>
void gemm_nn(const T* a, const T* b, T* out, std::size_t r, std::size_t k, std::size_t c) {
    for (std::size_t i = 0; i < r; ++i) {
        T* __restrict orow = out + i * c;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* __restrict brow = b + p * c;
            for (std::size_t j = 0; j < c; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
}

// out[r×k] += g[r×c] · bᵀ   (b is k×c)
template <typename T>
void gemm_nt(const T* g, const T* b, T* out, std::size_t r, std::size_t k, std::size_t c) {
    for (std::size_t i = 0; i < r; ++i) {
        const T* __restrict grow = g + i * c;
        T* orow = out + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T* __restrict brow = b + p * c;
            T acc{0};
            for (std::size_t j = 0; j < c; ++j) {
                acc += grow[j] * brow[j];
            }
            orow[p] += acc;
        }
    }
}

// out[k×c] += aᵀ · g   (a is r×k, g is r×c)
template <typename T>
void gemm_tn(const T* a, const T* g, T* out, std::size_t r, std::size_t k, std::size_t c) {
    for (std::size_t i = 0; i < r; ++i) {
        const T* arow = a + i * k;
        const T* __restrict grow = g + i * c;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T{0}) {
                continue;
            }
            T* __restrict orow = out + p * c;
            for (std::size_t j = 0; j < c; ++j) {
                orow[j] += av * grow[j];
            }
        }
    }
}

template <typename T>
std::size_t last_dim(const Tensor<T>& t) {
    return t.shape().back();
}

} // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a.shape(), 2, "matmul");
    detail::require_rank(b.shape(), 2, "matmul");
    const std::size_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
    detail::require(b.dim(0) == k, "matmul: inner extents differ " + to_string(a.shape()) + " · " +
                                       to_string(b.shape()));
    std::vector<T> out(r * c, T{0});
    detail::gemm_nn(a.values().data(), b.values().data(), out.data(), r, k, c);
    auto an = a.node();
    auto bn = b.node();
    return make_result<T>({r, c}, std::move(out), "matmul", {an, bn}, [r, k, c](Node<T>& self) {
        auto& a_node = *self.parents[0];
        auto& b_node = *self.parents[1];
        if (a_node.requires_grad) {
            detail::gemm_nt(self.grad.data(), b_node.value.data(), a_node.grad_buffer().data(), r, k, c);
        }
        if (b_node.requires_grad) {
            detail::gemm_tn(a_node.value.data(), self.grad.data(), b_node.grad_buffer().data(), r, k, c);
        }
    });
}

/// x[..., C] + b[C], broadcast over leading axes.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
    detail::require_rank(b.shape(), 1, "add_bias");
    const std::size_t c = b.dim(0);
    detail::require(detail::last_dim(x) == c, "add_bias: width mismatch " + to_string(x.shape()) + " + " +
                                                  to_string(b.shape()));
    const std::size_t rows = x.size() / c;
    std::vector<T> out(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] += b.values()[j];
        }
    }
    return make_result<T>(x.shape(), std::move(out), "add_bias", {x.node(), b.node()}, [rows, c](Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& bn = *self.parents[1];
        if (xn.requires_grad) {
            auto& g = xn.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (bn.requires_grad) {
            auto& g = bn.grad_buffer();
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    g[j] += self.grad[i * c + j];
                }
            }
        }
    });
}

/// x[in] rows → x·W + b.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_bias(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same(a.shape(), b.shape(), "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] + b.values()[i];
    }
    return make_result<T>(a.shape(), std::move(out), "add", {a.node(), b.node()}, [](Node<T>& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) {
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same(a.shape(), b.shape(), "sub");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] - b.values()[i];
    }
    return make_result<T>(a.shape(), std::move(out), "sub", {a.node(), b.node()}, [](Node<T>& self) {
        if (self.parents[0]->requires_grad) {
            auto& g = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] -= self.grad[i];
            }
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same(a.shape(), b.shape(), "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] * b.values()[i];
    }
    return make_result<T>(a.shape(), std::move(out), "mul", {a.node(), b.node()}, [](Node<T>& self) {
        auto& an = *self.parents[0];
        auto& bn = *self.parents[1];
        if (an.requires_grad) {
            auto& g = an.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * bn.value[i];
            }
        }
        if (bn.requires_grad) {
            auto& g = bn.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * an.value[i];
            }
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] * factor;
    }
    return make_result<T>(a.shape(), std::move(out), "scale", {a.node()}, [factor](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * factor;
        }
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x.values()[i] > T{0} ? x.values()[i] : T{0};
    }
    return make_result<T>(x.shape(), std::move(out), "relu", {x.node()}, [](Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& g = xn.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xn.value[i] > T{0}) {
                g[i] += self.grad[i];
            }
        }
    });
}

/// Forward value of `quantized`, gradient routed to `continuous` unchanged.
template <typename T>
Tensor<T> straight_through(const Tensor<T>& continuous, const Tensor<T>& quantized) {
    detail::require_same(continuous.shape(), quantized.shape(), "straight_through");
    std::vector<T> out(quantized.values().begin(), quantized.values().end());
    return make_result<T>(continuous.shape(), std::move(out), "straight_through", {continuous.node()},
                          [](Node<T>& self) {
                              auto& g = self.parents[0]->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                  g[i] += self.grad[i];
                              }
                          });
}

/// Identity forward, gradient multiplied by `factor`. Only used for fault
/// injection in the gradient-check harness.
template <typename T>
Tensor<T> scale_grad(const Tensor<T>& x, T factor) {
    std::vector<T> out(x.values().begin(), x.values().end());
    return make_result<T>(x.shape(), std::move(out), "scale_grad", {x.node()}, [factor](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * factor;
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions and normalization

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total{0};
    for (const T v : x.values()) {
        total += v;
    }
    return make_result<T>({1}, {total}, "sum", {x.node()}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (auto& v : g) {
            v += self.grad[0];
        }
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T{1} / static_cast<T>(x.size()));
}

/// Normalizes each row over the last axis, then applies gain and shift.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift, T eps = T(1e-5)) {
    const std::size_t c = detail::last_dim(x);
    detail::require(gain.shape() == Shape{c} && shift.shape() == Shape{c},
                    "layer_norm: affine width must equal " + std::to_string(c));
    const std::size_t rows = x.size() / c;
    std::vector<T> out(x.size());
    std::vector<T> xhat(x.size());
    std::vector<T> inv_std(rows);
    const T* xv = x.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
        T mu{0};
        for (std::size_t j = 0; j < c; ++j) {
            mu += xv[r * c + j];
        }
        mu /= static_cast<T>(c);
        T var{0};
        for (std::size_t j = 0; j < c; ++j) {
            const T d = xv[r * c + j] - mu;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T is = T{1} / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const T h = (xv[r * c + j] - mu) * is;
            xhat[r * c + j] = h;
            out[r * c + j] = h * gain.values()[j] + shift.values()[j];
        }
    }
    return make_result<T>(
        x.shape(), std::move(out), "layer_norm", {x.node(), gain.node(), shift.node()},
        [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            auto& xn = *self.parents[0];
            auto& gn = *self.parents[1];
            auto& sn = *self.parents[2];
            const T* g = self.grad.data();
            if (gn.requires_grad) {
                auto& gg = gn.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                        gg[j] += g[r * c + j] * xhat[r * c + j];
                    }
                }
            }
            if (sn.requires_grad) {
                auto& sg = sn.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                        sg[j] += g[r * c + j];
                    }
                }
            }
            if (xn.requires_grad) {
                auto& xg = xn.grad_buffer();
                const T inv_c = T{1} / static_cast<T>(c);
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_d{0};
                    T mean_dx{0};
                    for (std::size_t j = 0; j < c; ++j) {
                        const T d = g[r * c + j] * gn.value[j];
                        mean_d += d;
                        mean_dx += d * xhat[r * c + j];
                    }
                    mean_d *= inv_c;
                    mean_dx *= inv_c;
                    for (std::size_t j = 0; j < c; ++j) {
                        const T d = g[r * c + j] * gn.value[j];
                        xg[r * c + j] += inv_std[r] * (d - mean_d - xhat[r * c + j] * mean_dx);
                    }
                }
            }
        });
}

/// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    detail::require(x.rank() >= 1 && detail::last_dim(x) > 0, "softmax: empty axis");
    const std::size_t c = detail::last_dim(x);
    const std::size_t rows = x.size() / c;
    std::vector<T> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.values().data() + r * c;
        T mx = *std::max_element(xr, xr + c);
        T total{0};
        for (std::size_t j = 0; j < c; ++j) {
            out[r * c + j] = std::exp(xr[j] - mx);
            total += out[r * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) {
            out[r * c + j] /= total;
        }
    }
    auto probs = out;
    return make_result<T>(x.shape(), std::move(out), "softmax", {x.node()},
                          [rows, c, probs = std::move(probs)](Node<T>& self) {
                              auto& g = self.parents[0]->grad_buffer();
                              for (std::size_t r = 0; r < rows; ++r) {
                                  T dot{0};
                                  for (std::size_t j = 0; j < c; ++j) {
                                      dot += self.grad[r * c + j] * probs[r * c + j];
                                  }
                                  for (std::size_t j = 0; j < c; ++j) {
                                      g[r * c + j] += probs[r * c + j] * (self.grad[r * c + j] - dot);
                                  }
                              }
                          });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    detail::require(numel(shape) == x.size(), "reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
    std::vector<T> out(x.values().begin(), x.values().end());
    return make_result<T>(std::move(shape), std::move(out), "reshape", {x.node()}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

/// Swaps the last two axes: [..., A, B] -> [..., B, A].
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    detail::require(x.rank() >= 2, "transpose: rank must be >= 2");
    const std::size_t a = x.dim(x.rank() - 2), b = x.dim(x.rank() - 1);
    const std::size_t batch = x.size() / (a * b);
    Shape shape = x.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    std::vector<T> out(x.size());
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t i = 0; i < a; ++i) {
            for (std::size_t j = 0; j < b; ++j) {
                out[n * a * b + j * a + i] = x.values()[n * a * b + i * b + j];
            }
        }
    }
    return make_result<T>(std::move(shape), std::move(out), "transpose", {x.node()}, [batch, a, b](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t i = 0; i < a; ++i) {
                for (std::size_t j = 0; j < b; ++j) {
                    g[n * a * b + i * b + j] += self.grad[n * a * b + j * a + i];
                }
            }
        }
    });
}

/// Concatenates along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    detail::require(!parts.empty(), "concat: no inputs");
    const Shape& ref = parts.front().shape();
    detail::require(axis < ref.size(), "concat: axis out of range");
    std::size_t outer = 1, inner = 1, total = 0;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= ref[i];
    }
    for (std::size_t i = axis + 1; i < ref.size(); ++i) {
        inner *= ref[i];
    }
    std::vector<std::size_t> extents;
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto& p : parts) {
        Shape s = p.shape();
        detail::require(s.size() == ref.size(), "concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            detail::require(i == axis || s[i] == ref[i],
                            "concat: extent mismatch " + to_string(s) + " vs " + to_string(ref));
        }
        extents.push_back(s[axis]);
        total += s[axis];
        nodes.push_back(p.node());
    }
    Shape shape = ref;
    shape[axis] = total;
    std::vector<T> out(outer * total * inner);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t span = extents[k] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(parts[k].values().data() + o * span, span, out.data() + o * total * inner + offset * inner);
        }
        offset += extents[k];
    }
    return make_result<T>(std::move(shape), std::move(out), "concat", std::move(nodes),
                          [outer, inner, total, extents](Node<T>& self) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < extents.size(); ++k) {
                                  auto& p = *self.parents[k];
                                  const std::size_t span = extents[k] * inner;
                                  if (p.requires_grad) {
                                      auto& g = p.grad_buffer();
                                      for (std::size_t o = 0; o < outer; ++o) {
                                          const T* src = self.grad.data() + o * total * inner + off * inner;
                                          for (std::size_t i = 0; i < span; ++i) {
                                              g[o * span + i] += src[i];
                                          }
                                      }
                                  }
                                  off += extents[k];
                              }
                          });
}

/// Half-open range [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
    detail::require(axis < x.rank(), "slice: axis out of range");
    detail::require(begin < end && end <= x.dim(axis), "slice: bad range [" + std::to_string(begin) + "," +
                                                           std::to_string(end) + ") on " + to_string(x.shape()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= x.dim(i);
    }
    for (std::size_t i = axis + 1; i < x.rank(); ++i) {
        inner *= x.dim(i);
    }
    const std::size_t full = x.dim(axis), len = end - begin;
    Shape shape = x.shape();
    shape[axis] = len;
    std::vector<T> out(outer * len * inner);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(x.values().data() + (o * full + begin) * inner, len * inner, out.data() + o * len * inner);
    }
    return make_result<T>(std::move(shape), std::move(out), "slice", {x.node()},
                          [outer, inner, full, begin, len](Node<T>& self) {
                              auto& g = self.parents[0]->grad_buffer();
                              for (std::size_t o = 0; o < outer; ++o) {
                                  for (std::size_t i = 0; i < len * inner; ++i) {
                                      g[(o * full + begin) * inner + i] += self.grad[o * len * inner + i];
                                  }
                              }
                          });
}

/// Gathers rows of a [V×D] table. Backward scatter-adds into the table.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
    detail::require_rank(table.shape(), 2, "embedding_lookup");
    detail::require(!ids.empty(), "embedding_lookup: no ids");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab) {
            throw DimensionError("embedding_lookup: id " + std::to_string(ids[i]) + " out of range " +
                                 std::to_string(vocab));
        }
        std::copy_n(table.values().data() + ids[i] * d, d, out.data() + i * d);
    }
    return make_result<T>({ids.size(), d}, std::move(out), "embedding_lookup", {table.node()},
                          [ids, d](Node<T>& self) {
                              auto& g = self.parents[0]->grad_buffer();
                              for (std::size_t i = 0; i < ids.size(); ++i) {
                                  for (std::size_t j = 0; j < d; ++j) {
                                      g[ids[i] * d + j] += self.grad[i * d + j];
                                  }
                              }
                          });
}

/// x[R×C] + p[P×C] with row r receiving p[r mod P].
template <typename T>
Tensor<T> add_tiled(const Tensor<T>& x, const Tensor<T>& p) {
    detail::require_rank(x.shape(), 2, "add_tiled");
    detail::require_rank(p.shape(), 2, "add_tiled");
    const std::size_t rows = x.dim(0), c = x.dim(1), period = p.dim(0);
    detail::require(p.dim(1) == c && rows % period == 0, "add_tiled: incompatible " + to_string(x.shape()) +
                                                             " + " + to_string(p.shape()));
    std::vector<T> out(x.values().begin(), x.values().end());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
            out[r * c + j] += p.values()[(r % period) * c + j];
        }
    }
    return make_result<T>(x.shape(), std::move(out), "add_tiled", {x.node(), p.node()},
                          [rows, c, period](Node<T>& self) {
                              auto& xn = *self.parents[0];
                              auto& pn = *self.parents[1];
                              if (xn.requires_grad) {
                                  auto& g = xn.grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                      g[i] += self.grad[i];
                                  }
                              }
                              if (pn.requires_grad) {
                                  auto& g = pn.grad_buffer();
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      for (std::size_t j = 0; j < c; ++j) {
                                          g[(r % period) * c + j] += self.grad[r * c + j];
                                      }
                                  }
                              }
                          });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

/// Cross-correlation over the last axis. x is [C_in×N] or [B×C_in×N],
/// kernels [C_out×C_in×k], bias [C_out].
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t padding = 0) {
    detail::require(x.rank() == 2 || x.rank() == 3, "conv1d: input must be [C×N] or [B×C×N]");
    detail::require_rank(kernels.shape(), 3, "conv1d");
    detail::require(stride >= 1, "conv1d: stride must be >= 1");
    const bool batched = x.rank() == 3;
    const std::size_t batch = batched ? x.dim(0) : 1;
    const std::size_t cin = x.dim(batched ? 1 : 0), n = x.dim(batched ? 2 : 1);
    const std::size_t cout = kernels.dim(0), k = kernels.dim(2);
    detail::require(kernels.dim(1) == cin, "conv1d: kernel expects " + std::to_string(kernels.dim(1)) +
                                               " input channels, got " + std::to_string(cin));
    detail::require(bias.shape() == Shape{cout}, "conv1d: bias must be [C_out]");
    detail::require(k <= n + 2 * padding, "conv1d: empty output extent");
    const std::size_t nout = (n + 2 * padding - k) / stride + 1;

    // Valid output range for each tap t: positions o with 0 <= o*stride + t - padding < n.
    std::vector<std::size_t> lo(k), hi(k);
    for (std::size_t t = 0; t < k; ++t) {
        std::size_t first = 0;
        while (first < nout && first * stride + t < padding) {
            ++first;
        }
        std::size_t last = first;
        while (last < nout && last * stride + t < n + padding) {
            ++last;
        }
        lo[t] = first;
        hi[t] = last;
    }

    std::vector<T> out(batch * cout * nout);
    const T* xv = x.values().data();
    const T* wv = kernels.values().data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
            T* orow = out.data() + (b * cout + co) * nout;
            std::fill(orow, orow + nout, bias.values()[co]);
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* xrow = xv + (b * cin + ci) * n;
                for (std::size_t t = 0; t < k; ++t) {
                    const T w = wv[(co * cin + ci) * k + t];
                    for (std::size_t o = lo[t]; o < hi[t]; ++o) {
                        orow[o] += w * xrow[o * stride + t - padding];
                    }
                }
            }
        }
    }
    Shape shape = batched ? Shape{batch, cout, nout} : Shape{cout, nout};
    return make_result<T>(
        std::move(shape), std::move(out), "conv1d", {x.node(), kernels.node(), bias.node()},
        [=](Node<T>& self) {
            auto& xn = *self.parents[0];
            auto& wn = *self.parents[1];
            auto& bn = *self.parents[2];
            const T* g = self.grad.data();
            if (bn.requires_grad) {
                auto& bg = bn.grad_buffer();
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t co = 0; co < cout; ++co) {
                        for (std::size_t o = 0; o < nout; ++o) {
                            bg[co] += g[(b * cout + co) * nout + o];
                        }
                    }
                }
            }
            T* xg = xn.requires_grad ? xn.grad_buffer().data() : nullptr;
            T* wg = wn.requires_grad ? wn.grad_buffer().data() : nullptr;
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t co = 0; co < cout; ++co) {
                    const T* grow = g + (b * cout + co) * nout;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const T* xrow = xn.value.data() + (b * cin + ci) * n;
                        for (std::size_t t = 0; t < k; ++t) {
                            const std::size_t widx = (co * cin + ci) * k + t;
                            if (wg) {
                                T acc{0};
                                for (std::size_t o = lo[t]; o < hi[t]; ++o) {
                                    acc += grow[o] * xrow[o * stride + t - padding];
                                }
                                wg[widx] += acc;
                            }
                            if (xg) {
                                const T w = wn.value[widx];
                                T* xgrow = xg + (b * cin + ci) * n;
                                for (std::size_t o = lo[t]; o < hi[t]; ++o) {
                                    xgrow[o * stride + t - padding] += w * grow[o];
                                }
                            }
                        }
                    }
                }
            }
        });
}

/// 2D cross-correlation. x [B×C_in×H×W], kernels [C_out×C_in×kh×kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t padding = 0) {
    detail::require_rank(x.shape(), 4, "conv2d");
    detail::require_rank(kernels.shape(), 4, "conv2d");
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    detail::require(kernels.dim(1) == cin, "conv2d: channel mismatch");
    detail::require(bias.shape() == Shape{cout}, "conv2d: bias must be [C_out]");
    detail::require(kh <= h + 2 * padding && kw <= w + 2 * padding, "conv2d: empty output extent");
    const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
    const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
    const std::size_t cols = cin * kh * kw;
    const std::size_t spatial = oh * ow;

    // im2col per image: [cols × spatial]
    auto im2col = [=](const T* img, T* col) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t i = 0; i < kh; ++i) {
                for (std::size_t j = 0; j < kw; ++j) {
                    T* row = col + ((ci * kh + i) * kw + j) * spatial;
                    for (std::size_t y = 0; y < oh; ++y) {
                        const long iy = static_cast<long>(y * stride + i) - static_cast<long>(padding);
                        for (std::size_t xo = 0; xo < ow; ++xo) {
                            const long ix = static_cast<long>(xo * stride + j) - static_cast<long>(padding);
                            row[y * ow + xo] = (iy >= 0 && iy < static_cast<long>(h) && ix >= 0 &&
                                                ix < static_cast<long>(w))
                                                   ? img[(ci * h + iy) * w + ix]
                                                   : T{0};
                        }
                    }
                }
            }
        }
    };

    std::vector<T> columns(batch * cols * spatial);
    std::vector<T> out(batch * cout * spatial);
    for (std::size_t b = 0; b < batch; ++b) {
        T* col = columns.data() + b * cols * spatial;
        im2col(x.values().data() + b * cin * h * w, col);
        T* o = out.data() + b * cout * spatial;
        for (std::size_t co = 0; co < cout; ++co) {
            std::fill(o + co * spatial, o + (co + 1) * spatial, bias.values()[co]);
        }
        detail::gemm_nn(kernels.values().data(), col, o, cout, cols, spatial);
    }
    return make_result<T>(
        {batch, cout, oh, ow}, std::move(out), "conv2d", {x.node(), kernels.node(), bias.node()},
        [=, columns = std::move(columns)](Node<T>& self) {
            auto& xn = *self.parents[0];
            auto& wn = *self.parents[1];
            auto& bn = *self.parents[2];
            std::vector<T> dcol(xn.requires_grad ? cols * spatial : 0);
            for (std::size_t b = 0; b < batch; ++b) {
                const T* g = self.grad.data() + b * cout * spatial;
                if (bn.requires_grad) {
                    auto& bg = bn.grad_buffer();
                    for (std::size_t co = 0; co < cout; ++co) {
                        for (std::size_t s = 0; s < spatial; ++s) {
                            bg[co] += g[co * spatial + s];
                        }
                    }
                }
                const T* col = columns.data() + b * cols * spatial;
                if (wn.requires_grad) {
                    detail::gemm_nt(g, col, wn.grad_buffer().data(), cout, cols, spatial);
                }
                if (xn.requires_grad) {
                    std::fill(dcol.begin(), dcol.end(), T{0});
                    detail::gemm_tn(wn.value.data(), g, dcol.data(), cout, cols, spatial);
                    T* xg = xn.grad_buffer().data() + b * cin * h * w;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        for (std::size_t i = 0; i < kh; ++i) {
                            for (std::size_t j = 0; j < kw; ++j) {
                                const T* row = dcol.data() + ((ci * kh + i) * kw + j) * spatial;
                                for (std::size_t y = 0; y < oh; ++y) {
                                    const long iy = static_cast<long>(y * stride + i) - static_cast<long>(padding);
                                    if (iy < 0 || iy >= static_cast<long>(h)) {
                                        continue;
                                    }
                                    for (std::size_t xo = 0; xo < ow; ++xo) {
                                        const long ix =
                                            static_cast<long>(xo * stride + j) - static_cast<long>(padding);
                                        if (ix >= 0 && ix < static_cast<long>(w)) {
                                            xg[(ci * h + iy) * w + ix] += row[y * ow + xo];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

/// Bin i covers [floor(i*N/out), ceil((i+1)*N/out)).
inline std::pair<std::size_t, std::size_t> adaptive_bin(std::size_t i, std::size_t n, std::size_t out_len) {
    const std::size_t begin = (i * n) / out_len;
    const std::size_t end = ((i + 1) * n + out_len - 1) / out_len;
    return {begin, end};
}

/// Average pooling over the last axis to a fixed length. x is [C×N] or [B×C×N].
template <typename T>
Tensor<T> adaptive_avg_pool1d(const Tensor<T>& x, std::size_t out_len) {
    detail::require(x.rank() == 2 || x.rank() == 3, "adaptive_avg_pool1d: input must be [C×N] or [B×C×N]");
    detail::require(out_len >= 1, "adaptive_avg_pool1d: out_len must be >= 1");
    const std::size_t n = detail::last_dim(x);
    const std::size_t rows = x.size() / n;
    Shape shape = x.shape();
    shape.back() = out_len;
    std::vector<T> out(rows * out_len);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.values().data() + r * n;
        for (std::size_t i = 0; i < out_len; ++i) {
            const auto [b, e] = adaptive_bin(i, n, out_len);
            T acc{0};
            for (std::size_t j = b; j < e; ++j) {
                acc += xr[j];
            }
            out[r * out_len + i] = acc / static_cast<T>(e - b);
        }
    }
    return make_result<T>(std::move(shape), std::move(out), "adaptive_avg_pool1d", {x.node()},
                          [rows, n, out_len](Node<T>& self) {
                              auto& g = self.parents[0]->grad_buffer();
                              for (std::size_t r = 0; r < rows; ++r) {
                                  for (std::size_t i = 0; i < out_len; ++i) {
                                      const auto [b, e] = adaptive_bin(i, n, out_len);
                                      const T share = self.grad[r * out_len + i] / static_cast<T>(e - b);
                                      for (std::size_t j = b; j < e; ++j) {
                                          g[r * n + j] += share;
                                      }
                                  }
                              }
                          });
}

/// Feature-wise modulation: h [B×C×S], gamma and beta [B×C]; out = gamma⊙h + beta.
template <typename T>
Tensor<T> film(const Tensor<T>& h, const Tensor<T>& gamma, const Tensor<T>& beta) {
    detail::require_rank(h.shape(), 3, "film");
    const std::size_t batch = h.dim(0), c = h.dim(1), s = h.dim(2);
    detail::require(gamma.shape() == Shape{batch, c} && beta.shape() == Shape{batch, c},
                    "film: gamma/beta must be [B×C]");
    std::vector<T> out(h.size());
    for (std::size_t bc = 0; bc < batch * c; ++bc) {
        for (std::size_t j = 0; j < s; ++j) {
            out[bc * s + j] = gamma.values()[bc] * h.values()[bc * s + j] + beta.values()[bc];
        }
    }
    return make_result<T>(h.shape(), std::move(out), "film", {h.node(), gamma.node(), beta.node()},
                          [batch, c, s](Node<T>& self) {
                              auto& hn = *self.parents[0];
                              auto& gn = *self.parents[1];
                              auto& bn = *self.parents[2];
                              for (std::size_t bc = 0; bc < batch * c; ++bc) {
                                  T dg{0}, db{0};
                                  for (std::size_t j = 0; j < s; ++j) {
                                      const T g = self.grad[bc * s + j];
                                      dg += g * hn.value[bc * s + j];
                                      db += g;
                                  }
                                  if (hn.requires_grad) {
                                      auto& hg = hn.grad_buffer();
                                      for (std::size_t j = 0; j < s; ++j) {
                                          hg[bc * s + j] += self.grad[bc * s + j] * gn.value[bc];
                                      }
                                  }
                                  if (gn.requires_grad) {
                                      gn.grad_buffer()[bc] += dg;
                                  }
                                  if (bn.requires_grad) {
                                      bn.grad_buffer()[bc] += db;
                                  }
                              }
                          });
}

// ---------------------------------------------------------------------------
// Attention

/// Multi-head self-attention with a causal mask (position i sees j <= i).
/// qkv is [B·T × 3D] laid out as [q | k | v]; returns [B·T × D].
template <typename T>
Tensor<T> causal_self_attention(const Tensor<T>& qkv, std::size_t batch, std::size_t seq, std::size_t heads) {
    detail::require_rank(qkv.shape(), 2, "causal_self_attention");
    detail::require(qkv.dim(0) == batch * seq && qkv.dim(1) % 3 == 0,
                    "causal_self_attention: expected [B·T × 3D], got " + to_string(qkv.shape()));
    const std::size_t d = qkv.dim(1) / 3;
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("causal_self_attention: width " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    const std::size_t dh = d / heads;
    const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));
    const std::size_t stride = 3 * d;
    const T* in = qkv.values().data();
    std::vector<T> out(batch * seq * d, T{0});
    std::vector<T> probs(batch * heads * seq * seq, T{0});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t hd = 0; hd < heads; ++hd) {
            T* p = probs.data() + (b * heads + hd) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
                const T* q = in + (b * seq + i) * stride + hd * dh;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j <= i; ++j) {
                    const T* kk = in + (b * seq + j) * stride + d + hd * dh;
                    T s{0};
                    for (std::size_t e = 0; e < dh; ++e) {
                        s += q[e] * kk[e];
                    }
                    s *= inv_sqrt;
                    p[i * seq + j] = s;
                    mx = std::max(mx, s);
                }
                T total{0};
                for (std::size_t j = 0; j <= i; ++j) {
                    p[i * seq + j] = std::exp(p[i * seq + j] - mx);
                    total += p[i * seq + j];
                }
                T* o = out.data() + (b * seq + i) * d + hd * dh;
                for (std::size_t j = 0; j <= i; ++j) {
                    p[i * seq + j] /= total;
                    const T* v = in + (b * seq + j) * stride + 2 * d + hd * dh;
                    for (std::size_t e = 0; e < dh; ++e) {
                        o[e] += p[i * seq + j] * v[e];
                    }
                }
            }
        }
    }
    return make_result<T>(
        {batch * seq, d}, std::move(out), "causal_self_attention", {qkv.node()},
        [=, probs = std::move(probs)](Node<T>& self) {
            auto& xn = *self.parents[0];
            auto& gx = xn.grad_buffer();
            const T* x = xn.value.data();
            std::vector<T> dp(seq);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t hd = 0; hd < heads; ++hd) {
                    const T* p = probs.data() + (b * heads + hd) * seq * seq;
                    for (std::size_t i = 0; i < seq; ++i) {
                        const T* go = self.grad.data() + (b * seq + i) * d + hd * dh;
                        T dot{0};
                        for (std::size_t j = 0; j <= i; ++j) {
                            const std::size_t vrow = (b * seq + j) * stride + 2 * d + hd * dh;
                            T s{0};
                            for (std::size_t e = 0; e < dh; ++e) {
                                s += go[e] * x[vrow + e];
                                gx[vrow + e] += p[i * seq + j] * go[e];
                            }
                            dp[j] = s;
                            dot += s * p[i * seq + j];
                        }
                        const std::size_t qrow = (b * seq + i) * stride + hd * dh;
                        for (std::size_t j = 0; j <= i; ++j) {
                            const T ds = p[i * seq + j] * (dp[j] - dot) * inv_sqrt;
                            const std::size_t krow = (b * seq + j) * stride + d + hd * dh;
                            for (std::size_t e = 0; e < dh; ++e) {
                                gx[qrow + e] += ds * x[krow + e];
                                gx[krow + e] += ds * x[qrow + e];
                            }
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::require_same(pred.shape(), target.shape(), "mse_loss");
    const std::size_t n = pred.size();
    T total{0};
    for (std::size_t i = 0; i < n; ++i) {
        const T d = pred.values()[i] - target.values()[i];
        total += d * d;
    }
    return make_result<T>({1}, {total / static_cast<T>(n)}, "mse_loss", {pred.node(), target.node()},
                          [n](Node<T>& self) {
                              auto& pn = *self.parents[0];
                              auto& tn = *self.parents[1];
                              const T coeff = T{2} * self.grad[0] / static_cast<T>(n);
                              for (std::size_t i = 0; i < n; ++i) {
                                  const T d = coeff * (pn.value[i] - tn.value[i]);
                                  if (pn.requires_grad) {
                                      pn.grad_buffer()[i] += d;
                                  }
                                  if (tn.requires_grad) {
                                      tn.grad_buffer()[i] -= d;
                                  }
                              }
                          });
}

/// Mean squared error over elements whose mask entry is nonzero.
template <typename T>
Tensor<T> masked_mse_loss(const Tensor<T>& pred, const Tensor<T>& target, std::span<const T> mask) {
    detail::require_same(pred.shape(), target.shape(), "masked_mse_loss");
    detail::require(mask.size() == pred.size(), "masked_mse_loss: mask size mismatch");
    T count{0};
    T total{0};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T d = pred.values()[i] - target.values()[i];
        total += mask[i] * d * d;
        count += mask[i];
    }
    const T denom = std::max(count, T{1});
    std::vector<T> m(mask.begin(), mask.end());
    return make_result<T>({1}, {total / denom}, "masked_mse_loss", {pred.node(), target.node()},
                          [m = std::move(m), denom](Node<T>& self) {
                              auto& pn = *self.parents[0];
                              auto& tn = *self.parents[1];
                              const T coeff = T{2} * self.grad[0] / denom;
                              for (std::size_t i = 0; i < m.size(); ++i) {
                                  const T d = coeff * m[i] * (pn.value[i] - tn.value[i]);
                                  if (pn.requires_grad) {
                                      pn.grad_buffer()[i] += d;
                                  }
                                  if (tn.requires_grad) {
                                      tn.grad_buffer()[i] -= d;
                                  }
                              }
                          });
}

/// Mean negative log-likelihood of `labels` under row-wise softmax(logits).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
    detail::require_rank(logits.shape(), 2, "cross_entropy");
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    detail::require(labels.size() == b, "cross_entropy: label count mismatch");
    std::vector<T> probs(b * k);
    T total{0};
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= k) {
            throw DimensionError("cross_entropy: label " + std::to_string(labels[i]) + " out of range [0," +
                                 std::to_string(k) + ")");
        }
        const T* row = logits.values().data() + i * k;
        const T mx = *std::max_element(row, row + k);
        T z{0};
        for (std::size_t j = 0; j < k; ++j) {
            z += std::exp(row[j] - mx);
        }
        const T log_z = mx + std::log(z);
        total += log_z - row[labels[i]];
        for (std::size_t j = 0; j < k; ++j) {
            probs[i * k + j] = std::exp(row[j] - log_z);
        }
    }
    return make_result<T>({1}, {total / static_cast<T>(b)}, "cross_entropy", {logits.node()},
                          [b, k, labels, probs = std::move(probs)](Node<T>& self) {
                              auto& g = self.parents[0]->grad_buffer();
                              const T coeff = self.grad[0] / static_cast<T>(b);
                              for (std::size_t i = 0; i < b; ++i) {
                                  for (std::size_t j = 0; j < k; ++j) {
                                      const T onehot = j == labels[i] ? T{1} : T{0};
                                      g[i * k + j] += coeff * (probs[i * k + j] - onehot);
                                  }
                              }
                          });
}

} // namespace geoaware::nn
