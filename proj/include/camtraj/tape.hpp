#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "camtraj/error.hpp"
#include "camtraj/kernels.hpp"
#include "camtraj/rng.hpp"
#include "camtraj/tensor.hpp"

namespace camtraj {

// Reverse-mode autodiff over a linear tape of 2D tensors. Each op records
// its output value and a backward closure; backward() walks the tape once
// in reverse. Instantiated for float (training) and double (verification).
template <typename T>
class Tape {
public:
    using NodeId = int;

    NodeId leaf(Tensor<T> value) { return push(std::move(value), nullptr); }

    const Tensor<T>& value(NodeId id) const { return nodes_[id].value; }
    const Tensor<T>& grad(NodeId id) const { return nodes_[id].grad; }
    size_t size() const { return nodes_.size(); }

    // ---- primitive ops ----

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        if (va.cols() != vb.rows())
            throw ShapeError("matmul: " + shape_str(va.shape) + " x " + shape_str(vb.shape));
        int m = (int)va.rows(), k = (int)va.cols(), n = (int)vb.cols();
        Tensor<T> out({va.rows(), vb.cols()});
        kern::gemm_nn(va.data.data(), vb.data.data(), out.data.data(), m, k, n, false);
        return push(std::move(out), [this, a, b, m, k, n](NodeId id) {
            const T* g = nodes_[id].grad.data.data();
            // dA = dC * B^T ; dB = A^T * dC
            kern::gemm_nt(g, val(b).data.data(), grad_buf(a), m, n, k, true);
            kern::gemm_tn(val(a).data.data(), g, grad_buf(b), k, m, n, true);
        });
    }

    // C = A * B^T (B stored as N x K).
    NodeId matmul_nt(NodeId a, NodeId b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        if (va.cols() != vb.cols())
            throw ShapeError("matmul_nt: " + shape_str(va.shape) + " x " +
                             shape_str(vb.shape));
        int m = (int)va.rows(), k = (int)va.cols(), n = (int)vb.rows();
        Tensor<T> out({va.rows(), vb.rows()});
        kern::gemm_nt(va.data.data(), vb.data.data(), out.data.data(), m, k, n, false);
        return push(std::move(out), [this, a, b, m, k, n](NodeId id) {
            const T* g = nodes_[id].grad.data.data();
            // dA = dC * B ; dB = dC^T * A
            kern::gemm_nn(g, val(b).data.data(), grad_buf(a), m, n, k, true);
            kern::gemm_tn(g, val(a).data.data(), grad_buf(b), n, m, k, true);
        });
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        if (!va.same_shape(vb))
            throw ShapeError("add: " + shape_str(va.shape) + " vs " + shape_str(vb.shape));
        Tensor<T> out(va.shape);
        kern::add(va.data.data(), vb.data.data(), out.data.data(), out.data.size());
        return push(std::move(out), [this, a, b](NodeId id) {
            const Tensor<T>& g = nodes_[id].grad;
            kern::axpy(T(1), g.data.data(), grad_buf(a), g.data.size());
            kern::axpy(T(1), g.data.data(), grad_buf(b), g.data.size());
        });
    }

    NodeId mul(NodeId a, NodeId b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        if (!va.same_shape(vb))
            throw ShapeError("mul: " + shape_str(va.shape) + " vs " + shape_str(vb.shape));
        Tensor<T> out(va.shape);
        kern::mul(va.data.data(), vb.data.data(), out.data.data(), out.data.size());
        return push(std::move(out), [this, a, b](NodeId id) {
            const Tensor<T>& g = nodes_[id].grad;
            size_t n = g.data.size();
            const T* gp = g.data.data();
            const T* ap = val(a).data.data();
            const T* bp = val(b).data.data();
            T* ga = grad_buf(a);
            T* gb = grad_buf(b);
            for (size_t i = 0; i < n; ++i) {
                ga[i] += gp[i] * bp[i];
                gb[i] += gp[i] * ap[i];
            }
        });
    }

    // Broadcast a 1 x N row vector over every row of a.
    NodeId add_rowvec(NodeId a, NodeId bias) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(bias);
        if (vb.rows() != 1 || vb.cols() != va.cols())
            throw ShapeError("add_rowvec: bias " + shape_str(vb.shape) + " vs " +
                             shape_str(va.shape));
        Tensor<T> out(va.shape);
        int64_t r = va.rows(), c = va.cols();
        for (int64_t i = 0; i < r; ++i)
            kern::add(va.data.data() + i * c, vb.data.data(), out.data.data() + i * c, c);
        return push(std::move(out), [this, a, bias, r, c](NodeId id) {
            const T* g = nodes_[id].grad.data.data();
            kern::axpy(T(1), g, grad_buf(a), (size_t)(r * c));
            T* gb = grad_buf(bias);
            for (int64_t i = 0; i < r; ++i) kern::axpy(T(1), g + i * c, gb, c);
        });
    }

    NodeId scale(NodeId a, T alpha) {
        const Tensor<T>& va = val(a);
        Tensor<T> out(va.shape);
        kern::scale(va.data.data(), alpha, out.data.data(), out.data.size());
        return push(std::move(out), [this, a, alpha](NodeId id) {
            const Tensor<T>& g = nodes_[id].grad;
            kern::axpy(alpha, g.data.data(), grad_buf(a), g.data.size());
        });
    }

    NodeId transpose(NodeId a) {
        const Tensor<T>& va = val(a);
        int64_t r = va.rows(), c = va.cols();
        Tensor<T> out({c, r});
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) out.at(j, i) = va.at(i, j);
        return push(std::move(out), [this, a, r, c](NodeId id) {
            const Tensor<T>& g = nodes_[id].grad;
            T* ga = grad_buf(a);
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) ga[i * c + j] += g.at(j, i);
        });
    }

    // Row-wise softmax (axis = last).
    NodeId softmax(NodeId a) {
        const Tensor<T>& va = val(a);
        Tensor<T> out(va.shape);
        int64_t r = va.rows(), c = va.cols();
        for (int64_t i = 0; i < r; ++i) {
            const T* x = va.data.data() + i * c;
            T* y = out.data.data() + i * c;
            T mx = kern::max(x, c);
            T s = T(0);
            for (int64_t j = 0; j < c; ++j) {
                y[j] = std::exp(x[j] - mx);
                s += y[j];
            }
            kern::scale(y, T(1) / s, y, c);
        }
        return push(std::move(out), [this, a, r, c](NodeId id) {
            const T* y = nodes_[id].value.data.data();
            const T* g = nodes_[id].grad.data.data();
            T* ga = grad_buf(a);
            for (int64_t i = 0; i < r; ++i) {
                const T* yi = y + i * c;
                const T* gi = g + i * c;
                T dotv = kern::dot(yi, gi, c);
                T* gout = ga + i * c;
                for (int64_t j = 0; j < c; ++j) gout[j] += yi[j] * (gi[j] - dotv);
            }
        });
    }

    // Row-wise layer norm with affine gain/bias (each 1 x D).
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, T eps) {
        const Tensor<T>& vx = val(x);
        int64_t r = vx.rows(), c = vx.cols();
        if (val(gamma).numel() != c || val(beta).numel() != c)
            throw ShapeError("layer_norm: affine params must be 1 x D");
        Tensor<T> out(vx.shape);
        Tensor<T> xhat(vx.shape);
        std::vector<T> inv_sigma((size_t)r);
        const T* gm = val(gamma).data.data();
        const T* bt = val(beta).data.data();
        for (int64_t i = 0; i < r; ++i) {
            const T* xi = vx.data.data() + i * c;
            T mu = kern::sum(xi, c) / T(c);
            T var = T(0);
            for (int64_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
            var /= T(c);
            T is = T(1) / std::sqrt(var + eps);
            inv_sigma[(size_t)i] = is;
            T* xh = xhat.data.data() + i * c;
            T* y = out.data.data() + i * c;
            for (int64_t j = 0; j < c; ++j) {
                xh[j] = (xi[j] - mu) * is;
                y[j] = xh[j] * gm[j] + bt[j];
            }
        }
        auto xhat_p = std::make_shared<Tensor<T>>(std::move(xhat));
        auto is_p = std::make_shared<std::vector<T>>(std::move(inv_sigma));
        return push(std::move(out), [this, x, gamma, beta, r, c, xhat_p, is_p](NodeId id) {
            const T* g = nodes_[id].grad.data.data();
            const T* gm = val(gamma).data.data();
            T* gx = grad_buf(x);
            T* gg = grad_buf(gamma);
            T* gb = grad_buf(beta);
            for (int64_t i = 0; i < r; ++i) {
                const T* gi = g + i * c;
                const T* xh = xhat_p->data.data() + i * c;
                T is = (*is_p)[(size_t)i];
                T mean_gy = T(0), mean_gyxh = T(0);
                for (int64_t j = 0; j < c; ++j) {
                    T gy = gi[j] * gm[j];
                    mean_gy += gy;
                    mean_gyxh += gy * xh[j];
                    gg[j] += gi[j] * xh[j];
                    gb[j] += gi[j];
                }
                mean_gy /= T(c);
                mean_gyxh /= T(c);
                T* gxi = gx + i * c;
                for (int64_t j = 0; j < c; ++j)
                    gxi[j] += (gi[j] * gm[j] - mean_gy - xh[j] * mean_gyxh) * is;
            }
        });
    }

    NodeId gelu(NodeId a) {
        const Tensor<T>& va = val(a);
        Tensor<T> out(va.shape);
        const T inv_sqrt2 = T(0.7071067811865475);
        for (size_t i = 0; i < va.data.size(); ++i) {
            T x = va.data[i];
            out.data[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
        }
        return push(std::move(out), [this, a, inv_sqrt2](NodeId id) {
            const Tensor<T>& g = nodes_[id].grad;
            const T* xp = val(a).data.data();
            T* ga = grad_buf(a);
            const T inv_sqrt2pi = T(0.3989422804014327);
            for (size_t i = 0; i < g.data.size(); ++i) {
                T x = xp[i];
                T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
                T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
                ga[i] += g.data[i] * (cdf + x * pdf);
            }
        });
    }

    // Inverted dropout: identity when !train or p == 0.
    NodeId dropout(NodeId a, double p, Rng& rng, bool train) {
        if (p < 0.0 || p >= 1.0) throw InvalidInputError("dropout p must be in [0, 1)");
        const Tensor<T>& va = val(a);
        if (!train || p == 0.0) {
            Tensor<T> out = va;
            return push(std::move(out), [this, a](NodeId id) {
                const Tensor<T>& g = nodes_[id].grad;
                kern::axpy(T(1), g.data.data(), grad_buf(a), g.data.size());
            });
        }
        auto mask = std::make_shared<std::vector<T>>(va.data.size());
        T keep_scale = T(1.0 / (1.0 - p));
        for (auto& m : *mask) m = rng.uniform() < p ? T(0) : keep_scale;
        Tensor<T> out(va.shape);
        kern::mul(va.data.data(), mask->data(), out.data.data(), out.data.size());
        return push(std::move(out), [this, a, mask](NodeId id) {
            const Tensor<T>& g = nodes_[id].grad;
            const T* gp = g.data.data();
            T* ga = grad_buf(a);
            const T* mp = mask->data();
            for (size_t i = 0; i < g.data.size(); ++i) ga[i] += gp[i] * mp[i];
        });
    }

    // Mean over rows selected by mask (axis = 0); mask needs >= 1 true entry.
    NodeId masked_mean(NodeId a, const std::vector<bool>& mask) {
        const Tensor<T>& va = val(a);
        if ((int64_t)mask.size() != va.rows())
            throw ShapeError("masked_mean: mask length vs rows");
        auto sel = std::make_shared<std::vector<int64_t>>();
        for (size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) sel->push_back((int64_t)i);
        if (sel->empty()) throw InvalidInputError("masked_mean: empty mask");
        int64_t c = va.cols();
        Tensor<T> out({1, c});
        for (int64_t i : *sel)
            kern::axpy(T(1), va.data.data() + i * c, out.data.data(), c);
        kern::scale(out.data.data(), T(1) / T(sel->size()), out.data.data(), c);
        return push(std::move(out), [this, a, sel, c](NodeId id) {
            const T* g = nodes_[id].grad.data.data();
            T inv = T(1) / T(sel->size());
            T* ga = grad_buf(a);
            for (int64_t i : *sel) kern::axpy(inv, g, ga + i * c, c);
        });
    }

    // Gather rows of a table by index.
    NodeId embedding_lookup(NodeId table, const std::vector<int64_t>& indices) {
        const Tensor<T>& vt = val(table);
        int64_t c = vt.cols();
        Tensor<T> out({(int64_t)indices.size(), c});
        for (size_t i = 0; i < indices.size(); ++i) {
            int64_t ix = indices[i];
            if (ix < 0 || ix >= vt.rows())
                throw InvalidInputError("embedding_lookup: index out of range");
            std::copy_n(vt.data.data() + ix * c, c, out.data.data() + (int64_t)i * c);
        }
        auto idx = std::make_shared<std::vector<int64_t>>(indices);
        return push(std::move(out), [this, table, idx, c](NodeId id) {
            const T* g = nodes_[id].grad.data.data();
            T* gt = grad_buf(table);
            for (size_t i = 0; i < idx->size(); ++i)
                kern::axpy(T(1), g + (int64_t)i * c, gt + (*idx)[i] * c, c);
        });
    }

    NodeId concat_rows(NodeId a, NodeId b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        if (va.cols() != vb.cols()) throw ShapeError("concat_rows: column mismatch");
        int64_t c = va.cols(), ra = va.rows(), rb = vb.rows();
        Tensor<T> out({ra + rb, c});
        std::copy(va.data.begin(), va.data.end(), out.data.begin());
        std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + ra * c);
        return push(std::move(out), [this, a, b, ra, rb, c](NodeId id) {
            const T* g = nodes_[id].grad.data.data();
            kern::axpy(T(1), g, grad_buf(a), (size_t)(ra * c));
            kern::axpy(T(1), g + ra * c, grad_buf(b), (size_t)(rb * c));
        });
    }

    NodeId concat_cols(NodeId a, NodeId b) {
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        if (va.rows() != vb.rows()) throw ShapeError("concat_cols: row mismatch");
        int64_t r = va.rows(), ca = va.cols(), cb = vb.cols();
        Tensor<T> out({r, ca + cb});
        for (int64_t i = 0; i < r; ++i) {
            std::copy_n(va.data.data() + i * ca, ca, out.data.data() + i * (ca + cb));
            std::copy_n(vb.data.data() + i * cb, cb, out.data.data() + i * (ca + cb) + ca);
        }
        return push(std::move(out), [this, a, b, r, ca, cb](NodeId id) {
            const T* g = nodes_[id].grad.data.data();
            T* ga = grad_buf(a);
            T* gb = grad_buf(b);
            for (int64_t i = 0; i < r; ++i) {
                kern::axpy(T(1), g + i * (ca + cb), ga + i * ca, ca);
                kern::axpy(T(1), g + i * (ca + cb) + ca, gb + i * cb, cb);
            }
        });
    }

    // Columns [c0, c1) of a.
    NodeId slice_cols(NodeId a, int64_t c0, int64_t c1) {
        const Tensor<T>& va = val(a);
        if (c0 < 0 || c1 > va.cols() || c0 >= c1)
            throw ShapeError("slice_cols: bad column range");
        int64_t r = va.rows(), c = va.cols(), w = c1 - c0;
        Tensor<T> out({r, w});
        for (int64_t i = 0; i < r; ++i)
            std::copy_n(va.data.data() + i * c + c0, w, out.data.data() + i * w);
        return push(std::move(out), [this, a, c0, r, c, w](NodeId id) {
            const T* g = nodes_[id].grad.data.data();
            T* ga = grad_buf(a);
            for (int64_t i = 0; i < r; ++i) kern::axpy(T(1), g + i * w, ga + i * c + c0, w);
        });
    }

    // Rows [r0, r1) of a.
    NodeId slice_rows(NodeId a, int64_t r0, int64_t r1) {
        const Tensor<T>& va = val(a);
        if (r0 < 0 || r1 > va.rows() || r0 >= r1) throw ShapeError("slice_rows: bad range");
        int64_t c = va.cols(), h = r1 - r0;
        Tensor<T> out({h, c});
        std::copy_n(va.data.data() + r0 * c, h * c, out.data.data());
        return push(std::move(out), [this, a, r0, c, h](NodeId id) {
            const T* g = nodes_[id].grad.data.data();
            kern::axpy(T(1), g, grad_buf(a) + r0 * c, (size_t)(h * c));
        });
    }

    // Row-wise L2 normalization (axis = last); rows must be nonzero.
    NodeId l2_normalize(NodeId a) {
        const Tensor<T>& va = val(a);
        int64_t r = va.rows(), c = va.cols();
        Tensor<T> out(va.shape);
        auto inv_norms = std::make_shared<std::vector<T>>((size_t)r);
        for (int64_t i = 0; i < r; ++i) {
            const T* x = va.data.data() + i * c;
            T n = std::sqrt(kern::dot(x, x, c));
            if (n == T(0)) throw InvalidInputError("l2_normalize: zero-norm row");
            (*inv_norms)[(size_t)i] = T(1) / n;
            kern::scale(x, T(1) / n, out.data.data() + i * c, c);
        }
        return push(std::move(out), [this, a, r, c, inv_norms](NodeId id) {
            const T* y = nodes_[id].value.data.data();
            const T* g = nodes_[id].grad.data.data();
            T* ga = grad_buf(a);
            for (int64_t i = 0; i < r; ++i) {
                const T* yi = y + i * c;
                const T* gi = g + i * c;
                T d = kern::dot(yi, gi, c);
                T in = (*inv_norms)[(size_t)i];
                T* go = ga + i * c;
                for (int64_t j = 0; j < c; ++j) go[j] += (gi[j] - yi[j] * d) * in;
            }
        });
    }

    // Full sum to a 1x1 scalar.
    NodeId sum(NodeId a) {
        const Tensor<T>& va = val(a);
        Tensor<T> out({1, 1});
        out.data[0] = kern::sum(va.data.data(), va.data.size());
        return push(std::move(out), [this, a](NodeId id) {
            T g = nodes_[id].grad.data[0];
            T* ga = grad_buf(a);
            for (size_t i = 0; i < val(a).data.size(); ++i) ga[i] += g;
        });
    }

    // Mean over rows i of [logsumexp(S_i) - S_ii] for a square logits matrix,
    // i.e. cross-entropy of the row softmax with the diagonal as targets.
    NodeId softmax_xent_diag(NodeId s) {
        const Tensor<T>& vs = val(s);
        if (vs.rows() != vs.cols()) throw ShapeError("softmax_xent_diag: square input");
        int64_t b = vs.rows();
        auto probs = std::make_shared<Tensor<T>>(vs.shape);
        T loss = T(0);
        for (int64_t i = 0; i < b; ++i) {
            const T* x = vs.data.data() + i * b;
            T* p = probs->data.data() + i * b;
            T mx = kern::max(x, b);
            T z = T(0);
            for (int64_t j = 0; j < b; ++j) {
                p[j] = std::exp(x[j] - mx);
                z += p[j];
            }
            kern::scale(p, T(1) / z, p, b);
            loss += std::log(z) + mx - x[i];
        }
        Tensor<T> out({1, 1});
        out.data[0] = loss / T(b);
        return push(std::move(out), [this, s, b, probs](NodeId id) {
            T g = nodes_[id].grad.data[0] / T(b);
            T* gs = grad_buf(s);
            const T* p = probs->data.data();
            for (int64_t i = 0; i < b; ++i)
                for (int64_t j = 0; j < b; ++j)
                    gs[i * b + j] += g * (p[i * b + j] - (i == j ? T(1) : T(0)));
        });
    }

    // Backward pass from a scalar loss; fills gradients for every node that
    // feeds into it (others keep zero gradients).
    void backward(NodeId loss) {
        if (val(loss).numel() != 1)
            throw InvalidInputError("backward: loss must be a scalar node");
        for (auto& n : nodes_)
            if (n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
        nodes_[loss].grad.data[0] = T(1);
        for (NodeId id = loss; id >= 0; --id)
            if (nodes_[id].back) nodes_[id].back(id);
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void(NodeId)> back;
    };

    const Tensor<T>& val(NodeId id) const { return nodes_[id].value; }

    T* grad_buf(NodeId id) {
        Node& n = nodes_[id];
        if (n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
        return n.grad.data.data();
    }

    NodeId push(Tensor<T> value, std::function<void(NodeId)> back) {
        nodes_.push_back(Node{std::move(value), {}, std::move(back)});
        return (NodeId)nodes_.size() - 1;
    }

    std::vector<Node> nodes_;
};

}  // namespace camtraj
