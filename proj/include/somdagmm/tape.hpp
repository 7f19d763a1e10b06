#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "gmm.hpp"
#include "matrix.hpp"

namespace somdagmm {

class GradientTape;

/// Handle to a value recorded on a GradientTape.
struct Var {
    GradientTape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode accumulation over a fixed set of matrix primitives.
///
/// One tape records one forward evaluation. Parameters are leaves whose
/// adjoints are read back after backward(); a second backward() without
/// recording anything new throws ContractError.
class GradientTape {
public:
    using BackwardFn = std::function<void(GradientTape&, std::size_t)>;

    GradientTape() = default;
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    Var parameter(Matrix value) {
        Var v = record(std::move(value), {});
        parameters_.push_back(v.id);
        return v;
    }

    Var constant(Matrix value) { return record(std::move(value), {}); }

    Var record(Matrix value, BackwardFn backward) {
        nodes_.push_back(Node{std::move(value), Matrix{}, std::move(backward)});
        backward_done_ = false;
        return Var{this, nodes_.size() - 1};
    }

    const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
    const Matrix& value(Var v) const { return value(v.id); }

    /// Adjoint buffer of a node; only valid during and after backward().
    Matrix& adjoint(std::size_t id) { return nodes_.at(id).adjoint; }
    const Matrix& adjoint(Var v) const {
        if (!backward_done_) throw ContractError("adjoint requested before backward()");
        return nodes_.at(v.id).adjoint;
    }

    const std::vector<std::size_t>& parameters() const noexcept { return parameters_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    void backward(Var output) {
        if (output.tape != this) throw ContractError("backward: variable belongs to another tape");
        if (backward_done_) throw ContractError("backward: tape already consumed; record a new forward pass");
        const Matrix& out = nodes_.at(output.id).value;
        if (out.rows() != 1 || out.cols() != 1)
            throw ContractError("backward: objective must be a 1x1 scalar, got " + std::to_string(out.rows()) +
                                "x" + std::to_string(out.cols()));
        for (auto& n : nodes_) n.adjoint = Matrix(n.value.rows(), n.value.cols());
        nodes_[output.id].adjoint(0, 0) = 1.0;
        for (std::size_t id = output.id + 1; id-- > 0;) {
            if (nodes_[id].backward) nodes_[id].backward(*this, id);
        }
        backward_done_ = true;
    }

private:
    struct Node {
        Matrix value;
        Matrix adjoint;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::vector<std::size_t> parameters_;
    bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return tape->value(id); }

namespace ad {

namespace detail {
inline GradientTape& same_tape(Var a, Var b) {
    if (a.tape != b.tape || a.tape == nullptr) throw ContractError("variables on different tapes");
    return *a.tape;
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
    auto& t = detail::same_tape(a, b);
    return t.record(somdagmm::matmul(a.value(), b.value()), [a, b](GradientTape& tp, std::size_t self) {
        const Matrix& g = tp.adjoint(self);
        tp.adjoint(a.id) += matmul_nt(g, tp.value(b.id));
        tp.adjoint(b.id) += matmul_tn(tp.value(a.id), g);
    });
}

inline Var add(Var a, Var b) {
    auto& t = detail::same_tape(a, b);
    return t.record(a.value() + b.value(), [a, b](GradientTape& tp, std::size_t self) {
        tp.adjoint(a.id) += tp.adjoint(self);
        tp.adjoint(b.id) += tp.adjoint(self);
    });
}

inline Var sub(Var a, Var b) {
    auto& t = detail::same_tape(a, b);
    return t.record(a.value() - b.value(), [a, b](GradientTape& tp, std::size_t self) {
        tp.adjoint(a.id) += tp.adjoint(self);
        tp.adjoint(b.id) -= tp.adjoint(self);
    });
}

/// a (N × M) plus a 1 × M row broadcast over every row.
inline Var add_row(Var a, Var row) {
    auto& t = detail::same_tape(a, row);
    const Matrix& av = a.value();
    const Matrix& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols()) throw DimensionMismatch("add_row: bias shape");
    Matrix out = av;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
    return t.record(std::move(out), [a, row](GradientTape& tp, std::size_t self) {
        const Matrix& g = tp.adjoint(self);
        tp.adjoint(a.id) += g;
        Matrix& gr = tp.adjoint(row.id);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
    });
}

inline Var hadamard(Var a, Var b) {
    auto& t = detail::same_tape(a, b);
    if (!a.value().same_shape(b.value())) throw DimensionMismatch("hadamard: shape mismatch");
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.value().data()[i];
    return t.record(std::move(out), [a, b](GradientTape& tp, std::size_t self) {
        const Matrix& g = tp.adjoint(self);
        const auto& av = tp.value(a.id).data();
        const auto& bv = tp.value(b.id).data();
        auto& ga = tp.adjoint(a.id).data();
        auto& gb = tp.adjoint(b.id).data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g.data()[i] * bv[i];
            gb[i] += g.data()[i] * av[i];
        }
    });
}

inline Var tanh(Var a) {
    Matrix out = a.value();
    for (double& v : out.data()) v = std::tanh(v);
    return a.tape->record(std::move(out), [a](GradientTape& tp, std::size_t self) {
        const auto& g = tp.adjoint(self).data();
        const auto& y = tp.value(self).data();
        auto& ga = tp.adjoint(a.id).data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

inline Var scale(Var a, double s) {
    return a.tape->record(a.value() * s, [a, s](GradientTape& tp, std::size_t self) {
        auto& ga = tp.adjoint(a.id).data();
        const auto& g = tp.adjoint(self).data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

inline Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.tape->record(Matrix::scalar(s), [a](GradientTape& tp, std::size_t self) {
        const double g = tp.adjoint(self)(0, 0);
        for (double& v : tp.adjoint(a.id).data()) v += g;
    });
}

inline Var mean(Var a) {
    if (a.value().empty()) throw InvalidArgument("mean: empty input");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Row-wise Σ_j a_ij², giving N × 1.
inline Var row_sum_squares(Var a) {
    const Matrix& av = a.value();
    Matrix out(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i) out(i, 0) = squared_norm(av.row(i));
    return a.tape->record(std::move(out), [a](GradientTape& tp, std::size_t self) {
        const Matrix& g = tp.adjoint(self);
        const Matrix& av = tp.value(a.id);
        Matrix& ga = tp.adjoint(a.id);
        for (std::size_t i = 0; i < av.rows(); ++i)
            for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) += 2.0 * g(i, 0) * av(i, j);
    });
}

inline Var softmax_rows(Var a) {
    return a.tape->record(somdagmm::softmax_rows(a.value()), [a](GradientTape& tp, std::size_t self) {
        const Matrix& g = tp.adjoint(self);
        const Matrix& y = tp.value(self);
        Matrix& ga = tp.adjoint(a.id);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            const double inner = dot(g.row(i), y.row(i));
            for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - inner);
        }
    });
}

/// Column-wise concatenation of equal-height blocks.
inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
    GradientTape& t = *parts.front().tape;
    const std::size_t n = parts.front().rows();
    std::size_t width = 0;
    for (const Var& p : parts) {
        if (p.tape != &t) throw ContractError("concat_cols: variables on different tapes");
        if (p.rows() != n) throw DimensionMismatch("concat_cols: row counts differ");
        width += p.cols();
    }
    Matrix out(n, width);
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Matrix& v = p.value();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < v.cols(); ++j) out(i, off + j) = v(i, j);
        off += v.cols();
    }
    return t.record(std::move(out), [parts](GradientTape& tp, std::size_t self) {
        const Matrix& g = tp.adjoint(self);
        std::size_t off = 0;
        for (const Var& p : parts) {
            Matrix& gp = tp.adjoint(p.id);
            for (std::size_t i = 0; i < gp.rows(); ++i)
                for (std::size_t j = 0; j < gp.cols(); ++j) gp(i, j) += g(i, off + j);
            off += gp.cols();
        }
    });
}

/// Floor applied to norms in the relative-distance and cosine features.
inline constexpr double kNormFloor = 1e-12;

/// Row-wise reconstruction features of (x, x'): column 0 is
/// ‖x − x'‖ / max(‖x‖, floor), column 1 (when `with_cosine`) is
/// ⟨x, x'⟩ / max(‖x‖‖x'‖, floor).
inline Var reconstruction_features(Var x, Var xr, bool with_cosine = true) {
    auto& t = detail::same_tape(x, xr);
    const Matrix& xv = x.value();
    const Matrix& rv = xr.value();
    if (!xv.same_shape(rv)) throw DimensionMismatch("reconstruction_features: shape mismatch");
    Matrix out(xv.rows(), with_cosine ? 2 : 1);
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        const double nx = std::sqrt(squared_norm(xv.row(i)));
        const double nr = std::sqrt(squared_norm(rv.row(i)));
        out(i, 0) = std::sqrt(squared_distance(xv.row(i), rv.row(i))) / std::max(nx, kNormFloor);
        if (with_cosine) out(i, 1) = dot(xv.row(i), rv.row(i)) / std::max(nx * nr, kNormFloor);
    }
    return t.record(std::move(out), [x, xr, with_cosine](GradientTape& tp, std::size_t self) {
        const Matrix& g = tp.adjoint(self);
        const Matrix& xv = tp.value(x.id);
        const Matrix& rv = tp.value(xr.id);
        const Matrix& y = tp.value(self);
        Matrix& gx = tp.adjoint(x.id);
        Matrix& gr = tp.adjoint(xr.id);
        const std::size_t d = xv.cols();
        for (std::size_t i = 0; i < xv.rows(); ++i) {
            const double nx = std::sqrt(squared_norm(xv.row(i)));
            const double nr = std::sqrt(squared_norm(rv.row(i)));
            const double dist = std::sqrt(squared_distance(xv.row(i), rv.row(i)));
            const double den_e = std::max(nx, kNormFloor);
            // relative euclidean distance
            if (dist > 0.0) {
                for (std::size_t j = 0; j < d; ++j) {
                    const double u = (xv(i, j) - rv(i, j)) / (dist * den_e);
                    gx(i, j) += g(i, 0) * u;
                    gr(i, j) -= g(i, 0) * u;
                }
            }
            if (nx > kNormFloor) {
                const double c = g(i, 0) * y(i, 0) / (nx * nx);
                for (std::size_t j = 0; j < d; ++j) gx(i, j) -= c * xv(i, j);
            }
            if (!with_cosine) continue;
            const double den_c = nx * nr;
            if (den_c > kNormFloor) {
                const double cs = y(i, 1);
                for (std::size_t j = 0; j < d; ++j) {
                    gx(i, j) += g(i, 1) * (rv(i, j) / den_c - cs * xv(i, j) / (nx * nx));
                    gr(i, j) += g(i, 1) * (xv(i, j) / den_c - cs * rv(i, j) / (nr * nr));
                }
            } else {
                for (std::size_t j = 0; j < d; ++j) {
                    gx(i, j) += g(i, 1) * rv(i, j) / kNormFloor;
                    gr(i, j) += g(i, 1) * xv(i, j) / kNormFloor;
                }
            }
        }
    });
}

/// GMM parameters packed into one 1 × (K + K·D + K·D·D) row:
/// [phi | mu row-major | sigma_0 row-major | ... | sigma_{K-1}].
struct GmmVar {
    Var packed;
    std::size_t components = 0;
    std::size_t dim = 0;

    static std::size_t packed_size(std::size_t k, std::size_t d) { return k + k * d + k * d * d; }

    static Matrix pack(const GmmParams& g) {
        const std::size_t k = g.components(), d = g.dim();
        Matrix m(1, packed_size(k, d));
        auto& v = m.data();
        std::size_t off = 0;
        for (double p : g.phi) v[off++] = p;
        for (double x : g.mu.data()) v[off++] = x;
        for (const Matrix& s : g.sigma)
            for (double x : s.data()) v[off++] = x;
        return m;
    }

    static GmmParams unpack(const Matrix& m, std::size_t k, std::size_t d) {
        if (m.size() != packed_size(k, d)) throw DimensionMismatch("GmmVar::unpack: size mismatch");
        const auto& v = m.data();
        GmmParams g;
        std::size_t off = 0;
        g.phi.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k));
        off = k;
        g.mu = Matrix(k, d, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(off),
                                                v.begin() + static_cast<std::ptrdiff_t>(off + k * d)));
        off += k * d;
        for (std::size_t c = 0; c < k; ++c) {
            g.sigma.emplace_back(d, d,
                                 std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(off),
                                                     v.begin() + static_cast<std::ptrdiff_t>(off + d * d)));
            off += d * d;
        }
        return g;
    }

    GmmParams params() const { return unpack(packed.value(), components, dim); }
};

namespace detail {
inline void accumulate_packed(Matrix& target, std::span<const double> g_phi, const Matrix& g_mu,
                              const std::vector<Matrix>& g_sigma) {
    auto& v = target.data();
    std::size_t off = 0;
    for (double x : g_phi) v[off++] += x;
    for (double x : g_mu.data()) v[off++] += x;
    for (const Matrix& s : g_sigma)
        for (double x : s.data()) v[off++] += x;
}

inline void split_packed(const Matrix& packed, std::size_t k, std::size_t d, std::vector<double>& g_phi,
                         Matrix& g_mu, std::vector<Matrix>& g_sigma) {
    const GmmParams g = GmmVar::unpack(packed, k, d);
    g_phi = g.phi;
    g_mu = g.mu;
    g_sigma = g.sigma;
}
}  // namespace detail

/// Batch GMM estimation from memberships (N × K) and latents (N × D).
inline GmmVar estimate_gmm(Var gamma, Var z, double eps) {
    auto& t = detail::same_tape(gamma, z);
    const std::size_t k = gamma.cols(), d = z.cols();
    const GmmParams g = somdagmm::estimate_gmm(gamma.value(), z.value(), eps);
    Var packed = t.record(GmmVar::pack(g), [gamma, z, eps, k, d](GradientTape& tp, std::size_t self) {
        std::vector<double> g_phi;
        Matrix g_mu;
        std::vector<Matrix> g_sigma;
        detail::split_packed(tp.adjoint(self), k, d, g_phi, g_mu, g_sigma);
        const GmmParams est = GmmVar::unpack(tp.value(self), k, d);
        estimate_gmm_backward(tp.value(gamma.id), tp.value(z.id), est, g_phi, g_mu, g_sigma,
                              tp.adjoint(gamma.id), tp.adjoint(z.id));
        (void)eps;
    });
    return GmmVar{packed, k, d};
}

/// Per-row sample energy (N × 1) of z under the packed GMM.
inline Var gmm_energy(Var z, const GmmVar& gmm, double eps) {
    auto& t = detail::same_tape(z, gmm.packed);
    const GmmParams g = gmm.params();
    const auto e = energies(z.value(), g, eps);
    const std::size_t k = gmm.components, d = gmm.dim;
    Var packed = gmm.packed;
    return t.record(Matrix(e.size(), 1, e), [z, packed, eps, k, d](GradientTape& tp, std::size_t self) {
        const GmmParams g = GmmVar::unpack(tp.value(packed.id), k, d);
        std::vector<double> g_phi(k, 0.0);
        Matrix g_mu(k, d);
        std::vector<Matrix> g_sigma(k, Matrix(d, d));
        energies_backward(tp.value(z.id), g, eps, tp.adjoint(self).data(), tp.adjoint(z.id), g_phi, g_mu,
                          g_sigma);
        detail::accumulate_packed(tp.adjoint(packed.id), g_phi, g_mu, g_sigma);
    });
}

/// Scalar covariance penalty Σ_k Σ_j 1/(Σ_k[j][j] + eps).
inline Var gmm_cov_penalty(const GmmVar& gmm, double eps) {
    const GmmParams g = gmm.params();
    const std::size_t k = gmm.components, d = gmm.dim;
    Var packed = gmm.packed;
    return packed.tape->record(Matrix::scalar(cov_penalty(g, eps)),
                               [packed, eps, k, d](GradientTape& tp, std::size_t self) {
                                   const GmmParams g = GmmVar::unpack(tp.value(packed.id), k, d);
                                   std::vector<Matrix> g_sigma(k, Matrix(d, d));
                                   cov_penalty_backward(g, eps, tp.adjoint(self)(0, 0), g_sigma);
                                   detail::accumulate_packed(tp.adjoint(packed.id), std::vector<double>(k, 0.0),
                                                             Matrix(k, d), g_sigma);
                               });
}

}  // namespace ad

}  // namespace somdagmm
