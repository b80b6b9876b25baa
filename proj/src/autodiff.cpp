#include "mmalign/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mmalign::ad {

namespace {

void require(bool cond, const std::string& what) {
    if (!cond) throw DimMismatchError(what);
}

}  // namespace

Var Tape::make(Shape shape, std::vector<double> value, std::function<void(Tape&)> back) {
    require(shape.numel() == value.size(), "tape node: shape/value size mismatch");
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.grad.assign(n.value.size(), 0.0);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(std::vector<double> value, Shape shape) {
    return make(std::move(shape), std::move(value), nullptr);
}

void Tape::backward(Var loss) {
    require(node(loss).value.size() == 1, "backward: loss must be scalar");
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    node(loss).grad[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.back) n.back(*this);
    }
}

// ---------- elementwise ----------

Var Tape::add(Var a, Var b) {
    require(value(a).size() == value(b).size(), "add: size mismatch");
    std::vector<double> out(value(a).size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(a)[i] + value(b)[i];
    int ia = a.id, ib = b.id;
    Var r;
    r = make(shape(a), std::move(out), [ia, ib, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        auto& ga = t.grad_ref(ia);
        auto& gb = t.grad_ref(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
    return r;
}

Var Tape::sub(Var a, Var b) {
    require(value(a).size() == value(b).size(), "sub: size mismatch");
    std::vector<double> out(value(a).size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(a)[i] - value(b)[i];
    int ia = a.id, ib = b.id;
    return make(shape(a), std::move(out), [ia, ib, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        auto& ga = t.grad_ref(ia);
        auto& gb = t.grad_ref(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
}

Var Tape::mul(Var a, Var b) {
    require(value(a).size() == value(b).size(), "mul: size mismatch");
    std::vector<double> out(value(a).size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(a)[i] * value(b)[i];
    int ia = a.id, ib = b.id;
    return make(shape(a), std::move(out), [ia, ib, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        const auto& va = t.val_ref(ia);
        const auto& vb = t.val_ref(ib);
        auto& ga = t.grad_ref(ia);
        auto& gb = t.grad_ref(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * vb[i];
            gb[i] += g[i] * va[i];
        }
    });
}

Var Tape::scale(Var a, double c) {
    std::vector<double> out(value(a).size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(a)[i] * c;
    int ia = a.id;
    return make(shape(a), std::move(out), [ia, c, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        auto& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

Var Tape::add_scalar(Var a, double c) {
    std::vector<double> out(value(a).size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(a)[i] + c;
    int ia = a.id;
    return make(shape(a), std::move(out), [ia, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        auto& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var Tape::tanh_(Var a) {
    std::vector<double> out(value(a).size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(value(a)[i]);
    int ia = a.id;
    return make(shape(a), std::move(out), [ia, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        const auto& y = t.val_ref(id);
        auto& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

Var Tape::exp_(Var a) {
    std::vector<double> out(value(a).size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(value(a)[i]);
    int ia = a.id;
    return make(shape(a), std::move(out), [ia, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        const auto& y = t.val_ref(id);
        auto& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
}

Var Tape::abs_(Var a) {
    std::vector<double> out(value(a).size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(value(a)[i]);
    int ia = a.id;
    return make(shape(a), std::move(out), [ia, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        const auto& x = t.val_ref(ia);
        auto& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (x[i] > 0.0) ga[i] += g[i];
            else if (x[i] < 0.0) ga[i] -= g[i];
        }
    });
}

Var Tape::scale_by(Var x, Var s) {
    require(value(s).size() == 1, "scale_by: s must be scalar");
    const double sv = value(s)[0];
    std::vector<double> out(value(x).size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(x)[i] * sv;
    int ix = x.id, is = s.id;
    return make(shape(x), std::move(out), [ix, is, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        const auto& vx = t.val_ref(ix);
        const double sv2 = t.val_ref(is)[0];
        auto& gx = t.grad_ref(ix);
        auto& gs = t.grad_ref(is);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * sv2;
            acc += g[i] * vx[i];
        }
        gs[0] += acc;
    });
}

// ---------- linear algebra ----------

Var Tape::matmul(Var a, Var b) {
    const auto& sa = shape(a);
    const auto& sb = shape(b);
    require(sa.dims.size() == 2 && sb.dims.size() == 2, "matmul: rank-2 only");
    require(sa.cols() == sb.rows(), "matmul: inner dims differ");
    const std::size_t m = sa.rows(), k = sa.cols(), n = sb.cols();
    std::vector<double> out(m * n, 0.0);
    const auto& va = value(a);
    const auto& vb = value(b);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = va[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = vb.data() + p * n;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    int ia = a.id, ib = b.id;
    return make(Shape{m, n}, std::move(out),
                [ia, ib, m, k, n, id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    const auto& va2 = t.val_ref(ia);
                    const auto& vb2 = t.val_ref(ib);
                    auto& ga = t.grad_ref(ia);
                    auto& gb = t.grad_ref(ib);
                    // dA = g B^T
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            double acc = 0.0;
                            const double* grow = g.data() + i * n;
                            const double* brow = vb2.data() + p * n;
                            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            ga[i * k + p] += acc;
                        }
                    // dB = A^T g
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            const double aip = va2[i * k + p];
                            if (aip == 0.0) continue;
                            const double* grow = g.data() + i * n;
                            double* gbrow = gb.data() + p * n;
                            for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                        }
                });
}

Var Tape::transpose(Var a) {
    const auto& sa = shape(a);
    require(sa.dims.size() == 2, "transpose: rank-2 only");
    const std::size_t m = sa.rows(), n = sa.cols();
    std::vector<double> out(m * n);
    const auto& va = value(a);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = va[i * n + j];
    int ia = a.id;
    return make(Shape{n, m}, std::move(out),
                [ia, m, n, id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    auto& ga = t.grad_ref(ia);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                });
}

Var Tape::add_rowvec(Var x, Var b) {
    const auto& sx = shape(x);
    require(sx.dims.size() == 2, "add_rowvec: rank-2 x");
    require(value(b).size() == sx.cols(), "add_rowvec: bias dim mismatch");
    const std::size_t m = sx.rows(), n = sx.cols();
    std::vector<double> out(m * n);
    const auto& vx = value(x);
    const auto& vb = value(b);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = vx[i * n + j] + vb[j];
    int ix = x.id, ib = b.id;
    return make(sx, std::move(out), [ix, ib, m, n, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        auto& gx = t.grad_ref(ix);
        auto& gb = t.grad_ref(ib);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                gx[i * n + j] += g[i * n + j];
                gb[j] += g[i * n + j];
            }
    });
}

Var Tape::concat_cols(Var a, Var b) {
    const auto& sa = shape(a);
    const auto& sb = shape(b);
    require(sa.dims.size() == 2 && sb.dims.size() == 2, "concat_cols: rank-2 only");
    require(sa.rows() == sb.rows(), "concat_cols: row counts differ");
    const std::size_t m = sa.rows(), na = sa.cols(), nb = sb.cols();
    std::vector<double> out(m * (na + nb));
    const auto& va = value(a);
    const auto& vb = value(b);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy(va.begin() + static_cast<std::ptrdiff_t>(i * na),
                  va.begin() + static_cast<std::ptrdiff_t>((i + 1) * na),
                  out.begin() + static_cast<std::ptrdiff_t>(i * (na + nb)));
        std::copy(vb.begin() + static_cast<std::ptrdiff_t>(i * nb),
                  vb.begin() + static_cast<std::ptrdiff_t>((i + 1) * nb),
                  out.begin() + static_cast<std::ptrdiff_t>(i * (na + nb) + na));
    }
    int ia = a.id, ib = b.id;
    return make(Shape{m, na + nb}, std::move(out),
                [ia, ib, m, na, nb, id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    auto& ga = t.grad_ref(ia);
                    auto& gb = t.grad_ref(ib);
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < na; ++j)
                            ga[i * na + j] += g[i * (na + nb) + j];
                        for (std::size_t j = 0; j < nb; ++j)
                            gb[i * nb + j] += g[i * (na + nb) + na + j];
                    }
                });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows: empty part list");
    const std::size_t n = shape(parts[0]).cols();
    std::size_t m = 0;
    for (Var p : parts) {
        require(shape(p).dims.size() == 2 && shape(p).cols() == n,
                "concat_rows: column counts differ");
        m += shape(p).rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    std::vector<int> ids;
    std::vector<std::size_t> rows;
    for (Var p : parts) {
        const auto& v = value(p);
        out.insert(out.end(), v.begin(), v.end());
        ids.push_back(p.id);
        rows.push_back(shape(p).rows());
    }
    return make(Shape{m, n}, std::move(out),
                [ids, rows, n, id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    std::size_t off = 0;
                    for (std::size_t p = 0; p < ids.size(); ++p) {
                        auto& gp = t.grad_ref(ids[p]);
                        for (std::size_t i = 0; i < rows[p] * n; ++i) gp[i] += g[off + i];
                        off += rows[p] * n;
                    }
                });
}

// ---------- reductions / normalization ----------

Var Tape::sum(Var a) {
    double s = 0.0;
    for (double x : value(a)) s += x;
    int ia = a.id;
    return make(Shape{1}, {s}, [ia, id = static_cast<int>(nodes_.size())](Tape& t) {
        const double g = t.grad_ref(id)[0];
        auto& ga = t.grad_ref(ia);
        for (auto& x : ga) x += g;
    });
}

Var Tape::mean_rows(Var a) {
    const auto& sa = shape(a);
    require(sa.dims.size() == 2, "mean_rows: rank-2 only");
    const std::size_t m = sa.rows(), n = sa.cols();
    std::vector<double> out(n, 0.0);
    const auto& va = value(a);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += va[i * n + j];
    for (auto& x : out) x /= static_cast<double>(m);
    int ia = a.id;
    return make(Shape{1, n}, std::move(out),
                [ia, m, n, id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    auto& ga = t.grad_ref(ia);
                    const double inv = 1.0 / static_cast<double>(m);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
                });
}

Var Tape::row_softmax(Var a) {
    const auto& sa = shape(a);
    require(sa.dims.size() == 2, "row_softmax: rank-2 only");
    const std::size_t m = sa.rows(), n = sa.cols();
    std::vector<double> out(m * n);
    const auto& va = value(a);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, va[i * n + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp(va[i * n + j] - mx);
            z += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    int ia = a.id;
    return make(sa, std::move(out), [ia, m, n, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        const auto& y = t.val_ref(id);
        auto& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
        }
    });
}

Var Tape::logsumexp_rows(Var a) {
    const auto& sa = shape(a);
    require(sa.dims.size() == 2, "logsumexp_rows: rank-2 only");
    const std::size_t m = sa.rows(), n = sa.cols();
    std::vector<double> out(m);
    const auto& va = value(a);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, va[i * n + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(va[i * n + j] - mx);
        out[i] = mx + std::log(z);
    }
    int ia = a.id;
    return make(Shape{m}, std::move(out),
                [ia, m, n, id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    const auto& y = t.val_ref(id);
                    const auto& x = t.val_ref(ia);
                    auto& ga = t.grad_ref(ia);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            ga[i * n + j] += g[i] * std::exp(x[i * n + j] - y[i]);
                });
}

Var Tape::diag_sum(Var a) {
    const auto& sa = shape(a);
    require(sa.dims.size() == 2 && sa.rows() == sa.cols(), "diag_sum: square matrix only");
    const std::size_t n = sa.rows();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += value(a)[i * n + i];
    int ia = a.id;
    return make(Shape{1}, {s}, [ia, n, id = static_cast<int>(nodes_.size())](Tape& t) {
        const double g = t.grad_ref(id)[0];
        auto& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < n; ++i) ga[i * n + i] += g;
    });
}

Var Tape::l2_normalize_rows(Var a) {
    const auto& sa = shape(a);
    require(sa.dims.size() == 2, "l2_normalize_rows: rank-2 only");
    const std::size_t m = sa.rows(), n = sa.cols();
    std::vector<double> out(m * n);
    std::vector<double> norms(m);
    const auto& va = value(a);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += va[i * n + j] * va[i * n + j];
        norms[i] = std::sqrt(s);
        if (norms[i] <= kNormEps) throw ZeroNormError();
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = va[i * n + j] / norms[i];
    }
    int ia = a.id;
    return make(sa, std::move(out),
                [ia, m, n, norms, id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    const auto& y = t.val_ref(id);
                    auto& ga = t.grad_ref(ia);
                    for (std::size_t i = 0; i < m; ++i) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                        for (std::size_t j = 0; j < n; ++j)
                            ga[i * n + j] += (g[i * n + j] - dot * y[i * n + j]) / norms[i];
                    }
                });
}

Var Tape::mean_center_cols(Var a) {
    const auto& sa = shape(a);
    require(sa.dims.size() == 2, "mean_center_cols: rank-2 only");
    const std::size_t m = sa.rows(), n = sa.cols();
    if (m < 2) throw BatchTooSmallError();
    std::vector<double> out(m * n);
    const auto& va = value(a);
    for (std::size_t j = 0; j < n; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < m; ++i) mu += va[i * n + j];
        mu /= static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) out[i * n + j] = va[i * n + j] - mu;
    }
    int ia = a.id;
    return make(sa, std::move(out), [ia, m, n, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        auto& ga = t.grad_ref(ia);
        for (std::size_t j = 0; j < n; ++j) {
            double mu = 0.0;
            for (std::size_t i = 0; i < m; ++i) mu += g[i * n + j];
            mu /= static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) ga[i * n + j] += g[i * n + j] - mu;
        }
    });
}

Var Tape::l2_normalize_cols(Var a) {
    const auto& sa = shape(a);
    require(sa.dims.size() == 2, "l2_normalize_cols: rank-2 only");
    const std::size_t m = sa.rows(), n = sa.cols();
    std::vector<double> out(m * n);
    std::vector<double> norms(n);
    const auto& va = value(a);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += va[i * n + j] * va[i * n + j];
        norms[j] = std::sqrt(s);
        if (norms[j] <= kNormEps)
            throw DegenerateColumnError("column " + std::to_string(j) + " has zero variance");
        for (std::size_t i = 0; i < m; ++i) out[i * n + j] = va[i * n + j] / norms[j];
    }
    int ia = a.id;
    return make(sa, std::move(out),
                [ia, m, n, norms, id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    const auto& y = t.val_ref(id);
                    auto& ga = t.grad_ref(ia);
                    for (std::size_t j = 0; j < n; ++j) {
                        double dot = 0.0;
                        for (std::size_t i = 0; i < m; ++i) dot += g[i * n + j] * y[i * n + j];
                        for (std::size_t i = 0; i < m; ++i)
                            ga[i * n + j] += (g[i * n + j] - dot * y[i * n + j]) / norms[j];
                    }
                });
}

Var Tape::reshape(Var a, Shape s) {
    require(s.numel() == value(a).size(), "reshape: numel mismatch");
    int ia = a.id;
    return make(std::move(s), value(a), [ia, id = static_cast<int>(nodes_.size())](Tape& t) {
        const auto& g = t.grad_ref(id);
        auto& ga = t.grad_ref(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

// ---------- graph / grid ops ----------

Var Tape::gather_rows(Var x, std::vector<std::size_t> idx) {
    const auto& sx = shape(x);
    require(sx.dims.size() == 2, "gather_rows: rank-2 only");
    const std::size_t n = sx.cols();
    std::vector<double> out(idx.size() * n);
    const auto& vx = value(x);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        require(idx[r] < sx.rows(), "gather_rows: index out of range");
        std::copy(vx.begin() + static_cast<std::ptrdiff_t>(idx[r] * n),
                  vx.begin() + static_cast<std::ptrdiff_t>((idx[r] + 1) * n),
                  out.begin() + static_cast<std::ptrdiff_t>(r * n));
    }
    const std::size_t m = idx.size();
    int ix = x.id;
    return make(Shape{m, n}, std::move(out),
                [ix, idx = std::move(idx), n, id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    auto& gx = t.grad_ref(ix);
                    for (std::size_t r = 0; r < idx.size(); ++r)
                        for (std::size_t j = 0; j < n; ++j)
                            gx[idx[r] * n + j] += g[r * n + j];
                });
}

Var Tape::segment_mean(Var x, std::vector<std::size_t> seg, std::size_t n_out) {
    const auto& sx = shape(x);
    require(sx.dims.size() == 2, "segment_mean: rank-2 only");
    require(seg.size() == sx.rows(), "segment_mean: one segment id per row");
    const std::size_t n = sx.cols();
    std::vector<double> out(n_out * n, 0.0);
    std::vector<double> cnt(n_out, 0.0);
    const auto& vx = value(x);
    for (std::size_t r = 0; r < seg.size(); ++r) {
        require(seg[r] < n_out, "segment_mean: segment id out of range");
        cnt[seg[r]] += 1.0;
        for (std::size_t j = 0; j < n; ++j) out[seg[r] * n + j] += vx[r * n + j];
    }
    for (std::size_t s = 0; s < n_out; ++s)
        if (cnt[s] > 0.0)
            for (std::size_t j = 0; j < n; ++j) out[s * n + j] /= cnt[s];
    int ix = x.id;
    return make(Shape{n_out, n}, std::move(out),
                [ix, seg = std::move(seg), cnt = std::move(cnt), n,
                 id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    auto& gx = t.grad_ref(ix);
                    for (std::size_t r = 0; r < seg.size(); ++r)
                        for (std::size_t j = 0; j < n; ++j)
                            gx[r * n + j] += g[seg[r] * n + j] / cnt[seg[r]];
                });
}

Var Tape::conv3d(Var x, Var w, Var b, std::size_t stride) {
    const auto& sx = shape(x);
    const auto& sw = shape(w);
    require(sx.dims.size() == 4, "conv3d: input must be [Cin,G,G,G]");
    require(sw.dims.size() == 5, "conv3d: weight must be [Cout,Cin,3,3,3]");
    const std::size_t cin = sx.dims[0], g = sx.dims[1];
    const std::size_t cout = sw.dims[0];
    require(sw.dims[1] == cin && sw.dims[2] == 3 && sw.dims[3] == 3 && sw.dims[4] == 3,
            "conv3d: weight shape mismatch");
    require(value(b).size() == cout, "conv3d: bias size mismatch");
    const std::size_t go = (g + 2 - 3) / stride + 1;
    std::vector<double> out(cout * go * go * go, 0.0);
    const auto& vx = value(x);
    const auto& vw = value(w);
    const auto& vb = value(b);
    auto xat = [&](std::size_t c, std::ptrdiff_t a0, std::ptrdiff_t a1, std::ptrdiff_t a2) {
        if (a0 < 0 || a1 < 0 || a2 < 0 || a0 >= static_cast<std::ptrdiff_t>(g) ||
            a1 >= static_cast<std::ptrdiff_t>(g) || a2 >= static_cast<std::ptrdiff_t>(g))
            return 0.0;
        return vx[((c * g + static_cast<std::size_t>(a0)) * g + static_cast<std::size_t>(a1)) * g +
                  static_cast<std::size_t>(a2)];
    };
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ox = 0; ox < go; ++ox)
            for (std::size_t oy = 0; oy < go; ++oy)
                for (std::size_t oz = 0; oz < go; ++oz) {
                    double acc = vb[co];
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t kx = 0; kx < 3; ++kx)
                            for (std::size_t ky = 0; ky < 3; ++ky)
                                for (std::size_t kz = 0; kz < 3; ++kz)
                                    acc += vw[(((co * cin + ci) * 3 + kx) * 3 + ky) * 3 + kz] *
                                           xat(ci,
                                               static_cast<std::ptrdiff_t>(ox * stride + kx) - 1,
                                               static_cast<std::ptrdiff_t>(oy * stride + ky) - 1,
                                               static_cast<std::ptrdiff_t>(oz * stride + kz) - 1);
                    out[((co * go + ox) * go + oy) * go + oz] = acc;
                }
    int ix = x.id, iw = w.id, ib = b.id;
    return make(Shape{cout, go, go, go}, std::move(out),
                [ix, iw, ib, cin, cout, g, go, stride,
                 id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& gr = t.grad_ref(id);
                    const auto& vx2 = t.val_ref(ix);
                    const auto& vw2 = t.val_ref(iw);
                    auto& gx = t.grad_ref(ix);
                    auto& gw = t.grad_ref(iw);
                    auto& gb = t.grad_ref(ib);
                    auto in_range = [&](std::ptrdiff_t a) {
                        return a >= 0 && a < static_cast<std::ptrdiff_t>(g);
                    };
                    for (std::size_t co = 0; co < cout; ++co)
                        for (std::size_t ox = 0; ox < go; ++ox)
                            for (std::size_t oy = 0; oy < go; ++oy)
                                for (std::size_t oz = 0; oz < go; ++oz) {
                                    const double gv = gr[((co * go + ox) * go + oy) * go + oz];
                                    if (gv == 0.0) continue;
                                    gb[co] += gv;
                                    for (std::size_t ci = 0; ci < cin; ++ci)
                                        for (std::size_t kx = 0; kx < 3; ++kx)
                                            for (std::size_t ky = 0; ky < 3; ++ky)
                                                for (std::size_t kz = 0; kz < 3; ++kz) {
                                                    const std::ptrdiff_t a0 =
                                                        static_cast<std::ptrdiff_t>(ox * stride + kx) - 1;
                                                    const std::ptrdiff_t a1 =
                                                        static_cast<std::ptrdiff_t>(oy * stride + ky) - 1;
                                                    const std::ptrdiff_t a2 =
                                                        static_cast<std::ptrdiff_t>(oz * stride + kz) - 1;
                                                    if (!in_range(a0) || !in_range(a1) || !in_range(a2))
                                                        continue;
                                                    const std::size_t xi =
                                                        ((ci * g + static_cast<std::size_t>(a0)) * g +
                                                         static_cast<std::size_t>(a1)) * g +
                                                        static_cast<std::size_t>(a2);
                                                    const std::size_t wi =
                                                        (((co * cin + ci) * 3 + kx) * 3 + ky) * 3 + kz;
                                                    gw[wi] += gv * vx2[xi];
                                                    gx[xi] += gv * vw2[wi];
                                                }
                                }
                });
}

// ---------- three-way kernels ----------

Var Tape::threeway_dot(Var a, Var b, Var c) {
    const auto& sa = shape(a);
    require(sa.dims.size() == 2, "threeway_dot: rank-2 inputs");
    require(shape(b).dims == sa.dims && shape(c).dims == sa.dims,
            "threeway_dot: shapes must match");
    const std::size_t n = sa.rows(), d = sa.cols();
    const auto& va = value(a);
    const auto& vb = value(b);
    const auto& vc = value(c);
    std::vector<double> out(n * n * n);
    // precompute pairwise products of B,C rows to keep the inner loop contiguous
    std::vector<double> bc(d);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t l = 0; l < d; ++l) bc[l] = vb[j * d + l] * vc[k * d + l];
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                const double* ar = va.data() + i * d;
                for (std::size_t l = 0; l < d; ++l) acc += ar[l] * bc[l];
                out[(i * n + j) * n + k] = acc;
            }
        }
    int ia = a.id, ib = b.id, ic = c.id;
    return make(Shape{n, n, n}, std::move(out),
                [ia, ib, ic, n, d, id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    const auto& va2 = t.val_ref(ia);
                    const auto& vb2 = t.val_ref(ib);
                    const auto& vc2 = t.val_ref(ic);
                    auto& ga = t.grad_ref(ia);
                    auto& gb = t.grad_ref(ib);
                    auto& gc = t.grad_ref(ic);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            for (std::size_t k = 0; k < n; ++k) {
                                const double gv = g[(i * n + j) * n + k];
                                if (gv == 0.0) continue;
                                const double* ar = va2.data() + i * d;
                                const double* br = vb2.data() + j * d;
                                const double* cr = vc2.data() + k * d;
                                double* gar = ga.data() + i * d;
                                double* gbr = gb.data() + j * d;
                                double* gcr = gc.data() + k * d;
                                for (std::size_t l = 0; l < d; ++l) {
                                    gar[l] += gv * br[l] * cr[l];
                                    gbr[l] += gv * ar[l] * cr[l];
                                    gcr[l] += gv * ar[l] * br[l];
                                }
                            }
                });
}

Var Tape::triple_outer_sum(Var z1, Var z2, Var z3) {
    const auto& s1 = shape(z1);
    require(s1.dims.size() == 2, "triple_outer_sum: rank-2 inputs");
    require(shape(z2).dims == s1.dims && shape(z3).dims == s1.dims,
            "triple_outer_sum: shapes must match");
    const std::size_t n = s1.rows(), d = s1.cols();
    const auto& v1 = value(z1);
    const auto& v2 = value(z2);
    const auto& v3 = value(z3);
    std::vector<double> out(d * d * d, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < d; ++i) {
            const double zi = v1[b * d + i];
            if (zi == 0.0) continue;
            for (std::size_t j = 0; j < d; ++j) {
                const double zij = zi * v2[b * d + j];
                if (zij == 0.0) continue;
                double* orow = out.data() + (i * d + j) * d;
                const double* z3r = v3.data() + b * d;
                for (std::size_t k = 0; k < d; ++k) orow[k] += zij * z3r[k];
            }
        }
    int i1 = z1.id, i2 = z2.id, i3 = z3.id;
    return make(Shape{d, d, d}, std::move(out),
                [i1, i2, i3, n, d, id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    const auto& v1b = t.val_ref(i1);
                    const auto& v2b = t.val_ref(i2);
                    const auto& v3b = t.val_ref(i3);
                    auto& g1 = t.grad_ref(i1);
                    auto& g2 = t.grad_ref(i2);
                    auto& g3 = t.grad_ref(i3);
                    for (std::size_t b = 0; b < n; ++b)
                        for (std::size_t i = 0; i < d; ++i)
                            for (std::size_t j = 0; j < d; ++j) {
                                const double z1i = v1b[b * d + i];
                                const double z2j = v2b[b * d + j];
                                const double* grow = g.data() + (i * d + j) * d;
                                const double* z3r = v3b.data() + b * d;
                                double acc1 = 0.0, acc2 = 0.0;
                                for (std::size_t k = 0; k < d; ++k) {
                                    const double gv = grow[k];
                                    acc1 += gv * z2j * z3r[k];
                                    acc2 += gv * z1i * z3r[k];
                                    g3[b * d + k] += gv * z1i * z2j;
                                }
                                g1[b * d + i] += acc1;
                                g2[b * d + j] += acc2;
                            }
                });
}

Var Tape::lse_over_two_axes(Var t_in, int keep_axis) {
    const auto& st = shape(t_in);
    require(st.dims.size() == 3 && st.dims[0] == st.dims[1] && st.dims[1] == st.dims[2],
            "lse_over_two_axes: cubic rank-3 tensor required");
    require(keep_axis >= 0 && keep_axis <= 2, "lse_over_two_axes: axis must be 0..2");
    const std::size_t n = st.dims[0];
    const auto& v = value(t_in);
    auto at = [&](std::size_t q, std::size_t r, std::size_t s) {
        std::size_t i = 0, j = 0, k = 0;
        if (keep_axis == 0) { i = q; j = r; k = s; }
        else if (keep_axis == 1) { i = r; j = q; k = s; }
        else { i = r; j = s; k = q; }
        return (i * n + j) * n + k;
    };
    std::vector<double> out(n);
    for (std::size_t q = 0; q < n; ++q) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t s = 0; s < n; ++s) mx = std::max(mx, v[at(q, r, s)]);
        double z = 0.0;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t s = 0; s < n; ++s) z += std::exp(v[at(q, r, s)] - mx);
        out[q] = mx + std::log(z);
    }
    int it = t_in.id;
    return make(Shape{n}, std::move(out),
                [it, n, keep_axis, id = static_cast<int>(nodes_.size())](Tape& t) {
                    const auto& g = t.grad_ref(id);
                    const auto& y = t.val_ref(id);
                    const auto& x = t.val_ref(it);
                    auto& gt = t.grad_ref(it);
                    auto at2 = [&](std::size_t q, std::size_t r, std::size_t s) {
                        std::size_t i = 0, j = 0, k = 0;
                        if (keep_axis == 0) { i = q; j = r; k = s; }
                        else if (keep_axis == 1) { i = r; j = q; k = s; }
                        else { i = r; j = s; k = q; }
                        return (i * n + j) * n + k;
                    };
                    for (std::size_t q = 0; q < n; ++q)
                        for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t s = 0; s < n; ++s) {
                                const std::size_t ix = at2(q, r, s);
                                gt[ix] += g[q] * std::exp(x[ix] - y[q]);
                            }
                });
}

Var Tape::diag3_sum(Var t_in) {
    const auto& st = shape(t_in);
    require(st.dims.size() == 3 && st.dims[0] == st.dims[1] && st.dims[1] == st.dims[2],
            "diag3_sum: cubic rank-3 tensor required");
    const std::size_t n = st.dims[0];
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += value(t_in)[(i * n + i) * n + i];
    int it = t_in.id;
    return make(Shape{1}, {s}, [it, n, id = static_cast<int>(nodes_.size())](Tape& t) {
        const double g = t.grad_ref(id)[0];
        auto& gt = t.grad_ref(it);
        for (std::size_t i = 0; i < n; ++i) gt[(i * n + i) * n + i] += g;
    });
}

Var Tape::barlow_penalty(Var c, double lambda) {
    const auto& sc = shape(c);
    require(sc.dims.size() == 3 && sc.dims[0] == sc.dims[1] && sc.dims[1] == sc.dims[2],
            "barlow_penalty: cubic rank-3 tensor required");
    const std::size_t d = sc.dims[0];
    const auto& v = value(c);
    double loss = 0.0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < d; ++k) {
                const double x = v[(i * d + j) * d + k];
                if (i == j && j == k) loss += (1.0 - x) * (1.0 - x);
                else if (i == j || j == k || i == k) loss += (0.5 - x) * (0.5 - x);
                else loss += lambda * x * x;
            }
    int ic = c.id;
    return make(Shape{1}, {loss}, [ic, d, lambda, id = static_cast<int>(nodes_.size())](Tape& t) {
        const double g = t.grad_ref(id)[0];
        const auto& v2 = t.val_ref(ic);
        auto& gc = t.grad_ref(ic);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t k = 0; k < d; ++k) {
                    const std::size_t ix = (i * d + j) * d + k;
                    if (i == j && j == k) gc[ix] += g * 2.0 * (v2[ix] - 1.0);
                    else if (i == j || j == k || i == k) gc[ix] += g * 2.0 * (v2[ix] - 0.5);
                    else gc[ix] += g * 2.0 * lambda * v2[ix];
                }
    });
}

// ---------- LossGraph ----------

Var LossGraph::add_parameter(const std::string& name, std::vector<double> value, Shape shape) {
    if (params_.count(name)) throw ConfigError("duplicate parameter: " + name);
    Var v = tape_.input(std::move(value), std::move(shape));
    params_[name] = v;
    names_.push_back(name);
    return v;
}

void LossGraph::set_loss(Var loss) {
    if (tape_.value(loss).size() != 1)
        throw DimMismatchError("LossGraph: loss must be scalar");
    const double lv = tape_.scalar_value(loss);
    if (!std::isfinite(lv)) throw NonFiniteLossError("loss is not finite");
    loss_ = loss;
    tape_.backward(loss);
    done_ = true;
}

double LossGraph::loss() const {
    if (!done_) throw Error("LossGraph: forward pass not completed");
    return tape_.scalar_value(loss_);
}

const std::vector<double>& LossGraph::grad_of(const std::string& name) const {
    if (!done_) throw Error("LossGraph: forward pass not completed");
    auto it = params_.find(name);
    if (it == params_.end()) throw UnknownParameterError(name);
    return tape_.grad(it->second);
}

Var LossGraph::parameter(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UnknownParameterError(name);
    return it->second;
}

}  // namespace mmalign::ad
