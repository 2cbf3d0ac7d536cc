#include "rtalign/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "rtalign/linalg.hpp"

namespace rtalign {

std::size_t Tensor::rows() const { return tape_->node(id_).rows; }
std::size_t Tensor::cols() const { return tape_->node(id_).cols; }
const std::vector<double>& Tensor::value() const { return tape_->node(id_).value; }
const std::vector<double>& Tensor::grad() const { return tape_->node(id_).grad; }

double Tensor::scalar() const {
    if (size() != 1) throw ShapeError("scalar() on tensor of size " + std::to_string(size()));
    return value()[0];
}

void Tape::check_same_shape(Tensor a, Tensor b, const char* op) const {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
}

void Tape::check_finite(const std::vector<double>& v, const char* op) const {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value");
    }
}

Tensor Tape::make(std::size_t rows, std::size_t cols, std::vector<double> values,
                  bool requires_grad, std::function<void(Tape&)> backward) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.value = std::move(values);
    n.grad.assign(n.value.size(), 0.0);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::leaf(std::size_t rows, std::size_t cols, std::vector<double> values,
                  bool requires_grad) {
    if (values.size() != rows * cols) {
        throw ShapeError("leaf: buffer length " + std::to_string(values.size()) +
                         " != " + std::to_string(rows * cols));
    }
    check_finite(values, "leaf");
    return make(rows, cols, std::move(values), requires_grad, nullptr);
}

Tensor Tape::add(Tensor a, Tensor b) {
    check_same_shape(a, b, "add");
    std::vector<double> v(a.size());
    const auto& va = node(a.id()).value;
    const auto& vb = node(b.id()).value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = va[i] + vb[i];
    check_finite(v, "add");
    const std::size_t ia = a.id(), ib = b.id();
    Tensor out = make(a.rows(), a.cols(), std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, ib, io](Tape& t) {
        const auto& g = t.node(io).grad;
        auto& ga = t.node(ia).grad;
        auto& gb = t.node(ib).grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    };
    return out;
}

Tensor Tape::sub(Tensor a, Tensor b) {
    check_same_shape(a, b, "sub");
    std::vector<double> v(a.size());
    const auto& va = node(a.id()).value;
    const auto& vb = node(b.id()).value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = va[i] - vb[i];
    check_finite(v, "sub");
    const std::size_t ia = a.id(), ib = b.id();
    Tensor out = make(a.rows(), a.cols(), std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, ib, io](Tape& t) {
        const auto& g = t.node(io).grad;
        auto& ga = t.node(ia).grad;
        auto& gb = t.node(ib).grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    };
    return out;
}

Tensor Tape::mul(Tensor a, Tensor b) {
    check_same_shape(a, b, "mul");
    std::vector<double> v(a.size());
    const auto& va = node(a.id()).value;
    const auto& vb = node(b.id()).value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = va[i] * vb[i];
    check_finite(v, "mul");
    const std::size_t ia = a.id(), ib = b.id();
    Tensor out = make(a.rows(), a.cols(), std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, ib, io](Tape& t) {
        const auto& g = t.node(io).grad;
        const auto& va2 = t.node(ia).value;
        const auto& vb2 = t.node(ib).value;
        auto& ga = t.node(ia).grad;
        auto& gb = t.node(ib).grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * vb2[i];
            gb[i] += g[i] * va2[i];
        }
    };
    return out;
}

Tensor Tape::scalar_mul(Tensor a, double s) {
    std::vector<double> v(a.size());
    const auto& va = node(a.id()).value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = va[i] * s;
    check_finite(v, "scalar_mul");
    const std::size_t ia = a.id();
    Tensor out = make(a.rows(), a.cols(), std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, io, s](Tape& t) {
        const auto& g = t.node(io).grad;
        auto& ga = t.node(ia).grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    };
    return out;
}

Tensor Tape::matmul(Tensor a, Tensor b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()));
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    std::vector<double> v(n * m, 0.0);
    const auto& va = node(a.id()).value;
    const auto& vb = node(b.id()).value;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = va[i * k + p];
            for (std::size_t j = 0; j < m; ++j) v[i * m + j] += aip * vb[p * m + j];
        }
    }
    check_finite(v, "matmul");
    const std::size_t ia = a.id(), ib = b.id();
    Tensor out = make(n, m, std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, ib, io, n, k, m](Tape& t) {
        const auto& g = t.node(io).grad;
        const auto& va2 = t.node(ia).value;
        const auto& vb2 = t.node(ib).value;
        auto& ga = t.node(ia).grad;
        auto& gb = t.node(ib).grad;
        // dA = G B^T
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                const double gij = g[i * m + j];
                for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * vb2[p * m + j];
            }
        }
        // dB = A^T G
        for (std::size_t p = 0; p < k; ++p) {
            for (std::size_t i = 0; i < n; ++i) {
                const double aip = va2[i * k + p];
                for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * g[i * m + j];
            }
        }
    };
    return out;
}

Tensor Tape::transpose(Tensor a) {
    const std::size_t n = a.rows(), m = a.cols();
    std::vector<double> v(n * m);
    const auto& va = node(a.id()).value;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) v[j * n + i] = va[i * m + j];
    const std::size_t ia = a.id();
    Tensor out = make(m, n, std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, io, n, m](Tape& t) {
        const auto& g = t.node(io).grad;
        auto& ga = t.node(ia).grad;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[j * n + i];
    };
    return out;
}

Tensor Tape::sum(Tensor a) {
    double s = 0.0;
    for (double x : node(a.id()).value) s += x;
    check_finite({s}, "sum");
    const std::size_t ia = a.id();
    Tensor out = make(1, 1, {s}, true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, io](Tape& t) {
        const double g = t.node(io).grad[0];
        for (auto& x : t.node(ia).grad) x += g;
    };
    return out;
}

Tensor Tape::mean(Tensor a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    double s = 0.0;
    for (double x : node(a.id()).value) s += x;
    s *= inv;
    check_finite({s}, "mean");
    const std::size_t ia = a.id();
    Tensor out = make(1, 1, {s}, true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, io, inv](Tape& t) {
        const double g = t.node(io).grad[0] * inv;
        for (auto& x : t.node(ia).grad) x += g;
    };
    return out;
}

Tensor Tape::square(Tensor a) {
    std::vector<double> v(a.size());
    const auto& va = node(a.id()).value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = va[i] * va[i];
    check_finite(v, "square");
    const std::size_t ia = a.id();
    Tensor out = make(a.rows(), a.cols(), std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, io](Tape& t) {
        const auto& g = t.node(io).grad;
        const auto& va2 = t.node(ia).value;
        auto& ga = t.node(ia).grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * va2[i] * g[i];
    };
    return out;
}

Tensor Tape::log(Tensor a) {
    std::vector<double> v(a.size());
    const auto& va = node(a.id()).value;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(va[i] > 0.0)) throw DomainError("log: non-positive input");
        v[i] = std::log(va[i]);
    }
    check_finite(v, "log");
    const std::size_t ia = a.id();
    Tensor out = make(a.rows(), a.cols(), std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, io](Tape& t) {
        const auto& g = t.node(io).grad;
        const auto& va2 = t.node(ia).value;
        auto& ga = t.node(ia).grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / va2[i];
    };
    return out;
}

Tensor Tape::exp(Tensor a) {
    std::vector<double> v(a.size());
    const auto& va = node(a.id()).value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(va[i]);
    check_finite(v, "exp");
    const std::size_t ia = a.id();
    Tensor out = make(a.rows(), a.cols(), std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, io](Tape& t) {
        const auto& g = t.node(io).grad;
        const auto& vo = t.node(io).value;
        auto& ga = t.node(ia).grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vo[i];
    };
    return out;
}

Tensor Tape::relu(Tensor a) {
    std::vector<double> v(a.size());
    const auto& va = node(a.id()).value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = va[i] > 0.0 ? va[i] : 0.0;
    const std::size_t ia = a.id();
    Tensor out = make(a.rows(), a.cols(), std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, io](Tape& t) {
        const auto& g = t.node(io).grad;
        const auto& va2 = t.node(ia).value;
        auto& ga = t.node(ia).grad;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (va2[i] > 0.0) ga[i] += g[i];
    };
    return out;
}

Tensor Tape::concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty input");
    const std::size_t cols = parts[0].cols();
    std::size_t rows = 0;
    std::vector<double> v;
    std::vector<std::size_t> ids;
    for (const Tensor& p : parts) {
        if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
        rows += p.rows();
        const auto& vp = node(p.id()).value;
        v.insert(v.end(), vp.begin(), vp.end());
        ids.push_back(p.id());
    }
    Tensor out = make(rows, cols, std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ids, io](Tape& t) {
        const auto& g = t.node(io).grad;
        std::size_t offset = 0;
        for (std::size_t id : ids) {
            auto& gp = t.node(id).grad;
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
            offset += gp.size();
        }
    };
    return out;
}

Tensor Tape::concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input");
    const std::size_t rows = parts[0].rows();
    std::size_t cols = 0;
    std::vector<std::size_t> ids, widths;
    for (const Tensor& p : parts) {
        if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
        cols += p.cols();
        ids.push_back(p.id());
        widths.push_back(p.cols());
    }
    std::vector<double> v(rows * cols);
    std::size_t col0 = 0;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
        const auto& vp = node(ids[pi]).value;
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < widths[pi]; ++j)
                v[i * cols + col0 + j] = vp[i * widths[pi] + j];
        col0 += widths[pi];
    }
    Tensor out = make(rows, cols, std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ids, widths, io, rows, cols](Tape& t) {
        const auto& g = t.node(io).grad;
        std::size_t c0 = 0;
        for (std::size_t pi = 0; pi < ids.size(); ++pi) {
            auto& gp = t.node(ids[pi]).grad;
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < widths[pi]; ++j)
                    gp[i * widths[pi] + j] += g[i * cols + c0 + j];
            c0 += widths[pi];
        }
    };
    return out;
}

Tensor Tape::slice_rows(Tensor a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.rows()) throw ShapeError("slice_rows: bad range");
    const std::size_t cols = a.cols();
    const auto& va = node(a.id()).value;
    std::vector<double> v(va.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          va.begin() + static_cast<std::ptrdiff_t>(end * cols));
    const std::size_t ia = a.id();
    Tensor out = make(end - begin, cols, std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, io, begin, cols](Tape& t) {
        const auto& g = t.node(io).grad;
        auto& ga = t.node(ia).grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin * cols + i] += g[i];
    };
    return out;
}

Tensor Tape::embedding_lookup(Tensor table, const std::vector<std::size_t>& ids) {
    const std::size_t e = table.cols();
    const auto& vt = node(table.id()).value;
    std::vector<double> v(ids.size() * e);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= table.rows()) throw ShapeError("embedding_lookup: id out of range");
        std::copy_n(vt.begin() + static_cast<std::ptrdiff_t>(ids[i] * e), e, v.begin() + static_cast<std::ptrdiff_t>(i * e));
    }
    const std::size_t it = table.id();
    Tensor out = make(ids.size(), e, std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [it, io, ids, e](Tape& t) {
        const auto& g = t.node(io).grad;
        auto& gt = t.node(it).grad;
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < e; ++j) gt[ids[i] * e + j] += g[i * e + j];
    };
    return out;
}

Tensor Tape::log_softmax_rows(Tensor logits) {
    const std::size_t n = logits.rows(), m = logits.cols();
    const auto& vl = node(logits.id()).value;
    std::vector<double> v(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = vl[i * m];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, vl[i * m + j]);
        double lse = 0.0;
        for (std::size_t j = 0; j < m; ++j) lse += std::exp(vl[i * m + j] - mx);
        lse = mx + std::log(lse);
        for (std::size_t j = 0; j < m; ++j) v[i * m + j] = vl[i * m + j] - lse;
    }
    check_finite(v, "log_softmax");
    const std::size_t il = logits.id();
    Tensor out = make(n, m, std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [il, io, n, m](Tape& t) {
        const auto& g = t.node(io).grad;
        const auto& vo = t.node(io).value;
        auto& gl = t.node(il).grad;
        for (std::size_t i = 0; i < n; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < m; ++j) gsum += g[i * m + j];
            for (std::size_t j = 0; j < m; ++j)
                gl[i * m + j] += g[i * m + j] - std::exp(vo[i * m + j]) * gsum;
        }
    };
    return out;
}

Tensor Tape::cross_entropy(Tensor logits, const std::vector<std::size_t>& target_ids) {
    const std::size_t n = logits.rows(), m = logits.cols();
    if (target_ids.size() != n) throw ShapeError("cross_entropy: target count != rows");
    Tensor ls = log_softmax_rows(logits);
    const auto& vls = node(ls.id()).value;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (target_ids[i] >= m) throw ShapeError("cross_entropy: target id out of range");
        loss -= vls[i * m + target_ids[i]];
    }
    loss /= static_cast<double>(n);
    const std::size_t ils = ls.id();
    Tensor out = make(1, 1, {loss}, true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ils, io, target_ids, n, m](Tape& t) {
        const double g = t.node(io).grad[0] / static_cast<double>(n);
        auto& gls = t.node(ils).grad;
        for (std::size_t i = 0; i < n; ++i) gls[i * m + target_ids[i]] -= g;
    };
    return out;
}

Tensor Tape::gather(Tensor a, const std::vector<std::size_t>& rows,
                    const std::vector<std::size_t>& cols) {
    if (rows.size() != cols.size()) throw ShapeError("gather: index length mismatch");
    const std::size_t m = a.cols();
    const auto& va = node(a.id()).value;
    std::vector<double> v(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= a.rows() || cols[i] >= m) throw ShapeError("gather: index out of range");
        v[i] = va[rows[i] * m + cols[i]];
    }
    const std::size_t ia = a.id();
    Tensor out = make(rows.size(), 1, std::move(v), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, io, rows, cols, m](Tape& t) {
        const auto& g = t.node(io).grad;
        auto& ga = t.node(ia).grad;
        for (std::size_t i = 0; i < rows.size(); ++i) ga[rows[i] * m + cols[i]] += g[i];
    };
    return out;
}

Tensor Tape::spd_solve(Tensor a, Tensor b) {
    const std::size_t n = a.rows(), m = b.cols();
    if (a.cols() != n) throw ShapeError("spd_solve: A not square");
    if (b.rows() != n) throw ShapeError("spd_solve: b row mismatch");
    const std::vector<double> l = linalg::cholesky_factor(node(a.id()).value, n);
    std::vector<double> x = linalg::cholesky_solve(l, n, node(b.id()).value, m);
    check_finite(x, "spd_solve");
    const std::size_t ia = a.id(), ib = b.id();
    Tensor out = make(n, m, std::move(x), true, nullptr);
    const std::size_t io = out.id();
    node(io).backward = [ia, ib, io, l, n, m](Tape& t) {
        const auto& gx = t.node(io).grad;
        const auto& xv = t.node(io).value;
        // g_b = A^{-1} g_x (A symmetric), reusing the stored factor.
        const std::vector<double> gb = linalg::cholesky_solve(l, n, gx, m);
        auto& gbacc = t.node(ib).grad;
        for (std::size_t i = 0; i < gb.size(); ++i) gbacc[i] += gb[i];
        // g_A = -sym(g_b x^T); A is constructed symmetric.
        auto& gaacc = t.node(ia).grad;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double gij = 0.0, gji = 0.0;
                for (std::size_t c = 0; c < m; ++c) {
                    gij += gb[i * m + c] * xv[j * m + c];
                    gji += gb[j * m + c] * xv[i * m + c];
                }
                gaacc[i * n + j] += -0.5 * (gij + gji);
            }
        }
    };
    return out;
}

void Tape::backward(Tensor out) {
    if (out.size() != 1) throw ShapeError("backward: output must be scalar");
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    nodes_[out.id()].grad[0] = 1.0;
    for (std::size_t i = out.id() + 1; i-- > 0;) {
        if (nodes_[i].backward) nodes_[i].backward(*this);
    }
}

GradCheckResult grad_check(const GraphBuilder& f, std::vector<std::vector<double>> params,
                           double h) {
    // Analytic gradients.
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        std::vector<Tensor> leaves;
        Tensor out = f(tape, leaves, params);
        if (!std::isfinite(out.scalar())) throw NumericError("grad_check: non-finite output");
        tape.backward(out);
        for (const Tensor& leaf : leaves) analytic.push_back(leaf.grad());
    }
    auto eval = [&](const std::vector<std::vector<double>>& p) {
        Tape tape;
        std::vector<Tensor> leaves;
        const double v = f(tape, leaves, p).scalar();
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite output");
        return v;
    };
    GradCheckResult result;
    const double steps[] = {h / 8.0, h, 8.0 * h};
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t i = 0; i < params[pi].size(); ++i) {
            const double orig = params[pi][i];
            double rel = std::numeric_limits<double>::infinity();
            for (const double step : steps) {
                params[pi][i] = orig + step;
                const double fp = eval(params);
                params[pi][i] = orig - step;
                const double fm = eval(params);
                params[pi][i] = orig;
                const double numeric = (fp - fm) / (2.0 * step);
                const double denom =
                    std::max({std::fabs(analytic[pi][i]), std::fabs(numeric), 1e-8});
                rel = std::min(rel, std::fabs(analytic[pi][i] - numeric) / denom);
            }
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = pi;
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace rtalign
