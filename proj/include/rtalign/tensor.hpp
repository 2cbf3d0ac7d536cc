#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "rtalign/errors.hpp"

namespace rtalign {

class Tape;

// Handle to a node on a Tape. Tensors are row-major double matrices; a
// scalar is 1x1 and a column vector is n x 1.
class Tensor {
public:
    Tensor() = default;
    Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    std::size_t rows() const;
    std::size_t cols() const;
    std::size_t size() const { return rows() * cols(); }
    const std::vector<double>& value() const;
    const std::vector<double>& grad() const;
    double scalar() const;
    bool valid() const { return tape_ != nullptr; }

    std::size_t id() const { return id_; }
    Tape* tape() const { return tape_; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Records forward operations and replays their adjoints in exact reverse
// order. A node's gradient is accumulated from all of its consumers.
class Tape {
public:
    Tensor leaf(std::size_t rows, std::size_t cols, std::vector<double> values,
                bool requires_grad = false);
    Tensor scalar_const(double v) { return leaf(1, 1, {v}, false); }

    Tensor add(Tensor a, Tensor b);
    Tensor sub(Tensor a, Tensor b);
    Tensor mul(Tensor a, Tensor b);  // elementwise
    Tensor scalar_mul(Tensor a, double s);
    Tensor matmul(Tensor a, Tensor b);
    Tensor transpose(Tensor a);
    Tensor sum(Tensor a);
    Tensor mean(Tensor a);
    Tensor square(Tensor a);
    Tensor log(Tensor a);
    Tensor exp(Tensor a);
    Tensor relu(Tensor a);
    Tensor concat_rows(const std::vector<Tensor>& parts);
    Tensor concat_cols(const std::vector<Tensor>& parts);
    Tensor slice_rows(Tensor a, std::size_t begin, std::size_t end);
    Tensor embedding_lookup(Tensor table, const std::vector<std::size_t>& ids);
    Tensor log_softmax_rows(Tensor logits);
    // Mean negative log-likelihood (nats) of target_ids under row-wise
    // softmax of logits.
    Tensor cross_entropy(Tensor logits, const std::vector<std::size_t>& target_ids);
    // Picks entries (rows[i], cols[i]) into an n x 1 tensor.
    Tensor gather(Tensor a, const std::vector<std::size_t>& rows,
                  const std::vector<std::size_t>& cols);
    // x = A^{-1} b for SPD A via Cholesky; adjoint uses the solve rule
    // g_b = A^{-1} g_x, g_A = -sym(g_b x^T).
    Tensor spd_solve(Tensor a, Tensor b);

    void backward(Tensor out);

    std::size_t num_nodes() const { return nodes_.size(); }

    struct Node {
        std::size_t rows = 0, cols = 0;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backward;
    };

    Node& node(std::size_t id) { return nodes_[id]; }
    const Node& node(std::size_t id) const { return nodes_[id]; }

private:
    Tensor make(std::size_t rows, std::size_t cols, std::vector<double> values,
                bool requires_grad, std::function<void(Tape&)> backward);
    void check_same_shape(Tensor a, Tensor b, const char* op) const;
    void check_finite(const std::vector<double>& v, const char* op) const;

    std::vector<Node> nodes_;
};

// Compares the reverse-mode gradient of a scalar-valued graph builder
// against central finite differences. The builder receives a tape plus the
// current parameter buffers and must return a scalar tensor along with the
// leaf tensors created for the parameters (in order). Each component is
// compared at step sizes {h/8, h, 8h} and the best agreement kept: large
// steps straddle relu kinks while small steps lose small-magnitude
// components to roundoff, and a correct gradient matches at some scale.
struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
};

using GraphBuilder = std::function<Tensor(Tape&, std::vector<Tensor>& param_leaves,
                                          const std::vector<std::vector<double>>& params)>;

GradCheckResult grad_check(const GraphBuilder& f,
                           std::vector<std::vector<double>> params,
                           double h = 1e-5);

}  // namespace rtalign
