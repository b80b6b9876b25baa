#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mmalign/errors.hpp"
#include "mmalign/tensor.hpp"

namespace mmalign::ad {

// Reverse-mode tape over dense row-major double tensors. The op set is
// exactly what the losses and toy encoders need; there is no general
// program tape.
struct Shape {
    std::vector<std::size_t> dims;

    Shape() = default;
    Shape(std::initializer_list<std::size_t> d) : dims(d) {}

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
    std::size_t rows() const { return dims.at(0); }
    std::size_t cols() const { return dims.at(1); }
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
  public:
    Var input(std::vector<double> value, Shape shape);
    Var scalar(double value) { return input({value}, Shape{1}); }

    const std::vector<double>& value(Var v) const { return node(v).value; }
    const std::vector<double>& grad(Var v) const { return node(v).grad; }
    const Shape& shape(Var v) const { return node(v).shape; }
    double scalar_value(Var v) const { return node(v).value.at(0); }

    // Runs the sweep from `loss` (a scalar) back to the leaves.
    void backward(Var loss);

    // --- elementwise / scalar ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);
    Var tanh_(Var a);
    Var exp_(Var a);
    Var abs_(Var a);  // subgradient 0 at 0
    // x * s with s a scalar Var (broadcast)
    Var scale_by(Var x, Var s);

    // --- linear algebra ---
    Var matmul(Var a, Var b);      // [m,k] x [k,n] -> [m,n]
    Var transpose(Var a);          // [m,n] -> [n,m]
    Var add_rowvec(Var x, Var b);  // [m,n] + [n] broadcast over rows
    Var concat_cols(Var a, Var b);
    Var concat_rows(const std::vector<Var>& parts);

    // --- reductions / normalization ---
    Var sum(Var a);                     // -> [1]
    Var mean_rows(Var a);               // [m,n] -> [n]
    Var row_softmax(Var a);             // [m,n], softmax per row (max-subtracted)
    Var logsumexp_rows(Var a);          // [m,n] -> [m], max-subtracted
    Var diag_sum(Var a);                // [n,n] -> [1]
    Var l2_normalize_rows(Var a);       // rows scaled to unit norm
    Var mean_center_cols(Var a);        // subtract per-column mean
    Var l2_normalize_cols(Var a);       // columns scaled to unit norm
    Var reshape(Var a, Shape s);

    // --- graph / grid ops ---
    Var gather_rows(Var x, std::vector<std::size_t> idx);
    // mean of rows sharing a segment id; empty segments yield zero rows
    Var segment_mean(Var x, std::vector<std::size_t> seg, std::size_t n_out);
    // input [Cin,G,G,G], weight [Cout,Cin,3,3,3], bias [Cout]; pad 1
    Var conv3d(Var x, Var w, Var b, std::size_t stride);

    // --- three-way kernels ---
    // A,B,C: [N,d] -> T[i,j,k] = sum_l A_il B_jl C_kl, shape [N,N,N]
    Var threeway_dot(Var a, Var b, Var c);
    // Z1,Z2,Z3: [N,d] -> C[i,j,k] = sum_b z1_bi z2_bj z3_bk, shape [d,d,d]
    Var triple_outer_sum(Var z1, Var z2, Var z3);
    // logsumexp of T over the two axes other than keep_axis -> [N]
    Var lse_over_two_axes(Var t, int keep_axis);
    Var diag3_sum(Var t);  // sum_i T_iii -> [1]
    // sum_{i=j=k}(1-C)^2 + sum_{exactly two equal}(1/2-C)^2 + lambda sum_{distinct} C^2
    Var barlow_penalty(Var c, double lambda);

  private:
    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        std::function<void(Tape&)> back;  // accumulates into parent grads
    };

    Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
    const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
    Var make(Shape shape, std::vector<double> value, std::function<void(Tape&)> back);

    std::vector<Node> nodes_;

    friend struct NodeAccess;

  public:
    // Exposed for op implementations in autodiff.cpp.
    std::vector<double>& val_ref(int id) { return nodes_[static_cast<std::size_t>(id)].value; }
    std::vector<double>& grad_ref(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    const Shape& shape_ref(int id) const { return nodes_[static_cast<std::size_t>(id)].shape; }
};

// Named-parameter wrapper around a Tape: parameters in, scalar loss and
// per-parameter gradients out.
class LossGraph {
  public:
    Tape& tape() { return tape_; }

    Var add_parameter(const std::string& name, std::vector<double> value, Shape shape);
    void set_loss(Var loss);

    double loss() const;
    // dloss/dparameter; requires set_loss() to have run the backward sweep.
    const std::vector<double>& grad_of(const std::string& name) const;
    const std::vector<std::string>& parameter_names() const { return names_; }
    Var parameter(const std::string& name) const;

  private:
    Tape tape_;
    std::map<std::string, Var> params_;
    std::vector<std::string> names_;
    Var loss_{};
    bool done_ = false;
};

}  // namespace mmalign::ad
