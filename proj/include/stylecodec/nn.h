#pragma once

// Minimal reverse-mode autodiff over row-major float matrices. Rows index
// time (frames or tokens), columns index features. A Tape records one
// forward pass; backward() accumulates into Parameter::grad.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stylecodec/rng.h"

namespace stylecodec::nn {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
    std::string name;
    Mat value;
    Mat grad;
    bool trainable = true;
};

class ParamStore {
public:
    Parameter& create(const std::string& name, int rows, int cols);
    Parameter& get(std::string_view name);
    const Parameter& get(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::span<const std::unique_ptr<Parameter>> all() const { return params_; }
    void zero_grad();
    size_t scalar_count() const;

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, Parameter*> index_;
};

void init_normal(Parameter& p, Rng& rng, float stddev);
// Glorot-uniform on (rows=fan_in, cols=fan_out).
void init_glorot(Parameter& p, Rng& rng);
void init_constant(Parameter& p, float value);

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Var constant(Mat value);
    Var param(Parameter& p);

    const Mat& value(Var v) const;
    float scalar(Var v) const { return value(v)(0, 0); }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    bool grad_enabled() const { return grad_enabled_; }
    size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and propagates to every parameter leaf.
    void backward(Var loss);

    // Op construction. `backward_fn` receives the output gradient and must
    // accumulate into inputs through accumulate().
    using BackwardFn = std::function<void(Tape&, const Mat& grad_out)>;
    Var push(Mat value, bool requires_grad, BackwardFn backward_fn);
    void accumulate(Var v, const Mat& g);

private:
    struct Node {
        Mat value;
        const Mat* ref = nullptr;
        Parameter* param = nullptr;
        Mat grad;
        bool has_grad = false;
        bool requires_grad = false;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    bool grad_enabled_;
};

// Shape-preserving arithmetic.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, float s);
Var add_rowvec(Tape& t, Var x, Var row);   // x (R x C) + row (1 x C)
Var mul_rowvec(Tape& t, Var x, Var row);   // x (R x C) * row (1 x C)

Var matmul(Tape& t, Var a, Var b);
Var linear(Tape& t, Var x, Var w, Var b);  // x W + b, b may be invalid

Var relu(Tape& t, Var x);
Var gelu(Tape& t, Var x);
Var tanh(Tape& t, Var x);

Var layer_norm(Tape& t, Var x, Var gain, Var bias, float eps = 1e-5f);

// Normalizes every column over the rows (time axis). With
// `divide_by_variance` the centered value is divided by (var + eps) instead
// of sqrt(var + eps).
Var time_norm(Tape& t, Var x, float eps, bool divide_by_variance);

// Multi-head scaled dot-product attention without masking.
Var attention(Tape& t, Var q, Var k, Var v, int heads);

// Same-padded 1-D convolution over rows. w has shape (kernel*in, out).
Var conv1d(Tape& t, Var x, Var w, Var b, int kernel);

// out[r] = table[ids[r]].
Var gather_rows(Tape& t, Var table, std::span<const int> ids);
Var mean_rows(Tape& t, Var x);
Var sum_all(Tape& t, Var x);
Var l2_normalize_rows(Tape& t, Var x, float eps = 1e-12f);

// Mean cross-entropy over rows with mask[r] != 0. Returns a 1x1 zero
// constant when the mask is empty.
Var cross_entropy_masked(Tape& t, Var logits, std::span<const int> targets, std::span<const uint8_t> mask);
Var mse(Tape& t, Var pred, const Mat& target);
// 1 - cos(a, target) for 1 x d rows.
Var cosine_distance(Tape& t, Var a, const Mat& target);

// Scalar node whose value and input gradient are computed outside the tape
// (used to splice in double-precision modules).
Var external_loss(Tape& t, Var input, double value, Mat grad_wrt_input);

}  // namespace stylecodec::nn
