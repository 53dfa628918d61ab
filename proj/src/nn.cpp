#include "stylecodec/nn.h"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace stylecodec::nn {

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

}  // namespace

Parameter& ParamStore::create(const std::string& name, int rows, int cols) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Mat::Zero(rows, cols);
    p->grad = Mat::Zero(rows, cols);
    Parameter& ref = *p;
    index_.emplace(name, p.get());
    params_.push_back(std::move(p));
    return ref;
}

Parameter& ParamStore::get(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
    return *it->second;
}

const Parameter& ParamStore::get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
    return *it->second;
}

bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

void ParamStore::zero_grad() {
    for (auto& p : params_) p->grad.setZero();
}

size_t ParamStore::scalar_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += static_cast<size_t>(p->value.size());
    return n;
}

void init_normal(Parameter& p, Rng& rng, float stddev) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        p.value.data()[i] = static_cast<float>(rng.normal() * stddev);
    }
}

void init_glorot(Parameter& p, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        p.value.data()[i] = static_cast<float>(rng.uniform(-limit, limit));
    }
}

void init_constant(Parameter& p, float value) { p.value.setConstant(value); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Mat value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
    Node n;
    n.ref = &p.value;
    n.param = &p;
    n.requires_grad = grad_enabled_ && p.trainable;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::value(Var v) const {
    const Node& n = nodes_.at(static_cast<size_t>(v.id));
    return n.ref ? *n.ref : n.value;
}

Var Tape::push(Mat value, bool requires_grad, BackwardFn backward_fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = grad_enabled_ && requires_grad;
    if (n.requires_grad) n.backward = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(Var v, const Mat& g) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Tape::backward(Var loss) {
    if (!grad_enabled_) throw std::logic_error("Tape::backward on a no-grad tape");
    const Mat& lv = value(loss);
    if (lv.size() != 1) throw std::invalid_argument("Tape::backward: loss must be scalar");
    accumulate(loss, Mat::Ones(1, 1));
    for (size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad) continue;
        if (n.param) {
            n.param->grad += n.grad;
        } else if (n.backward) {
            // Move the gradient out so the closure may append to other nodes.
            Mat g = std::move(n.grad);
            n.backward(*this, g);
        }
    }
}

// ---------------------------------------------------------------------------
// Ops

Var add(Tape& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "add");
    Mat out = t.value(a) + t.value(b);
    return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, const Mat& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

Var sub(Tape& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "sub");
    Mat out = t.value(a) - t.value(b);
    return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, const Mat& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, -g);
    });
}

Var mul(Tape& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "mul");
    Mat out = t.value(a).cwiseProduct(t.value(b));
    return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, const Mat& g) {
        if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
        if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
    });
}

Var scale(Tape& t, Var a, float s) {
    Mat out = t.value(a) * s;
    return t.push(std::move(out), t.requires_grad(a), [a, s](Tape& tp, const Mat& g) { tp.accumulate(a, g * s); });
}

Var add_rowvec(Tape& t, Var x, Var row) {
    const Mat& xv = t.value(x);
    const Mat& rv = t.value(row);
    if (rv.rows() != 1 || rv.cols() != xv.cols()) throw std::invalid_argument("add_rowvec: shape mismatch");
    Mat out = xv.rowwise() + rv.row(0);
    return t.push(std::move(out), t.requires_grad(x) || t.requires_grad(row), [x, row](Tape& tp, const Mat& g) {
        tp.accumulate(x, g);
        if (tp.requires_grad(row)) tp.accumulate(row, g.colwise().sum());
    });
}

Var mul_rowvec(Tape& t, Var x, Var row) {
    const Mat& xv = t.value(x);
    const Mat& rv = t.value(row);
    if (rv.rows() != 1 || rv.cols() != xv.cols()) throw std::invalid_argument("mul_rowvec: shape mismatch");
    Mat out = xv.array().rowwise() * rv.row(0).array();
    return t.push(std::move(out), t.requires_grad(x) || t.requires_grad(row), [x, row](Tape& tp, const Mat& g) {
        const Mat& xv2 = tp.value(x);
        const Mat& rv2 = tp.value(row);
        if (tp.requires_grad(x)) {
            Mat gx = g.array().rowwise() * rv2.row(0).array();
            tp.accumulate(x, gx);
        }
        if (tp.requires_grad(row)) tp.accumulate(row, g.cwiseProduct(xv2).colwise().sum());
    });
}

Var matmul(Tape& t, Var a, Var b) {
    const Mat& av = t.value(a);
    const Mat& bv = t.value(b);
    if (av.cols() != bv.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
    Mat out = av * bv;
    return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, const Mat& g) {
        if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
        if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
    });
}

Var linear(Tape& t, Var x, Var w, Var b) {
    const Mat& xv = t.value(x);
    const Mat& wv = t.value(w);
    if (xv.cols() != wv.rows()) throw std::invalid_argument("linear: input dimension mismatch");
    Mat out = xv * wv;
    const bool has_bias = b.valid();
    if (has_bias) out.rowwise() += t.value(b).row(0);
    const bool rg = t.requires_grad(x) || t.requires_grad(w) || (has_bias && t.requires_grad(b));
    return t.push(std::move(out), rg, [x, w, b, has_bias](Tape& tp, const Mat& g) {
        if (tp.requires_grad(x)) tp.accumulate(x, g * tp.value(w).transpose());
        if (tp.requires_grad(w)) tp.accumulate(w, tp.value(x).transpose() * g);
        if (has_bias && tp.requires_grad(b)) tp.accumulate(b, g.colwise().sum());
    });
}

Var relu(Tape& t, Var x) {
    Mat out = t.value(x).cwiseMax(0.0f);
    return t.push(std::move(out), t.requires_grad(x), [x](Tape& tp, const Mat& g) {
        Mat gx = (tp.value(x).array() > 0.0f).select(g, 0.0f);
        tp.accumulate(x, gx);
    });
}

Var gelu(Tape& t, Var x) {
    static constexpr float c = 0.7978845608028654f;  // sqrt(2/pi)
    const Mat& xv = t.value(x);
    Mat inner = (c * (xv.array() + 0.044715f * xv.array().cube())).matrix();
    Mat th = inner.array().tanh().matrix();
    Mat out = (0.5f * xv.array() * (1.0f + th.array())).matrix();
    return t.push(std::move(out), t.requires_grad(x), [x, th](Tape& tp, const Mat& g) {
        const auto xa = tp.value(x).array();
        const auto tha = th.array();
        auto dinner = c * (1.0f + 3.0f * 0.044715f * xa.square());
        Mat d = (0.5f * (1.0f + tha) + 0.5f * xa * (1.0f - tha.square()) * dinner).matrix();
        tp.accumulate(x, g.cwiseProduct(d));
    });
}

Var tanh(Tape& t, Var x) {
    Mat out = t.value(x).array().tanh().matrix();
    Mat saved = out;
    return t.push(std::move(out), t.requires_grad(x), [x, saved](Tape& tp, const Mat& g) {
        tp.accumulate(x, (g.array() * (1.0f - saved.array().square())).matrix());
    });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, float eps) {
    const Mat& xv = t.value(x);
    const Eigen::Index R = xv.rows(), C = xv.cols();
    Mat xhat(R, C);
    Eigen::VectorXf inv_std(R);
    for (Eigen::Index r = 0; r < R; ++r) {
        const float mean = xv.row(r).mean();
        const float var = (xv.row(r).array() - mean).square().mean();
        inv_std(r) = 1.0f / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
    }
    Mat out = xhat.array().rowwise() * t.value(gain).row(0).array();
    out.rowwise() += t.value(bias).row(0);
    const bool rg = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
    return t.push(std::move(out), rg, [x, gain, bias, xhat, inv_std](Tape& tp, const Mat& g) {
        if (tp.requires_grad(gain)) tp.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
        if (tp.requires_grad(bias)) tp.accumulate(bias, g.colwise().sum());
        if (tp.requires_grad(x)) {
            Mat dxhat = g.array().rowwise() * tp.value(gain).row(0).array();
            Mat dx(dxhat.rows(), dxhat.cols());
            for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                const float m1 = dxhat.row(r).mean();
                const float m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
            }
            tp.accumulate(x, dx);
        }
    });
}

Var time_norm(Tape& t, Var x, float eps, bool divide_by_variance) {
    const Mat& xv = t.value(x);
    const float n = static_cast<float>(xv.rows());
    Eigen::RowVectorXf mean = xv.colwise().mean();
    Mat centered = xv.rowwise() - mean;
    Eigen::RowVectorXf v = centered.array().square().colwise().sum().matrix() / n;
    v.array() += eps;
    const float power = divide_by_variance ? 1.0f : 0.5f;
    Eigen::RowVectorXf inv = v.array().pow(-power).matrix();
    Mat out = centered.array().rowwise() * inv.array();
    return t.push(std::move(out), t.requires_grad(x), [x, centered, v, inv, power, n](Tape& tp, const Mat& g) {
        // y = c * v^-a ; dL/dv = -a * sum(g * c) * v^(-a-1) ; dc = g v^-a + dL/dv * 2c/n
        Eigen::RowVectorXf gc = g.cwiseProduct(centered).colwise().sum();
        Eigen::RowVectorXf dv = (-power * gc.array() * v.array().pow(-power - 1.0f)).matrix();
        Mat dc = g.array().rowwise() * inv.array();
        dc += (centered.array().rowwise() * (2.0f / n * dv.array())).matrix();
        Eigen::RowVectorXf dc_mean = dc.colwise().mean();
        dc.rowwise() -= dc_mean;
        tp.accumulate(x, dc);
    });
}

Var attention(Tape& t, Var q, Var k, Var v, int heads) {
    const Mat& qv = t.value(q);
    const Mat& kv = t.value(k);
    const Mat& vv = t.value(v);
    const Eigen::Index d = qv.cols();
    if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows() || heads <= 0 || d % heads != 0) {
        throw std::invalid_argument("attention: incompatible shapes");
    }
    const Eigen::Index dh = d / heads;
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
    Mat out(qv.rows(), d);
    auto probs = std::make_shared<std::vector<Mat>>(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const auto qh = qv.middleCols(h * dh, dh);
        const auto kh = kv.middleCols(h * dh, dh);
        const auto vh = vv.middleCols(h * dh, dh);
        Mat s = (qh * kh.transpose()) * inv_sqrt;
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            const float m = s.row(r).maxCoeff();
            s.row(r) = (s.row(r).array() - m).exp();
            s.row(r) /= s.row(r).sum();
        }
        out.middleCols(h * dh, dh) = s * vh;
        (*probs)[static_cast<size_t>(h)] = std::move(s);
    }
    const bool rg = t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v);
    return t.push(std::move(out), rg, [q, k, v, heads, dh, inv_sqrt, probs](Tape& tp, const Mat& g) {
        const Mat& qv2 = tp.value(q);
        const Mat& kv2 = tp.value(k);
        const Mat& vv2 = tp.value(v);
        Mat dq = Mat::Zero(qv2.rows(), qv2.cols());
        Mat dk = Mat::Zero(kv2.rows(), kv2.cols());
        Mat dv = Mat::Zero(vv2.rows(), vv2.cols());
        for (int h = 0; h < heads; ++h) {
            const Mat& p = (*probs)[static_cast<size_t>(h)];
            const auto go = g.middleCols(h * dh, dh);
            dv.middleCols(h * dh, dh) = p.transpose() * go;
            Mat dp = go * vv2.middleCols(h * dh, dh).transpose();
            Eigen::VectorXf rowdot = dp.cwiseProduct(p).rowwise().sum();
            Mat ds = p.cwiseProduct(dp.colwise() - rowdot) * inv_sqrt;
            dq.middleCols(h * dh, dh) = ds * kv2.middleCols(h * dh, dh);
            dk.middleCols(h * dh, dh) = ds.transpose() * qv2.middleCols(h * dh, dh);
        }
        tp.accumulate(q, dq);
        tp.accumulate(k, dk);
        tp.accumulate(v, dv);
    });
}

Var conv1d(Tape& t, Var x, Var w, Var b, int kernel) {
    const Mat& xv = t.value(x);
    const Mat& wv = t.value(w);
    const Eigen::Index T = xv.rows(), in = xv.cols();
    if (kernel <= 0 || kernel % 2 == 0 || wv.rows() != kernel * in) {
        throw std::invalid_argument("conv1d: kernel must be odd and weight rows = kernel * in");
    }
    const int pad = kernel / 2;
    auto cols = std::make_shared<Mat>(Mat::Zero(T, kernel * in));
    for (Eigen::Index r = 0; r < T; ++r) {
        for (int j = 0; j < kernel; ++j) {
            const Eigen::Index src = r + j - pad;
            if (src >= 0 && src < T) cols->block(r, j * in, 1, in) = xv.row(src);
        }
    }
    Mat out = (*cols) * wv;
    const bool has_bias = b.valid();
    if (has_bias) out.rowwise() += t.value(b).row(0);
    const bool rg = t.requires_grad(x) || t.requires_grad(w) || (has_bias && t.requires_grad(b));
    return t.push(std::move(out), rg, [x, w, b, has_bias, kernel, pad, cols, T, in](Tape& tp, const Mat& g) {
        if (tp.requires_grad(w)) tp.accumulate(w, cols->transpose() * g);
        if (has_bias && tp.requires_grad(b)) tp.accumulate(b, g.colwise().sum());
        if (tp.requires_grad(x)) {
            Mat dcols = g * tp.value(w).transpose();
            Mat dx = Mat::Zero(T, in);
            for (Eigen::Index r = 0; r < T; ++r) {
                for (int j = 0; j < kernel; ++j) {
                    const Eigen::Index src = r + j - pad;
                    if (src >= 0 && src < T) dx.row(src) += dcols.block(r, j * in, 1, in);
                }
            }
            tp.accumulate(x, dx);
        }
    });
}

Var gather_rows(Tape& t, Var table, std::span<const int> ids) {
    const Mat& tv = t.value(table);
    Mat out(static_cast<Eigen::Index>(ids.size()), tv.cols());
    for (size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || ids[r] >= tv.rows()) throw std::out_of_range("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(r)) = tv.row(ids[r]);
    }
    std::vector<int> idx(ids.begin(), ids.end());
    return t.push(std::move(out), t.requires_grad(table), [table, idx = std::move(idx)](Tape& tp, const Mat& g) {
        Mat dt = Mat::Zero(tp.value(table).rows(), tp.value(table).cols());
        for (size_t r = 0; r < idx.size(); ++r) dt.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
        tp.accumulate(table, dt);
    });
}

Var mean_rows(Tape& t, Var x) {
    const Mat& xv = t.value(x);
    const Eigen::Index R = xv.rows();
    if (R == 0) throw std::invalid_argument("mean_rows: empty input");
    Mat out = xv.colwise().mean();
    return t.push(std::move(out), t.requires_grad(x), [x, R](Tape& tp, const Mat& g) {
        Mat dx = g.replicate(R, 1) / static_cast<float>(R);
        tp.accumulate(x, dx);
    });
}

Var sum_all(Tape& t, Var x) {
    Mat out(1, 1);
    out(0, 0) = t.value(x).sum();
    return t.push(std::move(out), t.requires_grad(x), [x](Tape& tp, const Mat& g) {
        const Mat& xv = tp.value(x);
        tp.accumulate(x, Mat::Constant(xv.rows(), xv.cols(), g(0, 0)));
    });
}

Var l2_normalize_rows(Tape& t, Var x, float eps) {
    const Mat& xv = t.value(x);
    Eigen::VectorXf norms = (xv.rowwise().squaredNorm().array() + eps).sqrt().matrix();
    Mat out = xv.array().colwise() / norms.array();
    Mat y = out;
    return t.push(std::move(out), t.requires_grad(x), [x, y, norms](Tape& tp, const Mat& g) {
        // d(x/|x|) = (g - y (g.y)) / |x|
        Eigen::VectorXf gy = g.cwiseProduct(y).rowwise().sum();
        Mat dx = (g - (y.array().colwise() * gy.array()).matrix()).array().colwise() / norms.array();
        tp.accumulate(x, dx);
    });
}

Var cross_entropy_masked(Tape& t, Var logits, std::span<const int> targets, std::span<const uint8_t> mask) {
    const Mat& lv = t.value(logits);
    if (static_cast<size_t>(lv.rows()) != targets.size() || targets.size() != mask.size()) {
        throw std::invalid_argument("cross_entropy_masked: length mismatch");
    }
    std::vector<int> rows;
    for (size_t r = 0; r < mask.size(); ++r) {
        if (mask[r]) rows.push_back(static_cast<int>(r));
    }
    if (rows.empty()) return t.constant(Mat::Zero(1, 1));
    const float inv_n = 1.0f / static_cast<float>(rows.size());
    auto probs = std::make_shared<Mat>(static_cast<Eigen::Index>(rows.size()), lv.cols());
    double loss = 0.0;
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto row = lv.row(rows[i]);
        const int target = targets[static_cast<size_t>(rows[i])];
        if (target < 0 || target >= lv.cols()) throw std::out_of_range("cross_entropy_masked: target out of range");
        const float m = row.maxCoeff();
        Eigen::RowVectorXf e = (row.array() - m).exp();
        const float z = e.sum();
        loss += static_cast<double>(std::log(z) + m - row(target));
        probs->row(static_cast<Eigen::Index>(i)) = e / z;
    }
    Mat out(1, 1);
    out(0, 0) = static_cast<float>(loss * inv_n);
    std::vector<int> tgt;
    tgt.reserve(rows.size());
    for (int r : rows) tgt.push_back(targets[static_cast<size_t>(r)]);
    return t.push(std::move(out), t.requires_grad(logits),
                  [logits, rows = std::move(rows), tgt = std::move(tgt), probs, inv_n](Tape& tp, const Mat& g) {
                      const Mat& lv2 = tp.value(logits);
                      Mat dl = Mat::Zero(lv2.rows(), lv2.cols());
                      const float s = g(0, 0) * inv_n;
                      for (size_t i = 0; i < rows.size(); ++i) {
                          dl.row(rows[i]) = probs->row(static_cast<Eigen::Index>(i)) * s;
                          dl(rows[i], tgt[i]) -= s;
                      }
                      tp.accumulate(logits, dl);
                  });
}

Var mse(Tape& t, Var pred, const Mat& target) {
    const Mat& pv = t.value(pred);
    require_same_shape(pv, target, "mse");
    Mat diff = pv - target;
    const float n = static_cast<float>(pv.size());
    Mat out(1, 1);
    out(0, 0) = diff.squaredNorm() / n;
    return t.push(std::move(out), t.requires_grad(pred), [pred, diff, n](Tape& tp, const Mat& g) {
        tp.accumulate(pred, diff * (2.0f * g(0, 0) / n));
    });
}

Var cosine_distance(Tape& t, Var a, const Mat& target) {
    const Mat& av = t.value(a);
    require_same_shape(av, target, "cosine_distance");
    const float na = std::sqrt(av.squaredNorm() + 1e-12f);
    const float nt = std::sqrt(target.squaredNorm() + 1e-12f);
    const float dot = av.cwiseProduct(target).sum();
    const float cos = dot / (na * nt);
    Mat out(1, 1);
    out(0, 0) = 1.0f - cos;
    return t.push(std::move(out), t.requires_grad(a), [a, target, na, nt, cos](Tape& tp, const Mat& g) {
        const Mat& av2 = tp.value(a);
        Mat dcos = target / (na * nt) - av2 * (cos / (na * na));
        tp.accumulate(a, dcos * (-g(0, 0)));
    });
}

Var external_loss(Tape& t, Var input, double value, Mat grad_wrt_input) {
    require_same_shape(t.value(input), grad_wrt_input, "external_loss");
    Mat out(1, 1);
    out(0, 0) = static_cast<float>(value);
    return t.push(std::move(out), t.requires_grad(input), [input, grad = std::move(grad_wrt_input)](Tape& tp, const Mat& g) {
        tp.accumulate(input, grad * g(0, 0));
    });
}

}  // namespace stylecodec::nn
