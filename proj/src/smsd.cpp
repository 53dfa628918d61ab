#include "stylecodec/smsd.h"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace stylecodec {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Eigen::MatrixXd glorot(int rows, int cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
    return m;
}

// Number of raw variance entries averaged into each tied variance.
int tie_count(NoiseMode mode, int K, int d) {
    switch (mode) {
        case NoiseMode::FullyFactored: return 1;
        case NoiseMode::Isotropic: return d;
        case NoiseMode::IsotropicAcrossClusters: return K * d;
        case NoiseMode::FixedIsotropic: return 0;
    }
    return 1;
}

int variance_slot(NoiseMode mode, int k, int j, int d) {
    switch (mode) {
        case NoiseMode::FullyFactored: return k * d + j;
        case NoiseMode::Isotropic: return k;
        default: return 0;
    }
}

}  // namespace

std::string_view noise_mode_name(NoiseMode m) {
    switch (m) {
        case NoiseMode::FullyFactored: return "fully_factored";
        case NoiseMode::Isotropic: return "isotropic";
        case NoiseMode::IsotropicAcrossClusters: return "isotropic_across_clusters";
        case NoiseMode::FixedIsotropic: return "fixed_isotropic";
    }
    return "isotropic_across_clusters";
}

NoiseMode parse_noise_mode(std::string_view s) {
    for (NoiseMode m : {NoiseMode::FullyFactored, NoiseMode::Isotropic, NoiseMode::IsotropicAcrossClusters,
                        NoiseMode::FixedIsotropic}) {
        if (noise_mode_name(m) == s) return m;
    }
    throw std::invalid_argument("unknown noise mode: " + std::string(s));
}

void SmsdConfig::validate() const {
    if (input_dim <= 0 || output_dim <= 0 || hidden_dim <= 0 || components <= 0) {
        throw std::invalid_argument("SMSD dimensions and component count must be positive");
    }
    if (!(fixed_sigma > 0.0) || !(var_floor > 0.0)) throw std::invalid_argument("SMSD sigma and floor must be positive");
}

double MixtureParams::variance(int k, int j) const {
    return variances(variance_slot(mode, k, j, dim()));
}

void MixtureParams::validate() const {
    if (weights.size() == 0 || means.rows() != weights.size()) throw std::invalid_argument("mixture shape mismatch");
    if (std::abs(weights.sum() - 1.0) > 1e-6 || (weights.array() < 0.0).any()) {
        throw std::invalid_argument("mixture weights are not on the simplex");
    }
    if (!(variances.array() > 0.0).all()) throw std::invalid_argument("mixture variances must be positive");
}

SmsdHead SmsdHead::init(const SmsdConfig& cfg, Rng& rng) {
    cfg.validate();
    const int K = cfg.components, d = cfg.output_dim, H = cfg.hidden_dim;
    SmsdHead h;
    h.cfg = cfg;
    h.w1 = glorot(cfg.input_dim, H, rng);
    h.b1 = Eigen::MatrixXd::Zero(1, H);
    h.w_logit = glorot(H, K, rng) * 0.1;
    h.b_logit = Eigen::MatrixXd::Zero(1, K);
    h.w_mean = glorot(H, K * d, rng);
    h.b_mean = Eigen::MatrixXd::Zero(1, K * d);
    h.w_var = glorot(H, K * d, rng) * 0.1;
    h.b_var = Eigen::MatrixXd::Zero(1, K * d);
    h.w_noise = glorot(d, K * d, rng) * 0.1;
    h.b_noise = Eigen::MatrixXd::Zero(1, K * d);
    h.fixed_sigma = cfg.fixed_sigma;
    return h;
}

SmsdHead SmsdHead::zeros_like(const SmsdHead& h) {
    SmsdHead z = h;
    for (auto& [name, m] : z.groups()) m->setZero();
    z.fixed_sigma = 0.0;
    return z;
}

std::vector<std::pair<std::string, Eigen::MatrixXd*>> SmsdHead::groups() {
    return {{"w1", &w1},         {"b1", &b1},         {"w_logit", &w_logit}, {"b_logit", &b_logit},
            {"w_mean", &w_mean}, {"b_mean", &b_mean}, {"w_var", &w_var},     {"b_var", &b_var},
            {"w_noise", &w_noise}, {"b_noise", &b_noise}};
}

std::vector<std::pair<std::string, const Eigen::MatrixXd*>> SmsdHead::groups() const {
    std::vector<std::pair<std::string, const Eigen::MatrixXd*>> out;
    for (auto& [name, m] : const_cast<SmsdHead*>(this)->groups()) out.emplace_back(name, m);
    return out;
}

MixtureParams mdn_forward(const Eigen::VectorXd& x, const SmsdHead& head, const Eigen::VectorXd& noise,
                          SmsdCache* cache) {
    const SmsdConfig& cfg = head.cfg;
    const int K = cfg.components, d = cfg.output_dim;
    if (x.size() != cfg.input_dim) throw std::invalid_argument("mdn_forward: input dimension mismatch");
    if (noise.size() != 0 && noise.size() != d) throw std::invalid_argument("mdn_forward: noise dimension mismatch");

    const Eigen::RowVectorXd xr = x.transpose();
    const Eigen::RowVectorXd hidden = (xr * head.w1 + head.b1).array().tanh().matrix();
    const Eigen::RowVectorXd logits = hidden * head.w_logit + head.b_logit;
    const Eigen::RowVectorXd mean_flat = hidden * head.w_mean + head.b_mean;
    Eigen::RowVectorXd raw = hidden * head.w_var + head.b_var;
    Eigen::RowVectorXd eps = noise.size() ? Eigen::RowVectorXd(noise.transpose()) : Eigen::RowVectorXd::Zero(d);
    raw += eps * head.w_noise + head.b_noise;

    MixtureParams mp;
    mp.mode = cfg.mode;
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    mp.log_weights = (logits.array() - lse).matrix().transpose();
    mp.weights = mp.log_weights.array().exp().matrix();
    mp.means = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(mean_flat.data(), K, d);

    switch (cfg.mode) {
        case NoiseMode::FullyFactored:
            mp.variances.resize(K * d);
            for (int i = 0; i < K * d; ++i) mp.variances(i) = softplus(raw(i)) + cfg.var_floor;
            break;
        case NoiseMode::Isotropic:
            mp.variances.resize(K);
            for (int k = 0; k < K; ++k) {
                double acc = 0.0;
                for (int j = 0; j < d; ++j) acc += softplus(raw(k * d + j));
                mp.variances(k) = acc / d + cfg.var_floor;
            }
            break;
        case NoiseMode::IsotropicAcrossClusters: {
            double acc = 0.0;
            for (int i = 0; i < K * d; ++i) acc += softplus(raw(i));
            mp.variances = Eigen::VectorXd::Constant(1, acc / (K * d) + cfg.var_floor);
            break;
        }
        case NoiseMode::FixedIsotropic:
            mp.variances = Eigen::VectorXd::Constant(1, head.fixed_sigma * head.fixed_sigma);
            break;
    }
    if (cache) {
        cache->x = xr;
        cache->hidden = hidden;
        cache->noise = eps;
        cache->raw_var = raw;
    }
    return mp;
}

namespace {

// Per-component log joint terms log pi_k + log N(y; mu_k, sigma_k^2).
Eigen::VectorXd component_log_terms(const Eigen::VectorXd& y, const MixtureParams& mp, const SmsdConfig& cfg) {
    const int K = mp.components(), d = mp.dim();
    Eigen::VectorXd terms(K);
    for (int k = 0; k < K; ++k) {
        double quad = 0.0, logdet = 0.0;
        for (int j = 0; j < d; ++j) {
            const double v = mp.variance(k, j);
            const double diff = y(j) - mp.means(k, j);
            quad += diff * diff / v;
            logdet += std::log(v);
        }
        terms(k) = mp.log_weights(k) - 0.5 * quad - (cfg.reduced_form ? 0.0 : 0.5 * logdet);
    }
    return terms;
}

}  // namespace

double smsd_nll(const Eigen::VectorXd& y, const MixtureParams& mp, const SmsdConfig& cfg) {
    if (y.size() != mp.dim()) throw std::invalid_argument("smsd_nll: target dimension mismatch");
    if (!(mp.variances.array() > 0.0).all()) throw std::logic_error("smsd_nll: non-positive variance");
    const Eigen::VectorXd terms = component_log_terms(y, mp, cfg);
    const double m = terms.maxCoeff();
    const double lse = m + std::log((terms.array() - m).exp().sum());
    double nll = -lse;
    if (cfg.exact_constant) nll += 0.5 * mp.dim() * std::log(2.0 * std::numbers::pi);
    return nll;
}

SmsdGradients smsd_nll_grad(const Eigen::VectorXd& y, const MixtureParams& mp, const SmsdHead& head,
                            const SmsdCache& cache) {
    const SmsdConfig& cfg = head.cfg;
    const int K = mp.components(), d = mp.dim();
    SmsdGradients g;
    g.params = SmsdHead::zeros_like(head);
    g.loss = smsd_nll(y, mp, cfg);

    const Eigen::VectorXd terms = component_log_terms(y, mp, cfg);
    const double m = terms.maxCoeff();
    Eigen::VectorXd resp = (terms.array() - m).exp().matrix();
    resp /= resp.sum();

    // d loss / d logits = pi - responsibility
    Eigen::RowVectorXd d_logits = (mp.weights - resp).transpose();
    Eigen::RowVectorXd d_mean(K * d);
    Eigen::VectorXd d_var_elem(K * d);  // gradient w.r.t. the broadcast variance entry v_kj
    for (int k = 0; k < K; ++k) {
        for (int j = 0; j < d; ++j) {
            const double v = mp.variance(k, j);
            const double diff = y(j) - mp.means(k, j);
            d_mean(k * d + j) = -resp(k) * diff / v;
            const double dq = 0.5 * diff * diff / (v * v);
            d_var_elem(k * d + j) = -resp(k) * (dq - (cfg.reduced_form ? 0.0 : 0.5 / v));
        }
    }

    Eigen::RowVectorXd d_raw = Eigen::RowVectorXd::Zero(K * d);
    if (cfg.mode != NoiseMode::FixedIsotropic) {
        const int ties = tie_count(cfg.mode, K, d);
        // Sum of broadcast gradients over the entries sharing each variance.
        Eigen::VectorXd d_tied = Eigen::VectorXd::Zero(mp.variances.size());
        for (int k = 0; k < K; ++k) {
            for (int j = 0; j < d; ++j) d_tied(variance_slot(cfg.mode, k, j, d)) += d_var_elem(k * d + j);
        }
        for (int k = 0; k < K; ++k) {
            for (int j = 0; j < d; ++j) {
                d_raw(k * d + j) = d_tied(variance_slot(cfg.mode, k, j, d)) / ties * sigmoid(cache.raw_var(k * d + j));
            }
        }
    }

    g.params.w_logit = cache.hidden.transpose() * d_logits;
    g.params.b_logit = d_logits;
    g.params.w_mean = cache.hidden.transpose() * d_mean;
    g.params.b_mean = d_mean;
    g.params.w_var = cache.hidden.transpose() * d_raw;
    g.params.b_var = d_raw;
    g.params.w_noise = cache.noise.transpose() * d_raw;
    g.params.b_noise = d_raw;

    Eigen::RowVectorXd d_hidden = d_logits * head.w_logit.transpose() + d_mean * head.w_mean.transpose() +
                                  d_raw * head.w_var.transpose();
    Eigen::RowVectorXd d_pre = d_hidden.array() * (1.0 - cache.hidden.array().square());
    g.params.w1 = cache.x.transpose() * d_pre;
    g.params.b1 = d_pre;
    g.input = (d_pre * head.w1.transpose()).transpose();
    return g;
}

SmsdSample smsd_sample(const MixtureParams& mp, Rng& rng) {
    SmsdSample s;
    s.component = static_cast<int>(rng.categorical(std::span<const double>(mp.weights.data(), static_cast<size_t>(mp.weights.size()))));
    s.value.resize(mp.dim());
    for (int j = 0; j < mp.dim(); ++j) {
        s.value(j) = mp.means(s.component, j) + std::sqrt(mp.variance(s.component, j)) * rng.normal();
    }
    return s;
}

Eigen::VectorXd mixture_mean(const MixtureParams& mp) { return mp.means.transpose() * mp.weights; }

Eigen::VectorXd mixture_mode_mean(const MixtureParams& mp) {
    Eigen::Index k = 0;
    mp.weights.maxCoeff(&k);
    return mp.means.row(k).transpose();
}

}  // namespace stylecodec
