#include "stylecodec/generator.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace stylecodec {

namespace {

constexpr int kMaxPositions = 512;

void create_linear(nn::ParamStore& s, Rng& rng, const std::string& name, int in, int out, bool bias = true) {
    nn::init_glorot(s.create(name + ".w", in, out), rng);
    if (bias) s.create(name + ".b", 1, out);
}

void create_norm(nn::ParamStore& s, const std::string& name, int dim) {
    nn::init_constant(s.create(name + ".g", 1, dim), 1.0f);
    s.create(name + ".b", 1, dim);
}

}  // namespace

void GeneratorConfig::validate() const {
    layout.validate();
    if (text_vocab <= 0 || style_dim <= 0 || d_model <= 0 || heads <= 0 || d_model % heads != 0) {
        throw std::invalid_argument("generator: invalid dimensions");
    }
    if (ff_mult <= 0 || text_blocks < 0 || decoder_blocks <= 0 || conv_kernel <= 0 || conv_kernel % 2 == 0) {
        throw std::invalid_argument("generator: invalid block configuration");
    }
    if (first_channel_iterations <= 0 || later_channel_iterations <= 0) {
        throw std::invalid_argument("generator: decode iterations must be positive");
    }
}

int MaskPlan::masked_count() const { return static_cast<int>(std::count(mask.begin(), mask.end(), uint8_t{1})); }

MaskPlan mask_from_angle(Rng& rng, int T, int channel, double angle) {
    if (T < 1) throw std::invalid_argument("sample_mask: T must be >= 1");
    MaskPlan plan;
    plan.channel = channel;
    plan.ratio = std::clamp(std::cos(angle), 0.0, 1.0);
    plan.mask.resize(static_cast<size_t>(T));
    for (auto& m : plan.mask) m = rng.bernoulli(plan.ratio) ? 1 : 0;
    return plan;
}

MaskPlan sample_mask(Rng& rng, int T, int channel) {
    const double angle = rng.uniform(0.0, std::numbers::pi / 2.0);
    return mask_from_angle(rng, T, channel, angle);
}

DecodeSchedule DecodeSchedule::standard(const GeneratorConfig& cfg) {
    DecodeSchedule s;
    s.initial_temperature = cfg.initial_temperature;
    for (int c = 0; c < cfg.layout.channels(); ++c) {
        s.iterations.push_back(c == 0 ? cfg.first_channel_iterations : cfg.later_channel_iterations);
    }
    return s;
}

int DecodeSchedule::committed_after(int T, int j, int J) {
    if (J <= 0) throw std::invalid_argument("decode schedule needs at least one iteration");
    int prev = 0;
    for (int i = 0; i <= j; ++i) {
        if (i == J - 1) return T;
        const double still_masked = std::floor(T * std::cos(std::numbers::pi / 2.0 * (i + 1) / J));
        int committed = T - static_cast<int>(still_masked);
        // At least one new position per iteration while any remain.
        committed = std::clamp(committed, std::min(T, prev + 1), T);
        prev = committed;
    }
    return prev;
}

int DecodeSchedule::retain_count(int T, int j, int J) {
    return committed_after(T, j, J) - (j == 0 ? 0 : committed_after(T, j - 1, J));
}

double DecodeSchedule::temperature(int j, int J) const {
    if (J <= 1) return 0.0;
    return initial_temperature * static_cast<double>(J - 1 - j) / static_cast<double>(J - 1);
}

nn::Mat sinusoid_table(int positions, int dim) {
    nn::Mat pe(positions, dim);
    for (int p = 0; p < positions; ++p) {
        for (int i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
            pe(p, i) = static_cast<float>(i % 2 == 0 ? std::sin(p * rate) : std::cos(p * rate));
        }
    }
    return pe;
}

nn::Mat frame_position_table(int positions, int dim) {
    nn::Mat pe(positions, dim);
    const int pairs = std::max(1, dim / 2);
    for (int p = 0; p < positions; ++p) {
        for (int i = 0; i < dim; ++i) {
            // Angular rates from pi (period 2) down to pi/64 geometrically.
            const double rate = std::numbers::pi * std::pow(1.0 / 64.0, static_cast<double>(i / 2) / std::max(1, pairs - 1));
            pe(p, i) = static_cast<float>(i % 2 == 0 ? std::cos(p * rate) : std::sin(p * rate));
        }
    }
    return pe;
}

CodecGenerator::CodecGenerator(nn::ParamStore& store, GeneratorConfig cfg, Rng& rng) : store_(store), cfg_(std::move(cfg)) {
    cfg_.validate();
    const int d = cfg_.d_model;
    const int ff = d * cfg_.ff_mult;
    nn::init_normal(store.create("gen.text_embed", cfg_.text_vocab, d), rng, 0.3f);
    for (int b = 0; b < cfg_.text_blocks; ++b) {
        const std::string p = "gen.text." + std::to_string(b);
        create_norm(store, p + ".ln1", d);
        for (const char* n : {".q", ".k", ".v", ".o"}) create_linear(store, rng, p + n, d, d);
        create_norm(store, p + ".ln2", d);
        create_linear(store, rng, p + ".ff1", d, ff);
        create_linear(store, rng, p + ".ff2", ff, d);
    }
    create_norm(store, "gen.text.out_ln", d);

    create_norm(store, "gen.fuse.ln", d);
    create_linear(store, rng, "gen.fuse.q", d, d, false);
    create_linear(store, rng, "gen.fuse.k", cfg_.style_dim, d, false);
    create_linear(store, rng, "gen.fuse.v", cfg_.style_dim, d, false);
    create_linear(store, rng, "gen.fuse.o", d, d, false);

    nn::init_glorot(store.create("gen.dur.conv1.w", 3 * d, d), rng);
    store.create("gen.dur.conv1.b", 1, d);
    create_norm(store, "gen.dur.ln1", d);
    nn::init_glorot(store.create("gen.dur.conv2.w", 3 * d, d), rng);
    store.create("gen.dur.conv2.b", 1, d);
    create_norm(store, "gen.dur.ln2", d);
    create_linear(store, rng, "gen.dur.out", d, 1);
    // Start near the mean log-duration so early steps are not dominated by L_dur.
    init_constant(store.get("gen.dur.out.b"), 1.0f);

    const int C = cfg_.layout.channels();
    const int V = cfg_.layout.codebook_size;
    for (int c = 0; c < C; ++c) {
        // Row V is the MASK embedding.
        nn::init_normal(store.create("gen.codec_embed." + std::to_string(c), V + 1, d), rng, 0.3f);
    }
    nn::init_normal(store.create("gen.channel_embed", C, d), rng, 0.3f);
    for (int b = 0; b < cfg_.decoder_blocks; ++b) {
        const std::string p = "gen.dec." + std::to_string(b);
        create_norm(store, p + ".ln1", d);
        for (const char* n : {".q", ".k", ".v", ".o"}) create_linear(store, rng, p + n, d, d);
        create_norm(store, p + ".ln_conv", d);
        nn::init_glorot(store.create(p + ".conv.w", cfg_.conv_kernel * d, d), rng);
        store.create(p + ".conv.b", 1, d);
        create_linear(store, rng, p + ".conv_out", d, d);
        create_norm(store, p + ".ln2", d);
        create_linear(store, rng, p + ".ff1", d, ff);
        create_linear(store, rng, p + ".ff2", ff, d);
    }
    create_norm(store, "gen.dec.out_ln", d);
    for (int c = 0; c < C; ++c) {
        const std::string p = "gen.head." + std::to_string(c);
        nn::init_normal(store.create(p + ".w", d, V), rng, 0.01f);
        store.create(p + ".b", 1, V);
    }
    text_pe_ = sinusoid_table(kMaxPositions, d);
    frame_pe_ = frame_position_table(kMaxPositions, d);
}

nn::Var CodecGenerator::norm(nn::Tape& t, nn::Var x, const std::string& prefix) const {
    return nn::layer_norm(t, x, P(t, prefix + ".g"), P(t, prefix + ".b"));
}

nn::Var CodecGenerator::block_attention(nn::Tape& t, nn::Var x, const std::string& p) const {
    nn::Var h = norm(t, x, p + ".ln1");
    nn::Var q = nn::linear(t, h, P(t, p + ".q.w"), P(t, p + ".q.b"));
    nn::Var k = nn::linear(t, h, P(t, p + ".k.w"), P(t, p + ".k.b"));
    nn::Var v = nn::linear(t, h, P(t, p + ".v.w"), P(t, p + ".v.b"));
    nn::Var a = nn::attention(t, q, k, v, cfg_.heads);
    return nn::add(t, x, nn::linear(t, a, P(t, p + ".o.w"), P(t, p + ".o.b")));
}

nn::Var CodecGenerator::block_feedforward(nn::Tape& t, nn::Var x, const std::string& p) const {
    nn::Var h = norm(t, x, p + ".ln2");
    h = nn::gelu(t, nn::linear(t, h, P(t, p + ".ff1.w"), P(t, p + ".ff1.b")));
    return nn::add(t, x, nn::linear(t, h, P(t, p + ".ff2.w"), P(t, p + ".ff2.b")));
}

nn::Var CodecGenerator::block_conv(nn::Tape& t, nn::Var x, const std::string& p) const {
    nn::Var h = norm(t, x, p + ".ln_conv");
    h = nn::gelu(t, nn::conv1d(t, h, P(t, p + ".conv.w"), P(t, p + ".conv.b"), cfg_.conv_kernel));
    return nn::add(t, x, nn::linear(t, h, P(t, p + ".conv_out.w"), P(t, p + ".conv_out.b")));
}

nn::Var CodecGenerator::text_encode(nn::Tape& t, std::span<const int> content) const {
    if (content.empty()) throw std::invalid_argument("text_encode: empty content sequence");
    if (static_cast<int>(content.size()) > kMaxPositions) throw std::invalid_argument("text_encode: sequence too long");
    for (int id : content) {
        if (id < 0 || id >= cfg_.text_vocab) throw std::out_of_range("text_encode: token id outside text vocabulary");
    }
    nn::Var x = nn::gather_rows(t, P(t, "gen.text_embed"), content);
    x = nn::add(t, x, t.constant(text_pe_.topRows(static_cast<Eigen::Index>(content.size()))));
    for (int b = 0; b < cfg_.text_blocks; ++b) {
        const std::string p = "gen.text." + std::to_string(b);
        x = block_attention(t, x, p);
        x = block_feedforward(t, x, p);
    }
    return norm(t, x, "gen.text.out_ln");
}

nn::Var CodecGenerator::fuse_style(nn::Tape& t, nn::Var text_hidden, nn::Var style) const {
    if (t.value(style).rows() != 1 || t.value(style).cols() != cfg_.style_dim) {
        throw std::invalid_argument("fuse_style: style vector must be 1 x style_dim");
    }
    nn::Var q = nn::linear(t, norm(t, text_hidden, "gen.fuse.ln"), P(t, "gen.fuse.q.w"), nn::Var{});
    nn::Var k = nn::linear(t, style, P(t, "gen.fuse.k.w"), nn::Var{});
    nn::Var v = nn::linear(t, style, P(t, "gen.fuse.v.w"), nn::Var{});
    nn::Var a = nn::attention(t, q, k, v, cfg_.heads);
    return nn::add(t, text_hidden, nn::linear(t, a, P(t, "gen.fuse.o.w"), nn::Var{}));
}

nn::Var CodecGenerator::predict_log_durations(nn::Tape& t, nn::Var ts) const {
    nn::Var h = nn::relu(t, nn::conv1d(t, ts, P(t, "gen.dur.conv1.w"), P(t, "gen.dur.conv1.b"), 3));
    h = norm(t, h, "gen.dur.ln1");
    h = nn::relu(t, nn::conv1d(t, h, P(t, "gen.dur.conv2.w"), P(t, "gen.dur.conv2.b"), 3));
    h = norm(t, h, "gen.dur.ln2");
    return nn::linear(t, h, P(t, "gen.dur.out.w"), P(t, "gen.dur.out.b"));
}

nn::Var CodecGenerator::duration_loss(nn::Tape& t, nn::Var log_durations, std::span<const int> target) const {
    nn::Mat tgt(static_cast<Eigen::Index>(target.size()), 1);
    for (size_t i = 0; i < target.size(); ++i) {
        if (target[i] < 1) throw std::invalid_argument("duration targets must be positive");
        tgt(static_cast<Eigen::Index>(i), 0) = std::log(static_cast<float>(target[i]));
    }
    return nn::mse(t, log_durations, tgt);
}

std::vector<int> CodecGenerator::round_durations(const nn::Mat& log_durations) {
    std::vector<int> out(static_cast<size_t>(log_durations.rows()));
    for (Eigen::Index i = 0; i < log_durations.rows(); ++i) {
        const double v = std::exp(std::min(static_cast<double>(log_durations(i, 0)), 10.0));
        out[static_cast<size_t>(i)] = std::max(1, static_cast<int>(std::lround(v)));
    }
    return out;
}

nn::Var CodecGenerator::length_regulate(nn::Tape& t, nn::Var ts, std::span<const int> durations) {
    if (static_cast<Eigen::Index>(durations.size()) != t.value(ts).rows()) {
        throw std::invalid_argument("length_regulate: one duration per phoneme required");
    }
    std::vector<int> idx;
    for (size_t i = 0; i < durations.size(); ++i) {
        if (durations[i] < 1) throw std::invalid_argument("length_regulate: durations must be positive");
        idx.insert(idx.end(), static_cast<size_t>(durations[i]), static_cast<int>(i));
    }
    return nn::gather_rows(t, ts, idx);
}

nn::Var CodecGenerator::decoder_logits(nn::Tape& t, nn::Var frames, const TokenGrid& tokens, int channel,
                                       std::span<const uint8_t> mask) const {
    const int T = static_cast<int>(t.value(frames).rows());
    const int V = cfg_.layout.codebook_size;
    if (tokens.rows() != T || tokens.cols() != cfg_.layout.channels()) throw std::invalid_argument("decoder: token grid shape");
    if (static_cast<int>(mask.size()) != T) throw std::invalid_argument("decoder: mask length");
    if (channel < 0 || channel >= cfg_.layout.channels()) throw std::out_of_range("decoder: channel");
    if (T > kMaxPositions) throw std::invalid_argument("decoder: too many frames");

    nn::Var x = nn::add(t, frames, t.constant(frame_pe_.topRows(T)));
    const int ch_id[1] = {channel};
    nn::Var ch = nn::gather_rows(t, P(t, "gen.channel_embed"), ch_id);
    x = nn::add_rowvec(t, x, ch);
    std::vector<int> ids(static_cast<size_t>(T));
    for (int c = 0; c <= channel; ++c) {
        for (int r = 0; r < T; ++r) {
            const bool hidden = c == channel && mask[static_cast<size_t>(r)];
            // Masked tokens are replaced before embedding, so their values never reach the network.
            ids[static_cast<size_t>(r)] = hidden ? V : tokens(r, c);
            if (!hidden && (tokens(r, c) < 0 || tokens(r, c) >= V)) throw std::out_of_range("decoder: token out of range");
        }
        x = nn::add(t, x, nn::gather_rows(t, P(t, "gen.codec_embed." + std::to_string(c)), ids));
    }
    for (int b = 0; b < cfg_.decoder_blocks; ++b) {
        const std::string p = "gen.dec." + std::to_string(b);
        x = block_attention(t, x, p);
        x = block_conv(t, x, p);
        x = block_feedforward(t, x, p);
    }
    x = norm(t, x, "gen.dec.out_ln");
    const std::string h = "gen.head." + std::to_string(channel);
    return nn::linear(t, x, P(t, h + ".w"), P(t, h + ".b"));
}

CodecGenerator::CodecLoss CodecGenerator::codec_loss(nn::Tape& t, nn::Var frames, const CodecMatrix& target,
                                                     const MaskPlan& plan) const {
    if (target.frames() != t.value(frames).rows()) throw std::invalid_argument("codec_loss: codec and frames differ in length");
    if (plan.masked_count() == 0) return {t.constant(nn::Mat::Zero(1, 1)), true};
    nn::Var logits = decoder_logits(t, frames, target.tokens, plan.channel, plan.mask);
    const std::vector<int> tgt = target.channel(plan.channel);
    return {nn::cross_entropy_masked(t, logits, tgt, plan.mask), false};
}

CodecMatrix CodecGenerator::iterative_decode(const nn::Mat& frames, const DecodeSchedule& schedule, Rng& rng,
                                             DecodeTrace* trace) const {
    const int T = static_cast<int>(frames.rows());
    const int C = cfg_.layout.channels();
    const int V = cfg_.layout.codebook_size;
    if (T < 1) throw std::invalid_argument("iterative_decode: no frames");
    if (static_cast<int>(schedule.iterations.size()) != C) throw std::invalid_argument("iterative_decode: schedule must cover every channel");
    for (int J : schedule.iterations) {
        if (J <= 0) throw std::invalid_argument("iterative_decode: schedule with zero iterations");
    }
    CodecMatrix out;
    out.layout = cfg_.layout;
    out.tokens = TokenGrid::Zero(T, C);
    if (trace) trace->commits.assign(static_cast<size_t>(C), {});

    for (int c = 0; c < C; ++c) {
        const int J = schedule.iterations[static_cast<size_t>(c)];
        std::vector<uint8_t> mask(static_cast<size_t>(T), 1);
        for (int j = 0; j < J; ++j) {
            nn::Tape tape(false);
            nn::Var x = tape.constant(frames);
            const nn::Mat& logits = tape.value(decoder_logits(tape, x, out.tokens, c, mask));
            const double tau = schedule.temperature(j, J);
            std::vector<std::pair<double, int>> cand;  // (confidence, position)
            std::vector<int> sampled(static_cast<size_t>(T), 0);
            for (int r = 0; r < T; ++r) {
                if (!mask[static_cast<size_t>(r)]) continue;
                Eigen::VectorXd l = logits.row(r).transpose().cast<double>();
                Eigen::VectorXd p = (l.array() - l.maxCoeff()).exp();
                p /= p.sum();
                int tok;
                if (tau <= 0.0) {
                    Eigen::Index best;
                    p.maxCoeff(&best);
                    tok = static_cast<int>(best);
                } else {
                    Eigen::VectorXd q = ((l.array() - l.maxCoeff()) / tau).exp();
                    tok = static_cast<int>(rng.categorical(std::span<const double>(q.data(), static_cast<size_t>(V))));
                }
                sampled[static_cast<size_t>(r)] = tok;
                const double conf = cfg_.confidence == ConfidenceMode::MaxProbability ? p.maxCoeff() : p(tok);
                cand.emplace_back(conf, r);
            }
            const int keep = DecodeSchedule::retain_count(T, j, J);
            // Highest confidence first; ties broken by position for determinism.
            std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
            std::vector<int> committed;
            for (int i = 0; i < keep && i < static_cast<int>(cand.size()); ++i) {
                const int r = cand[static_cast<size_t>(i)].second;
                out.tokens(r, c) = sampled[static_cast<size_t>(r)];
                mask[static_cast<size_t>(r)] = 0;
                committed.push_back(r);
            }
            if (trace) trace->commits[static_cast<size_t>(c)].push_back(std::move(committed));
        }
    }
    return out;
}

}  // namespace stylecodec
