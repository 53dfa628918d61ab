#include "stylecodec/fusion.h"

#include <cmath>
#include <stdexcept>

namespace stylecodec {

void FusionConfig::validate() const {
    if (frame_dim <= 0 || timbre_dim <= 0 || extractor_dim <= 0 || hidden_dim <= 0 || readout_hidden <= 0) {
        throw std::invalid_argument("fusion: dimensions must be positive");
    }
    if (extractor_heads <= 0 || extractor_dim % extractor_heads != 0 || extractor_blocks < 0) {
        throw std::invalid_argument("fusion: invalid extractor shape");
    }
    if (!(norm_eps > 0.0f)) throw std::invalid_argument("fusion: norm_eps must be positive");
}

nn::Mat to_row(const Eigen::VectorXd& v) { return v.transpose().cast<float>(); }

Eigen::VectorXd from_row(const nn::Mat& m) { return m.row(0).transpose().cast<double>(); }

TimbreExtractor::TimbreExtractor(nn::ParamStore& store, const FusionConfig& cfg, Rng& rng) : store_(store), cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.extractor_dim;
    nn::init_glorot(store.create("timbre.in.w", cfg_.frame_dim, d), rng);
    store.create("timbre.in.b", 1, d);
    for (int b = 0; b < cfg_.extractor_blocks; ++b) {
        const std::string p = "timbre." + std::to_string(b);
        for (const char* ln : {".ln1", ".ln2"}) {
            nn::init_constant(store.create(p + ln + ".g", 1, d), 1.0f);
            store.create(p + ln + ".b", 1, d);
        }
        for (const char* n : {".q", ".k", ".v", ".o"}) {
            nn::init_glorot(store.create(p + n + ".w", d, d), rng);
            store.create(p + n + ".b", 1, d);
        }
        nn::init_glorot(store.create(p + ".ff1.w", d, 2 * d), rng);
        store.create(p + ".ff1.b", 1, 2 * d);
        nn::init_glorot(store.create(p + ".ff2.w", 2 * d, d), rng);
        store.create(p + ".ff2.b", 1, d);
    }
    nn::init_glorot(store.create("timbre.out.w", d, cfg_.timbre_dim), rng);
    store.create("timbre.out.b", 1, cfg_.timbre_dim);
}

nn::Var TimbreExtractor::extract(nn::Tape& t, const nn::Mat& frames) const {
    if (frames.rows() < 1) throw std::invalid_argument("timbre_extract: empty prompt");
    if (frames.cols() != cfg_.frame_dim) throw std::invalid_argument("timbre_extract: frame dimension mismatch");
    nn::Var x = nn::linear(t, t.constant(frames), P(t, "timbre.in.w"), P(t, "timbre.in.b"));
    for (int b = 0; b < cfg_.extractor_blocks; ++b) {
        const std::string p = "timbre." + std::to_string(b);
        nn::Var h = nn::layer_norm(t, x, P(t, p + ".ln1.g"), P(t, p + ".ln1.b"));
        nn::Var q = nn::linear(t, h, P(t, p + ".q.w"), P(t, p + ".q.b"));
        nn::Var k = nn::linear(t, h, P(t, p + ".k.w"), P(t, p + ".k.b"));
        nn::Var v = nn::linear(t, h, P(t, p + ".v.w"), P(t, p + ".v.b"));
        x = nn::add(t, x, nn::linear(t, nn::attention(t, q, k, v, cfg_.extractor_heads), P(t, p + ".o.w"), P(t, p + ".o.b")));
        h = nn::layer_norm(t, x, P(t, p + ".ln2.g"), P(t, p + ".ln2.b"));
        h = nn::gelu(t, nn::linear(t, h, P(t, p + ".ff1.w"), P(t, p + ".ff1.b")));
        x = nn::add(t, x, nn::linear(t, h, P(t, p + ".ff2.w"), P(t, p + ".ff2.b")));
    }
    nn::Var pooled = nn::mean_rows(t, x);
    return nn::l2_normalize_rows(t, nn::linear(t, pooled, P(t, "timbre.out.w"), P(t, "timbre.out.b")));
}

Eigen::VectorXd TimbreExtractor::extract(const nn::Mat& frames) const {
    nn::Tape t(false);
    return from_row(t.value(extract(t, frames)));
}

FusionDecoder::FusionDecoder(nn::ParamStore& store, const FusionConfig& cfg, const PatternScheme& scheme, Rng& rng)
    : store_(store), cfg_(cfg), scheme_(scheme) {
    cfg_.validate();
    scheme_.validate();
    const int h = cfg_.hidden_dim;
    const ChannelLayout& L = scheme_.layout;
    for (int c = 0; c < L.channels(); ++c) {
        nn::init_normal(store.create("fusion.codec_embed." + std::to_string(c), L.codebook_size, h), rng, 1.0f);
    }
    nn::init_glorot(store.create("fusion.gamma.w", cfg_.timbre_dim, h), rng);
    nn::init_glorot(store.create("fusion.beta.w", cfg_.timbre_dim, h), rng);
    nn::init_glorot(store.create("fusion.read1.w", h, cfg_.readout_hidden), rng);
    store.create("fusion.read1.b", 1, cfg_.readout_hidden);
    nn::init_glorot(store.create("fusion.read2.w", cfg_.readout_hidden, cfg_.timbre_dim), rng);
    store.create("fusion.read2.b", 1, cfg_.timbre_dim);
}

nn::Var FusionDecoder::embed_codec(nn::Tape& t, const CodecMatrix& codec) const {
    const ChannelLayout& L = scheme_.layout;
    if (codec.channels() != L.channels() || codec.frames() < 1) throw std::invalid_argument("fusion: codec shape");
    nn::Var sum;
    for (int c = 0; c < L.channels(); ++c) {
        const std::vector<int> ids = codec.channel(c);
        nn::Var e = nn::gather_rows(t, P(t, "fusion.codec_embed." + std::to_string(c)), ids);
        sum = sum.valid() ? nn::add(t, sum, e) : e;
    }
    return sum;
}

nn::Var FusionDecoder::cond_norm(nn::Tape& t, nn::Var hidden, nn::Var timbre) const {
    nn::Var normed = nn::time_norm(t, hidden, cfg_.norm_eps, cfg_.paper_exact_eq4);
    nn::Var gamma = nn::matmul(t, timbre, P(t, "fusion.gamma.w"));
    nn::Var beta = nn::matmul(t, timbre, P(t, "fusion.beta.w"));
    return nn::add_rowvec(t, nn::mul_rowvec(t, normed, gamma), beta);
}

nn::Var FusionDecoder::timbre_readout(nn::Tape& t, const CodecMatrix& codec, nn::Var timbre) const {
    nn::Var y = cond_norm(t, embed_codec(t, codec), timbre);
    nn::Var h = nn::tanh(t, nn::linear(t, y, P(t, "fusion.read1.w"), P(t, "fusion.read1.b")));
    nn::Var pooled = nn::mean_rows(t, h);
    return nn::l2_normalize_rows(t, nn::linear(t, pooled, P(t, "fusion.read2.w"), P(t, "fusion.read2.b")));
}

FinalUtterance FusionDecoder::assemble(const CodecMatrix& codec, const Eigen::VectorXd& timbre) const {
    if (timbre.size() != cfg_.timbre_dim) throw std::invalid_argument("assemble: timbre dimension mismatch");
    if (std::abs(timbre.norm() - 1.0) > 1e-4) throw std::invalid_argument("assemble: timbre must be unit norm");
    FinalUtterance out;
    // Attributes and content come from the codec alone; the timbre only
    // reaches the readout.
    out.attributes = vote_attributes(scheme_, codec);
    out.frame_phonemes = decode_content(codec, scheme_.layout.codebook_size);
    nn::Tape t(false);
    out.timbre_readout = from_row(t.value(timbre_readout(t, codec, t.constant(to_row(timbre)))));
    return out;
}

std::vector<int> decode_content(const CodecMatrix& codec, int text_vocab) {
    const ChannelLayout& L = codec.layout;
    std::vector<int> out(static_cast<size_t>(codec.frames()), -1);
    for (int t = 0; t < codec.frames(); ++t) {
        // Channel 0 stores the phoneme id modulo the codebook; the other
        // content channels must agree with it.
        for (int pid = codec.tokens(t, 0); pid < text_vocab; pid += L.codebook_size) {
            bool ok = true;
            for (int c = 1; c < L.n_content && ok; ++c) ok = codec.tokens(t, c) == content_code(L, c, pid);
            if (ok) {
                out[static_cast<size_t>(t)] = pid;
                break;
            }
        }
    }
    return out;
}

}  // namespace stylecodec
