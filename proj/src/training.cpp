#include "stylecodec/training.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace stylecodec {

using nlohmann::json;

namespace {

std::string_view stage_name(TrainStage s) { return s == TrainStage::SmsdOnly ? "smsd_only" : "joint"; }

TrainStage parse_stage(std::string_view s) {
    if (s == "joint") return TrainStage::Joint;
    if (s == "smsd_only") return TrainStage::SmsdOnly;
    throw std::invalid_argument("unknown training stage: " + std::string(s));
}

bool finite(double v) { return std::isfinite(v); }

Eigen::VectorXd unit(const Eigen::VectorXd& v) {
    const double n = v.norm();
    if (!(n > 0.0)) throw std::invalid_argument("cannot normalize a zero vector");
    return v / n;
}

}  // namespace

void TrainConfig::validate() const {
    if (frames_per_batch <= 0 || !(peak_lr >= 0.0) || warmup_steps < 0 || total_steps < 0) {
        throw std::invalid_argument("train config: batch, lr and step counts must be non-negative");
    }
    if (w_codec < 0 || w_dur < 0 || w_smsd < 0 || !(clip_norm > 0.0) || !(style_jitter >= 0.0)) {
        throw std::invalid_argument("train config: loss weights must be non-negative and clip_norm positive");
    }
    if (smsd_refine_steps < 0 || smsd_refine_warmup < 0 || !(smsd_refine_lr >= 0.0) || smsd_refine_frames <= 0) {
        throw std::invalid_argument("train config: invalid SMSD refinement settings");
    }
    if (fusion_steps < 0 || fusion_warmup < 0 || !(fusion_lr >= 0.0) || fusion_batch <= 0) {
        throw std::invalid_argument("train config: invalid fusion stage settings");
    }
}

json TrainConfig::to_json() const {
    return json{{"frames_per_batch", frames_per_batch},
                {"peak_lr", peak_lr},
                {"warmup_steps", warmup_steps},
                {"total_steps", total_steps},
                {"seed", seed},
                {"w_codec", w_codec},
                {"w_dur", w_dur},
                {"w_smsd", w_smsd},
                {"clip_norm", clip_norm},
                {"style_jitter", style_jitter},
                {"beta1", adam.beta1},
                {"beta2", adam.beta2},
                {"adam_eps", adam.eps},
                {"weight_decay", adam.weight_decay},
                {"stage", stage_name(stage)},
                {"smsd_refine_steps", smsd_refine_steps},
                {"smsd_refine_warmup", smsd_refine_warmup},
                {"smsd_refine_lr", smsd_refine_lr},
                {"smsd_refine_frames", smsd_refine_frames},
                {"fusion_steps", fusion_steps},
                {"fusion_warmup", fusion_warmup},
                {"fusion_lr", fusion_lr},
                {"fusion_batch", fusion_batch}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.frames_per_batch = j.at("frames_per_batch");
    c.peak_lr = j.at("peak_lr");
    c.warmup_steps = j.at("warmup_steps");
    c.total_steps = j.at("total_steps");
    c.seed = j.at("seed");
    c.w_codec = j.at("w_codec");
    c.w_dur = j.at("w_dur");
    c.w_smsd = j.at("w_smsd");
    c.clip_norm = j.at("clip_norm");
    c.style_jitter = j.at("style_jitter");
    c.adam.beta1 = j.at("beta1");
    c.adam.beta2 = j.at("beta2");
    c.adam.eps = j.at("adam_eps");
    c.adam.weight_decay = j.at("weight_decay");
    c.stage = parse_stage(j.at("stage").get<std::string>());
    c.fusion_steps = j.at("fusion_steps");
    c.fusion_warmup = j.at("fusion_warmup");
    c.fusion_lr = j.at("fusion_lr");
    c.fusion_batch = j.at("fusion_batch");
    c.smsd_refine_steps = j.at("smsd_refine_steps");
    c.smsd_refine_warmup = j.at("smsd_refine_warmup");
    c.smsd_refine_lr = j.at("smsd_refine_lr");
    c.smsd_refine_frames = j.at("smsd_refine_frames");
    return c;
}

json LossBreakdown::to_json() const {
    return json{{"step", step},         {"phase", refine ? "smsd_refine" : "joint"}, {"lr", lr},   {"L_codec", codec},       {"L_dur", dur},
                {"L_SMSD", smsd},       {"total", total}, {"grad_norm", grad_norm}, {"utterances", utterances},
                {"frames", frames},     {"skipped_masks", skipped_masks}};
}

json FusionLoss::to_json() const {
    return json{{"fusion_step", step}, {"lr", lr}, {"L_extractor", extractor}, {"L_readout", readout}};
}

void configure_trainable(StyleCodecModel& model, TrainStage stage) {
    const bool frozen_text = model.config().style_text.frozen;
    for (const auto& p : model.params().all()) {
        const bool is_text = p->name.starts_with("style_text.");
        const bool is_smsd = p->name.starts_with(kSmsdPrefix);
        if (is_text) {
            p->trainable = !frozen_text;
        } else if (is_smsd) {
            p->trainable = true;
        } else {
            p->trainable = stage == TrainStage::Joint;
        }
    }
}

void copy_params(const nn::ParamStore& src, nn::ParamStore& dst, const std::string& skip_prefix) {
    for (const auto& p : src.all()) {
        if (!skip_prefix.empty() && p->name.starts_with(skip_prefix)) continue;
        if (!dst.contains(p->name)) continue;
        nn::Parameter& d = dst.get(p->name);
        if (d.value.rows() != p->value.rows() || d.value.cols() != p->value.cols()) continue;
        d.value = p->value;
    }
}

Trainer::Trainer(StyleCodecModel& model, const CorpusWorld& world, const std::vector<SyntheticUtterance>& train,
                 TrainConfig cfg)
    : model_(model),
      world_(world),
      train_(train),
      cfg_(std::move(cfg)),
      opt_(model.params(), cfg_.adam),
      fusion_opt_(model.fusion_params(), cfg_.adam) {
    cfg_.validate();
    if (train_.empty()) throw std::invalid_argument("trainer: empty training split");
    configure_trainable(model_, cfg_.stage);
}

std::vector<size_t> Trainer::batch_indices(long s) const {
    Rng r = Rng(cfg_.seed).derive("train").derive(static_cast<uint64_t>(s)).derive("batch");
    const int budget = refining(s) ? cfg_.smsd_refine_frames : cfg_.frames_per_batch;
    std::vector<size_t> out;
    int frames = 0;
    while (true) {
        const size_t i = r.below(train_.size());
        const int T = train_[i].frames();
        if (!out.empty() && frames + T > budget) break;
        out.push_back(i);
        frames += T;
        if (frames >= budget) break;
    }
    return out;
}

LossBreakdown Trainer::step() {
    Rng srng = Rng(cfg_.seed).derive("train").derive(static_cast<uint64_t>(step_));
    Rng r_mask = srng.derive("mask");
    Rng r_channel = srng.derive("channel");
    Rng r_noise = srng.derive("smsd_noise");
    Rng r_drop = srng.derive("filler_dropout");
    Rng r_jitter = srng.derive("style_jitter");

    const std::vector<size_t> batch = batch_indices(step_);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const bool refine = refining(step_);
    const bool joint = cfg_.stage == TrainStage::Joint && !refine;
    configure_trainable(model_, joint ? TrainStage::Joint : TrainStage::SmsdOnly);
    const int channels = model_.config().data.layout.channels();
    const CodecGenerator& gen = model_.generator();
    const SmsdHead head = model_.smsd_head();

    // Masks are drawn up front so L_codec can be averaged over the utterances
    // whose mask is non-empty; an empty mask adds nothing to either side.
    std::vector<MaskPlan> plans;
    int masked_utts = 0;
    if (joint) {
        for (size_t bi : batch) {
            const int channel = static_cast<int>(r_channel.below(static_cast<uint64_t>(channels)));
            plans.push_back(sample_mask(r_mask, train_[bi].frames(), channel));
            masked_utts += plans.back().masked_count() > 0;
        }
    }
    const double inv_masked = masked_utts > 0 ? 1.0 / masked_utts : 0.0;

    model_.params().zero_grad();
    LossBreakdown lb;
    lb.step = step_;
    lb.refine = refine;
    lb.utterances = static_cast<int>(batch.size());
    for (size_t n = 0; n < batch.size(); ++n) {
        const SyntheticUtterance& u = train_[batch[n]];
        lb.frames += u.frames();
        nn::Tape t;
        const Eigen::VectorXd y = model_.target_style(u.codec);

        // Style-text encoder -> SMSD, regressing the ground-truth style vector.
        const std::vector<int> ids = drop_fillers(u.style_text, model_.vocab(), model_.config().style_text.filler_dropout, r_drop);
        nn::Var x = model_.style_text().encode(t, ids);
        SmsdCache cache;
        const Eigen::VectorXd noise = standard_normal(r_noise, model_.config().smsd.output_dim);
        const MixtureParams mp = mdn_forward(from_row(t.value(x)), head, noise, &cache);
        const SmsdGradients g = smsd_nll_grad(y, mp, head, cache);
        if (!finite(g.loss)) {
            throw NonFiniteLoss(fmt::format("non-finite L_SMSD at step {} on utterance {}", step_, u.id));
        }
        model_.add_smsd_grads(g.params, cfg_.w_smsd * inv_b);
        nn::Var total = nn::scale(t, nn::external_loss(t, x, g.loss, to_row(g.input)), static_cast<float>(cfg_.w_smsd));
        lb.smsd += g.loss * inv_b;

        if (joint) {
            // Teacher forcing: ground-truth style vector and durations.
            nn::Var h = gen.text_encode(t, u.content_tokens);
            Eigen::VectorXd y_in = y;
            if (cfg_.style_jitter > 0.0) {
                const double scale = r_jitter.uniform(0.0, cfg_.style_jitter);
                y_in += scale * standard_normal(r_jitter, static_cast<int>(y.size()));
            }
            nn::Var ts = gen.fuse_style(t, h, t.constant(to_row(y_in)));
            nn::Var ld = gen.predict_log_durations(t, ts);
            nn::Var l_dur = gen.duration_loss(t, ld, u.durations);
            nn::Var frames = CodecGenerator::length_regulate(t, ts, u.durations);
            const auto cl = gen.codec_loss(t, frames, u.codec, plans[n]);
            if (cl.skipped) {
                ++lb.skipped_masks;
                ++skipped_masks_;
            }
            const double lc = t.scalar(cl.loss), ldv = t.scalar(l_dur);
            if (!finite(lc) || !finite(ldv)) {
                throw NonFiniteLoss(fmt::format("non-finite loss at step {} on utterance {}: L_codec={} L_dur={}", step_,
                                                u.id, lc, ldv));
            }
            lb.codec += lc * inv_masked;
            lb.dur += ldv * inv_b;
            total = nn::add(t, total, nn::scale(t, l_dur, static_cast<float>(cfg_.w_dur)));
            // The whole tape is scaled by 1/B below; rescale so this term carries 1/masked_utts.
            if (!cl.skipped) total = nn::add(t, total, nn::scale(t, cl.loss, static_cast<float>(cfg_.w_codec * inv_masked / inv_b)));
        }
        t.backward(nn::scale(t, total, static_cast<float>(inv_b)));
    }
    lb.total = cfg_.w_codec * lb.codec + cfg_.w_dur * lb.dur + cfg_.w_smsd * lb.smsd;
    lb.grad_norm = clip_grad_norm(model_.params(), cfg_.clip_norm);
    if (!finite(lb.grad_norm)) throw NonFiniteLoss(fmt::format("non-finite gradient norm at step {}", step_));
    lb.lr = refine ? warmup_linear_lr(step_ - cfg_.total_steps, cfg_.smsd_refine_warmup, cfg_.smsd_refine_steps, cfg_.smsd_refine_lr)
                   : warmup_linear_lr(step_, cfg_.warmup_steps, cfg_.total_steps, cfg_.peak_lr);
    opt_.step(model_.params(), lb.lr);
    ++step_;
    return lb;
}

FusionLoss Trainer::fusion_step() {
    Rng r = Rng(cfg_.seed).derive("fusion").derive(static_cast<uint64_t>(fusion_step_));
    const double inv_b = 1.0 / cfg_.fusion_batch;
    FusionLoss fl;
    fl.step = fusion_step_;
    model_.fusion_params().zero_grad();
    for (int b = 0; b < cfg_.fusion_batch; ++b) {
        const SyntheticUtterance& u = train_[r.below(train_.size())];
        nn::Tape t;
        // Every other prompt is re-rendered with a fresh random timbre, so the
        // extractor sees an unbounded speaker pool instead of memorizing the
        // training speakers.
        Eigen::VectorXd target = world_.speaker_timbre(u.speaker_id);
        nn::Mat frames;
        if (b % 2 == 1) {
            target = unit(standard_normal(r, static_cast<int>(u.timbre.size())));
            frames = world_.speech_frames(u, target);
        } else {
            frames = world_.speech_frames(u);
        }
        nn::Var e = model_.timbre_extractor().extract(t, frames);
        nn::Var le = nn::cosine_distance(t, e, to_row(unit(target)));
        const nn::Mat tim = to_row(unit(u.timbre));
        nn::Var ro = model_.fusion().timbre_readout(t, u.codec, t.constant(tim));
        nn::Var lr = nn::cosine_distance(t, ro, tim);
        fl.extractor += t.scalar(le) * inv_b;
        fl.readout += t.scalar(lr) * inv_b;
        t.backward(nn::scale(t, nn::add(t, le, lr), static_cast<float>(inv_b)));
    }
    if (!finite(fl.extractor) || !finite(fl.readout)) {
        throw NonFiniteLoss(fmt::format("non-finite fusion loss at fusion step {}", fusion_step_));
    }
    clip_grad_norm(model_.fusion_params(), cfg_.clip_norm);
    fl.lr = warmup_linear_lr(fusion_step_, cfg_.fusion_warmup, cfg_.fusion_steps, cfg_.fusion_lr);
    fusion_opt_.step(model_.fusion_params(), fl.lr);
    ++fusion_step_;
    return fl;
}

void Trainer::run(const std::function<void(const LossBreakdown&)>& on_step) {
    while (step_ < cfg_.total_steps + cfg_.smsd_refine_steps) {
        const LossBreakdown lb = step();
        if (on_step) on_step(lb);
    }
}

void Trainer::run_fusion(const std::function<void(const FusionLoss&)>& on_step) {
    while (fusion_step_ < cfg_.fusion_steps) {
        const FusionLoss fl = fusion_step();
        if (on_step) on_step(fl);
    }
}

// ---- checkpoints ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'T', 'Y', 'L', 'E', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw CheckpointError("checkpoint truncated");
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put<uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
    const auto n = get<uint64_t>(is);
    if (n > (1ULL << 32)) throw CheckpointError("checkpoint string too long");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw CheckpointError("checkpoint truncated");
    return s;
}

void put_mat(std::ostream& os, const nn::Mat& m) {
    put<int64_t>(os, m.rows());
    put<int64_t>(os, m.cols());
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
}

nn::Mat get_mat(std::istream& is) {
    const auto r = get<int64_t>(is), c = get<int64_t>(is);
    if (r < 0 || c < 0 || r * c > (1LL << 30)) throw CheckpointError("checkpoint matrix shape invalid");
    nn::Mat m(r, c);
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!is) throw CheckpointError("checkpoint truncated");
    return m;
}

void put_store(std::ostream& os, const nn::ParamStore& s) {
    put<uint64_t>(os, s.all().size());
    for (const auto& p : s.all()) {
        put_string(os, p->name);
        put_mat(os, p->value);
    }
}

void get_store(std::istream& is, nn::ParamStore& s) {
    const auto n = get<uint64_t>(is);
    if (n != s.all().size()) throw CheckpointError("checkpoint parameter count does not match the model");
    for (const auto& p : s.all()) {
        const std::string name = get_string(is);
        nn::Mat m = get_mat(is);
        if (name != p->name || m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
            throw CheckpointError("checkpoint parameter mismatch at " + p->name);
        }
        p->value = std::move(m);
    }
}

void put_moments(std::ostream& os, const AdamW& opt) {
    put<int64_t>(os, opt.steps());
    put<uint64_t>(os, opt.first_moments().size());
    for (const auto& m : opt.first_moments()) put_mat(os, m);
    for (const auto& v : opt.second_moments()) put_mat(os, v);
}

void get_moments(std::istream& is, std::vector<nn::Mat>& m, std::vector<nn::Mat>& v, long& steps) {
    steps = static_cast<long>(get<int64_t>(is));
    const auto n = get<uint64_t>(is);
    m.clear();
    v.clear();
    for (uint64_t i = 0; i < n; ++i) m.push_back(get_mat(is));
    for (uint64_t i = 0; i < n; ++i) v.push_back(get_mat(is));
}

}  // namespace

std::string config_hash(const ModelConfig& model, const TrainConfig& train) {
    const std::string text = model.to_json().dump() + "|" + train.to_json().dump();
    return fmt::format("{:016x}", hash_string(text));
}

void save_checkpoint(const std::string& path, const StyleCodecModel& model, const Trainer& trainer,
                     const std::string& data_hash) {
    json meta{{"model", model.config().to_json()},
              {"train", trainer.config().to_json()},
              {"vocabulary", model.vocab().words()},
              {"step", trainer.step_count()},
              {"fusion_step", trainer.fusion_step_count()},
              {"components", model.config().smsd.components},
              {"noise_mode", noise_mode_name(model.config().smsd.mode)},
              {"config_hash", config_hash(model.config(), trainer.config())},
              {"data_hash", data_hash},
              // Every random choice of step s is derived from (seed, s); the
              // stream states below are what the next step will start from.
              {"rng",
               {{"train", Rng(trainer.config().seed).derive("train").derive(static_cast<uint64_t>(trainer.step_count())).serialize()},
                {"fusion",
                 Rng(trainer.config().seed).derive("fusion").derive(static_cast<uint64_t>(trainer.fusion_step_count())).serialize()}}}};
    std::ostringstream os(std::ios::binary);
    os.write(kMagic, sizeof(kMagic));
    put<uint32_t>(os, kCheckpointVersion);
    put_string(os, meta.dump());
    put_store(os, model.params());
    put_store(os, model.fusion_params());
    put_moments(os, trainer.optimizer());
    put_moments(os, trainer.fusion_optimizer());

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError("cannot write checkpoint " + path);
        const std::string bytes = os.str();
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw CheckpointError("failed writing checkpoint " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into place: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig* expected) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path);
    char magic[sizeof(kMagic)];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError("not a checkpoint file: " + path);
    const auto version = get<uint32_t>(f);
    if (version != kCheckpointVersion) {
        throw CheckpointError(fmt::format("checkpoint version {} unsupported (expected {})", version, kCheckpointVersion));
    }
    const json meta = json::parse(get_string(f));

    LoadedCheckpoint ck;
    ck.meta.model = ModelConfig::from_json(meta.at("model"));
    ck.meta.train = TrainConfig::from_json(meta.at("train"));
    ck.meta.vocabulary = meta.at("vocabulary").get<std::vector<std::string>>();
    ck.meta.step = meta.at("step");
    ck.meta.fusion_step = meta.at("fusion_step");
    ck.meta.config_hash = meta.at("config_hash");
    ck.meta.data_hash = meta.at("data_hash");
    if (config_hash(ck.meta.model, ck.meta.train) != ck.meta.config_hash) {
        throw CheckpointError("checkpoint config hash mismatch");
    }
    if (expected) {
        if (expected->smsd.components != ck.meta.model.smsd.components) {
            throw CheckpointError(fmt::format("checkpoint has K={} but K={} was requested", ck.meta.model.smsd.components,
                                              expected->smsd.components));
        }
        if (expected->smsd.mode != ck.meta.model.smsd.mode) {
            throw CheckpointError(fmt::format("checkpoint noise mode {} differs from requested {}",
                                              noise_mode_name(ck.meta.model.smsd.mode), noise_mode_name(expected->smsd.mode)));
        }
    }
    ck.model = std::make_unique<StyleCodecModel>(ck.meta.model, Vocabulary::from_words(ck.meta.vocabulary));
    get_store(f, ck.model->params());
    get_store(f, ck.model->fusion_params());
    get_moments(f, ck.m, ck.v, ck.adam_steps);
    get_moments(f, ck.fm, ck.fv, ck.fusion_adam_steps);
    if (f.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in checkpoint");
    return ck;
}

void restore_trainer(const LoadedCheckpoint& ckpt, Trainer& trainer) {
    auto restore = [](AdamW& opt, const std::vector<nn::Mat>& m, const std::vector<nn::Mat>& v, long steps) {
        if (m.size() != opt.first_moments().size()) throw CheckpointError("optimizer state does not match the model");
        for (size_t i = 0; i < m.size(); ++i) {
            if (m[i].rows() != opt.first_moments()[i].rows() || m[i].cols() != opt.first_moments()[i].cols()) {
                throw CheckpointError("optimizer moment shape mismatch");
            }
        }
        opt.first_moments() = m;
        opt.second_moments() = v;
        opt.set_steps(steps);
    };
    restore(trainer.optimizer(), ckpt.m, ckpt.v, ckpt.adam_steps);
    restore(trainer.fusion_optimizer(), ckpt.fm, ckpt.fv, ckpt.fusion_adam_steps);
    trainer.set_step_counts(ckpt.meta.step, ckpt.meta.fusion_step);
}

}  // namespace stylecodec
