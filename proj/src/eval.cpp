#include "stylecodec/eval.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

namespace stylecodec {

using nlohmann::json;

namespace {

int label_bin(const AttributeLabels& l, int attr) {
    switch (attr) {
        case 0: return static_cast<int>(l.pitch);
        case 1: return static_cast<int>(l.speed);
        case 2: return static_cast<int>(l.energy);
        default: return l.emotion;
    }
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

void score_into(EvalReport& r, const VotedAttributes& v, const AttributeLabels& target) {
    for (int a = 0; a < 4; ++a) r.accuracy[static_cast<size_t>(a)].add(v.bins[static_cast<size_t>(a + 1)] == label_bin(target, a));
    r.gender.add(v.bins[0] == static_cast<int>(target.gender));
}

Eigen::VectorXd unit(const Eigen::VectorXd& v) { return v / v.norm(); }

double entropy(const std::map<int, int>& counts) {
    double total = 0.0, h = 0.0;
    for (const auto& [k, c] : counts) total += c;
    for (const auto& [k, c] : counts) {
        if (c == 0) continue;
        const double p = c / total;
        h -= p * std::log(p);
    }
    return h;
}

double variance(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(xs.size());
}

}  // namespace

std::pair<double, double> wilson_interval(long k, long n, double z) {
    if (n <= 0) return {kNaN, kNaN};
    const double p = static_cast<double>(k) / static_cast<double>(n);
    const double nn = static_cast<double>(n);
    const double denom = 1.0 + z * z / nn;
    const double center = (p + z * z / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

json EvalReport::to_json() const {
    json acc = json::object();
    for (size_t a = 0; a < 4; ++a) {
        const auto [lo, hi] = wilson_interval(accuracy[a].successes, accuracy[a].trials);
        acc[kScoredAttributes[a]] = {{"accuracy", number(accuracy[a].rate())},
                                     {"correct", accuracy[a].successes},
                                     {"total", accuracy[a].trials},
                                     {"wilson95", {number(lo), number(hi)}}};
    }
    return json{{"split", split},
                {"samples", samples},
                {"accuracy", acc},
                {"gender_accuracy", number(gender.rate())},
                {"duration_mae", number(duration_mae)},
                {"timbre_readout_cosine", number(timbre_readout_cosine)},
                {"timbre_auc", number(timbre_auc)},
                {"style_accuracy", number(style_accuracy)},
                {"degree_variance", number(degree_variance)},
                {"distinct_degree_bins", number(distinct_degree_bins)},
                {"component_entropy", number(component_entropy)}};
}

std::string EvalReport::table() const {
    std::ostringstream os;
    os << fmt::format("split: {}  samples: {}\n", split, samples);
    os << fmt::format("{:<10} {:>9} {:>19}\n", "attribute", "accuracy", "95% interval");
    for (size_t a = 0; a < 4; ++a) {
        const auto [lo, hi] = wilson_interval(accuracy[a].successes, accuracy[a].trials);
        os << fmt::format("{:<10} {:>9.4f}   [{:.4f}, {:.4f}]\n", kScoredAttributes[a], accuracy[a].rate(), lo, hi);
    }
    auto line = [&](const char* name, double v) {
        if (std::isfinite(v)) os << fmt::format("{:<22} {:.4f}\n", name, v);
    };
    line("gender accuracy", gender.rate());
    line("duration MAE (frames)", duration_mae);
    line("timbre readout cosine", timbre_readout_cosine);
    line("timbre AUC", timbre_auc);
    line("style accuracy (SA)", style_accuracy);
    line("degree variance (SD)", degree_variance);
    line("distinct degree bins", distinct_degree_bins);
    line("component entropy", component_entropy);
    return os.str();
}

EvalReport score_codecs(const PatternScheme& scheme, const std::vector<CodecMatrix>& codecs,
                        const std::vector<AttributeLabels>& targets, const std::string& split) {
    if (codecs.size() != targets.size()) throw std::invalid_argument("score_codecs: one target per codec required");
    EvalReport r;
    r.split = split;
    r.samples = static_cast<int>(codecs.size());
    for (size_t i = 0; i < codecs.size(); ++i) score_into(r, vote_attributes(scheme, codecs[i]), targets[i]);
    return r;
}

std::array<double, 4> chance_levels(const PatternScheme& scheme) {
    const double level = 1.0 / kLevelCount;
    return {level, level, level, 1.0 / scheme.n_emotions};
}

bool within_chance(const EvalReport& r, const PatternScheme& scheme, double k) {
    const auto chance = chance_levels(scheme);
    for (size_t a = 0; a < 4; ++a) {
        const double n = static_cast<double>(r.accuracy[a].trials);
        if (n <= 0) return false;
        const double se = std::sqrt(chance[a] * (1.0 - chance[a]) / n);
        if (std::abs(r.accuracy[a].rate() - chance[a]) > k * se) return false;
    }
    return true;
}

EvalReport eval_control(StyleCodecModel& model, const std::vector<SyntheticUtterance>& split, int n, const Rng& rng,
                        StyleChoice choice, const std::string& split_tag) {
    if (split.empty()) throw std::invalid_argument("eval_control: empty split");
    if (n <= 0) throw std::invalid_argument("eval_control: n must be positive");
    EvalReport r;
    r.split = split_tag;
    r.samples = n;
    double dur_err = 0.0, cos_sum = 0.0;
    long dur_count = 0;
    for (int i = 0; i < n; ++i) {
        const SyntheticUtterance& u = split[static_cast<size_t>(i) % split.size()];
        SynthesisRequest req;
        req.prompt = u.style_text;
        req.content = u.content_tokens;
        req.timbre = unit(u.timbre);
        req.style_choice = choice;
        Rng prng = rng.derive(static_cast<uint64_t>(i));
        const SynthesisResult res = model.synthesize(req, prng);
        score_into(r, res.output.attributes, u.labels);
        for (size_t p = 0; p < u.durations.size(); ++p) {
            dur_err += std::abs(res.durations[p] - u.durations[p]);
            ++dur_count;
        }
        cos_sum += res.output.timbre_readout.dot(req.timbre);
    }
    r.duration_mae = dur_err / static_cast<double>(dur_count);
    r.timbre_readout_cosine = cos_sum / n;
    return r;
}

EvalReport eval_many_to_many(StyleCodecModel& model, const std::vector<SyntheticUtterance>& split, int n_styles,
                             int n_samples, const Rng& rng, StyleChoice choice, const std::string& split_tag) {
    if (split.empty() || n_styles <= 0 || n_samples <= 0) throw std::invalid_argument("eval_many_to_many: empty request");
    EvalReport r;
    r.split = split_tag;
    r.samples = n_styles * n_samples;
    Proportion sa;
    double var_sum = 0.0, distinct_sum = 0.0, entropy_sum = 0.0;
    long var_terms = 0, distinct_terms = 0;
    for (int s = 0; s < n_styles; ++s) {
        const SyntheticUtterance& u = split[static_cast<size_t>(s) % split.size()];
        std::array<std::vector<double>, 4> degrees;
        std::array<std::set<std::pair<int, int>>, 4> distinct;
        std::map<int, int> components;
        for (int k = 0; k < n_samples; ++k) {
            SynthesisRequest req;
            req.prompt = u.style_text;
            req.content = u.content_tokens;
            req.timbre = unit(u.timbre);
            req.style_choice = choice;
            Rng prng = rng.derive(static_cast<uint64_t>(s)).derive(static_cast<uint64_t>(k));
            const SynthesisResult res = model.synthesize(req, prng);
            const VotedAttributes& v = res.output.attributes;
            score_into(r, v, u.labels);
            ++components[res.component];
            for (int a = 0; a < 4; ++a) {
                const int bin = v.bins[static_cast<size_t>(a + 1)];
                sa.add(bin == label_bin(u.labels, a));
                if (bin < 0) continue;
                const double d = v.degrees[static_cast<size_t>(a)];
                degrees[static_cast<size_t>(a)].push_back(d);
                distinct[static_cast<size_t>(a)].insert({bin, static_cast<int>(std::lround(d * 1000))});
            }
        }
        for (int a = 0; a < 4; ++a) {
            var_sum += variance(degrees[static_cast<size_t>(a)]);
            ++var_terms;
            distinct_sum += static_cast<double>(distinct[static_cast<size_t>(a)].size());
            ++distinct_terms;
        }
        entropy_sum += entropy(components);
    }
    r.style_accuracy = sa.rate();
    r.degree_variance = var_sum / static_cast<double>(var_terms);
    r.distinct_degree_bins = distinct_sum / static_cast<double>(distinct_terms);
    r.component_entropy = entropy_sum / n_styles;
    return r;
}

double timbre_auc(const StyleCodecModel& model, const CorpusWorld& world, const std::vector<SyntheticUtterance>& utts,
                  int max_utterances) {
    const size_t n = std::min(utts.size(), static_cast<size_t>(std::max(0, max_utterances)));
    std::vector<Eigen::VectorXd> emb;
    for (size_t i = 0; i < n; ++i) emb.push_back(model.timbre_extractor().extract(world.speech_frames(utts[i])));
    // (score, is_same) over all pairs; AUC by rank sum with tie averaging.
    std::vector<std::pair<double, bool>> scores;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) scores.emplace_back(emb[i].dot(emb[j]), utts[i].speaker_id == utts[j].speaker_id);
    }
    std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    double rank_sum = 0.0;
    long pos = 0, neg = 0;
    for (size_t i = 0; i < scores.size();) {
        size_t j = i;
        while (j < scores.size() && scores[j].first == scores[i].first) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (size_t k = i; k < j; ++k) {
            if (scores[k].second) {
                rank_sum += avg_rank;
                ++pos;
            } else {
                ++neg;
            }
        }
        i = j;
    }
    if (pos == 0 || neg == 0) return kNaN;
    return (rank_sum - static_cast<double>(pos) * (pos + 1) / 2.0) / (static_cast<double>(pos) * static_cast<double>(neg));
}

HygieneReport check_split_hygiene(const CorpusWorld& world, const Corpus& corpus) {
    std::unordered_set<uint64_t> heldout_templates, heldout_speakers;
    for (const StyleTemplate* t : world.bank().by_split(TemplateSplit::Heldout)) heldout_templates.insert(hash_string(t->text));
    for (int s : world.speakers(true)) heldout_speakers.insert(hash_string(fmt::format("speaker:{}", s)));
    HygieneReport r;
    const auto& templates = world.bank().templates();
    for (const SyntheticUtterance& u : corpus.split(DataSplit::Train)) {
        if (u.style_text.template_id) {
            for (const auto& t : templates) {
                if (t.id == *u.style_text.template_id && heldout_templates.contains(hash_string(t.text))) {
                    ++r.train_heldout_template_overlap;
                }
            }
        }
        if (heldout_speakers.contains(hash_string(fmt::format("speaker:{}", u.speaker_id)))) ++r.train_heldout_speaker_overlap;
    }
    return r;
}

// ---- ablation grids ------------------------------------------------------

std::string AblationCell::name() const { return fmt::format("K={} {}", components, noise_mode_name(mode)); }

std::vector<AblationCell> AblationConfig::component_grid() {
    return {{3, NoiseMode::IsotropicAcrossClusters}, {5, NoiseMode::IsotropicAcrossClusters}, {7, NoiseMode::IsotropicAcrossClusters}};
}

std::vector<AblationCell> AblationConfig::noise_mode_grid() {
    return {{5, NoiseMode::FullyFactored},
            {5, NoiseMode::Isotropic},
            {5, NoiseMode::IsotropicAcrossClusters},
            {5, NoiseMode::FixedIsotropic}};
}

long learnable_variance_count(NoiseMode mode, int K, int d) {
    switch (mode) {
        case NoiseMode::FullyFactored: return static_cast<long>(K) * d;
        case NoiseMode::Isotropic: return K;
        case NoiseMode::IsotropicAcrossClusters: return 1;
        case NoiseMode::FixedIsotropic: return 0;
    }
    return 0;
}

json AblationRow::to_json() const {
    return json{{"cell", cell.name()},
                {"components", cell.components},
                {"mode", noise_mode_name(cell.mode)},
                {"style_accuracy", number(style_accuracy)},
                {"degree_variance", number(degree_variance)},
                {"distinct_degree_bins", number(distinct_degree_bins)},
                {"component_entropy", number(component_entropy)},
                {"variance_entries", variance_entries},
                // Hex float keeps the before/after comparison bit-exact.
                {"sigma_before", fmt::format("{:a}", sigma_before)},
                {"sigma_after", fmt::format("{:a}", sigma_after)},
                {"final_smsd_loss", number(final_smsd_loss)}};
}

AblationRow AblationRow::from_json(const json& j) {
    AblationRow r;
    r.cell.components = j.at("components");
    r.cell.mode = parse_noise_mode(j.at("mode").get<std::string>());
    r.style_accuracy = number_from(j.at("style_accuracy"));
    r.degree_variance = number_from(j.at("degree_variance"));
    r.distinct_degree_bins = number_from(j.at("distinct_degree_bins"));
    r.component_entropy = number_from(j.at("component_entropy"));
    r.variance_entries = j.at("variance_entries");
    r.sigma_before = std::strtod(j.at("sigma_before").get<std::string>().c_str(), nullptr);
    r.sigma_after = std::strtod(j.at("sigma_after").get<std::string>().c_str(), nullptr);
    r.final_smsd_loss = number_from(j.at("final_smsd_loss"));
    return r;
}

std::vector<AblationRow> run_ablations(const StyleCodecModel& base, const CorpusWorld& world,
                                       const std::vector<SyntheticUtterance>& train,
                                       const std::vector<SyntheticUtterance>& eval_split, const TrainConfig& train_cfg,
                                       const AblationConfig& cfg) {
    std::map<std::string, AblationRow> done;
    if (!cfg.resume_path.empty()) {
        std::ifstream in(cfg.resume_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const AblationRow row = AblationRow::from_json(json::parse(line));
            done[row.cell.name()] = row;
        }
    }
    std::vector<AblationRow> rows;
    for (const AblationCell& cell : cfg.cells) {
        if (auto it = done.find(cell.name()); it != done.end()) {
            rows.push_back(it->second);
            continue;
        }
        ModelConfig mc = base.config();
        mc.smsd.components = cell.components;
        mc.smsd.mode = cell.mode;
        StyleCodecModel model(mc, base.vocab());
        copy_params(base.params(), model.params(), kSmsdPrefix);
        copy_params(base.fusion_params(), model.fusion_params());

        TrainConfig tc = train_cfg;
        tc.stage = TrainStage::SmsdOnly;
        tc.seed = cfg.seed;
        tc.total_steps = cfg.finetune_steps;
        tc.smsd_refine_steps = 0;
        tc.warmup_steps = std::max<long>(1, cfg.finetune_steps / 10);

        // Variance of component 0 for a fixed probe prompt, before and after.
        const std::vector<int> probe = model.vocab().encode(eval_split.front().style_text);
        AblationRow row;
        row.cell = cell;
        const MixtureParams before = model.style_mixture(probe);
        row.sigma_before = before.variances(0);
        row.variance_entries = learnable_variance_count(cell.mode, cell.components, mc.smsd.output_dim);

        Trainer trainer(model, world, train, tc);
        double last = kNaN;
        trainer.run([&](const LossBreakdown& lb) { last = lb.smsd; });
        row.final_smsd_loss = last;
        row.sigma_after = model.style_mixture(probe).variances(0);

        const EvalReport rep = eval_many_to_many(model, eval_split, cfg.n_styles, cfg.n_samples,
                                                 Rng(cfg.seed).derive("ablation_eval"), StyleChoice::Sample, "ablation");
        row.style_accuracy = rep.style_accuracy;
        row.degree_variance = rep.degree_variance;
        row.distinct_degree_bins = rep.distinct_degree_bins;
        row.component_entropy = rep.component_entropy;
        rows.push_back(row);
        if (!cfg.resume_path.empty()) {
            std::ofstream out(cfg.resume_path, std::ios::app);
            out << row.to_json().dump() << '\n';
        }
    }
    return rows;
}

std::string render_ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << fmt::format("{:<32} {:>8} {:>10} {:>9} {:>9} {:>9}\n", "config", "SA", "SD(var)", "distinct", "entropy",
                      "var.ents");
    for (const AblationRow& r : rows) {
        os << fmt::format("{:<32} {:>8.4f} {:>10.5f} {:>9.3f} {:>9.4f} {:>9}\n", r.cell.name(), r.style_accuracy,
                          r.degree_variance, r.distinct_degree_bins, r.component_entropy, r.variance_entries);
    }
    return os.str();
}

}  // namespace stylecodec
